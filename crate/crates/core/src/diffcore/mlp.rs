use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffError, Graph, ParamTree, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// How parameters enter the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    Trainable,
    Frozen,
}

pub fn weight_path(prefix: &str, layer: usize) -> String {
    format!("{prefix}/layer{layer}/weight")
}

pub fn bias_path(prefix: &str, layer: usize) -> String {
    format!("{prefix}/layer{layer}/bias")
}

/// Inserts `prefix/layer{i}/{weight,bias}` for consecutive `widths`, drawn
/// uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`. Weights are stored
/// `[fan_in, fan_out]` so a layer computes `x · W + b`.
pub fn init_mlp<R: Rng + ?Sized>(tree: &mut ParamTree, prefix: &str, widths: &[usize], rng: &mut R) {
    assert!(widths.len() >= 2, "an MLP needs input and output widths");
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        tree.insert(weight_path(prefix, i), Tensor::matrix(fan_in, fan_out, w).expect("layer shape"));
        tree.insert(bias_path(prefix, i), Tensor::vector(b));
    }
}

fn bind(g: &mut Graph, params: &ParamTree, path: &str, mode: ParamMode) -> Result<Var, DiffError> {
    match mode {
        ParamMode::Trainable => g.param(params, path),
        ParamMode::Frozen => g.frozen_param(params, path),
    }
}

/// Applies `activations.len()` affine layers found under `prefix`, recording
/// them on `g`.
pub fn forward_mlp(
    g: &mut Graph,
    params: &ParamTree,
    prefix: &str,
    input: Var,
    activations: &[Activation],
    mode: ParamMode,
) -> Result<Var, DiffError> {
    let mut x = input;
    for (i, act) in activations.iter().enumerate() {
        let wp = weight_path(prefix, i);
        let bp = bias_path(prefix, i);
        let (w_shape, b_len) = match (params.get(&wp), params.get(&bp)) {
            (Some(w), Some(b)) => (w.dims(), b.len()),
            (None, _) => return Err(DiffError::MissingParam(wp)),
            (_, None) => return Err(DiffError::MissingParam(bp)),
        };
        let width = g.value(x).cols();
        if params.get(&wp).map(|w| w.shape().len()) != Some(2) || w_shape.0 != width || w_shape.1 != b_len {
            return Err(DiffError::Config(format!(
                "{prefix} layer {i}: input width {width} does not fit weight {w_shape:?} / bias {b_len}"
            )));
        }
        let w = bind(g, params, &wp, mode)?;
        let b = bind(g, params, &bp, mode)?;
        let z = g.matmul(x, w);
        let z = g.add_bias(z, b);
        x = match act {
            Activation::Relu => g.relu(z),
            Activation::Tanh => g.tanh(z),
            Activation::Identity => z,
        };
        if !g.value(x).is_finite() {
            return Err(DiffError::NonFinite(format!("{prefix} layer {i} output")));
        }
    }
    Ok(x)
}

/// `relu` on every hidden layer, identity on the output.
pub fn hidden_relu(n_layers: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::Relu; n_layers.saturating_sub(1)];
    acts.push(Activation::Identity);
    acts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Straight-line reference: plain loops, no graph.
    fn loop_forward(params: &ParamTree, prefix: &str, input: &[f64], batch: usize, acts: &[Activation]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut width = input.len() / batch;
        for (i, act) in acts.iter().enumerate() {
            let w = params.get(&weight_path(prefix, i)).unwrap();
            let b = params.get(&bias_path(prefix, i)).unwrap();
            let out_w = w.cols();
            let mut y = vec![0.0; batch * out_w];
            for r in 0..batch {
                for j in 0..out_w {
                    let mut acc = b.data()[j];
                    for k in 0..width {
                        acc += x[r * width + k] * w.data()[k * out_w + j];
                    }
                    y[r * out_w + j] = match act {
                        Activation::Relu => acc.max(0.0),
                        Activation::Tanh => acc.tanh(),
                        Activation::Identity => acc,
                    };
                }
            }
            x = y;
            width = out_w;
        }
        x
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut tree = ParamTree::new();
        tree.insert(weight_path("n", 0), Tensor::zeros(&[3, 2]));
        tree.insert(bias_path("n", 0), Tensor::zeros(&[2]));
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 3, vec![1.0, -4.0, 2.0, 9.0, 0.5, -3.0]).unwrap());
        let y = forward_mlp(&mut g, &tree, "n", x, &[Activation::Relu], ParamMode::Trainable).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let n = 4;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let mut tree = ParamTree::new();
        tree.insert(weight_path("n", 0), Tensor::matrix(n, n, eye).unwrap());
        tree.insert(bias_path("n", 0), Tensor::zeros(&[n]));
        let input = vec![0.25, -1.5, 3.0, 7.0, 1.0, 2.0, -3.0, 0.0];
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, n, input.clone()).unwrap());
        let y = forward_mlp(&mut g, &tree, "n", x, &[Activation::Identity], ParamMode::Frozen).unwrap();
        assert_eq!(g.value(y).data(), input.as_slice());
    }

    #[test]
    fn graph_forward_matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let widths = [5, 7 + trial % 5, 6, 3];
            let mut tree = ParamTree::new();
            init_mlp(&mut tree, "net", &widths, &mut rng);
            let batch = 1 + trial % 4;
            let input: Vec<f64> = (0..batch * widths[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(batch, widths[0], input.clone()).unwrap());
            let y = forward_mlp(&mut g, &tree, "net", x, &acts, ParamMode::Trainable).unwrap();
            let expected = loop_forward(&tree, "net", &input, batch, &acts);
            for (a, b) in g.value(y).data().iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn width_mismatch_is_a_config_error() {
        let mut tree = ParamTree::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_mlp(&mut tree, "n", &[3, 4], &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let err = forward_mlp(&mut g, &tree, "n", x, &[Activation::Relu], ParamMode::Trainable).unwrap_err();
        assert!(matches!(err, DiffError::Config(_)));
    }

    #[test]
    fn non_finite_output_names_the_layer() {
        let mut tree = ParamTree::new();
        tree.insert(weight_path("n", 0), Tensor::matrix(1, 1, vec![1.0]).unwrap());
        tree.insert(bias_path("n", 0), Tensor::vector(vec![0.0]));
        tree.insert(weight_path("n", 1), Tensor::matrix(1, 1, vec![f64::INFINITY]).unwrap());
        tree.insert(bias_path("n", 1), Tensor::vector(vec![0.0]));
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let acts = [Activation::Identity, Activation::Identity];
        let err = forward_mlp(&mut g, &tree, "n", x, &acts, ParamMode::Trainable).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value in n layer 1 output");
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut tree = ParamTree::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        init_mlp(&mut tree, "n", &[16, 8], &mut rng);
        let bound = 0.25;
        assert!(tree.iter().all(|(_, t)| t.data().iter().all(|v| v.abs() <= bound)));
    }
}
