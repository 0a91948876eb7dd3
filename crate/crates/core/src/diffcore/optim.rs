use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DiffError, GradMap, ParamTree, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

/// Optimizer hyperparameters plus per-parameter state.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    step: u64,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    /// Adam over every parameter in `params` under one of `prefixes`.
    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64, params: &ParamTree, prefixes: &[&str]) -> Self {
        let mut first_moment = BTreeMap::new();
        for prefix in prefixes {
            for (path, t) in params.subtree(prefix) {
                first_moment.insert(path.clone(), Tensor::zeros(t.shape()));
            }
        }
        let second_moment = first_moment.clone();
        Self {
            kind: OptimizerKind::Adam { beta1, beta2, eps },
            lr,
            weight_decay,
            step: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn sgd(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter named in `grads`.
    pub fn step(&mut self, params: &mut ParamTree, grads: &GradMap) -> Result<(), DiffError> {
        for path in grads.keys() {
            if !params.contains(path) {
                return Err(DiffError::MissingParam(path.clone()));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (path, g) in grads {
                    let p = params.get_mut(path).expect("checked above");
                    check_shape(path, p, g)?;
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.lr * (gv + self.weight_decay * *pv);
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (path, g) in grads {
                    let p = params.get_mut(path).expect("checked above");
                    check_shape(path, p, g)?;
                    let (Some(m), Some(v)) = (self.first_moment.get_mut(path), self.second_moment.get_mut(path)) else {
                        return Err(DiffError::Internal(format!("no Adam moment buffers for {path}")));
                    };
                    let pd = p.data_mut();
                    for (((pv, gv), mv), vv) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                        let grad = gv + self.weight_decay * *pv;
                        *mv = beta1 * *mv + (1.0 - beta1) * grad;
                        *vv = beta2 * *vv + (1.0 - beta2) * grad * grad;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_shape(path: &str, p: &Tensor, g: &Tensor) -> Result<(), DiffError> {
    if p.shape() != g.shape() {
        return Err(DiffError::Config(format!(
            "gradient for {path} has shape {:?}, parameter has {:?}",
            g.shape(),
            p.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(path: &str, v: f64) -> ParamTree {
        let mut t = ParamTree::new();
        t.insert(path, Tensor::scalar(v));
        t
    }

    fn grad(path: &str, v: f64) -> GradMap {
        let mut g = GradMap::new();
        g.insert(path.to_string(), Tensor::scalar(v));
        g
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut p = single("x/p", 1.0);
        let mut opt = OptimizerState::sgd(0.1, 0.0);
        opt.step(&mut p, &grad("x/p", 2.0)).unwrap();
        assert!((p.get("x/p").unwrap().item() - 0.8).abs() < 1e-15);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = single("x/p", 1.5);
        let mut sgd = OptimizerState::sgd(0.1, 0.0);
        sgd.step(&mut p, &grad("x/p", 0.0)).unwrap();
        assert_eq!(p.get("x/p").unwrap().item(), 1.5);

        let mut adam = OptimizerState::adam(1e-3, 0.9, 0.999, 1e-8, 0.0, &p, &["x"]);
        adam.step(&mut p, &grad("x/p", 0.0)).unwrap();
        assert_eq!(p.get("x/p").unwrap().item(), 1.5);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // Step 1: m_hat = g, v_hat = g², so Δ = lr · g / (|g| + eps).
        let mut p = single("x/p", 0.0);
        let mut adam = OptimizerState::adam(1e-3, 0.9, 0.999, 1e-8, 0.0, &p, &["x"]);
        adam.step(&mut p, &grad("x/p", 1.0)).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("x/p").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_moment_buffer_is_internal_error() {
        let mut p = single("x/p", 0.0);
        p.insert("y/q", Tensor::scalar(0.0));
        let mut adam = OptimizerState::adam(1e-3, 0.9, 0.999, 1e-8, 0.0, &p, &["x"]);
        let err = adam.step(&mut p, &grad("y/q", 1.0)).unwrap_err();
        assert!(matches!(err, DiffError::Internal(_)));
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = single("x/p", 2.0);
        let mut opt = OptimizerState::sgd(0.5, 0.1);
        opt.step(&mut p, &grad("x/p", 0.0)).unwrap();
        assert!((p.get("x/p").unwrap().item() - 1.9).abs() < 1e-15);
    }
}
