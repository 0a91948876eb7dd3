use super::{backward, DiffError, Graph, ParamTree, Var};

/// Step of the central difference `(f(p + h) - f(p - h)) / 2h`.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor per unit of loss magnitude. The central difference
/// carries a rounding error near `ε·|f| / h`, about `2e-11·|f|`, so
/// components smaller than `1e-6·max(1, |f|)` are compared on that absolute
/// scale instead of relative to themselves.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    /// Scalar components compared.
    pub compared: usize,
    /// Components whose perturbation moved a relu, clamp or minimum across
    /// its kink; the loss is not differentiable along that segment.
    pub skipped: usize,
    pub max_relative_error: f64,
    /// Path and flat index of the component with the largest error.
    pub worst: Option<(String, usize)>,
}

impl GradientCheck {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.compared + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR·max(1, |loss|))`.
pub fn relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = RELATIVE_FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every trainable parameter reached by the loss that `build` records.
///
/// `build` is called once at `params` for the analytic gradient and twice per
/// scalar component at `params ± FD_STEP`.
pub fn check_gradients<E, F>(params: &ParamTree, mut build: F) -> Result<GradientCheck, E>
where
    E: From<DiffError>,
    F: FnMut(&mut Graph, &ParamTree) -> Result<Var, E>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let base_value = g.value(loss).item();
    let base_signature = g.branch_signature();
    let grads = backward(&g, loss)?.into_params();

    let mut evaluate = |p: &ParamTree| -> Result<(f64, Vec<bool>), E> {
        let mut g = Graph::new();
        let loss = build(&mut g, p)?;
        Ok((g.value(loss).item(), g.branch_signature()))
    };

    let mut report = GradientCheck {
        compared: 0,
        skipped: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    let mut probe = params.clone();
    for (path, grad) in &grads {
        for (i, &analytic) in grad.data().iter().enumerate() {
            let original = params.get(path).expect("gradient paths come from the tree").data()[i];
            probe.get_mut(path).expect("same tree").data_mut()[i] = original + FD_STEP;
            let (up, up_sig) = evaluate(&probe)?;
            probe.get_mut(path).expect("same tree").data_mut()[i] = original - FD_STEP;
            let (down, down_sig) = evaluate(&probe)?;
            probe.get_mut(path).expect("same tree").data_mut()[i] = original;

            if up_sig != base_signature || down_sig != base_signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic, numeric, base_value);
            report.compared += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((path.clone(), i));
            }
        }
    }
    Ok(report)
}
