use serde::Serialize;

use super::dual::penalty;
use super::{brute_force_primal, dual_solve, evaluate_recursion, FiniteMdp, PrimalSearch, TabularError, TemperatureSchedule};
use crate::BackupVariant;

pub const DEFAULT_GRID_RESOLUTION: usize = 201;

/// Primal oracle against dual solver for one MDP and target entropy.
#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub target_entropy: f64,
    pub grid_resolution: usize,
    pub primal_value: f64,
    pub dual_value: f64,
    /// `|p* - d*|`.
    pub gap: f64,
    /// `α*_t`; an unbounded temperature serializes as `null`.
    pub alphas: Vec<f64>,
    /// `h(π*_t)` of the dual-recovered policy.
    pub entropy_gaps: Vec<f64>,
    /// `α*_t·h(π*_t)`.
    pub slackness_residuals: Vec<f64>,
    /// `d*` rebuilt from the corrected `Q̄` recursion as `Q̄_0 + α_0·h(π_0)`.
    pub recursion_dual_value: f64,
    pub recursion_residual: f64,
    pub dual_sweeps: usize,
    pub dual_converged: bool,
    pub primal_search: PrimalSearch,
    pub primal_evaluations: u64,
    pub primal_min_entropy_gap: f64,
}

impl DualityReport {
    pub fn max_slackness_residual(&self) -> f64 {
        self.slackness_residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn verify_duality_report(mdp: &FiniteMdp, target_entropy: f64, grid_resolution: usize) -> Result<DualityReport, TabularError> {
    let dual = dual_solve(mdp, target_entropy)?;
    let primal = brute_force_primal(mdp, target_entropy, grid_resolution)?;

    // An unbounded temperature only appears with h = 0, where it contributes
    // nothing to the recursion, so evaluate with 0 in its place.
    let finite: Vec<f64> = dual.schedule.alphas().iter().map(|&a| if a.is_finite() { a } else { 0.0 }).collect();
    let table = evaluate_recursion(
        mdp,
        &dual.solution.policy,
        &TemperatureSchedule::new(finite)?,
        target_entropy,
        BackupVariant::Corrected,
    )?;
    let recursion_dual_value = table.qbar[0] + penalty(dual.schedule.get(0), dual.solution.gaps.h[0]);
    let dual_value = dual.dual_value();

    Ok(DualityReport {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        horizon: mdp.horizon(),
        target_entropy,
        grid_resolution,
        primal_value: primal.value,
        dual_value,
        gap: (primal.value - dual_value).abs(),
        alphas: dual.schedule.alphas().to_vec(),
        entropy_gaps: dual.solution.gaps.h.clone(),
        slackness_residuals: dual.slackness_residuals(),
        recursion_dual_value,
        recursion_residual: (recursion_dual_value - dual_value).abs(),
        dual_sweeps: dual.sweeps,
        dual_converged: dual.converged,
        primal_search: primal.search,
        primal_evaluations: primal.evaluations,
        primal_min_entropy_gap: primal.gaps.h.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn report_serializes_infinite_temperature_as_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = FiniteMdp::random(1, 2, 1, &mut rng);
        let report = verify_duality_report(&mdp, std::f64::consts::LN_2, 201).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(doc["alphas"][0].is_null());
        assert_eq!(doc["primal_search"], "exhaustive");
        assert!(report.gap <= 1e-12);
    }

    #[test]
    fn recursion_cross_check_matches_backward_induction() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for h0 in [-1.0, 0.0, 0.3, 0.6] {
            let mdp = FiniteMdp::random(2, 2, 1, &mut rng);
            let report = verify_duality_report(&mdp, h0, 101).unwrap();
            assert!(report.recursion_residual <= 1e-9, "{}", report.recursion_residual);
        }
    }
}
