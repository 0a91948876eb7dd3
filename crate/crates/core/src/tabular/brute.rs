//! Grid-search oracle for the primal problem.
//!
//! Every per-`(t, s)` distribution is restricted to the equally spaced simplex
//! grid with `resolution` points along each edge. Small problems are searched
//! exhaustively. Larger problems with at most two states are searched by
//! dynamic programming over the state marginal `x = d_t(0)`: the value
//! function over `x` is tabulated on a fine grid, the policy is reconstructed
//! forward from the exact initial marginal, and the reported value is the
//! exact return of that reconstructed grid policy, so it never exceeds the
//! true grid optimum.

use super::{check_target_entropy, entropy, marginals, policy_entropy_terms, EntropyGap, FiniteMdp, PolicyTable, TabularError};

/// Upper bound on the number of whole-policy evaluations for exhaustive search.
pub const BRUTE_FORCE_LIMIT: f64 = 1e8;
/// Upper bound on single-step evaluations for the marginal dynamic program.
pub const MARGINAL_DP_LIMIT: f64 = 1e9;
/// Marginal grid intervals per simplex grid interval.
const MARGINAL_REFINEMENT: usize = 4;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimalSearch {
    Exhaustive,
    MarginalDp,
}

#[derive(Clone, Debug)]
pub struct PrimalSolution {
    pub value: f64,
    pub policy: PolicyTable,
    pub gaps: EntropyGap,
    pub search: PrimalSearch,
    pub evaluations: u64,
}

/// All distributions over `n_actions` with probabilities in multiples of
/// `1/(resolution-1)`, in lexicographic order of the integer counts.
pub fn grid_points(n_actions: usize, resolution: usize) -> Vec<Vec<f64>> {
    let n = resolution - 1;
    let mut out = Vec::new();
    let mut counts = vec![0usize; n_actions];
    fn fill(pos: usize, left: usize, n: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if pos + 1 == counts.len() {
            counts[pos] = left;
            out.push(counts.iter().map(|&c| c as f64 / n as f64).collect());
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            fill(pos + 1, left - c, n, counts, out);
        }
    }
    fill(0, n, n, &mut counts, &mut out);
    out
}

/// Per-state summaries of every grid distribution.
struct GridTables {
    points: Vec<Vec<f64>>,
    entropy: Vec<f64>,
    /// `[s][i]`: expected reward of grid point `i` in state `s`.
    reward: Vec<Vec<f64>>,
    /// `[s][i]`: next-state distribution, flattened.
    next: Vec<Vec<f64>>,
}

impl GridTables {
    fn new(mdp: &FiniteMdp, resolution: usize) -> Self {
        let points = grid_points(mdp.n_actions(), resolution);
        let ns = mdp.n_states();
        let entropy = points.iter().map(|p| entropy(p)).collect();
        let reward = (0..ns)
            .map(|s| points.iter().map(|p| p.iter().zip(mdp.rewards(s)).map(|(a, b)| a * b).sum()).collect())
            .collect();
        let next = (0..ns)
            .map(|s| {
                let mut flat = Vec::with_capacity(points.len() * ns);
                for p in &points {
                    for sn in 0..ns {
                        flat.push(p.iter().enumerate().map(|(a, pa)| pa * mdp.p(s, a, sn)).sum::<f64>());
                    }
                }
                flat
            })
            .collect();
        Self {
            points,
            entropy,
            reward,
            next,
        }
    }
}

/// Best grid policy for the entropy-constrained problem.
pub fn brute_force_primal(mdp: &FiniteMdp, target_entropy: f64, resolution: usize) -> Result<PrimalSolution, TabularError> {
    check_target_entropy(mdp.n_actions(), target_entropy)?;
    if resolution < 2 {
        return Err(TabularError::Domain(format!("grid resolution must be at least 2, got {resolution}")));
    }
    let tables = GridTables::new(mdp, resolution);
    let n_points = tables.points.len() as f64;
    let exhaustive = n_points.powf((mdp.n_states() * mdp.steps()) as f64);
    let (choice, evaluations, search) = if exhaustive <= BRUTE_FORCE_LIMIT {
        let (choice, evals) = exhaustive_search(mdp, &tables, target_entropy);
        (choice, evals, PrimalSearch::Exhaustive)
    } else if mdp.n_states() <= 2 {
        let dp_count = n_points.powi(mdp.n_states() as i32) * marginal_grid_len(mdp, resolution) as f64 * mdp.steps() as f64;
        if dp_count > MARGINAL_DP_LIMIT {
            return Err(TabularError::Size {
                evaluations: dp_count,
                limit: MARGINAL_DP_LIMIT,
            });
        }
        let (choice, evals) = marginal_dp(mdp, &tables, target_entropy, resolution);
        (choice, evals, PrimalSearch::MarginalDp)
    } else {
        return Err(TabularError::Size {
            evaluations: exhaustive,
            limit: BRUTE_FORCE_LIMIT,
        });
    };
    let choice = choice.ok_or_else(|| {
        TabularError::Numeric(format!(
            "no policy on the {resolution}-point grid reaches target entropy {target_entropy}"
        ))
    })?;

    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut probs = Vec::with_capacity(mdp.steps() * ns * na);
    for &i in &choice {
        probs.extend_from_slice(&tables.points[i]);
    }
    let policy = PolicyTable::new(mdp.steps(), ns, na, probs)?;
    let m = marginals(mdp, &policy)?;
    let gaps = policy_entropy_terms(&policy, &m, target_entropy)?;
    if let Some(t) = gaps.h.iter().position(|&h| h < -FEASIBILITY_TOL) {
        return Err(TabularError::Numeric(format!("oracle policy violates the entropy constraint at step {t}")));
    }
    let value = m
        .state_action
        .iter()
        .map(|rho| {
            (0..ns)
                .flat_map(|s| (0..na).map(move |a| (s, a)))
                .map(|(s, a)| rho[s * na + a] * mdp.r(s, a))
                .sum::<f64>()
        })
        .sum();
    Ok(PrimalSolution {
        value,
        policy,
        gaps,
        search,
        evaluations,
    })
}

fn marginal_grid_len(mdp: &FiniteMdp, resolution: usize) -> usize {
    if mdp.n_states() == 1 {
        1
    } else {
        MARGINAL_REFINEMENT * (resolution - 1) + 1
    }
}

/// Depth-first enumeration of all grid policies, pruning steps whose entropy
/// constraint already fails. Returns grid indices laid out `[t][s]`.
fn exhaustive_search(mdp: &FiniteMdp, tables: &GridTables, target_entropy: f64) -> (Option<Vec<usize>>, u64) {
    struct Search<'a> {
        mdp: &'a FiniteMdp,
        tables: &'a GridTables,
        target: f64,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
        evaluations: u64,
    }

    impl Search<'_> {
        fn step(&mut self, t: usize, d: &[f64], acc: f64) {
            let ns = self.mdp.n_states();
            let n_points = self.tables.points.len();
            let mut tuple = vec![0usize; ns];
            loop {
                let ent: f64 = (0..ns).map(|s| d[s] * self.tables.entropy[tuple[s]]).sum();
                if ent - self.target >= -FEASIBILITY_TOL {
                    let gained: f64 = (0..ns).map(|s| d[s] * self.tables.reward[s][tuple[s]]).sum();
                    self.current.extend_from_slice(&tuple);
                    if t == self.mdp.horizon() {
                        self.evaluations += 1;
                        let value = acc + gained;
                        if self.best.as_ref().is_none_or(|(b, _)| value > *b) {
                            self.best = Some((value, self.current.clone()));
                        }
                    } else {
                        let mut next = vec![0.0; ns];
                        for s in 0..ns {
                            let row = &self.tables.next[s][tuple[s] * ns..(tuple[s] + 1) * ns];
                            for (n, p) in next.iter_mut().zip(row) {
                                *n += d[s] * p;
                            }
                        }
                        self.step(t + 1, &next, acc + gained);
                    }
                    self.current.truncate(self.current.len() - ns);
                }
                // Odometer over the state tuple, last state fastest.
                let mut pos = ns;
                loop {
                    if pos == 0 {
                        return;
                    }
                    pos -= 1;
                    tuple[pos] += 1;
                    if tuple[pos] < n_points {
                        break;
                    }
                    tuple[pos] = 0;
                }
            }
        }
    }

    let mut search = Search {
        mdp,
        tables,
        target: target_entropy,
        current: Vec::new(),
        best: None,
        evaluations: 0,
    };
    search.step(0, mdp.initial_dist(), 0.0);
    (search.best.map(|(_, c)| c), search.evaluations)
}

fn interpolate(values: &[f64], x: f64) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let scaled = x.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let i = (scaled.floor() as usize).min(values.len() - 2);
    let w = scaled - i as f64;
    if w == 0.0 {
        values[i]
    } else {
        (1.0 - w) * values[i] + w * values[i + 1]
    }
}

/// Dynamic programming over `x = d_t(0)` for one or two states.
fn marginal_dp(mdp: &FiniteMdp, tables: &GridTables, target_entropy: f64, resolution: usize) -> (Option<Vec<usize>>, u64) {
    let ns = mdp.n_states();
    let n_points = tables.points.len();
    let second = if ns == 2 { n_points } else { 1 };
    let m = marginal_grid_len(mdp, resolution);
    let xs: Vec<f64> = if m == 1 { vec![1.0] } else { (0..m).map(|i| i as f64 / (m - 1) as f64).collect() };
    let mut evaluations = 0u64;

    let part = |s: usize, i: usize| -> (f64, f64, f64) {
        if s >= ns {
            return (0.0, 0.0, 0.0);
        }
        (tables.entropy[i], tables.reward[s][i], tables.next[s][i * ns])
    };

    // Best (value, i0, i1) at marginal x given the tabulated next-step values.
    let best_at = |x: f64, future: Option<&[f64]>, evaluations: &mut u64| -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for i0 in 0..n_points {
            let (e0, r0, n0) = part(0, i0);
            for i1 in 0..second {
                let (e1, r1, n1) = part(1, i1);
                if x * e0 + (1.0 - x) * e1 - target_entropy < -FEASIBILITY_TOL {
                    continue;
                }
                *evaluations += 1;
                let mut value = x * r0 + (1.0 - x) * r1;
                if let Some(f) = future {
                    let next_x = if ns == 1 { 1.0 } else { x * n0 + (1.0 - x) * n1 };
                    value += interpolate(f, next_x);
                }
                if best.is_none_or(|(b, _, _)| value > b) {
                    best = Some((value, i0, i1));
                }
            }
        }
        best
    };

    // values[t][k] = best return from step t onward starting at marginal xs[k].
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); mdp.steps()];
    for t in (0..mdp.steps()).rev() {
        let future = values.get(t + 1).filter(|v| !v.is_empty()).map(|v| v.as_slice());
        let mut row = Vec::with_capacity(m);
        for &x in &xs {
            match best_at(x, future, &mut evaluations) {
                Some((v, _, _)) => row.push(v),
                None => return (None, evaluations),
            }
        }
        values[t] = row;
    }

    let mut x = mdp.initial_dist()[0];
    let mut choice = Vec::with_capacity(mdp.steps() * ns);
    for t in 0..mdp.steps() {
        let future = values.get(t + 1).map(|v| v.as_slice());
        let Some((_, i0, i1)) = best_at(x, future, &mut evaluations) else {
            return (None, evaluations);
        };
        choice.push(i0);
        if ns == 2 {
            choice.push(i1);
            x = x * tables.next[0][i0 * 2] + (1.0 - x) * tables.next[1][i1 * 2];
        }
    }
    (Some(choice), evaluations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_counts_match_stars_and_bars() {
        assert_eq!(grid_points(2, 201).len(), 201);
        assert_eq!(grid_points(3, 5).len(), 15);
        assert_eq!(grid_points(1, 7), vec![vec![1.0]]);
        for p in grid_points(3, 11) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(grid_points(2, 3), vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
    }

    #[test]
    fn single_step_deterministic_reward() {
        let mdp = FiniteMdp::new(1, 2, 0, vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0]).unwrap();
        let sol = brute_force_primal(&mdp, 0.0, 201).unwrap();
        assert_eq!(sol.value, 1.0);
        assert_eq!(sol.policy.dist(0, 0), &[1.0, 0.0]);
        assert_eq!(sol.search, PrimalSearch::Exhaustive);
        assert_eq!(sol.evaluations, 201);
    }

    #[test]
    fn symmetric_rewards_tie_break_to_first_feasible_point() {
        let mdp = FiniteMdp::new(1, 2, 0, vec![1.0, 1.0], vec![0.5, 0.5], vec![1.0]).unwrap();
        let sol = brute_force_primal(&mdp, std::f64::consts::LN_2, 201).unwrap();
        assert_eq!(sol.policy.dist(0, 0), &[0.5, 0.5]);
        assert!((sol.value - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn oversized_problem_reports_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = FiniteMdp::random(3, 2, 3, &mut rng);
        match brute_force_primal(&mdp, 0.0, 201) {
            Err(TabularError::Size { evaluations, limit }) => {
                assert_eq!(evaluations, 201f64.powi(12));
                assert_eq!(limit, BRUTE_FORCE_LIMIT);
            }
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn marginal_dp_agrees_with_exhaustive_search_on_coarse_grid() {
        // On a coarse grid both searches are cheap; the DP value is an exact
        // evaluation of a grid policy, so it can only fall short of the
        // exhaustive optimum by interpolation error.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for h0 in [-1.0, 0.0, 0.3, 0.6] {
            let mdp = FiniteMdp::random(2, 2, 2, &mut rng);
            let tables = GridTables::new(&mdp, 11);
            let (exh, _) = exhaustive_search(&mdp, &tables, h0);
            let (dp, _) = marginal_dp(&mdp, &tables, h0, 11);
            let value_of = |choice: Vec<usize>| {
                let probs: Vec<f64> = choice.iter().flat_map(|&i| tables.points[i].clone()).collect();
                let policy = PolicyTable::new(3, 2, 2, probs).unwrap();
                let m = marginals(&mdp, &policy).unwrap();
                m.state_action.iter().map(|rho| rho.iter().zip(mdp.rewards(0).iter().chain(mdp.rewards(1))).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
            };
            let (e, d) = (value_of(exh.unwrap()), value_of(dp.unwrap()));
            assert!(d <= e + 1e-12);
            assert!(e - d <= 1e-4, "h0 {h0}: exhaustive {e}, dp {d}");
        }
    }

    #[test]
    fn unreachable_grid_target_is_reported() {
        // An even number of intervals is needed to contain the uniform point.
        let mdp = FiniteMdp::new(1, 2, 0, vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0]).unwrap();
        let err = brute_force_primal(&mdp, std::f64::consts::LN_2, 4).unwrap_err();
        assert!(matches!(err, TabularError::Numeric(_)));
    }
}
