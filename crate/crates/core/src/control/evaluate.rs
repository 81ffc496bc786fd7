use super::{solve_dp, state_grid_for, DpSolution, FeedbackPolicy, PolicyMode, SolverOptions};
use crate::error::{Error, Result};
use crate::measures::MeasureFlow;
use crate::model::ModelSpec;
use crate::relaxed::barycenter_of;
use crate::simulate::simulate_tree;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate { mean, std_error: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Estimate { mean, std_error: (var / n).sqrt() }
    }
}

/// Expected reward of `policy` against the environment `flow`. Each sample
/// is one particle's reward averaged over the whole scenario tree, so the
/// common noise is integrated exactly at the level of cells.
pub fn evaluate_j(model: &ModelSpec, flow: &MeasureFlow, policy: &FeedbackPolicy, n: usize, seed: u64) -> Result<Estimate> {
    let batch = simulate_tree(model, flow, policy, n, seed)?;
    Ok(Estimate::from_samples(&batch.particle_values()))
}

/// `J(a) - J(b)` on common random numbers, with the standard error of the
/// paired differences.
pub fn evaluate_pair(
    model: &ModelSpec,
    flow: &MeasureFlow,
    a: &FeedbackPolicy,
    b: &FeedbackPolicy,
    n: usize,
    seed: u64,
) -> Result<Estimate> {
    let ya = simulate_tree(model, flow, a, n, seed)?.particle_values();
    let yb = simulate_tree(model, flow, b, n, seed)?.particle_values();
    let diff: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x - y).collect();
    Ok(Estimate::from_samples(&diff))
}

/// Dynamic programming against `flow`, then Monte Carlo evaluation of the
/// resulting policy.
pub fn best_response(model: &ModelSpec, flow: &MeasureFlow, opts: &SolverOptions) -> Result<(DpSolution, Estimate)> {
    let state = state_grid_for(model, opts)?;
    let sol = solve_dp(model, flow, &state, opts)?;
    let j = evaluate_j(model, flow, &sol.policy, opts.particles, opts.seed)?;
    Ok((sol, j))
}

/// Replaces each mixture by the grid action nearest its barycenter.
pub fn strictify_policy(model: &ModelSpec, policy: &FeedbackPolicy) -> Result<FeedbackPolicy> {
    if !model.convex_controls() {
        return Err(Error::Precondition {
            model: model.name.clone(),
            detail: "strictification needs a convex control set (flag C or D)".into(),
        });
    }
    let actions = policy.actions().clone();
    policy.map_rows(PolicyMode::Strict, |row| {
        if row.len() == 1 {
            return vec![(row[0].0, 1.0)];
        }
        let bar = barycenter_of(&actions, row.iter().map(|&(a, w)| (a as usize, w)));
        vec![(actions.nearest(&bar).0 as u32, 1.0)]
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::control::StateGrid;
    use crate::grid::ScenarioGrid;
    use crate::measures::EmpiricalMeasure;
    use crate::relaxed::ActionGrid;

    fn setup(model: &ModelSpec) -> (MeasureFlow, FeedbackPolicy) {
        let grid = Arc::new(ScenarioGrid::new(model.horizon, 2, 2, 1, 4).unwrap());
        let flow = MeasureFlow::constant(grid.clone(), EmpiricalMeasure::dirac(&[0.0]));
        let state = StateGrid::cube(&[-3.0], &[3.0], 13).unwrap();
        let pol = FeedbackPolicy::constant(grid, state, model.actions.clone(), 0).unwrap();
        (flow, pol)
    }

    #[test]
    fn constant_rewards() {
        let mut model = ModelSpec::blank("g1", 1, 1, 1, 1.5, ActionGrid::new(1, vec![0.0]).unwrap());
        model.terminal = Arc::new(|_, _| 1.0);
        model.sigma = Arc::new(|_, _, _, out| out[0] = 1.0);
        let (flow, pol) = setup(&model);
        let j = evaluate_j(&model, &flow, &pol, 200, 3).unwrap();
        assert!((j.mean - 1.0).abs() < 1e-12);
        assert_eq!(j.std_error, 0.0);

        model.terminal = Arc::new(|_, _| 0.0);
        model.running = Arc::new(|_, _, _, _| 1.0);
        let j = evaluate_j(&model, &flow, &pol, 200, 3).unwrap();
        assert!((j.mean - 1.5).abs() < 1e-12);
    }

    #[test]
    fn strictify_mixture() {
        let model = crate::model::builtin("lq_tracking").unwrap();
        let (_, pol) = setup(&model);
        let k = model.actions.len() as u32;
        let mixed = pol.map_rows(PolicyMode::Relaxed, |_| vec![(0, 0.5), (k - 1, 0.5)]).unwrap();
        let strict = strictify_policy(&model, &mixed).unwrap();
        let mid = model.actions.nearest(&[0.0]).0 as u32;
        assert!((0..strict.n_rows()).all(|r| strict.row(r) == [(mid, 1.0)]));
        assert_eq!(strictify_policy(&model, &pol).unwrap().row(0), pol.row(0));
        let bad = crate::model::builtin("lq_counterexample").unwrap();
        let mut bad = bad;
        bad.flags.c_convexity = false;
        bad.flags.d_linear_convex = false;
        assert!(strictify_policy(&bad, &pol).is_err());
    }
}
