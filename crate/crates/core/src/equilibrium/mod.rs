//! Damped fixed-point iteration of the best-response map on measure flows,
//! and the diagnostics built on it.

mod probes;
mod refine;

use std::sync::Arc;

pub use probes::{
    counterexample_mean_map, monotonicity_check, monotonicity_lhs, uniqueness_probe, PathMeasure, ProbeReport,
    ProbeRun,
};
pub use refine::{refine_study, RefineRow, RefineStudy};

use crate::control::{solve_dp, state_grid_for, Estimate, FeedbackPolicy, SolverOptions, StateGrid};
use crate::error::{Error, Result};
use crate::grid::ScenarioGrid;
use crate::measures::{flow_distance, EmpiricalMeasure, MeasureFlow};
use crate::model::ModelSpec;
use crate::rng::{stream, TAG_INIT_FLOW};
use crate::simulate::{simulate_tree, TreeBatch};

/// Knobs of the outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateConfig {
    pub theta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
    /// Action index of the constant policy generating the initial flow.
    pub init_action: usize,
    /// Seed for the initial environment sample.
    pub init_seed: u64,
    /// Seed for the final exploitability estimate; `None` skips it.
    pub eval_seed: Option<u64>,
}

impl Default for IterateConfig {
    fn default() -> Self {
        IterateConfig {
            theta: 0.5,
            tol: 1e-2,
            max_iter: 50,
            solver: SolverOptions::default(),
            init_action: 0,
            init_seed: 0,
            eval_seed: Some(2),
        }
    }
}

impl IterateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config { key: "theta".into(), detail: format!("{} not in (0, 1]", self.theta) });
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config { key: "tol".into(), detail: format!("{} must be > 0", self.tol) });
        }
        if self.max_iter == 0 {
            return Err(Error::Config { key: "max_iter".into(), detail: "must be >= 1".into() });
        }
        if self.solver.particles == 0 {
            return Err(Error::Config { key: "particles".into(), detail: "must be >= 1".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub flow: MeasureFlow,
    /// best response to the flow of the last iteration
    pub policy: FeedbackPolicy,
    pub residuals: Vec<f64>,
    /// `J` of the best response against `mu_k`
    pub rewards: Vec<f64>,
    /// paired gain of the best response over the previous iteration's policy
    /// against `mu_k`; empty at the first iteration
    pub exploit_history: Vec<Option<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// final gap against the returned flow on the evaluation seed
    pub exploitability: Option<Estimate>,
    /// `J` of the returned policy against the returned flow (evaluation seed)
    pub reward: Option<Estimate>,
    pub clamp_fraction: f64,
    pub config: IterateConfig,
}

impl EquilibriumReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// The conditional law of the simulated states given each node.
pub fn conditional_law(batch: &TreeBatch) -> Result<MeasureFlow> {
    batch.conditional_law()
}

/// `N` draws from the initial law placed at every slot.
pub fn initial_law_flow(model: &ModelSpec, grid: Arc<ScenarioGrid>, n: usize, seed: u64) -> Result<MeasureFlow> {
    let d = model.d;
    let mut pts = vec![0.0; n * d];
    for (i, x) in pts.chunks_exact_mut(d).enumerate() {
        let mut rng = stream(seed, TAG_INIT_FLOW, i as u64, 0);
        model.initial.sample_into(&mut rng, x);
    }
    let lam = EmpiricalMeasure::uniform(d, pts)?.compress(Some(n));
    Ok(MeasureFlow::constant(grid, lam))
}

/// Conditional law of the population playing a constant action against
/// the initial law.
pub fn initial_flow(
    model: &ModelSpec,
    grid: Arc<ScenarioGrid>,
    state: &StateGrid,
    action: usize,
    opts: &SolverOptions,
    init_seed: u64,
) -> Result<MeasureFlow> {
    if action >= model.actions.len() {
        return Err(Error::OutOfRange { name: "init_action", detail: format!("{action}") });
    }
    let env = initial_law_flow(model, grid.clone(), opts.particles, init_seed)?;
    let pol = FeedbackPolicy::constant(grid, state.clone(), model.actions.clone(), action)?;
    simulate_tree(model, &env, &pol, opts.particles, opts.seed)?.conditional_law()
}

/// Damped iteration `mu <- (1 - theta) mu + theta Law(X* | node)` where
/// `X*` plays the best response to `mu`. Stops once the flow moves by less
/// than `tol`; running out of iterations is reported, not raised.
pub fn iterate(model: &ModelSpec, grid: Arc<ScenarioGrid>, cfg: &IterateConfig) -> Result<EquilibriumReport> {
    iterate_from(model, grid, cfg, None)
}

/// As [`iterate`], optionally from a given initial flow.
pub fn iterate_from(
    model: &ModelSpec,
    grid: Arc<ScenarioGrid>,
    cfg: &IterateConfig,
    init: Option<MeasureFlow>,
) -> Result<EquilibriumReport> {
    cfg.validate()?;
    model.validate()?;
    if !model.flags.a_holds {
        log::warn!("model `{}` does not satisfy the standing assumption; existence is not guaranteed", model.name);
    }
    let opts = &cfg.solver;
    let n = opts.particles;
    let state = state_grid_for(model, opts)?;
    let mut mu = match init {
        Some(f) => f,
        None => initial_flow(model, grid.clone(), &state, cfg.init_action, opts, cfg.init_seed)?,
    };
    let mut residuals = Vec::new();
    let mut rewards = Vec::new();
    let mut exploit_history = Vec::new();
    let mut prev: Option<FeedbackPolicy> = None;
    let mut converged = false;
    let mut clamp_fraction = 0.0;
    let mut policy = None;
    for k in 0..cfg.max_iter {
        let sol = solve_dp(model, &mu, &state, opts)?;
        clamp_fraction = sol.clamp_fraction;
        let batch = simulate_tree(model, &mu, &sol.policy, n, opts.seed)?;
        let values = batch.particle_values();
        let j = Estimate::from_samples(&values);
        let gain = match &prev {
            Some(p) => {
                let old = simulate_tree(model, &mu, p, n, opts.seed)?.particle_values();
                let diff: Vec<f64> = values.iter().zip(&old).map(|(a, b)| a - b).collect();
                Some(Estimate::from_samples(&diff).mean)
            }
            None => None,
        };
        let response = batch.conditional_law()?;
        drop(batch);
        let next = mu.mix(&response, cfg.theta)?.compress(Some(&vec![n; grid.n_slots()]));
        let residual = flow_distance(&next, &mu, model.p)?;
        log::info!("iteration {k}: residual {residual:.3e}, J {:.5}", j.mean);
        residuals.push(residual);
        rewards.push(j.mean);
        exploit_history.push(gain);
        mu = next;
        prev = Some(sol.policy.clone());
        policy = Some(sol.policy);
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    let policy = policy.expect("at least one iteration");
    let (exploitability, reward) = match cfg.eval_seed {
        Some(seed) => {
            let (gap, j) = exploitability(model, &mu, &policy, opts, seed)?;
            (Some(gap), Some(j))
        }
        None => (None, None),
    };
    Ok(EquilibriumReport {
        flow: mu,
        policy,
        iterations: residuals.len(),
        residuals,
        rewards,
        exploit_history,
        converged,
        exploitability,
        reward,
        clamp_fraction,
        config: cfg.clone(),
    })
}

/// Gain available to a single player deviating from `policy` to the best
/// response against `flow`, estimated on paired samples with `seed`.
/// Returns the gap and the reward of `policy`.
pub fn exploitability(
    model: &ModelSpec,
    flow: &MeasureFlow,
    policy: &FeedbackPolicy,
    opts: &SolverOptions,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    let sol = solve_dp(model, flow, policy.state_grid(), opts)?;
    let best = simulate_tree(model, flow, &sol.policy, opts.particles, seed)?.particle_values();
    let own = simulate_tree(model, flow, policy, opts.particles, seed)?.particle_values();
    let diff: Vec<f64> = best.iter().zip(&own).map(|(a, b)| a - b).collect();
    Ok((Estimate::from_samples(&diff), Estimate::from_samples(&own)))
}
