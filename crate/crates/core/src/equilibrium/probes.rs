use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{initial_flow, iterate_from, IterateConfig};
use crate::control::state_grid_for;
use crate::error::{Error, Result};
use crate::grid::ScenarioGrid;
use crate::measures::{flow_distance, EmpiricalMeasure};
use crate::model::ModelSpec;
use crate::rng::{derive_seed, stream, TAG_INIT_FLOW, TAG_PATHS};

/// A weighted set of paths on a uniform time grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure {
    pub steps: usize,
    pub dim: usize,
    /// `atoms x (steps + 1) x dim`
    pub paths: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PathMeasure {
    pub fn new(steps: usize, dim: usize, paths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if steps == 0 || dim == 0 || weights.is_empty() || paths.len() != weights.len() * (steps + 1) * dim {
            return Err(Error::GridMismatch("path measure shape".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("path weights sum to {total}")));
        }
        Ok(PathMeasure { steps, dim, paths, weights })
    }

    fn point(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * (self.steps + 1) + j) * self.dim;
        &self.paths[off..off + self.dim]
    }

    /// Time marginal at grid index `j`.
    pub fn marginal(&self, j: usize) -> Result<EmpiricalMeasure> {
        let pts = (0..self.weights.len()).flat_map(|i| self.point(i, j).to_vec()).collect();
        EmpiricalMeasure::new(self.dim, pts, self.weights.clone())
    }
}

/// `int (mu - nu)(dx) [g(x_T, mu_T) - g(x_T, nu_T)
///   + int_0^T (f2(t, x_t, mu_t) - f2(t, x_t, nu_t)) dt]`,
/// with a left Riemann sum in time.
pub fn monotonicity_lhs(model: &ModelSpec, mu: &PathMeasure, nu: &PathMeasure) -> Result<f64> {
    let split = model.split.as_ref().ok_or_else(|| Error::Precondition {
        model: model.name.clone(),
        detail: "no separable running reward".into(),
    })?;
    if mu.steps != nu.steps || mu.dim != model.d || nu.dim != model.d {
        return Err(Error::GridMismatch("path measures on different grids".into()));
    }
    let steps = mu.steps;
    let dt = model.horizon / steps as f64;
    let mu_t: Vec<EmpiricalMeasure> = (0..=steps).map(|j| mu.marginal(j)).collect::<Result<_>>()?;
    let nu_t: Vec<EmpiricalMeasure> = (0..=steps).map(|j| nu.marginal(j)).collect::<Result<_>>()?;
    let integrand = |pm: &PathMeasure, i: usize| -> f64 {
        let x_t = pm.point(i, steps);
        let mut v = (model.terminal)(x_t, &mu_t[steps]) - (model.terminal)(x_t, &nu_t[steps]);
        for j in 0..steps {
            let t = j as f64 * dt;
            let x = pm.point(i, j);
            v += ((split.f2)(t, x, &mu_t[j]) - (split.f2)(t, x, &nu_t[j])) * dt;
        }
        v
    };
    let a: f64 = (0..mu.weights.len()).map(|i| mu.weights[i] * integrand(mu, i)).sum();
    let b: f64 = (0..nu.weights.len()).map(|i| nu.weights[i] * integrand(nu, i)).sum();
    Ok(a - b)
}

const MONOTONE_TOL: f64 = 1e-9;
const PATH_STEPS: usize = 16;

fn random_path_measure(model: &ModelSpec, seed: u64, pair: usize, side: u64) -> Result<PathMeasure> {
    let mut rng = stream(seed, TAG_PATHS, pair as u64, side);
    let atoms = rng.gen_range(1..=8);
    let d = model.d;
    let dt = model.horizon / PATH_STEPS as f64;
    let drift: f64 = rng.gen_range(-2.0..2.0);
    let mut paths = Vec::with_capacity(atoms * (PATH_STEPS + 1) * d);
    for _ in 0..atoms {
        let mut x: Vec<f64> = (0..d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        paths.extend_from_slice(&x);
        for _ in 0..PATH_STEPS {
            for v in x.iter_mut() {
                *v += drift * dt + dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            paths.extend_from_slice(&x);
        }
    }
    let raw: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    PathMeasure::new(PATH_STEPS, d, paths, raw.iter().map(|w| w / total).collect())
}

/// Largest left side of the monotonicity inequality over random pairs of
/// path measures, and whether it stays non-positive (up to `1e-9`).
pub fn monotonicity_check(model: &ModelSpec, pair_count: usize, seed: u64) -> Result<(f64, bool)> {
    let mut max_lhs = f64::NEG_INFINITY;
    for pair in 0..pair_count {
        let mu = random_path_measure(model, seed, pair, 0)?;
        let nu = random_path_measure(model, seed, pair, 1)?;
        max_lhs = max_lhs.max(monotonicity_lhs(model, &mu, &nu)?);
    }
    Ok((max_lhs, max_lhs <= MONOTONE_TOL))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub init_action: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub runs: Vec<ProbeRun>,
    /// largest distance between converged flows; `None` with fewer than two
    pub max_distance: Option<f64>,
}

/// Runs the iteration from `starts` initial flows generated by random
/// constant actions (the dynamics seeds are shared) and compares the
/// converged flows.
pub fn uniqueness_probe(model: &ModelSpec, grid: Arc<ScenarioGrid>, starts: usize, cfg: &IterateConfig) -> Result<ProbeReport> {
    if starts < 2 {
        return Err(Error::OutOfRange { name: "starts", detail: format!("{starts} < 2") });
    }
    let state = state_grid_for(model, &cfg.solver)?;
    let mut runs = Vec::with_capacity(starts);
    let mut flows = Vec::new();
    for r in 0..starts {
        let mut rng = stream(cfg.init_seed, TAG_INIT_FLOW, u64::MAX, r as u64);
        let action = rng.gen_range(0..model.actions.len());
        let init_seed = derive_seed(cfg.init_seed, TAG_INIT_FLOW, r as u64, 1);
        let init = initial_flow(model, grid.clone(), &state, action, &cfg.solver, init_seed)?;
        let run_cfg = IterateConfig { init_action: action, init_seed, eval_seed: None, ..cfg.clone() };
        let rep = iterate_from(model, grid.clone(), &run_cfg, Some(init))?;
        if !rep.converged {
            log::warn!("probe start {r} (action {action}) did not converge; excluded");
        }
        runs.push(ProbeRun {
            init_action: action,
            converged: rep.converged,
            iterations: rep.iterations,
            final_residual: rep.final_residual(),
        });
        if rep.converged {
            flows.push(rep.flow);
        }
    }
    let mut max_distance: Option<f64> = None;
    for a in 0..flows.len() {
        for b in a + 1..flows.len() {
            let dist = flow_distance(&flows[a], &flows[b], model.p)?;
            max_distance = Some(max_distance.map_or(dist, |m| m.max(dist)));
        }
    }
    Ok(ProbeReport { runs, max_distance })
}

/// Mean consistency of the linear-quadratic game with
/// `g = -(x + c mean)^2`, `c = (1 - T) / T`: the consistency equation
/// `y_T = y_0 / (1 - T) + y_T` leaves `y_0 / (1 - T) = 0`, so any initial
/// mean `lambda_bar != 0` is contradictory. Returns the implied initial
/// mean and whether it contradicts `lambda_bar`.
pub fn counterexample_mean_map(horizon: f64, lambda_bar: f64) -> Result<(f64, bool)> {
    if !(horizon > 0.0) || (horizon - 1.0).abs() < 1e-12 {
        return Err(Error::OutOfRange { name: "T", detail: format!("{horizon}: need T > 0 and T != 1") });
    }
    // the only root of y_0 / (1 - T) = 0
    let implied = 0.0;
    Ok((implied, (lambda_bar - implied).abs() > 1e-12))
}
