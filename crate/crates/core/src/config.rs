//! Flat TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{PolicyMode, SolverOptions, TIE_TOL};
use crate::equilibrium::IterateConfig;
use crate::error::{Error, Result};
use crate::grid::ScenarioGrid;
use crate::model::{builtin_with, ModelSpec};

/// Environment variable read for the worker count when the config has none.
pub const WORKERS_ENV: &str = "MFG_WORKERS";

fn d_n_steps() -> usize {
    4
}
fn d_n_cells() -> usize {
    2
}
fn d_substeps() -> usize {
    8
}
fn d_theta() -> f64 {
    0.5
}
fn d_tol() -> f64 {
    1e-2
}
fn d_max_iter() -> usize {
    50
}
fn d_particles() -> usize {
    4000
}
fn d_seed() -> u64 {
    1
}
fn d_eval_seed() -> u64 {
    2
}
fn d_state_points() -> usize {
    1001
}
fn d_quad_nodes() -> usize {
    5
}
fn d_policy_mode() -> String {
    "strict".into()
}
fn d_exploit_threshold() -> f64 {
    0.01
}
fn d_probe_starts() -> usize {
    3
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("mfg_out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// builtin model name
    pub model: String,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_points: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,

    #[serde(default = "d_n_steps")]
    pub n_steps: usize,
    #[serde(default = "d_n_cells")]
    pub n_cells: usize,
    #[serde(default = "d_substeps")]
    pub substeps: usize,

    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_particles")]
    pub particles: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_eval_seed")]
    pub eval_seed: u64,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default)]
    pub init_action: usize,

    #[serde(default = "d_state_points")]
    pub state_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_hi: Option<f64>,
    #[serde(default = "d_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "d_policy_mode")]
    pub policy_mode: String,

    #[serde(default = "d_exploit_threshold")]
    pub exploit_threshold: f64,
    #[serde(default = "d_probe_starts")]
    pub probe_starts: usize,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn bad(key: &str, detail: impl Into<String>) -> Error {
    Error::Config { key: key.into(), detail: detail.into() }
}

impl RunConfig {
    /// Defaults for a builtin model.
    pub fn for_model(name: &str) -> Self {
        Self::parse(&format!("model = \"{name}\"")).expect("minimal config parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // unknown and missing keys name themselves in the message
            let key = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
            let detail = match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            };
            Error::Config { key, detail }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(bad("theta", format!("{} not in (0, 1]", self.theta)));
        }
        if !(self.tol > 0.0) {
            return Err(bad("tol", format!("{} must be > 0", self.tol)));
        }
        if self.particles < 100 {
            return Err(bad("particles", format!("{} < 100", self.particles)));
        }
        if self.max_iter == 0 {
            return Err(bad("max_iter", "must be >= 1"));
        }
        for (key, v) in [("n_steps", self.n_steps), ("n_cells", self.n_cells), ("substeps", self.substeps), ("quad_nodes", self.quad_nodes)] {
            if v == 0 {
                return Err(bad(key, "must be >= 1"));
            }
        }
        if self.state_points < 2 {
            return Err(bad("state_points", "must be >= 2"));
        }
        if let (Some(lo), Some(hi)) = (self.state_lo, self.state_hi) {
            if !(hi > lo) {
                return Err(bad("state_hi", format!("{hi} <= state_lo {lo}")));
            }
        }
        if self.workers == Some(0) {
            return Err(bad("workers", "must be >= 1"));
        }
        self.policy_mode.parse::<PolicyMode>()?;
        Ok(())
    }

    pub fn overrides(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let pairs = [
            ("horizon", self.horizon),
            ("p", self.p),
            ("p_prime", self.p_prime),
            ("lambda_mean", self.lambda_mean),
            ("lambda_std", self.lambda_std),
            ("sigma", self.sigma),
            ("sigma0", self.sigma0),
            ("a_min", self.a_min),
            ("a_max", self.a_max),
            ("a_points", self.a_points),
            ("coupling", self.coupling),
            ("c", self.c),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        }
        m
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        builtin_with(&self.model, &self.overrides())
    }

    pub fn grid(&self, model: &ModelSpec) -> Result<Arc<ScenarioGrid>> {
        ScenarioGrid::new(model.horizon, self.n_steps, self.n_cells, model.m0, self.substeps).map(Arc::new)
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        Ok(SolverOptions {
            particles: self.particles,
            seed: self.seed,
            state_points: self.state_points,
            state_lo: self.state_lo,
            state_hi: self.state_hi,
            quad_nodes: self.quad_nodes,
            mode: self.policy_mode.parse()?,
            tie_tol: TIE_TOL,
        })
    }

    pub fn iterate_config(&self) -> Result<IterateConfig> {
        Ok(IterateConfig {
            theta: self.theta,
            tol: self.tol,
            max_iter: self.max_iter,
            solver: self.solver_options()?,
            init_action: self.init_action,
            init_seed: self.init_seed,
            eval_seed: Some(self.eval_seed),
        })
    }

    /// Worker count from the config, else from the environment.
    pub fn worker_count(&self) -> Option<usize> {
        self.workers.or_else(|| std::env::var(WORKERS_ENV).ok()?.parse().ok().filter(|&n| n > 0))
    }
}
