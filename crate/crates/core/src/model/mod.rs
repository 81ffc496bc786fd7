//! Game data: coefficients, rewards, control set, initial law and the
//! structural flags the solver relies on.

mod builtin;
mod growth;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

pub use builtin::{builtin, builtin_with, BUILTIN_NAMES};
pub use growth::{validate_growth, Assumption, GrowthCheck, GrowthReport};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
pub use crate::relaxed::ActionGrid;

/// `b(t, x, mu, a)` written into `out` (length d).
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure, &[f64], &mut [f64]) + Send + Sync>;
/// `sigma(t, x, mu)` written row-major into `out` (d x m or d x m0).
pub type VolFn = Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync>;
/// `f(t, x, mu, a)`.
pub type RewardFn = Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> f64 + Send + Sync>;
/// `g(x, mu)`.
pub type TerminalFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure) -> f64 + Send + Sync>;
/// `f1(t, x, a)`.
pub type ControlRewardFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// `f2(t, x, mu)`.
pub type CouplingFn = Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure) -> f64 + Send + Sync>;

/// Decomposition `f = f1(t, x, a) + f2(t, x, mu)` of the running reward.
#[derive(Clone)]
pub struct RewardSplit {
    pub f1: ControlRewardFn,
    pub f2: CouplingFn,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    pub a_holds: bool,
    pub b_holds: bool,
    pub c_convexity: bool,
    pub d_linear_convex: bool,
    pub u_monotone: bool,
}

/// Growth constants and the bounds used for the closed-form moment constant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Constants {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    /// bound on `|b(t, x, mu, a) - a|`
    pub drift_offset: Option<f64>,
    /// bounds on the Frobenius norms of sigma and sigma0
    pub vol_bound: Option<f64>,
    pub vol0_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// Independent normal coordinates.
    Normal { mean: Vec<f64>, std: Vec<f64> },
    Dirac(Vec<f64>),
    Empirical(EmpiricalMeasure),
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Normal { mean, .. } => mean.len(),
            InitialLaw::Dirac(x) => x.len(),
            InitialLaw::Empirical(m) => m.dim(),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialLaw::Normal { mean, std } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + s * z;
                }
            }
            InitialLaw::Dirac(x) => out.copy_from_slice(x),
            InitialLaw::Empirical(mu) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = mu.len() - 1;
                for (i, w) in mu.weights().iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                out.copy_from_slice(mu.point(pick));
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::Normal { mean, .. } => mean.clone(),
            InitialLaw::Dirac(x) => x.clone(),
            InitialLaw::Empirical(m) => m.mean().to_vec(),
        }
    }

    /// Upper bound on `E|xi|^gamma` (exact for point masses and empirical laws).
    pub fn moment_bound(&self, gamma: f64) -> f64 {
        match self {
            InitialLaw::Normal { mean, std } => {
                let m = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = std.iter().map(|v| v * v).sum::<f64>().sqrt();
                if mean.len() == 1 {
                    // |m + sZ|^g <= 2^(g-1) (|m|^g + s^g |Z|^g) for g >= 1
                    let k = 2f64.powf((gamma - 1.0).max(0.0));
                    k * (m.powf(gamma) + s.powf(gamma) * abs_normal_moment(gamma))
                } else {
                    // chi moment bound via the largest coordinate scale
                    let k = 2f64.powf((gamma - 1.0).max(0.0));
                    let smax = std.iter().fold(0.0f64, |a, b| a.max(*b));
                    let chi = 2f64.powf(gamma / 2.0) * statrs::function::gamma::gamma((mean.len() as f64 + gamma) / 2.0)
                        / statrs::function::gamma::gamma(mean.len() as f64 / 2.0);
                    k * (m.powf(gamma) + smax.powf(gamma) * chi)
                }
            }
            InitialLaw::Dirac(x) => x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(gamma),
            InitialLaw::Empirical(mu) => mu.moment(gamma),
        }
    }
}

/// `E|Z|^gamma` for a standard normal `Z`.
pub fn abs_normal_moment(gamma: f64) -> f64 {
    use statrs::function::gamma::gamma as g;
    2f64.powf(gamma / 2.0) * g((gamma + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

/// The game. Coefficients receive the whole measure; builtin models only
/// read its mean. All closures must be pure.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub m0: usize,
    pub horizon: f64,
    pub p: f64,
    pub p_prime: f64,
    pub p_sigma: f64,
    pub drift: DriftFn,
    pub running: RewardFn,
    pub terminal: TerminalFn,
    pub sigma: VolFn,
    pub sigma0: VolFn,
    pub split: Option<RewardSplit>,
    pub initial: InitialLaw,
    pub actions: Arc<ActionGrid>,
    pub flags: Flags,
    pub constants: Constants,
    /// named scalar parameters (for reporting and derived quantities)
    pub params: BTreeMap<String, f64>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("m0", &self.m0)
            .field("horizon", &self.horizon)
            .field("p", &self.p)
            .field("p_prime", &self.p_prime)
            .field("actions", &self.actions.len())
            .field("flags", &self.flags)
            .field("params", &self.params)
            .finish()
    }
}

impl ModelSpec {
    /// A model with zero coefficients and rewards, to be filled in by the caller.
    pub fn blank(name: &str, d: usize, m: usize, m0: usize, horizon: f64, actions: ActionGrid) -> Self {
        ModelSpec {
            name: name.to_string(),
            d,
            m,
            m0,
            horizon,
            p: 1.0,
            p_prime: 2.0,
            p_sigma: 0.0,
            drift: Arc::new(|_, _, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            running: Arc::new(|_, _, _, _| 0.0),
            terminal: Arc::new(|_, _| 0.0),
            sigma: Arc::new(|_, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            sigma0: Arc::new(|_, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            split: None,
            initial: InitialLaw::Dirac(vec![0.0; d]),
            actions: Arc::new(actions),
            flags: Flags::default(),
            constants: Constants::default(),
            params: BTreeMap::new(),
        }
    }

    /// Checks dimensions and the exponent ordering `p' > p >= max(1, p_sigma)`,
    /// `p_sigma` in `[0, 2]`.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.m0 == 0 {
            return Err(Error::OutOfRange { name: "dims", detail: "d, m, m0 must be >= 1".into() });
        }
        if self.initial.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: self.initial.dim() });
        }
        if self.actions.is_empty() {
            return Err(Error::OutOfRange { name: "A_grid", detail: "empty".into() });
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::OutOfRange { name: "horizon", detail: format!("{}", self.horizon) });
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::OutOfRange { name: "p", detail: format!("{} must be >= 1", self.p) });
        }
        Ok(())
    }

    /// Whether the exponent conditions of the standing assumption hold.
    pub fn exponents_ok(&self) -> bool {
        self.p_prime > self.p && self.p >= 1f64.max(self.p_sigma) && (0.0..=2.0).contains(&self.p_sigma)
    }

    /// Control set is convex (needed for barycenter projection).
    pub fn convex_controls(&self) -> bool {
        self.flags.c_convexity || self.flags.d_linear_convex
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    /// Closed-form constant `c4` of the state moment estimate
    /// `E sup_t |X_t|^g <= c4 (1 + sup_t int |z|^g mu_t + E int |a_t|^g dt)`
    /// for `1 <= g`, from `|X| <= |xi| + int |a| + beta T + |int s dW| + |int s0 dB|`
    /// and Doob/Jensen bounds on the martingale terms. Valid for bounded
    /// volatilities; the `g > 2` branch assumes constant ones.
    pub fn c4(&self, gamma: f64) -> Result<f64> {
        let beta = self.constants.drift_offset.ok_or(Error::MissingConstant("drift_offset"))?;
        let s = self.constants.vol_bound.ok_or(Error::MissingConstant("vol_bound"))?;
        let s0 = self.constants.vol0_bound.ok_or(Error::MissingConstant("vol0_bound"))?;
        if !(gamma >= 1.0) {
            return Err(Error::OutOfRange { name: "gamma", detail: format!("{gamma} must be >= 1") });
        }
        let t = self.horizon;
        let mart = if gamma <= 2.0 {
            (4.0 * t).powf(gamma / 2.0)
        } else {
            (gamma / (gamma - 1.0)).powf(gamma) * t.powf(gamma / 2.0) * abs_normal_moment(gamma)
        };
        let base = self.initial.moment_bound(gamma) + (beta * t).powf(gamma) + (s.powf(gamma) + s0.powf(gamma)) * mart;
        Ok(5f64.powf(gamma - 1.0) * base.max(t.powf(gamma - 1.0)))
    }
}
