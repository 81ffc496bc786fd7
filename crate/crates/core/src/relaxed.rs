//! Relaxed controls: probability vectors over a finite action grid, piecewise
//! constant on a uniform time mesh, and their projection to strict controls.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::transport::transport_cost;

const ROW_TOL: f64 = 1e-12;

/// Finite control set, points of R^dim_a stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    dim: usize,
    points: Vec<f64>,
}

impl ActionGrid {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::OutOfRange { name: "A_grid", detail: "empty or ragged action grid".into() });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange { name: "A_grid", detail: "non-finite action".into() });
        }
        Ok(ActionGrid { dim, points })
    }

    /// `n` equally spaced points on `[lo, hi]`; a single point sits at `lo`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi >= lo) {
            return Err(Error::OutOfRange { name: "A_grid", detail: format!("[{lo}, {hi}] with {n} points") });
        }
        if n == 1 {
            return Self::new(1, vec![lo]);
        }
        let pts = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Self::new(1, pts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    /// Index of the closest grid point and its distance. Exact ties go to the
    /// later grid point, so a midpoint on an increasing 1-D grid rounds up.
    pub fn nearest(&self, a: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.iter().enumerate() {
            let d = p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if d <= best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Largest Euclidean norm over the grid.
    pub fn max_norm(&self) -> f64 {
        self.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

/// Per-step probability vectors over an action grid on a uniform mesh of
/// `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct RelaxedControl {
    horizon: f64,
    steps: usize,
    actions: Arc<ActionGrid>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrictControl {
    pub horizon: f64,
    pub actions: Arc<ActionGrid>,
    pub indices: Vec<usize>,
}

impl StrictControl {
    /// The same control as a point-mass relaxed control.
    pub fn to_relaxed(&self) -> RelaxedControl {
        let k = self.actions.len();
        let mut weights = vec![0.0; self.indices.len() * k];
        for (s, &i) in self.indices.iter().enumerate() {
            weights[s * k + i] = 1.0;
        }
        RelaxedControl { horizon: self.horizon, steps: self.indices.len(), actions: self.actions.clone(), weights }
    }
}

impl RelaxedControl {
    /// `weights` holds `steps` rows of `actions.len()` entries. Rows are not
    /// required to be normalized; see [`RelaxedControl::check_time_marginal`].
    pub fn new(horizon: f64, actions: Arc<ActionGrid>, weights: Vec<f64>) -> Result<Self> {
        let k = actions.len();
        if weights.is_empty() || weights.len() % k != 0 {
            return Err(Error::GridMismatch(format!("{} weights for {k} actions", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure("negative or non-finite control weight".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::OutOfRange { name: "horizon", detail: format!("{horizon}") });
        }
        Ok(RelaxedControl { horizon, steps: weights.len() / k, actions, weights })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn actions(&self) -> &Arc<ActionGrid> {
        &self.actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let k = self.actions.len();
        &self.weights[s * k..(s + 1) * k]
    }

    /// True iff every row is a probability vector, i.e. the time marginal of
    /// the induced measure on `[0, T] x A` is Lebesgue measure.
    pub fn check_time_marginal(&self) -> bool {
        (0..self.steps).all(|s| (self.row(s).iter().sum::<f64>() - 1.0).abs() <= ROW_TOL)
    }

    /// Per step, the mean action snapped to the nearest grid point. Returns
    /// the strict control and the snapping distance per step. Only
    /// meaningful when the control set is convex.
    pub fn barycenter(&self, convex: bool) -> Result<(StrictControl, Vec<f64>)> {
        if !convex {
            return Err(Error::Precondition {
                model: "relaxed control".into(),
                detail: "barycenter projection needs a convex control set".into(),
            });
        }
        let mut indices = Vec::with_capacity(self.steps);
        let mut snaps = Vec::with_capacity(self.steps);
        for s in 0..self.steps {
            let bar = barycenter_of(&self.actions, self.row(s).iter().copied().enumerate());
            let (i, d) = self.actions.nearest(&bar);
            indices.push(i);
            snaps.push(d);
        }
        Ok((StrictControl { horizon: self.horizon, actions: self.actions.clone(), indices }, snaps))
    }

    /// CSV rows `time_index,action_index,weight` for nonzero weights.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_index", "action_index", "weight"])?;
        for s in 0..self.steps {
            for (a, &wt) in self.row(s).iter().enumerate() {
                if wt > 0.0 {
                    w.write_record([s.to_string(), a.to_string(), wt.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Weighted mean of grid actions given `(index, weight)` pairs.
pub fn barycenter_of(actions: &ActionGrid, weights: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut bar = vec![0.0; actions.dim()];
    let mut total = 0.0;
    for (i, w) in weights {
        total += w;
        for (b, a) in bar.iter_mut().zip(actions.get(i)) {
            *b += w * a;
        }
    }
    if total > 0.0 {
        bar.iter_mut().for_each(|b| *b /= total);
    }
    bar
}

/// p-Wasserstein distance between `q1 / T` and `q2 / T` as measures on
/// `[0, T] x A`, each step's mass placed at the step midpoint. Solved exactly.
pub fn relaxed_distance(q1: &RelaxedControl, q2: &RelaxedControl, p: f64) -> Result<f64> {
    if q1.steps != q2.steps || q1.horizon != q2.horizon {
        return Err(Error::GridMismatch("relaxed controls on different time meshes".into()));
    }
    if q1.actions.dim() != q2.actions.dim() {
        return Err(Error::DimensionMismatch { expected: q1.actions.dim(), got: q2.actions.dim() });
    }
    if !(p >= 1.0) {
        return Err(Error::OutOfRange { name: "p", detail: format!("{p}") });
    }
    let atoms = |q: &RelaxedControl| {
        let dt = q.horizon / q.steps as f64;
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for s in 0..q.steps {
            let row = q.row(s);
            let total: f64 = row.iter().sum();
            for (a, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    let mut pt = vec![(s as f64 + 0.5) * dt];
                    pt.extend_from_slice(q.actions.get(a));
                    out.push((pt, w / total / q.steps as f64));
                }
            }
        }
        out
    };
    let a = atoms(q1);
    let b = atoms(q2);
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for (x, _) in &a {
        for (y, _) in &b {
            let d = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            cost.push(d.powf(p));
        }
    }
    let sa: Vec<f64> = a.iter().map(|x| x.1).collect();
    let sb: Vec<f64> = b.iter().map(|x| x.1).collect();
    Ok(transport_cost(&sa, &sb, &cost).max(0.0).powf(1.0 / p))
}
