//! The representative player's problem against a fixed measure flow:
//! backward dynamic programming over (fine time, state grid point, node),
//! Monte Carlo evaluation, and relaxed-to-strict projection.

mod dp;
mod evaluate;
pub mod quadrature;

use std::io::{Read, Write};
use std::sync::Arc;

pub use dp::{solve_dp, DpSolution};
pub use evaluate::{best_response, evaluate_j, evaluate_pair, strictify_policy, Estimate};

use crate::error::{Error, Result};
use crate::grid::{NodeId, ScenarioGrid};
use crate::measures::MeasureFlow;
use crate::model::ModelSpec;
use crate::relaxed::ActionGrid;

pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    Relaxed,
    Strict,
}

impl std::str::FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relaxed" => Ok(PolicyMode::Relaxed),
            "strict" => Ok(PolicyMode::Strict),
            other => Err(Error::Config { key: "policy_mode".into(), detail: format!("`{other}` is not relaxed|strict") }),
        }
    }
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyMode::Relaxed => "relaxed",
            PolicyMode::Strict => "strict",
        })
    }
}

/// Uniform tensor grid on a box. Each point owns the cell of states closer
/// to it than to any other point.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
    step: Vec<f64>,
}

impl StateGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != n.len() {
            return Err(Error::OutOfRange { name: "state_grid", detail: "inconsistent dimensions".into() });
        }
        if n.iter().any(|&k| k < 2) || lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::OutOfRange { name: "state_grid", detail: "need hi > lo and >= 2 points".into() });
        }
        let step = lo.iter().zip(&hi).zip(&n).map(|((a, b), k)| (b - a) / (*k - 1) as f64).collect();
        Ok(StateGrid { lo, hi, n, step })
    }

    /// Same number of points per coordinate.
    pub fn cube(lo: &[f64], hi: &[f64], points: usize) -> Result<Self> {
        Self::new(lo.to_vec(), hi.to_vec(), vec![points; lo.len()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn points_per_dim(&self) -> &[usize] {
        &self.n
    }

    /// Coordinates of grid point `idx` (first coordinate fastest).
    pub fn point_into(&self, mut idx: usize, out: &mut [f64]) {
        for k in 0..self.dim() {
            let i = idx % self.n[k];
            idx /= self.n[k];
            out[k] = if i + 1 == self.n[k] { self.hi[k] } else { self.lo[k] + i as f64 * self.step[k] };
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(idx, &mut out);
        out
    }

    /// Index of the nearest grid point (clamped to the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            let r = ((x[k] - self.lo[k]) / self.step[k]).round();
            let i = if r.is_nan() { 0 } else { r.clamp(0.0, (self.n[k] - 1) as f64) as usize };
            idx += i * stride;
            stride *= self.n[k];
        }
        idx
    }

    /// Multilinear interpolation of grid values, clamped at the box. The
    /// flag reports whether `x` lay outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> (f64, bool) {
        let d = self.dim();
        let mut clamped = false;
        if d == 1 {
            let n = self.n[0];
            let mut u = (x[0] - self.lo[0]) / self.step[0];
            if !(u >= 0.0) {
                clamped |= u < 0.0;
                u = 0.0;
            } else if u > (n - 1) as f64 {
                clamped = true;
                u = (n - 1) as f64;
            }
            let i = (u.floor() as usize).min(n - 2);
            let r = u - i as f64;
            return ((1.0 - r) * values[i] + r * values[i + 1], clamped);
        }
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let n = self.n[k];
            let mut u = (x[k] - self.lo[k]) / self.step[k];
            if !(u >= 0.0) {
                clamped |= u < 0.0;
                u = 0.0;
            } else if u > (n - 1) as f64 {
                clamped = true;
                u = (n - 1) as f64;
            }
            base[k] = (u.floor() as usize).min(n - 2);
            frac[k] = u - base[k] as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for k in 0..d {
                let up = (corner >> k) & 1;
                w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + up) * stride;
                stride *= self.n[k];
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        (acc, clamped)
    }
}

/// Solver knobs shared by the dynamic program and Monte Carlo evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub particles: usize,
    pub seed: u64,
    pub state_points: usize,
    pub state_lo: Option<f64>,
    pub state_hi: Option<f64>,
    pub quad_nodes: usize,
    pub mode: PolicyMode,
    pub tie_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            particles: 4000,
            seed: 1,
            state_points: 1001,
            state_lo: None,
            state_hi: None,
            quad_nodes: 5,
            mode: PolicyMode::Strict,
            tie_tol: TIE_TOL,
        }
    }
}

/// Box from the state moment estimate: half-width
/// `4 (c4 (1 + m_p(lambda) + T max|a|^p))^(1/p)` around the origin, unless
/// overridden. Falls back to 4 standard deviations of a crude scale when the
/// model lacks the constants.
pub fn state_grid_for(model: &ModelSpec, opts: &SolverOptions) -> Result<StateGrid> {
    let p = model.p;
    let half = match model.c4(p) {
        Ok(c4) => {
            let lam = model.initial.moment_bound(p);
            let amax = model.actions.max_norm();
            4.0 * (c4 * (1.0 + lam + model.horizon * amax.powf(p))).powf(1.0 / p)
        }
        Err(_) => {
            let m = model.initial.mean().iter().map(|v| v.abs()).fold(0.0, f64::max);
            4.0 * (1.0 + m + model.horizon * (1.0 + model.actions.max_norm()))
        }
    };
    let lo = opts.state_lo.unwrap_or(-half);
    let hi = opts.state_hi.unwrap_or(half);
    StateGrid::cube(&vec![lo; model.d], &vec![hi; model.d], opts.state_points)
}

/// A Markov feedback rule per (fine time index, node, state cell): a list
/// of `(action index, probability)` pairs.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    grid: Arc<ScenarioGrid>,
    state: StateGrid,
    actions: Arc<ActionGrid>,
    mode: PolicyMode,
    offsets: Vec<u32>,
    entries: Vec<(u32, f64)>,
}

impl FeedbackPolicy {
    /// Number of (time, node) slots carrying a decision: all `j < n_fine`.
    fn decision_slots(grid: &ScenarioGrid) -> usize {
        grid.slot(grid.n_fine(), 0)
    }

    /// Builds a policy from per-(slot, cell) entry lists in slot order.
    pub fn from_rows(
        grid: Arc<ScenarioGrid>,
        state: StateGrid,
        actions: Arc<ActionGrid>,
        mode: PolicyMode,
        rows: impl IntoIterator<Item = Vec<(u32, f64)>>,
    ) -> Result<Self> {
        let mut offsets = vec![0u32];
        let mut entries = Vec::new();
        for row in rows {
            let total: f64 = row.iter().map(|e| e.1).sum();
            if row.is_empty() || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidMeasure(format!("policy row sums to {total}")));
            }
            if let Some(e) = row.iter().find(|e| e.0 as usize >= actions.len()) {
                return Err(Error::OutOfRange { name: "action_index", detail: format!("{}", e.0) });
            }
            entries.extend(row);
            offsets.push(entries.len() as u32);
        }
        let expected = Self::decision_slots(&grid) * state.len();
        if offsets.len() - 1 != expected {
            return Err(Error::GridMismatch(format!("{} policy rows, expected {expected}", offsets.len() - 1)));
        }
        Ok(FeedbackPolicy { grid, state, actions, mode, offsets, entries })
    }

    /// The same action everywhere.
    pub fn constant(grid: Arc<ScenarioGrid>, state: StateGrid, actions: Arc<ActionGrid>, action: usize) -> Result<Self> {
        let rows = Self::decision_slots(&grid) * state.len();
        Self::from_rows(grid, state, actions, PolicyMode::Strict, (0..rows).map(|_| vec![(action as u32, 1.0)]))
    }

    pub fn grid(&self) -> &Arc<ScenarioGrid> {
        &self.grid
    }

    pub fn state_grid(&self) -> &StateGrid {
        &self.state
    }

    pub fn actions(&self) -> &Arc<ActionGrid> {
        &self.actions
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row_index(&self, j: usize, code: usize, cell: usize) -> usize {
        self.grid.slot(j, code) * self.state.len() + cell
    }

    pub fn row(&self, r: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[r] as usize..self.offsets[r + 1] as usize]
    }

    /// Row used by a player at state `x`, fine time `j`, information node `code`.
    pub fn lookup_row(&self, j: usize, code: usize, x: &[f64]) -> usize {
        self.row_index(j, code, self.state.nearest(x))
    }

    pub fn decision(&self, j: usize, code: usize, cell: usize) -> &[(u32, f64)] {
        self.row(self.row_index(j, code, cell))
    }

    /// True when every row is a point mass.
    pub fn is_strict(&self) -> bool {
        (0..self.n_rows()).all(|r| self.row(r).len() == 1)
    }

    pub fn map_rows(&self, mode: PolicyMode, f: impl Fn(&[(u32, f64)]) -> Vec<(u32, f64)>) -> Result<Self> {
        let rows: Vec<Vec<(u32, f64)>> = (0..self.n_rows()).map(|r| f(self.row(r))).collect();
        Self::from_rows(self.grid.clone(), self.state.clone(), self.actions.clone(), mode, rows)
    }

    /// Long-format CSV: `time_index,node,x1..xd,action_index,weight,value`.
    /// `values`, when given, holds one value per decision row.
    pub fn write_csv<W: Write>(&self, out: W, values: Option<&ValueFunction>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.state.dim();
        let mut header = vec!["time_index".to_string(), "node".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend(["action_index", "weight", "value"].map(String::from));
        w.write_record(&header)?;
        let mut x = vec![0.0; d];
        for j in 0..self.grid.n_fine() {
            let depth = self.grid.depth_at(j);
            for code in 0..self.grid.nodes_at_depth(depth) {
                let name = self.grid.node_id(depth, code).to_string();
                for cell in 0..self.state.len() {
                    self.state.point_into(cell, &mut x);
                    let v = values.map(|vf| vf.get(j, code, cell).to_string()).unwrap_or_default();
                    for &(a, wt) in self.decision(j, code, cell) {
                        let mut row = vec![j.to_string(), name.clone()];
                        row.extend(x.iter().map(|v| v.to_string()));
                        row.extend([a.to_string(), wt.to_string(), v.clone()]);
                        w.write_record(&row)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a policy written by [`FeedbackPolicy::write_csv`] for the given
    /// grids. Rows may appear in any order.
    pub fn read_csv<R: Read>(
        input: R,
        grid: Arc<ScenarioGrid>,
        state: StateGrid,
        actions: Arc<ActionGrid>,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let d = state.dim();
        let n_rows = Self::decision_slots(&grid) * state.len();
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_rows];
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Parse("short policy row".into()));
            let num = |i: usize| -> Result<f64> {
                field(i)?.trim().parse::<f64>().map_err(|e| Error::Parse(format!("policy field {i}: {e}")))
            };
            let j = num(0)? as usize;
            if j >= grid.n_fine() {
                return Err(Error::GridMismatch(format!("policy time index {j} out of range")));
            }
            let node: NodeId = field(1)?.parse()?;
            if node.depth() != grid.depth_at(j) {
                return Err(Error::GridMismatch(format!("node {node} at time index {j}")));
            }
            let code = grid.node_code(&node)?;
            let x: Vec<f64> = (0..d).map(|k| num(2 + k)).collect::<Result<_>>()?;
            let cell = state.nearest(&x);
            let a = num(2 + d)? as u32;
            let wt = num(3 + d)?;
            rows[grid.slot(j, code) * state.len() + cell].push((a, wt));
        }
        let strict = rows.iter().all(|r| r.len() == 1);
        let mode = if strict { PolicyMode::Strict } else { PolicyMode::Relaxed };
        Self::from_rows(grid, state, actions, mode, rows)
    }
}

/// Bellman values per (fine time index including the horizon, node, state
/// grid point).
#[derive(Debug, Clone)]
pub struct ValueFunction {
    grid: Arc<ScenarioGrid>,
    cells: usize,
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn get(&self, j: usize, code: usize, cell: usize) -> f64 {
        self.values[self.grid.slot(j, code) * self.cells + cell]
    }

    pub fn slice(&self, j: usize, code: usize) -> &[f64] {
        let s = self.grid.slot(j, code) * self.cells;
        &self.values[s..s + self.cells]
    }

    /// Root value averaged over a set of initial states.
    pub fn initial_value(&self, state: &StateGrid, x0: &[f64], d: usize) -> f64 {
        let vals = self.slice(0, 0);
        let n = x0.len() / d;
        x0.chunks_exact(d).map(|x| state.interpolate(vals, x).0).sum::<f64>() / n as f64
    }
}

/// Check used by callers that need the flow and grid to match.
pub(crate) fn check_flow(model: &ModelSpec, flow: &MeasureFlow) -> Result<()> {
    if flow.dim() != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, got: flow.dim() });
    }
    if flow.grid().m0() != model.m0 {
        return Err(Error::DimensionMismatch { expected: model.m0, got: flow.grid().m0() });
    }
    if (flow.grid().horizon() - model.horizon).abs() > 1e-12 * model.horizon {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from model horizon {}",
            flow.grid().horizon(),
            model.horizon
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_exact_at_nodes_and_clamped() {
        let g = StateGrid::cube(&[-4.0], &[4.0], 33).unwrap();
        let vals: Vec<f64> = (0..33).map(|i| (i as f64).sin()).collect();
        for i in 0..33 {
            let x = g.point(i);
            assert_eq!(g.interpolate(&vals, &x), (vals[i], false));
        }
        let (v, c) = g.interpolate(&vals, &[10.0]);
        assert!(c);
        assert_eq!(v, vals[32]);
        assert_eq!(g.nearest(&[0.1]), 16);
    }

    #[test]
    fn bilinear() {
        let g = StateGrid::cube(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap();
        // f(x, y) = x + 2y is reproduced exactly
        let vals = [0.0, 1.0, 2.0, 3.0];
        let (v, _) = g.interpolate(&vals, &[0.25, 0.5]);
        assert!((v - 1.25).abs() < 1e-15);
    }
}
