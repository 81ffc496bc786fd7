//! Common-noise discretization: time mesh, increment cells, the scenario
//! tree of discretization classes, and the delayed interpolation operator.
//!
//! Nodes at depth `k` are addressed internally by a base-`n_cells` code whose
//! most significant digit is the first increment's cell. Cells are numbered
//! from the top: for two cells, cell 1 is `[0, inf)` and cell 2 is
//! `(-inf, 0)`. Cells are closed below.

use std::fmt;

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// A node of the scenario tree: the cell labels `i_1 .. i_k` (1-based) of the
/// first `k` mesh increments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub Vec<usize>);

/// A full-depth node.
pub type LeafId = NodeId;

impl NodeId {
    pub fn root() -> Self {
        NodeId(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_prefix_of(&self, other: &NodeId) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    pub fn prefix(&self, k: usize) -> NodeId {
        NodeId(self.0[..k.min(self.0.len())].to_vec())
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "root");
        }
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

impl std::str::FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "root" || s.is_empty() {
            return Ok(NodeId::root());
        }
        s.split('.')
            .map(|p| p.parse::<usize>().map_err(|e| Error::Parse(format!("node `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(NodeId)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioGrid {
    horizon: f64,
    n_steps: usize,
    n_cells: usize,
    m0: usize,
    substeps: usize,
    /// cells per coordinate; `n_cells = per_coord^m0`
    per_coord: usize,
    /// standardized boundaries, descending, `per_coord + 1` entries
    bounds: Vec<f64>,
    cell_probs: Vec<f64>,
    coord_mean: Vec<f64>,
    coord_var: Vec<f64>,
    /// `pow[k] = n_cells^k`
    pow: Vec<usize>,
    depth_offset: Vec<usize>,
    slot_offset: Vec<usize>,
}

fn integer_root(n: usize, k: usize) -> Option<usize> {
    let r = (n as f64).powf(1.0 / k as f64).round() as usize;
    (r.saturating_sub(1)..=r + 1).find(|&c| c >= 1 && c.checked_pow(k as u32) == Some(n))
}

impl ScenarioGrid {
    pub fn new(horizon: f64, n_steps: usize, n_cells: usize, m0: usize, substeps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::OutOfRange { name: "horizon", detail: format!("{horizon}") });
        }
        if n_steps == 0 {
            return Err(Error::OutOfRange { name: "n_steps", detail: "must be >= 1".into() });
        }
        if n_cells == 0 {
            return Err(Error::OutOfRange { name: "n_cells", detail: "must be >= 1".into() });
        }
        if m0 == 0 {
            return Err(Error::OutOfRange { name: "m0", detail: "must be >= 1".into() });
        }
        if substeps == 0 {
            return Err(Error::OutOfRange { name: "substeps", detail: "must be >= 1".into() });
        }
        let per_coord = integer_root(n_cells, m0).ok_or_else(|| Error::OutOfRange {
            name: "n_cells",
            detail: format!("{n_cells} is not a perfect power of order m0 = {m0}"),
        })?;
        let leaves = (n_cells as u128).checked_pow(n_steps as u32);
        if leaves.map_or(true, |l| l > 1 << 24) {
            return Err(Error::OutOfRange { name: "n_steps", detail: "scenario tree too large".into() });
        }

        let std = Normal::standard();
        let q = per_coord as f64;
        let mut bounds = vec![f64::INFINITY];
        for k in 1..per_coord {
            // upper tail quantile, computed from the nearer tail for accuracy
            let v = k as f64 / q;
            let z = if v <= 0.5 { -std_quantile(v) } else { std_quantile(1.0 - v) };
            bounds.push(z);
        }
        bounds.push(f64::NEG_INFINITY);

        let mut coord_prob = Vec::with_capacity(per_coord);
        let mut coord_mean = Vec::with_capacity(per_coord);
        let mut coord_var = Vec::with_capacity(per_coord);
        for c in 0..per_coord {
            let (hi, lo) = (bounds[c], bounds[c + 1]);
            let p = tail_prob(&std, lo) - tail_prob(&std, hi);
            let dens = |z: f64| if z.is_finite() { std.pdf(z) } else { 0.0 };
            let zdens = |z: f64| if z.is_finite() { z * std.pdf(z) } else { 0.0 };
            let mean = (dens(lo) - dens(hi)) / p;
            let second = 1.0 + (zdens(lo) - zdens(hi)) / p;
            coord_prob.push(p);
            coord_mean.push(mean);
            coord_var.push((second - mean * mean).max(0.0));
        }
        let cell_probs = (0..n_cells)
            .map(|cell| {
                let mut rest = cell;
                let mut prob = 1.0;
                for _ in 0..m0 {
                    prob *= coord_prob[rest % per_coord];
                    rest /= per_coord;
                }
                prob
            })
            .collect();

        let pow: Vec<usize> = (0..=n_steps).map(|k| n_cells.pow(k as u32)).collect();
        let mut depth_offset = vec![0usize];
        for k in 0..=n_steps {
            depth_offset.push(depth_offset[k] + pow[k]);
        }
        let n_fine = n_steps * substeps;
        let mut slot_offset = vec![0usize];
        for j in 0..=n_fine {
            let k = (j / substeps).min(n_steps);
            slot_offset.push(slot_offset[j] + pow[k]);
        }
        Ok(ScenarioGrid {
            horizon,
            n_steps,
            n_cells,
            m0,
            substeps,
            per_coord,
            bounds,
            cell_probs,
            coord_mean,
            coord_var,
            pow,
            depth_offset,
            slot_offset,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn cell_probs(&self) -> &[f64] {
        &self.cell_probs
    }

    /// Length of one mesh interval.
    pub fn mesh_dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn mesh_time(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.n_steps as f64
    }

    pub fn n_fine(&self) -> usize {
        self.n_steps * self.substeps
    }

    pub fn fine_dt(&self) -> f64 {
        self.horizon / self.n_fine() as f64
    }

    pub fn fine_time(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.n_fine() as f64
    }

    /// Depth of the node that carries the information at fine time index `j`.
    pub fn depth_at(&self, j: usize) -> usize {
        (j / self.substeps).min(self.n_steps)
    }

    pub fn nodes_at_depth(&self, k: usize) -> usize {
        self.pow[k]
    }

    pub fn n_leaves(&self) -> usize {
        self.pow[self.n_steps]
    }

    /// Total number of tree nodes, root included.
    pub fn n_nodes(&self) -> usize {
        self.depth_offset[self.n_steps + 1]
    }

    pub fn global_index(&self, depth: usize, code: usize) -> usize {
        self.depth_offset[depth] + code
    }

    /// Number of (fine time, node) slots from `j = 0` through `j = n_fine`.
    pub fn n_slots(&self) -> usize {
        self.slot_offset[self.n_fine() + 1]
    }

    pub fn slot(&self, j: usize, code: usize) -> usize {
        self.slot_offset[j] + code
    }

    pub fn slot_range(&self, j: usize) -> std::ops::Range<usize> {
        self.slot_offset[j]..self.slot_offset[j + 1]
    }

    /// Ancestor code at depth `k` of a node code at depth `depth >= k`.
    pub fn ancestor(&self, depth: usize, code: usize, k: usize) -> usize {
        code / self.pow[depth - k]
    }

    /// Probability of the node with the given code at depth `k`.
    pub fn node_prob(&self, depth: usize, code: usize) -> f64 {
        let mut rest = code;
        let mut prob = 1.0;
        for _ in 0..depth {
            prob *= self.cell_probs[rest % self.n_cells];
            rest /= self.n_cells;
        }
        prob
    }

    pub fn node_id(&self, depth: usize, code: usize) -> NodeId {
        let mut labels = vec![0; depth];
        let mut rest = code;
        for k in (0..depth).rev() {
            labels[k] = rest % self.n_cells + 1;
            rest /= self.n_cells;
        }
        NodeId(labels)
    }

    pub fn node_code(&self, node: &NodeId) -> Result<usize> {
        if node.depth() > self.n_steps {
            return Err(Error::GridMismatch(format!("node {node} deeper than {} steps", self.n_steps)));
        }
        node.0.iter().try_fold(0usize, |acc, &c| {
            if c == 0 || c > self.n_cells {
                Err(Error::GridMismatch(format!("cell label {c} outside 1..={}", self.n_cells)))
            } else {
                Ok(acc * self.n_cells + c - 1)
            }
        })
    }

    /// Index of the last mesh time not after `t`.
    pub fn floor_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::OutOfRange { name: "t", detail: format!("{t} outside [0, {}]", self.horizon) });
        }
        let mut i = ((t / self.horizon) * self.n_steps as f64).floor() as usize;
        i = i.min(self.n_steps);
        while i > 0 && self.mesh_time(i) > t {
            i -= 1;
        }
        while i < self.n_steps && self.mesh_time(i + 1) <= t {
            i += 1;
        }
        Ok(i)
    }

    /// Largest mesh time not after `t`.
    pub fn floor_n(&self, t: f64) -> Result<f64> {
        Ok(self.mesh_time(self.floor_index(t)?))
    }

    /// Cell (0-based) of a standardized coordinate value.
    fn coord_cell(&self, z: f64) -> usize {
        // bounds descending; closed below: bounds[c+1] <= z < bounds[c]
        (0..self.per_coord).find(|&c| z >= self.bounds[c + 1]).unwrap_or(self.per_coord - 1)
    }

    /// 0-based cell of a common-noise increment over a time step of length `dt`.
    pub fn classify_increment(&self, increment: &[f64], dt: f64) -> Result<usize> {
        if increment.len() != self.m0 {
            return Err(Error::DimensionMismatch { expected: self.m0, got: increment.len() });
        }
        let s = dt.sqrt();
        let mut cell = 0;
        for (k, v) in increment.iter().enumerate() {
            cell += self.coord_cell(v / s) * self.per_coord.pow(k as u32);
        }
        Ok(cell)
    }

    /// Leaf of a common-noise path given by its `n_steps` mesh increments
    /// (each of length `m0`).
    pub fn classify_path(&self, increments: &[Vec<f64>]) -> Result<LeafId> {
        if increments.len() != self.n_steps {
            return Err(Error::GridMismatch(format!(
                "{} increments for {} mesh steps",
                increments.len(),
                self.n_steps
            )));
        }
        let h = self.mesh_dt();
        increments
            .iter()
            .map(|inc| self.classify_increment(inc, h).map(|c| c + 1))
            .collect::<Result<Vec<_>>>()
            .map(NodeId)
    }

    /// The prefix of `leaf` that generates the information at time `t`.
    pub fn node_of(&self, leaf: &LeafId, t: f64) -> Result<NodeId> {
        let k = self.floor_index(t)?;
        if leaf.depth() != self.n_steps {
            return Err(Error::GridMismatch(format!("leaf {leaf} has depth {}", leaf.depth())));
        }
        Ok(leaf.prefix(k))
    }

    /// Conditional mean of a standard normal coordinate given its cell.
    pub fn standardized_cell_mean(&self, cell: usize) -> Vec<f64> {
        self.coords(cell).map(|c| self.coord_mean[c]).collect()
    }

    pub fn standardized_cell_var(&self, cell: usize) -> Vec<f64> {
        self.coords(cell).map(|c| self.coord_var[c]).collect()
    }

    /// `E[dB | dB in cell]` for an increment over a step of length `dt`.
    pub fn cell_mean(&self, cell: usize, dt: f64) -> Vec<f64> {
        let s = dt.sqrt();
        self.standardized_cell_mean(cell).into_iter().map(|m| m * s).collect()
    }

    pub fn cell_var(&self, cell: usize, dt: f64) -> Vec<f64> {
        self.standardized_cell_var(cell).into_iter().map(|v| v * dt).collect()
    }

    fn coords(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let mut rest = cell;
        (0..self.m0).map(move |_| {
            let c = rest % self.per_coord;
            rest /= self.per_coord;
            c
        })
    }

    /// Standard normal quantile restricted to coordinate cell `c`, at
    /// relative position `v` in (0, 1) within the cell (0 is the cell's
    /// upper end).
    pub(crate) fn coord_quantile(&self, c: usize, v: f64) -> f64 {
        let q = self.per_coord as f64;
        // upper-tail probability of the point
        let tail = (c as f64 + v) / q;
        if tail <= 0.5 {
            -std_quantile(tail)
        } else {
            std_quantile((q - c as f64 - v) / q)
        }
    }

    /// Draws a Brownian increment over a step of length `dt` conditioned to
    /// lie in `cell`, by inverse transform inside the cell's quantile box.
    pub fn sample_conditional_increment<R: Rng + ?Sized>(&self, cell: usize, dt: f64, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.m0];
        self.sample_conditional_into(cell, dt, rng, &mut out);
        out
    }

    pub(crate) fn sample_conditional_into<R: Rng + ?Sized>(&self, cell: usize, dt: f64, rng: &mut R, out: &mut [f64]) {
        let s = dt.sqrt();
        if self.per_coord == 1 {
            for o in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *o = s * z;
            }
            return;
        }
        for (o, c) in out.iter_mut().zip(self.coords(cell).collect::<Vec<_>>()) {
            let v: f64 = rng.sample(Open01);
            *o = s * self.coord_quantile(c, v);
        }
    }

    /// An unconditioned Brownian path sampled at mesh increments, classified.
    pub fn sample_leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> LeafId {
        let h = self.mesh_dt();
        let incs: Vec<Vec<f64>> = (0..self.n_steps)
            .map(|_| (0..self.m0).map(|_| h.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        self.classify_path(&incs).expect("sampled path has the right length")
    }

    /// True when `self` refines `coarse`: its mesh contains the coarse mesh
    /// and each of its cells sits inside one coarse cell.
    pub fn refines(&self, coarse: &ScenarioGrid) -> bool {
        self.m0 == coarse.m0
            && (self.horizon - coarse.horizon).abs() <= 1e-12 * self.horizon
            && self.n_steps >= coarse.n_steps
            && self.n_steps % coarse.n_steps == 0
            && self.per_coord % coarse.per_coord == 0
            && self.n_fine() % coarse.n_fine() == 0
    }

    /// Delayed piecewise-linear interpolation of a path given at the mesh
    /// times (`n_steps + 1` rows of `dim` values), sampled on the fine grid.
    /// On `[t_i, t_{i+1}]` it moves linearly from `x_{(i-1)+}` to `x_i`.
    pub fn hat_interpolate(&self, path: &[f64], dim: usize) -> Result<Vec<f64>> {
        if dim == 0 || path.len() != (self.n_steps + 1) * dim {
            return Err(Error::GridMismatch(format!(
                "path of {} values for {} mesh times in dimension {dim}",
                path.len(),
                self.n_steps + 1
            )));
        }
        let s = self.substeps;
        let mut out = Vec::with_capacity((self.n_fine() + 1) * dim);
        out.extend_from_slice(&path[..dim]);
        for i in 0..self.n_steps {
            let x = &path[i * dim..(i + 1) * dim];
            let y = &path[i.saturating_sub(1) * dim..(i.saturating_sub(1) + 1) * dim];
            for k in 1..=s {
                let r = k as f64 / s as f64;
                for (xv, yv) in x.iter().zip(y) {
                    let v = r * xv + (1.0 - r) * yv;
                    out.push(v.clamp(xv.min(*yv), xv.max(*yv)));
                }
            }
        }
        Ok(out)
    }
}

/// Standard normal quantile, polished by Newton steps on the cdf (the
/// library inverse alone is only accurate to about 1e-11).
pub(crate) fn std_quantile(u: f64) -> f64 {
    let std = Normal::standard();
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    if u > 0.5 {
        return -std_quantile(1.0 - u);
    }
    let mut z = std.inverse_cdf(u);
    for _ in 0..2 {
        let d = std.pdf(z);
        if d > 0.0 {
            z -= (std.cdf(z) - u) / d;
        }
    }
    z
}

fn tail_prob(std: &Normal, z: f64) -> f64 {
    if z == f64::INFINITY {
        0.0
    } else if z == f64::NEG_INFINITY {
        1.0
    } else {
        std.sf(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_examples() {
        let g = ScenarioGrid::new(1.0, 4, 2, 1, 8).unwrap();
        assert_eq!(g.floor_n(0.0).unwrap(), 0.0);
        assert_eq!(g.floor_n(0.3).unwrap(), 0.25);
        assert_eq!(g.floor_n(1.0).unwrap(), 1.0);
        assert!(g.floor_n(1.5).is_err());
    }

    #[test]
    fn classify_examples() {
        let g = ScenarioGrid::new(1.0, 4, 2, 1, 1).unwrap();
        let incs = [0.4, -0.2, 0.1, 2.0].map(|v| vec![v]).to_vec();
        assert_eq!(g.classify_path(&incs).unwrap(), NodeId(vec![1, 2, 1, 1]));
        assert_eq!(g.classify_increment(&[0.0], 1.0).unwrap(), 0);
        let one = ScenarioGrid::new(1.0, 4, 1, 1, 1).unwrap();
        assert_eq!(one.classify_path(&incs).unwrap(), NodeId(vec![1; 4]));
        let three = ScenarioGrid::new(1.0, 1, 3, 1, 1).unwrap();
        assert_eq!(three.classify_path(&[vec![0.0]]).unwrap(), NodeId(vec![2]));
    }

    #[test]
    fn node_of_prefixes() {
        let g = ScenarioGrid::new(1.0, 4, 2, 1, 8).unwrap();
        let leaf = NodeId(vec![2, 1, 1, 2]);
        assert_eq!(g.node_of(&leaf, 0.1).unwrap(), NodeId::root());
        assert_eq!(g.node_of(&leaf, 1.0).unwrap(), leaf);
        assert_eq!(g.node_of(&leaf, 0.6).unwrap().to_string(), "2.1");
    }

    #[test]
    fn codes_roundtrip() {
        let g = ScenarioGrid::new(2.0, 3, 3, 1, 2).unwrap();
        for code in 0..27 {
            let id = g.node_id(3, code);
            assert_eq!(g.node_code(&id).unwrap(), code);
            assert_eq!(id.to_string().parse::<NodeId>().unwrap(), id);
        }
        assert_eq!(g.n_nodes(), 1 + 3 + 9 + 27);
        assert_eq!(g.n_slots(), 2 * (1 + 3 + 9) + 27);
    }

    #[test]
    fn cell_probabilities() {
        for n in 1..8 {
            let g = ScenarioGrid::new(1.0, 1, n, 1, 1).unwrap();
            for p in g.cell_probs() {
                assert!((p - 1.0 / n as f64).abs() < 1e-12);
            }
        }
        let g = ScenarioGrid::new(1.0, 1, 2, 1, 1).unwrap();
        assert!((g.cell_mean(0, 1.0)[0] - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!(ScenarioGrid::new(1.0, 1, 3, 2, 1).is_err());
        assert_eq!(ScenarioGrid::new(1.0, 1, 9, 2, 1).unwrap().cell_probs().len(), 9);
    }

    #[test]
    fn interpolation_is_delayed() {
        let g = ScenarioGrid::new(1.0, 3, 1, 1, 4).unwrap();
        let path = [1.0, 2.0, -3.0, 5.0];
        let hat = g.hat_interpolate(&path, 1).unwrap();
        for i in 0..3 {
            assert_eq!(hat[(i + 1) * 4], path[i]);
        }
        assert_eq!(hat[0], 1.0);
    }
}
