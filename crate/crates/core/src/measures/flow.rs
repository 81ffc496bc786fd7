use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::empirical::EmpiricalMeasure;
use super::transport::wasserstein_p;
use crate::error::{Error, Result};
use crate::grid::{NodeId, ScenarioGrid};

/// A measure flow adapted to the discretized common noise: one measure per
/// (fine time index, node carrying the information at that time).
///
/// Slots are laid out as in [`ScenarioGrid::slot`]. Adaptedness holds by
/// construction since leaves sharing a prefix read the same slot.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    grid: Arc<ScenarioGrid>,
    dim: usize,
    slots: Vec<EmpiricalMeasure>,
}

pub(crate) fn same_grid(a: &ScenarioGrid, b: &ScenarioGrid) -> bool {
    a.n_steps() == b.n_steps()
        && a.n_cells() == b.n_cells()
        && a.substeps() == b.substeps()
        && a.m0() == b.m0()
        && a.horizon() == b.horizon()
}

impl MeasureFlow {
    pub fn new(grid: Arc<ScenarioGrid>, slots: Vec<EmpiricalMeasure>) -> Result<Self> {
        if slots.len() != grid.n_slots() {
            return Err(Error::GridMismatch(format!("{} measures for {} slots", slots.len(), grid.n_slots())));
        }
        let dim = slots[0].dim();
        if let Some(m) = slots.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: m.dim() });
        }
        Ok(MeasureFlow { grid, dim, slots })
    }

    /// The same measure at every time and node.
    pub fn constant(grid: Arc<ScenarioGrid>, measure: EmpiricalMeasure) -> Self {
        let n = grid.n_slots();
        MeasureFlow { dim: measure.dim(), grid, slots: vec![measure; n] }
    }

    pub fn grid(&self) -> &Arc<ScenarioGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> &[EmpiricalMeasure] {
        &self.slots
    }

    /// Measure at fine time index `j` for the node with code `code` at depth
    /// `grid.depth_at(j)`.
    pub fn at(&self, j: usize, code: usize) -> &EmpiricalMeasure {
        &self.slots[self.grid.slot(j, code)]
    }

    /// Measure at fine time index `j` seen from any node that extends the
    /// information node (a leaf, for instance).
    pub fn at_node(&self, j: usize, node: &NodeId) -> Result<&EmpiricalMeasure> {
        let k = self.grid.depth_at(j);
        if node.depth() < k {
            return Err(Error::GridMismatch(format!("node {node} too shallow for time index {j}")));
        }
        let code = self.grid.node_code(&node.prefix(k))?;
        Ok(self.at(j, code))
    }

    fn check_compatible(&self, other: &MeasureFlow) -> Result<()> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::GridMismatch("flows live on different scenario grids".into()));
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        Ok(())
    }

    /// Per-slot `(1 - theta) * self + theta * other`.
    pub fn mix(&self, other: &MeasureFlow, theta: f64) -> Result<MeasureFlow> {
        self.check_compatible(other)?;
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::OutOfRange { name: "theta", detail: format!("{theta} not in [0, 1]") });
        }
        let slots = self
            .slots
            .iter()
            .zip(&other.slots)
            .map(|(a, b)| a.mix(b, theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasureFlow { grid: self.grid.clone(), dim: self.dim, slots })
    }

    /// Compresses every slot; `caps` gives the per-slot atom budget.
    pub fn compress(&self, caps: Option<&[usize]>) -> MeasureFlow {
        let slots = self
            .slots
            .par_iter()
            .enumerate()
            .map(|(i, m)| m.compress(caps.map(|c| c[i])))
            .collect();
        MeasureFlow { grid: self.grid.clone(), dim: self.dim, slots }
    }

    /// Per-slot distances in slot order.
    pub fn slot_distances(&self, other: &MeasureFlow, p: f64) -> Result<Vec<f64>> {
        self.check_compatible(other)?;
        self.slots.par_iter().zip(&other.slots).map(|(a, b)| wasserstein_p(a, b, p)).collect()
    }

    /// Writes `index.csv` and one `node_<name>.csv` per node into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let g = &self.grid;
        let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
        index.write_record(["node", "file", "first_time_index", "last_time_index"])?;
        for depth in 0..=g.n_steps() {
            let times = node_times(g, depth);
            for code in 0..g.nodes_at_depth(depth) {
                let name = g.node_id(depth, code).to_string();
                let file = format!("node_{name}.csv");
                index.write_record([
                    name.clone(),
                    file.clone(),
                    times.start.to_string(),
                    (times.end - 1).to_string(),
                ])?;
                let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(&file))?));
                let mut header = vec!["time_index".to_string(), "weight".to_string()];
                header.extend((1..=self.dim).map(|i| format!("x{i}")));
                w.write_record(&header)?;
                for j in times.clone() {
                    for (x, wt) in self.at(j, code).iter() {
                        let mut row = vec![j.to_string(), wt.to_string()];
                        row.extend(x.iter().map(|v| v.to_string()));
                        w.write_record(&row)?;
                    }
                }
                w.flush()?;
            }
        }
        index.flush()?;
        Ok(())
    }

    /// Reads a flow written by [`MeasureFlow::write_dir`] for the given grid.
    pub fn read_dir(dir: &Path, grid: Arc<ScenarioGrid>) -> Result<MeasureFlow> {
        let mut index = csv::Reader::from_path(dir.join("index.csv"))?;
        let mut slots: Vec<Option<EmpiricalMeasure>> = vec![None; grid.n_slots()];
        for rec in index.records() {
            let rec = rec?;
            let node: NodeId = rec.get(0).unwrap_or("").parse()?;
            let file = rec.get(1).ok_or_else(|| Error::Parse("index row without file".into()))?;
            let depth = node.depth();
            let code = grid.node_code(&node)?;
            let times = node_times(&grid, depth);
            let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(dir.join(file))?));
            let dim = rdr.headers()?.len().saturating_sub(2);
            let mut per_time: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); times.len()];
            for row in rdr.records() {
                let row = row?;
                let vals = row
                    .iter()
                    .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{file}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                let j = vals[0] as usize;
                if !times.contains(&j) {
                    return Err(Error::GridMismatch(format!("{file}: time index {j} not carried by node {node}")));
                }
                let entry = &mut per_time[j - times.start];
                entry.1.push(vals[1]);
                entry.0.extend_from_slice(&vals[2..2 + dim]);
            }
            for (off, (pts, wts)) in per_time.into_iter().enumerate() {
                let j = times.start + off;
                slots[grid.slot(j, code)] = Some(EmpiricalMeasure::from_masses(dim, pts, wts)?);
            }
        }
        let slots = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::GridMismatch(format!("flow directory misses slot {i}"))))
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(grid, slots)
    }
}

/// Fine time indices whose information node has the given depth.
pub fn node_times(grid: &ScenarioGrid, depth: usize) -> std::ops::Range<usize> {
    let s = grid.substeps();
    if depth == grid.n_steps() {
        grid.n_fine()..grid.n_fine() + 1
    } else {
        depth * s..(depth + 1) * s
    }
}

/// Maximum over all slots of the p-Wasserstein distance.
pub fn flow_distance(a: &MeasureFlow, b: &MeasureFlow, p: f64) -> Result<f64> {
    Ok(a.slot_distances(b, p)?.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<ScenarioGrid> {
        Arc::new(ScenarioGrid::new(1.0, 2, 2, 1, 2).unwrap())
    }

    #[test]
    fn distance_and_mix() {
        let g = grid();
        let a = MeasureFlow::constant(g.clone(), EmpiricalMeasure::dirac(&[0.0]));
        let b = MeasureFlow::constant(g.clone(), EmpiricalMeasure::dirac(&[1.0]));
        assert_eq!(flow_distance(&a, &a, 1.0).unwrap(), 0.0);
        assert_eq!(flow_distance(&a, &b, 1.0).unwrap(), 1.0);
        let m = a.mix(&b, 0.25).unwrap();
        for s in m.slots() {
            assert!((s.mean_scalar() - 0.25).abs() < 1e-15);
        }
        assert!(a.mix(&b, 1.5).is_err());
    }

    #[test]
    fn one_node_differs() {
        let g = grid();
        let a = MeasureFlow::constant(g.clone(), EmpiricalMeasure::dirac(&[0.0]));
        let mut slots = a.slots().to_vec();
        let s = g.slot(3, 1);
        slots[s] = EmpiricalMeasure::dirac(&[1.0]);
        let b = MeasureFlow::new(g, slots).unwrap();
        assert_eq!(flow_distance(&a, &b, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn directory_roundtrip() {
        let g = grid();
        let slots: Vec<EmpiricalMeasure> = (0..g.n_slots())
            .map(|i| EmpiricalMeasure::new(1, vec![i as f64, -0.5], vec![0.25, 0.75]).unwrap())
            .collect();
        let f = MeasureFlow::new(g.clone(), slots).unwrap();
        let dir = std::env::temp_dir().join(format!("flow_rt_{}", std::process::id()));
        f.write_dir(&dir).unwrap();
        let back = MeasureFlow::read_dir(&dir, g).unwrap();
        assert_eq!(flow_distance(&f, &back, 1.0).unwrap(), 0.0);
        std::fs::remove_dir_all(&dir).ok();
    }
}
