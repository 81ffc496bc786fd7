use std::io::{Read, Write};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Tolerance on the total mass of a measure.
pub const MASS_TOL: f64 = 1e-12;
/// Points closer than this (coordinate-wise) are merged by [`EmpiricalMeasure::compress`].
pub const MERGE_TOL: f64 = 1e-12;
/// Atoms lighter than this are dropped by [`EmpiricalMeasure::compress`].
pub const PRUNE_WEIGHT: f64 = 1e-15;

/// A finitely supported probability measure on R^d.
///
/// Points are stored row-major in one flat buffer. The mean is cached at
/// construction since most coefficient functions only read it.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    mean: Vec<f64>,
    sorted: OnceLock<Vec<(f64, f64)>>,
}

impl PartialEq for EmpiricalMeasure {
    /// Same atoms in the same order.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points && self.weights == other.weights
    }
}

fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl EmpiricalMeasure {
    /// Validating constructor: weights must be nonnegative and sum to one
    /// within [`MASS_TOL`], coordinates must be finite.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(dim, &points, &weights)?;
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(Self::build(dim, points, weights))
    }

    /// Builds a measure from nonnegative masses, dividing by their total.
    pub fn from_masses(dim: usize, points: Vec<f64>, mut masses: Vec<f64>) -> Result<Self> {
        Self::check_shape(dim, &points, &masses)?;
        let total = compensated_sum(masses.iter().copied());
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMeasure(format!("total mass {total}")));
        }
        masses.iter_mut().for_each(|w| *w /= total);
        Ok(Self::build(dim, points, masses))
    }

    /// Equal weights on the given points.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::EmptySupport);
        }
        let n = points.len() / dim;
        Self::from_masses(dim, points, vec![1.0; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self::build(point.len(), point.to_vec(), vec![1.0])
    }

    fn check_shape(dim: usize, points: &[f64], weights: &[f64]) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension 0".into()));
        }
        if weights.is_empty() {
            return Err(Error::EmptySupport);
        }
        if points.len() != weights.len() * dim {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(x) = points.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate {x}")));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("invalid weight {w}")));
        }
        Ok(())
    }

    fn build(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Self {
        let mut mean = vec![0.0; dim];
        for (row, w) in points.chunks_exact(dim).zip(&weights) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += w * x;
            }
        }
        EmpiricalMeasure { dim, points, weights, mean, sorted: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// First coordinate of the mean; convenient for scalar models.
    pub fn mean_scalar(&self) -> f64 {
        self.mean[0]
    }

    /// `sum_i w_i |x_i|^gamma` with the Euclidean norm.
    pub fn moment(&self, gamma: f64) -> f64 {
        self.iter().map(|(x, w)| w * norm(x).powf(gamma)).sum()
    }

    /// Atoms of a one-dimensional measure sorted by position.
    pub(crate) fn sorted_atoms(&self) -> &[(f64, f64)] {
        self.sorted.get_or_init(|| {
            let mut atoms: Vec<(f64, f64)> = self
                .points
                .chunks_exact(self.dim)
                .zip(&self.weights)
                .map(|(x, w)| (x[0], *w))
                .collect();
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            atoms
        })
    }

    /// Weighted mixture `(1 - theta) * self + theta * other` on the
    /// concatenated support. `theta = 0` and `theta = 1` return exact copies.
    pub fn mix(&self, other: &Self, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::OutOfRange { name: "theta", detail: format!("{theta} not in [0, 1]") });
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if theta == 0.0 {
            return Ok(self.clone());
        }
        if theta == 1.0 {
            return Ok(other.clone());
        }
        let mut points = Vec::with_capacity(self.points.len() + other.points.len());
        points.extend_from_slice(&self.points);
        points.extend_from_slice(&other.points);
        let mut weights = Vec::with_capacity(self.len() + other.len());
        weights.extend(self.weights.iter().map(|w| (1.0 - theta) * w));
        weights.extend(other.weights.iter().map(|w| theta * w));
        Ok(Self::build(self.dim, points, weights))
    }

    /// Merges coincident atoms and prunes negligible weights. When
    /// `max_atoms` is given and the measure is one-dimensional, the result is
    /// further reduced to at most `max_atoms` equal-mass quantile buckets,
    /// each replaced by its barycenter (the mean is preserved).
    pub fn compress(&self, max_atoms: Option<usize>) -> Self {
        let merged = if self.dim == 1 { self.merge_sorted_1d() } else { self.merge_exact() };
        match max_atoms {
            Some(cap) if self.dim == 1 && cap > 0 && merged.len() > cap => merged.quantile_buckets(cap),
            _ => merged,
        }
    }

    fn merge_sorted_1d(&self) -> Self {
        let mut points: Vec<f64> = Vec::with_capacity(self.len());
        let mut masses: Vec<f64> = Vec::with_capacity(self.len());
        for &(x, w) in self.sorted_atoms() {
            if w < PRUNE_WEIGHT {
                continue;
            }
            match points.last() {
                Some(&last) if (x - last).abs() <= MERGE_TOL => *masses.last_mut().unwrap() += w,
                _ => {
                    points.push(x);
                    masses.push(w);
                }
            }
        }
        if points.is_empty() {
            return self.clone();
        }
        Self::from_masses(1, points, masses).expect("merged masses are positive")
    }

    fn merge_exact(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).filter(|&i| self.weights[i] >= PRUNE_WEIGHT).collect();
        if order.is_empty() {
            return self.clone();
        }
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut points: Vec<f64> = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        let mut last: Option<usize> = None;
        for i in order {
            let same = last.is_some_and(|l| {
                self.point(l).iter().zip(self.point(i)).all(|(x, y)| (x - y).abs() <= MERGE_TOL)
            });
            if same {
                *masses.last_mut().unwrap() += self.weights[i];
            } else {
                points.extend_from_slice(self.point(i));
                masses.push(self.weights[i]);
                last = Some(i);
            }
        }
        Self::from_masses(self.dim, points, masses).expect("merged masses are positive")
    }

    fn quantile_buckets(&self, cap: usize) -> Self {
        let atoms = self.sorted_atoms();
        let bucket_mass = 1.0 / cap as f64;
        let mut points = Vec::with_capacity(cap);
        let mut masses = Vec::with_capacity(cap);
        let mut acc_mass = 0.0;
        let mut acc_moment = 0.0;
        for &(x, w) in atoms {
            let mut rest = w;
            while rest > 0.0 {
                if points.len() + 1 == cap {
                    // last bucket absorbs the remainder
                    acc_mass += rest;
                    acc_moment += rest * x;
                    break;
                }
                let take = rest.min(bucket_mass - acc_mass).max(0.0);
                acc_mass += take;
                acc_moment += take * x;
                rest -= take;
                if acc_mass >= bucket_mass * (1.0 - 1e-12) {
                    points.push(acc_moment / acc_mass);
                    masses.push(acc_mass);
                    acc_mass = 0.0;
                    acc_moment = 0.0;
                }
            }
        }
        if acc_mass > 0.0 {
            points.push(acc_moment / acc_mass);
            masses.push(acc_mass);
        }
        Self::from_masses(1, points, masses).expect("bucket masses are positive")
    }

    /// CSV with header `weight,x1,..,xd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["weight".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        wtr.write_record(&header)?;
        for (x, w) in self.iter() {
            let mut row = vec![w.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let dim = rdr.headers()?.len().saturating_sub(1);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut fields = rec.iter().map(|s| s.trim().parse::<f64>());
            let w = fields.next().ok_or(Error::EmptySupport)?.map_err(|e| Error::Parse(e.to_string()))?;
            weights.push(w);
            for v in fields {
                points.push(v.map_err(|e| Error::Parse(e.to_string()))?);
            }
        }
        Self::new(dim, points, weights)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_mass_and_shape() {
        assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(EmpiricalMeasure::new(2, vec![0.0, 1.0, 2.0], vec![0.5, 0.5]).is_err());
        assert!(matches!(EmpiricalMeasure::new(1, vec![], vec![]), Err(Error::EmptySupport)));
        assert!(EmpiricalMeasure::new(1, vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn moments() {
        assert_eq!(EmpiricalMeasure::dirac(&[0.0]).moment(2.0), 0.0);
        let m = EmpiricalMeasure::new(1, vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        assert!((m.moment(1.0) - 2.0).abs() < 1e-15);
        let m2 = EmpiricalMeasure::new(2, vec![3.0, 4.0, 0.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert!((m2.moment(2.0) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn mix_endpoints_are_exact() {
        let a = EmpiricalMeasure::new(1, vec![0.0, 2.0], vec![0.25, 0.75]).unwrap();
        let b = EmpiricalMeasure::dirac(&[1.0]);
        let m0 = a.mix(&b, 0.0).unwrap();
        assert_eq!(m0.points(), a.points());
        assert_eq!(m0.weights(), a.weights());
        let m1 = a.mix(&b, 1.0).unwrap();
        assert_eq!(m1.points(), b.points());
        assert!(a.mix(&b, 1.5).is_err());
        let mq = EmpiricalMeasure::dirac(&[0.0]).mix(&b, 0.25).unwrap();
        assert_eq!(mq.weights(), &[0.75, 0.25]);
    }

    #[test]
    fn compress_merges_and_preserves_mean() {
        let a = EmpiricalMeasure::uniform(1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let doubled = a.mix(&a, 0.5).unwrap();
        let c = doubled.compress(None);
        assert_eq!(c.len(), 4);
        let big = EmpiricalMeasure::uniform(1, (0..100).map(|i| (i as f64).sqrt()).collect()).unwrap();
        let small = big.compress(Some(10));
        assert_eq!(small.len(), 10);
        assert!((small.mean_scalar() - big.mean_scalar()).abs() < 1e-12);
        let m2 = EmpiricalMeasure::uniform(2, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let c2 = m2.compress(None);
        assert_eq!(c2.len(), 2);
        assert!((c2.weights()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip() {
        let m = EmpiricalMeasure::new(2, vec![0.1, -3.0, 2.5, 1e-7], vec![0.3, 0.7]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = EmpiricalMeasure::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.points(), m.points());
        assert_eq!(back.weights(), m.weights());
    }
}
