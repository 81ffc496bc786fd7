//! Finitely supported measures, Wasserstein distances and measure flows.

pub mod empirical;
pub mod flow;
pub mod transport;

pub use empirical::EmpiricalMeasure;
pub use flow::{flow_distance, MeasureFlow};
pub use transport::{wasserstein_p, TransportMethod};

/// `int |z|^gamma mu(dz)` with the Euclidean norm.
pub fn empirical_moment(mu: &EmpiricalMeasure, gamma: f64) -> f64 {
    mu.moment(gamma)
}
