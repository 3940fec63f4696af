//! Forward (nested dual) and reverse (tape) automatic differentiation.

mod dual;
mod real;
mod spatial;
mod tape;

pub use dual::{Dual, HyperDual};
pub use real::Real;
pub use spatial::{
    seed_spatial, seed_spatial_real, spatial_jacobian, stress_divergence, DualBasis,
    SpatialJacobian, SpatialMap, StressField,
};
pub use tape::{directional_derivative, loss_gradient, Adjoints, ScalarObjective, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("direction count {0} out of range 1..=4")]
    Directions(usize),
    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },
    #[error("evaluator expects {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
}
