//! Linearized (neural tangent) analysis of the single-vector loss.
//!
//! The squared-distance loss, linearized around `theta = 0`, is the least
//! squares problem `||J theta - y||^2` over a stacked Jacobian with one block
//! per sample group. Gradient descent on it fits `y_perp`, the part of `y`
//! orthogonal to a direction `w` that `J^T` nearly annihilates, long before
//! it touches the rest; both positive groups then predict the same value.
//! This module builds such systems, runs the dynamics and measures every
//! quantity the argument uses.

mod system;
mod verify;

pub use system::{
    build_system, ConstantRows, EncoderJacobianRows, GaussianRows, LinearizedSystem, RowSampler,
    SystemConfig, UniformRows,
};
pub use verify::{
    closed_form_y_perp, fixed_point, gradient_descent, null_direction, residual_dynamics,
    sample_size_sweep, spectral_quantities, verify_coordinates, verify_theorem, verify_trials,
    y_perp_decomposition, SpectralQuantities, SweepPoint, TheoremReport, TrajectoryPoint,
    YDecomposition, UNBOUNDED_HORIZON,
};
