//! Independent reference computations for cross-validation.
//!
//! [`dense`] embeds block states into full 2N×2N density matrices and runs
//! the protocol with generic linear algebra; [`quad`] evaluates continuum
//! expectation values by adaptive quadrature.

pub mod dense;
pub mod quad;

pub use dense::{
    dense_apply_unitary, dense_dephase, dense_difference_spectrum, dense_embed, dense_extract_blocks,
    dense_local_operator, dense_phase_unitary, dense_reduce_system, dense_trace_distance, oracle_quantile_grid,
    DenseJointState, DENSE_MAX_BINS,
};
pub use quad::{adaptive_quad, Integrand, QuadEstimate};
