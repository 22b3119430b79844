//! Simulation and analysis of locally detected polarization-frequency
//! correlations in single photons.
//!
//! The photon's polarization is the accessible two-level system; its
//! frequency distribution is the environment. Frequency stays diagonal
//! through every channel in the protocol, so joint states are stored as one
//! 2×2 polarization block per frequency bin ([`states::JointBlockState`]).
//!
//! Units: angular frequencies in rad/ps, times in ps, lengths in mm.
//!
//! Modules map onto the protocol:
//!
//! - [`spectrum`]: spectral densities, frequency grids, coherence functions.
//! - [`states`]: qubit and joint block states, reductions, trace distances.
//! - [`channels`]: crystal, delay, dephasing and basis-hiding maps.
//! - [`witness`]: the two-step detection protocol and its closed forms.
//! - [`tomography`]: finite-count polarization tomography.
//! - [`estimation`]: linewidth and birefringence characterization fits.
//! - [`oracle`]: dense-matrix and quadrature cross-checks.

#![forbid(unsafe_code)]
// `!(x > 0.0)` deliberately rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod constants;
pub mod error;
pub mod estimation;
pub mod lsq;
pub mod mat2;
pub mod oracle;
pub mod spectrum;
pub mod states;
pub mod tomography;
pub mod witness;

pub use error::{Error, Result};
pub use mat2::Mat2;
