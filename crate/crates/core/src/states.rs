//! Polarization qubit states and frequency-block-diagonal joint states.
//!
//! A [`JointBlockState`] represents Σᵢ wᵢ · Bᵢ ⊗ |ωᵢ⟩⟨ωᵢ| with one
//! trace-one 2×2 block per frequency bin. Every channel in the protocol is
//! frequency-diagonal, so this form is closed under all of them.
//!
//! Trace distances here are normalized, D(a, b) = ½·Tr|a − b| ∈ [0, 1].

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::Mat2;
use crate::spectrum::{parse_f64, FrequencyGrid};

/// Tolerance on Hermiticity, unit trace and eigenvalue positivity.
pub const STATE_TOL: f64 = 1e-12;

/// Tolerance on per-block trace of joint states.
pub const BLOCK_TRACE_TOL: f64 = 1e-10;

/// Eigenvalue gap below which a qubit state counts as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Density matrix of the polarization qubit in the {|H⟩, |V⟩} basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitDensity(Mat2);

impl QubitDensity {
    pub fn new(m: Mat2) -> Result<Self> {
        validate_density(&m, STATE_TOL)?;
        Ok(QubitDensity(m))
    }

    /// Wraps a matrix without validation. Callers guarantee the invariants.
    pub(crate) fn new_unchecked(m: Mat2) -> Self {
        QubitDensity(m)
    }

    /// ½(I + r·σ) for a Bloch vector with |r| ≤ 1.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let [x, y, z] = r;
        Self::new(Mat2::new(
            Complex64::from(0.5 * (1.0 + z)),
            Complex64::new(0.5 * x, -0.5 * y),
            Complex64::new(0.5 * x, 0.5 * y),
            Complex64::from(0.5 * (1.0 - z)),
        ))
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) state vector.
    pub fn pure(psi: [Complex64; 2]) -> Result<Self> {
        let n = psi[0].norm_sqr() + psi[1].norm_sqr();
        if !(n > 0.0) {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        Self::new(Mat2::outer(psi, psi).scale(1.0 / n))
    }

    pub fn horizontal() -> Self {
        QubitDensity(Mat2::real(1.0, 0.0, 0.0, 0.0))
    }

    pub fn vertical() -> Self {
        QubitDensity(Mat2::real(0.0, 0.0, 0.0, 1.0))
    }

    pub fn maximally_mixed() -> Self {
        QubitDensity(Mat2::real(0.5, 0.0, 0.0, 0.5))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    /// (⟨σx⟩, ⟨σy⟩, ⟨σz⟩)
    pub fn bloch(&self) -> [f64; 3] {
        let m = &self.0;
        let off = m.get(0, 1);
        [2.0 * off.re, -2.0 * off.im, m.get(0, 0).re - m.get(1, 1).re]
    }
}

fn validate_density(m: &Mat2, tol: f64) -> Result<()> {
    let herm = m.hermiticity_error();
    if !(herm <= tol) {
        return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
    }
    let tr = m.trace();
    if !((tr.re - 1.0).abs() <= tol) {
        return Err(Error::InvalidState(format!("trace {} != 1", tr.re)));
    }
    let low = m.hermitian_eigenvalues()[1];
    if low < -tol {
        return Err(Error::InvalidState(format!("negative eigenvalue {low:e}")));
    }
    Ok(())
}

/// Eigen-decomposition of a qubit state, eigenvalues descending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: [f64; 2],
    /// |θ⟩ (largest eigenvalue) and |θ⊥⟩.
    pub basis: [[Complex64; 2]; 2],
    /// Eigenvalue gap below [`DEGENERACY_GAP`]; `basis` is then {|H⟩, |V⟩}.
    pub degenerate: bool,
}

/// Diagonalizes ρ; each eigenvector's first nonzero component is real
/// positive.
pub fn qubit_eigenbasis(rho: &QubitDensity) -> EigenDecomposition {
    let e = rho.matrix().hermitian_eigen(DEGENERACY_GAP);
    EigenDecomposition {
        eigenvalues: e.values,
        basis: e.vectors,
        degenerate: e.values[0] - e.values[1] < DEGENERACY_GAP,
    }
}

/// ½·Tr|a − b|
pub fn trace_distance_qubit(a: &QubitDensity, b: &QubitDensity) -> f64 {
    0.5 * (a.0 - b.0).trace_norm_hermitian()
}

/// System ⊗ frequency state, block-diagonal in frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBlockState {
    grid: Arc<FrequencyGrid>,
    blocks: Vec<Mat2>,
}

impl JointBlockState {
    pub fn new(grid: Arc<FrequencyGrid>, blocks: Vec<Mat2>) -> Result<Self> {
        if blocks.len() != grid.len() {
            return Err(Error::InvalidState(format!(
                "{} blocks for {} frequency bins",
                blocks.len(),
                grid.len()
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            validate_density(b, BLOCK_TRACE_TOL).map_err(|e| Error::InvalidState(format!("block {i}: {e}")))?;
        }
        Ok(JointBlockState { grid, blocks })
    }

    /// ρ ⊗ ρ_E with the same polarization block in every bin.
    pub fn product(grid: Arc<FrequencyGrid>, rho: &QubitDensity) -> Self {
        let blocks = vec![*rho.matrix(); grid.len()];
        JointBlockState { grid, blocks }
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    pub fn blocks(&self) -> &[Mat2] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// New state on the same grid with every block mapped by `f(bin, block)`.
    pub(crate) fn map_blocks(&self, f: impl Fn(usize, &Mat2) -> Mat2) -> Self {
        let blocks = self.blocks.iter().enumerate().map(|(i, b)| f(i, b)).collect();
        JointBlockState {
            grid: Arc::clone(&self.grid),
            blocks,
        }
    }

    pub fn same_grid(&self, other: &JointBlockState) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    /// Writes `bin,omega_rad_per_ps,weight,re00,im00,re01,im01,re10,im10,re11,im11` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "bin",
            "omega_rad_per_ps",
            "weight",
            "re00",
            "im00",
            "re01",
            "im01",
            "re10",
            "im10",
            "re11",
            "im11",
        ])?;
        for (i, ((omega, weight), b)) in self.grid.points().zip(&self.blocks).enumerate() {
            let mut row = vec![i.to_string(), omega.to_string(), weight.to_string()];
            for z in b.0.iter().flatten() {
                row.push(z.re.to_string());
                row.push(z.im.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dump written by [`JointBlockState::write_csv`], attaching it
    /// to `grid` (which must have matching frequencies and weights).
    pub fn read_csv<R: Read>(input: R, grid: Arc<FrequencyGrid>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut blocks = Vec::with_capacity(grid.len());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bin: usize = rec
                .get(0)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::InvalidState(format!("data row {}: bad bin index", i + 1)))?;
            let omega = parse_f64(&rec, i, 1)?;
            let weight = parse_f64(&rec, i, 2)?;
            let e: Vec<f64> = (3..11).map(|k| parse_f64(&rec, i, k)).collect::<Result<_>>()?;
            if bin != i || i >= grid.len() || omega != grid.omega(i) || weight != grid.weights()[i] {
                return Err(Error::IncompatibleStates(format!("row {i} does not match the grid")));
            }
            let c = |k: usize| Complex64::new(e[2 * k], e[2 * k + 1]);
            blocks.push(Mat2::new(c(0), c(1), c(2), c(3)));
        }
        Self::new(grid, blocks)
    }
}

/// Tr_E: Σᵢ wᵢ Bᵢ.
pub fn reduce_system(state: &JointBlockState) -> QubitDensity {
    let sum = state
        .grid
        .weights()
        .iter()
        .zip(&state.blocks)
        .fold(Mat2::ZERO, |acc, (&w, b)| acc + b.scale(w));
    QubitDensity::new_unchecked(sum)
}

/// Tr_S: the frequency marginal wᵢ·Tr(Bᵢ).
pub fn reduce_environment(state: &JointBlockState) -> Vec<f64> {
    state
        .grid
        .weights()
        .iter()
        .zip(&state.blocks)
        .map(|(&w, b)| w * b.trace().re)
        .collect()
}

/// ½·Σᵢ wᵢ·‖Bᵢᵃ − Bᵢᵇ‖₁, the trace distance of two states sharing the
/// frequency-diagonal structure.
pub fn trace_distance_joint(a: &JointBlockState, b: &JointBlockState) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::IncompatibleStates("states live on different grids".into()));
    }
    Ok(0.5
        * a.grid
            .weights()
            .iter()
            .zip(a.blocks.iter().zip(&b.blocks))
            .map(|(&w, (x, y))| w * (*x - *y).trace_norm_hermitian())
            .sum::<f64>())
}
