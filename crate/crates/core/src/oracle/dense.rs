//! Full 2N×2N joint density matrices over {|H,ωᵢ⟩} ∪ {|V,ωᵢ⟩}.
//!
//! Nothing here assumes the frequency-block structure: every map is a dense
//! matrix product, which is what makes it useful as a cross-check.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channels::{bin_phase, BasisSpec, Carrier};
use crate::error::{invalid, Error, Result};
use crate::mat2::Mat2;
use crate::spectrum::{lorentzian_quantile_points, FrequencyGrid, GridScheme};
use crate::states::{JointBlockState, QubitDensity};

/// Largest grid accepted by the dense path (2N = 512).
pub const DENSE_MAX_BINS: usize = 256;

const UNITARITY_TOL: f64 = 1e-10;

/// Equal-mass Lorentzian grid of any size, including the small sizes the
/// dense path is meant for (production grids start at 64 bins).
pub fn oracle_quantile_grid(omega0: f64, delta_omega: f64, n_bins: usize) -> Result<FrequencyGrid> {
    if n_bins == 0 {
        return Err(invalid("n_bins", "need at least one bin"));
    }
    if !(delta_omega > 0.0 && delta_omega.is_finite() && omega0.is_finite()) {
        return Err(invalid("delta_omega", "must be positive and finite"));
    }
    let points = lorentzian_quantile_points(delta_omega, n_bins);
    Ok(FrequencyGrid::from_sorted(
        omega0,
        points,
        Some(GridScheme::Quantile { n_bins }),
    ))
}

#[derive(Debug, Clone)]
pub struct DenseJointState {
    grid: Arc<FrequencyGrid>,
    matrix: DMatrix<Complex64>,
}

impl DenseJointState {
    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn n_bins(&self) -> usize {
        self.grid.len()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.matrix)
    }
}

fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let h = (m + m.adjoint()) * Complex64::from(0.5);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn check_size(n: usize) -> Result<()> {
    if n > DENSE_MAX_BINS {
        return Err(Error::SizeGuard {
            n,
            limit: DENSE_MAX_BINS,
        });
    }
    Ok(())
}

/// Places wᵢBᵢ on the (i, i) frequency sub-blocks.
pub fn dense_embed(state: &JointBlockState) -> Result<DenseJointState> {
    let n = state.len();
    check_size(n)?;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for (i, (&w, b)) in state.grid().weights().iter().zip(state.blocks()).enumerate() {
        for r in 0..2 {
            for c in 0..2 {
                m[(r * n + i, c * n + i)] = b.0[r][c] * w;
            }
        }
    }
    Ok(DenseJointState {
        grid: Arc::clone(state.grid()),
        matrix: m,
    })
}

/// Reads the diagonal frequency sub-blocks back as normalized Bᵢ. Any
/// cross-frequency entries are ignored.
pub fn dense_extract_blocks(state: &DenseJointState) -> Result<JointBlockState> {
    let n = state.n_bins();
    let blocks = state
        .grid
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let e = |r: usize, c: usize| state.matrix[(r * n + i, c * n + i)] / w;
            Mat2::new(e(0, 0), e(0, 1), e(1, 0), e(1, 1))
        })
        .collect();
    JointBlockState::new(Arc::clone(&state.grid), blocks)
}

/// U ρ U†, after checking ‖U†U − I‖_max ≤ 1e-10.
pub fn dense_apply_unitary(state: &DenseJointState, u: &DMatrix<Complex64>) -> Result<DenseJointState> {
    let dim = state.matrix.nrows();
    if u.nrows() != dim || u.ncols() != dim {
        return Err(invalid(
            "u",
            format!("expected {dim}×{dim}, got {}×{}", u.nrows(), u.ncols()),
        ));
    }
    let err = (u.adjoint() * u - DMatrix::identity(dim, dim)).camax();
    if err > UNITARITY_TOL {
        return Err(invalid("u", format!("not unitary (deviation {err:.3e})")));
    }
    Ok(DenseJointState {
        grid: Arc::clone(&state.grid),
        matrix: u * &state.matrix * u.adjoint(),
    })
}

/// Embeds a single-qubit operator as M ⊗ I_N.
pub fn dense_local_operator(m: &Mat2, n: usize) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for r in 0..2 {
            for c in 0..2 {
                out[(r * n + i, c * n + i)] = m.0[r][c];
            }
        }
    }
    out
}

/// Σᵢ (P + e^{−iφᵢ}Q) ⊗ |ωᵢ⟩⟨ωᵢ| for the given basis and delay.
pub fn dense_phase_unitary(
    grid: &FrequencyGrid,
    basis: &BasisSpec,
    delay: f64,
    carrier: Carrier,
) -> Result<DMatrix<Complex64>> {
    let n = grid.len();
    check_size(n)?;
    let mut u = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let b = basis.phase_unitary(bin_phase(grid, i, delay, carrier));
        for r in 0..2 {
            for c in 0..2 {
                u[(r * n + i, c * n + i)] = b.0[r][c];
            }
        }
    }
    Ok(u)
}

/// (P⊗I) ρ (P⊗I) + (Q⊗I) ρ (Q⊗I).
pub fn dense_dephase(state: &DenseJointState, basis: &BasisSpec) -> DenseJointState {
    let n = state.n_bins();
    let p = dense_local_operator(&basis.projector(), n);
    let q = dense_local_operator(&basis.perp_projector(), n);
    let m = &state.matrix;
    DenseJointState {
        grid: Arc::clone(&state.grid),
        matrix: &p * m * &p + &q * m * &q,
    }
}

/// Partial trace over the frequency register.
pub fn dense_reduce_system(state: &DenseJointState) -> Result<QubitDensity> {
    let n = state.n_bins();
    let mut r = Mat2::ZERO;
    for a in 0..2 {
        for b in 0..2 {
            r.0[a][b] = (0..n).map(|i| state.matrix[(a * n + i, b * n + i)]).sum();
        }
    }
    QubitDensity::new(r)
}

/// Eigenvalues of a − b, ascending.
pub fn dense_difference_spectrum(a: &DenseJointState, b: &DenseJointState) -> Result<Vec<f64>> {
    if a.matrix.shape() != b.matrix.shape() {
        return Err(Error::IncompatibleStates(format!(
            "dense dimensions {:?} and {:?}",
            a.matrix.shape(),
            b.matrix.shape()
        )));
    }
    Ok(hermitian_eigenvalues(&(&a.matrix - &b.matrix)))
}

/// ½·Σ|eigenvalues(a − b)|.
pub fn dense_trace_distance(a: &DenseJointState, b: &DenseJointState) -> Result<f64> {
    Ok(0.5 * dense_difference_spectrum(a, b)?.iter().map(|v| v.abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{apply_controlled_phase, dephase_exact, prepare_pre_initial, PreparationParams};
    use crate::constants::{lab_delta_omega, lab_omega0};
    use crate::states::{reduce_system, trace_distance_joint};

    fn grid(n: usize) -> Arc<FrequencyGrid> {
        Arc::new(oracle_quantile_grid(lab_omega0(), lab_delta_omega(), n).unwrap())
    }

    fn initial(g: Arc<FrequencyGrid>, t: f64) -> JointBlockState {
        let p = PreparationParams::new(0.5, 0.0, t).unwrap();
        apply_controlled_phase(
            &prepare_pre_initial(&p, g).unwrap(),
            &BasisSpec::hv(),
            t,
            Carrier::RotatingFrame,
        )
    }

    #[test]
    fn single_bin_embeds_to_block() {
        let g = Arc::new(FrequencyGrid::from_points(2000.0, vec![(0.0, 1.0)]).unwrap());
        let b = Mat2::real(0.7, 0.1, 0.1, 0.3);
        let s = JointBlockState::new(g, vec![b]).unwrap();
        let d = dense_embed(&s).unwrap();
        assert_eq!(d.matrix().shape(), (2, 2));
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(d.matrix()[(r, c)], b.0[r][c]);
            }
        }
    }

    #[test]
    fn embed_round_trip_and_trace() {
        let s = initial(grid(64), 21.4);
        let d = dense_embed(&s).unwrap();
        assert!((d.trace() - Complex64::from(1.0)).norm() < 1e-12);
        let back = dense_extract_blocks(&d).unwrap();
        for (a, b) in back.blocks().iter().zip(s.blocks()) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
    }

    #[test]
    fn size_guard() {
        assert!(matches!(
            dense_embed(&initial(grid(512), 1.0)),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn identity_and_non_unitary() {
        let d = dense_embed(&initial(grid(8), 5.0)).unwrap();
        let id = DMatrix::identity(16, 16);
        let same = dense_apply_unitary(&d, &id).unwrap();
        assert!((same.matrix() - d.matrix()).camax() < 1e-15);
        let bad = id * Complex64::from(1.1);
        assert!(dense_apply_unitary(&d, &bad).is_err());
    }

    #[test]
    fn conjugation_preserves_spectrum() {
        let g = grid(32);
        let d = dense_embed(&initial(Arc::clone(&g), 12.0)).unwrap();
        let u = dense_phase_unitary(&g, &BasisSpec::eta(0.4), 7.0, Carrier::FullCarrier).unwrap();
        let h = dense_local_operator(&crate::channels::half_wave_plate(0.3), g.len());
        let e = dense_apply_unitary(&dense_apply_unitary(&d, &u).unwrap(), &h).unwrap();
        for (a, b) in d.eigenvalues().iter().zip(e.eigenvalues()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn phase_unitary_matches_block_path() {
        let g = grid(32);
        let s = initial(Arc::clone(&g), 21.4);
        let basis = BasisSpec::eta(0.7);
        for carrier in [Carrier::RotatingFrame, Carrier::FullCarrier] {
            let block = dense_embed(&apply_controlled_phase(&s, &basis, -9.0, carrier)).unwrap();
            let u = dense_phase_unitary(&g, &basis, -9.0, carrier).unwrap();
            let dense = dense_apply_unitary(&dense_embed(&s).unwrap(), &u).unwrap();
            assert!((block.matrix() - dense.matrix()).camax() < 1e-12);
        }
    }

    #[test]
    fn trace_distance_matches_block_path() {
        let g = grid(64);
        let s = initial(g, 21.4);
        let basis = BasisSpec::eta(std::f64::consts::FRAC_PI_4);
        let r = dephase_exact(&s, &basis);
        let dense_s = dense_embed(&s).unwrap();
        let dense_r = dense_dephase(&dense_s, &basis);
        let a = dense_trace_distance(&dense_s, &dense_r).unwrap();
        let b = trace_distance_joint(&s, &r).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        assert!(dense_trace_distance(&dense_s, &dense_s).unwrap() < 1e-14);
    }

    #[test]
    fn difference_spectrum_is_paired() {
        let s = initial(grid(32), 21.4);
        let basis = BasisSpec::eta(std::f64::consts::FRAC_PI_4);
        let a = dense_embed(&s).unwrap();
        let b = dense_dephase(&a, &basis);
        let ev = dense_difference_spectrum(&a, &b).unwrap();
        let k = ev.len();
        for i in 0..k / 2 {
            assert!((ev[i] + ev[k - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_pure_states_distance_one() {
        let g = Arc::new(FrequencyGrid::from_points(2000.0, vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap());
        let h = JointBlockState::product(Arc::clone(&g), &QubitDensity::horizontal());
        let v = JointBlockState::product(g, &QubitDensity::vertical());
        let d = dense_trace_distance(&dense_embed(&h).unwrap(), &dense_embed(&v).unwrap()).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduction_matches_block_path() {
        let s = initial(grid(16), 3.0);
        let a = dense_reduce_system(&dense_embed(&s).unwrap()).unwrap();
        assert!(a.matrix().max_abs_diff(reduce_system(&s).matrix()) < 1e-14);
    }
}
