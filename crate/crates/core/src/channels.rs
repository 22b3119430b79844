//! Maps acting on joint block states: state preparation, the birefringent
//! crystal, Michelson delays, basis hiding and local dephasing.
//!
//! Every unitary here is a frequency-controlled phase in some polarization
//! basis {|u⟩, |u⊥⟩}: bin i picks up e^{−iφᵢ} on the |u⊥⟩ branch, with
//! φᵢ = ωᵢT (full carrier) or (ωᵢ − ω₀)T (rotating frame).

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::birefringent_delay_ps;
use crate::error::{invalid, Error, Result};
use crate::mat2::Mat2;
use crate::spectrum::{check_coherence, check_finite, FrequencyGrid};
use crate::states::{JointBlockState, QubitDensity};

/// Largest phase step (rad) between neighbouring bins allowed for fiber
/// dephasing.
pub const RESOLUTION_GUARD_RAD: f64 = 0.2;

/// Parameters of Alice's state preparation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreparationParams {
    /// Coherence d of the pre-initial polarization state, in [0, ½].
    pub d: f64,
    /// Phase φ of the pre-initial coherence, rad.
    pub phi: f64,
    /// Crystal delay t, ps.
    pub t: f64,
    pub length_mm: Option<f64>,
    pub delta_n: Option<f64>,
}

impl PreparationParams {
    pub fn new(d: f64, phi: f64, t: f64) -> Result<Self> {
        let p = PreparationParams {
            d,
            phi,
            t,
            length_mm: None,
            delta_n: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Crystal of length `length_mm` and birefringence `delta_n`; t = L·Δn/c.
    pub fn from_crystal(d: f64, phi: f64, length_mm: f64, delta_n: f64) -> Result<Self> {
        if !(length_mm >= 0.0) || !length_mm.is_finite() {
            return Err(invalid("length_mm", format!("{length_mm} must be non-negative")));
        }
        if !(delta_n >= 0.0) || !delta_n.is_finite() {
            return Err(invalid("delta_n", format!("{delta_n} must be non-negative")));
        }
        let p = PreparationParams {
            d,
            phi,
            t: birefringent_delay_ps(length_mm, delta_n),
            length_mm: Some(length_mm),
            delta_n: Some(delta_n),
        };
        p.validate()?;
        Ok(p)
    }

    /// Sets φ = −ω₀t (mod 2π), which makes the reduced state's coherence
    /// real when the crystal phase carries the full carrier.
    pub fn with_carrier_compensation(mut self, omega0: f64) -> Self {
        self.phi = (-(omega0 * self.t)).rem_euclid(TAU);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_coherence(self.d)?;
        check_finite("phi", self.phi)?;
        check_finite("t", self.t)?;
        if let (Some(l), Some(dn)) = (self.length_mm, self.delta_n) {
            let t = birefringent_delay_ps(l, dn);
            if (t - self.t).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(invalid("t", format!("{} inconsistent with L·Δn/c = {t}", self.t)));
            }
        }
        Ok(())
    }

    /// [[½, d·e^{iφ}], [d·e^{−iφ}, ½]]
    pub fn pre_initial_block(&self) -> Mat2 {
        let c = Complex64::from_polar(self.d, self.phi);
        Mat2::new(0.5.into(), c, c.conj(), 0.5.into())
    }
}

/// Which part of ωᵢ enters frequency-controlled phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Carrier {
    /// Phases relative to the carrier, (ωᵢ − ω₀)T.
    #[default]
    RotatingFrame,
    /// Absolute phases ωᵢT.
    FullCarrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BasisLabel {
    HV,
    Eta(f64),
    Custom,
}

/// Orthonormal polarization basis {|u⟩, |u⊥⟩} with |u⊥⟩ = (−ū₁, ū₀).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub u: [Complex64; 2],
    pub label: BasisLabel,
}

impl BasisSpec {
    pub fn hv() -> Self {
        BasisSpec {
            u: [1.0.into(), 0.0.into()],
            label: BasisLabel::HV,
        }
    }

    /// |η⟩ = (cos η, sin η), the Michelson basis set by HWP2 at η/2.
    pub fn eta(eta: f64) -> Self {
        BasisSpec {
            u: [eta.cos().into(), eta.sin().into()],
            label: BasisLabel::Eta(eta),
        }
    }

    /// Basis whose first vector is `u` (normalized here).
    pub fn custom(u: [Complex64; 2]) -> Result<Self> {
        let n = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid("u", "basis vector must be non-zero and finite"));
        }
        Ok(BasisSpec {
            u: [u[0] / n, u[1] / n],
            label: BasisLabel::Custom,
        })
    }

    pub fn perp(&self) -> [Complex64; 2] {
        [-self.u[1].conj(), self.u[0].conj()]
    }

    pub fn projector(&self) -> Mat2 {
        Mat2::outer(self.u, self.u)
    }

    pub fn perp_projector(&self) -> Mat2 {
        let p = self.perp();
        Mat2::outer(p, p)
    }

    /// Columns |u⟩, |u⊥⟩.
    pub fn change_of_basis(&self) -> Mat2 {
        Mat2::from_columns(self.u, self.perp())
    }

    /// P + e^{−iφ}Q
    pub fn phase_unitary(&self, phase: f64) -> Mat2 {
        self.projector() + self.perp_projector().scale_c(Complex64::from_polar(1.0, -phase))
    }
}

/// φᵢ reduced to [0, 2π).
pub fn bin_phase(grid: &FrequencyGrid, i: usize, delay: f64, carrier: Carrier) -> f64 {
    let x = (grid.detunings()[i] * delay).rem_euclid(TAU);
    match carrier {
        Carrier::RotatingFrame => x,
        Carrier::FullCarrier => (x + (grid.omega0() * delay).rem_euclid(TAU)).rem_euclid(TAU),
    }
}

/// All-bin pre-initial product state with blocks [[½, de^{iφ}], [de^{−iφ}, ½]].
pub fn prepare_pre_initial(params: &PreparationParams, grid: Arc<FrequencyGrid>) -> Result<JointBlockState> {
    params.validate()?;
    let rho = QubitDensity::new(params.pre_initial_block())?;
    Ok(JointBlockState::product(grid, &rho))
}

/// Conjugates each block by the bin-local unitary P + e^{−iφᵢ}Q.
pub fn apply_controlled_phase(
    state: &JointBlockState,
    basis: &BasisSpec,
    delay: f64,
    carrier: Carrier,
) -> JointBlockState {
    if delay == 0.0 {
        return state.clone();
    }
    let grid = Arc::clone(state.grid());
    let v = basis.change_of_basis();
    let v_adj = v.adjoint();
    state.map_blocks(|i, b| {
        let phase = Complex64::from_polar(1.0, bin_phase(&grid, i, delay, carrier));
        let mut m = v_adj * *b * v;
        m.0[0][1] *= phase;
        m.0[1][0] *= phase.conj();
        v * m * v_adj
    })
}

/// Reduced state after a controlled phase, computed without materializing
/// the evolved joint state. Precomputes the blocks in the chosen basis so
/// repeated delays cost one phase per bin.
#[derive(Debug, Clone)]
pub struct PhaseSweepKernel {
    grid: Arc<FrequencyGrid>,
    basis: Mat2,
    diag: [f64; 2],
    off: Vec<Complex64>,
}

impl PhaseSweepKernel {
    pub fn new(state: &JointBlockState, basis: &BasisSpec) -> Self {
        let v = basis.change_of_basis();
        let v_adj = v.adjoint();
        let mut diag = [0.0; 2];
        let mut off = Vec::with_capacity(state.len());
        for (&w, b) in state.grid().weights().iter().zip(state.blocks()) {
            let m = v_adj * *b * v;
            diag[0] += w * m.0[0][0].re;
            diag[1] += w * m.0[1][1].re;
            off.push(m.0[0][1] * w);
        }
        PhaseSweepKernel {
            grid: Arc::clone(state.grid()),
            basis: v,
            diag,
            off,
        }
    }

    pub fn reduced(&self, delay: f64, carrier: Carrier) -> QubitDensity {
        let coherence: Complex64 = self
            .off
            .iter()
            .enumerate()
            .map(|(i, &c)| c * Complex64::from_polar(1.0, bin_phase(&self.grid, i, delay, carrier)))
            .sum();
        let m = Mat2::new(self.diag[0].into(), coherence, coherence.conj(), self.diag[1].into());
        QubitDensity::new_unchecked(m.conjugate_by(&self.basis))
    }
}

/// Tr_E after a controlled phase; equals
/// `reduce_system(&apply_controlled_phase(..))`.
pub fn reduced_after_controlled_phase(
    state: &JointBlockState,
    basis: &BasisSpec,
    delay: f64,
    carrier: Carrier,
) -> QubitDensity {
    PhaseSweepKernel::new(state, basis).reduced(delay, carrier)
}

/// Projective dephasing: Bᵢ → P Bᵢ P + Q Bᵢ Q.
pub fn dephase_exact(state: &JointBlockState, basis: &BasisSpec) -> JointBlockState {
    let v = basis.change_of_basis();
    let v_adj = v.adjoint();
    state.map_blocks(|_, b| {
        let m = v_adj * *b * v;
        Mat2::diag(m.0[0][0], m.0[1][1]).conjugate_by(&v)
    })
}

/// Dephasing by a polarization-maintaining fiber of differential delay `s`
/// whose axes are aligned with the basis: phase e^{−iωᵢs} on |u⊥⟩.
pub fn dephase_fiber(state: &JointBlockState, basis: &BasisSpec, s: f64) -> Result<JointBlockState> {
    check_finite("s", s)?;
    let width = state.grid().max_bin_width();
    if width * s.abs() > RESOLUTION_GUARD_RAD {
        return Err(Error::GridResolution {
            max_width: width,
            required: RESOLUTION_GUARD_RAD / s.abs(),
        });
    }
    Ok(apply_controlled_phase(state, basis, s, Carrier::FullCarrier))
}

/// Model of the random basis-hiding rotation U_r.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RotationSampler {
    /// Half-wave plate at a uniformly random angle θ ∈ [0, π).
    #[default]
    HalfWavePlate,
    /// Haar-random element of U(2).
    Haar,
    /// U_r = I.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationRecord {
    pub unitary: Mat2,
    pub seed: u64,
    pub sampler: RotationSampler,
    /// Wave-plate angle θ for [`RotationSampler::HalfWavePlate`].
    pub plate_angle: Option<f64>,
}

/// Jones matrix of a half-wave plate with fast axis at `theta`.
pub fn half_wave_plate(theta: f64) -> Mat2 {
    let (s, c) = (2.0 * theta).sin_cos();
    Mat2::real(c, s, s, -c)
}

pub fn sample_rotation(seed: u64, sampler: RotationSampler) -> RotationRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (unitary, plate_angle) = match sampler {
        RotationSampler::Identity => (Mat2::IDENTITY, None),
        RotationSampler::HalfWavePlate => {
            let theta = rng.random::<f64>() * std::f64::consts::PI;
            (half_wave_plate(theta), Some(theta))
        }
        RotationSampler::Haar => {
            let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let a = Complex64::new(g[0], g[1]) / n;
            let b = Complex64::new(g[2], g[3]) / n;
            let alpha = Complex64::from_polar(1.0, rng.random::<f64>() * TAU);
            (Mat2::new(a, -b.conj(), b, a.conj()).scale_c(alpha), None)
        }
    };
    RotationRecord {
        unitary,
        seed,
        sampler,
        plate_angle,
    }
}

/// Applies U ⊗ I blockwise.
pub fn apply_local_unitary(state: &JointBlockState, u: &Mat2) -> JointBlockState {
    state.map_blocks(|_, b| b.conjugate_by(u))
}

/// Hides the local eigenbasis with a seeded random rotation.
pub fn random_rotation(
    state: &JointBlockState,
    seed: u64,
    sampler: RotationSampler,
) -> (JointBlockState, RotationRecord) {
    let record = sample_rotation(seed, sampler);
    (apply_local_unitary(state, &record.unitary), record)
}
