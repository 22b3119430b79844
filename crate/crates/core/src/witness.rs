//! The two-step local detection protocol and its closed forms.
//!
//! Bob first reconstructs the reduced polarization state, dephases the
//! joint state in its eigenbasis to obtain the zero-discord reference, and
//! then compares both states after a delay U(η, τ) using polarization
//! measurements only.
//!
//! Distances here use the trace norm ‖A‖ = Tr√(A†A), so Δ, the witness
//! maximum and δ are twice the normalized trace distances of [`states`]:
//! Δ(τ) = d·|e^{−δω|t+τ|} − e^{−δω|t−τ|}| for a Lorentzian line.
//!
//! [`states`]: crate::states

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{
    apply_controlled_phase, dephase_exact, dephase_fiber, prepare_pre_initial, random_rotation, BasisSpec, Carrier,
    PhaseSweepKernel, PreparationParams, RotationRecord, RotationSampler,
};
use crate::constants::mirror_mm_from_delay;
use crate::error::{invalid, Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::spectrum::{
    check_coherence, check_finite, parse_f64, FrequencyGrid, GridScheme, SpectralDensity, QUAD_ABS_TOL,
};
use crate::states::{qubit_eigenbasis, reduce_system, trace_distance_joint, trace_distance_qubit, JointBlockState};
use crate::tomography::{reconstruct, simulate_counts, CountRecord};

/// Points in the dense delay grid.
pub const DENSE_TAU_POINTS: usize = 481;
/// Half-span of the dense delay grid in units of 1/δω.
pub const DENSE_TAU_SPAN: f64 = 6.0;

/// Grid of Michelson basis angles η and delays τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySweep {
    etas: Vec<f64>,
    taus: Vec<f64>,
    x_mm: Vec<f64>,
}

impl DelaySweep {
    pub fn new(etas: Vec<f64>, taus: Vec<f64>) -> Result<Self> {
        if etas.is_empty() || taus.is_empty() {
            return Err(invalid("sweep", "needs at least one angle and one delay"));
        }
        if etas.iter().any(|e| !(0.0..PI).contains(e)) {
            return Err(invalid("etas", "angles must lie in [0, π)"));
        }
        if taus.iter().any(|t| !t.is_finite()) || taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("taus", "delays must be finite and strictly increasing"));
        }
        let x_mm = taus.iter().map(|&t| mirror_mm_from_delay(t)).collect();
        Ok(DelaySweep { etas, taus, x_mm })
    }

    /// η = mπ/16 for m = 0…7.
    pub fn standard_etas() -> Vec<f64> {
        (0..8).map(|m| m as f64 * PI / 16.0).collect()
    }

    /// η = mπ/16 (m = 0…7) and τ = (n − 12)/(2δω) (n = 0…23).
    pub fn standard(delta_omega: f64) -> Result<Self> {
        check_positive("delta_omega", delta_omega)?;
        let taus = (0..24).map(|n| (n as f64 - 12.0) / (2.0 * delta_omega)).collect();
        Self::new(Self::standard_etas(), taus)
    }

    /// 481 delays evenly spanning [−6/δω, 6/δω].
    pub fn dense(delta_omega: f64, etas: Vec<f64>) -> Result<Self> {
        check_positive("delta_omega", delta_omega)?;
        let half = DENSE_TAU_SPAN / delta_omega;
        let step = 2.0 * half / (DENSE_TAU_POINTS - 1) as f64;
        let taus = (0..DENSE_TAU_POINTS).map(|i| -half + i as f64 * step).collect();
        Self::new(etas, taus)
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Mirror displacement x = cτ/2 for each delay.
    pub fn x_mm(&self) -> &[f64] {
        &self.x_mm
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be positive and finite")))
    }
}

/// How Bob learns the eigenbasis of the reduced state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum BasisMode {
    #[default]
    ExactEigenbasis,
    /// Simulated three-setting tomography with `n` photons per setting.
    Tomographic { n: u64, seed: u64 },
}

/// How the reference state is produced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum DephasingMode {
    #[default]
    Projective,
    /// Polarization-maintaining fiber with differential delay `s` (ps).
    Fiber { s: f64 },
}

/// Dephased reference ρ′_SE (or ρ″_SE) and the basis it was built in.
#[derive(Debug, Clone)]
pub struct Reference {
    pub state: JointBlockState,
    pub basis: BasisSpec,
    /// The reduced state was (numerically) maximally degenerate and the
    /// canonical basis was used.
    pub degenerate: bool,
    pub tomography: Option<CountRecord>,
    pub basis_mode: BasisMode,
    pub dephasing: DephasingMode,
}

/// Pre-initial state → crystal (H/V controlled phase) → random rotation.
pub fn prepare_alice_state(
    params: &PreparationParams,
    grid: Arc<FrequencyGrid>,
    seed: u64,
    sampler: RotationSampler,
) -> Result<(JointBlockState, RotationRecord)> {
    prepare_alice_state_with_carrier(params, grid, seed, sampler, Carrier::RotatingFrame)
}

pub fn prepare_alice_state_with_carrier(
    params: &PreparationParams,
    grid: Arc<FrequencyGrid>,
    seed: u64,
    sampler: RotationSampler,
    carrier: Carrier,
) -> Result<(JointBlockState, RotationRecord)> {
    let pre = prepare_pre_initial(params, grid)?;
    let crystal = apply_controlled_phase(&pre, &BasisSpec::hv(), params.t, carrier);
    Ok(random_rotation(&crystal, seed, sampler))
}

/// First measurement step: find the eigenbasis of Tr_E ρ_SE and dephase in it.
pub fn build_reference(state: &JointBlockState, mode: BasisMode, dephasing: DephasingMode) -> Result<Reference> {
    let exact = reduce_system(state);
    let (estimate, tomography) = match mode {
        BasisMode::ExactEigenbasis => (exact, None),
        BasisMode::Tomographic { n, seed } => {
            let counts = simulate_counts(&exact, n, seed)?;
            (reconstruct(&counts), Some(counts))
        }
    };
    let eig = qubit_eigenbasis(&estimate);
    if eig.degenerate {
        warn!("reduced state is degenerate; dephasing in the canonical H/V basis");
    }
    let basis = BasisSpec::custom(eig.basis[0])?;
    let reference = match dephasing {
        DephasingMode::Projective => dephase_exact(state, &basis),
        DephasingMode::Fiber { s } => dephase_fiber(state, &basis, s)?,
    };
    Ok(Reference {
        state: reference,
        basis,
        degenerate: eig.degenerate,
        tomography,
        basis_mode: mode,
        dephasing,
    })
}

/// Least-squares fit of the Lorentzian delay curve to one η row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub eta: f64,
    pub t_hat: f64,
    pub d_hat: f64,
    /// Root-mean-square residual of the fit.
    pub rms_residual: f64,
    /// d̂·(1 − e^{−2δω t̂})
    pub max_value: f64,
}

/// Run metadata recorded alongside a curve.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveMeta {
    pub dephasing: DephasingMode,
    pub basis_mode: BasisMode,
    pub grid_scheme: Option<GridScheme>,
    pub n_bins: usize,
    pub degenerate_basis: bool,
    pub delta_omega: Option<f64>,
    pub crystal_delay_ps: Option<f64>,
    pub rotation: Option<RotationRecord>,
}

/// Δ(η, τ) samples; `values[m][n]` belongs to `etas[m]`, `taus[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessCurve {
    pub sweep: DelaySweep,
    pub values: Vec<Vec<f64>>,
    pub fit: Vec<CurveFit>,
    pub meta: CurveMeta,
}

/// Second measurement step: evolve ρ and ρ′ by U(η, τ) and record the trace
/// norm of the difference of the reduced states.
pub fn local_distance_curve(
    state: &JointBlockState,
    reference: &Reference,
    sweep: &DelaySweep,
    carrier: Carrier,
) -> Result<WitnessCurve> {
    if !state.same_grid(&reference.state) {
        return Err(Error::IncompatibleStates(
            "state and reference live on different grids".into(),
        ));
    }
    let values = sweep
        .etas()
        .iter()
        .map(|&eta| {
            let basis = BasisSpec::eta(eta);
            let a = PhaseSweepKernel::new(state, &basis);
            let b = PhaseSweepKernel::new(&reference.state, &basis);
            sweep
                .taus()
                .par_iter()
                .map(|&tau| 2.0 * trace_distance_qubit(&a.reduced(tau, carrier), &b.reduced(tau, carrier)))
                .collect()
        })
        .collect();
    Ok(WitnessCurve {
        sweep: sweep.clone(),
        values,
        fit: Vec::new(),
        meta: CurveMeta {
            dephasing: reference.dephasing,
            basis_mode: reference.basis_mode,
            grid_scheme: state.grid().scheme(),
            n_bins: state.len(),
            degenerate_basis: reference.degenerate,
            ..CurveMeta::default()
        },
    })
}

impl WitnessCurve {
    pub fn grid_max(&self) -> f64 {
        self.values.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Rows `eta_rad,tau_ps,x_mm,delta`, η-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eta_rad", "tau_ps", "x_mm", "delta"])?;
        for (m, &eta) in self.sweep.etas().iter().enumerate() {
            for (n, (&tau, &x)) in self.sweep.taus().iter().zip(self.sweep.x_mm()).enumerate() {
                w.write_record([
                    eta.to_string(),
                    tau.to_string(),
                    x.to_string(),
                    self.values[m][n].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV layout of [`write_csv`](Self::write_csv). Fit and
    /// metadata are not part of the CSV and come back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut etas: Vec<f64> = Vec::new();
        let mut taus: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let eta = parse_f64(&rec, i, 0)?;
            let tau = parse_f64(&rec, i, 1)?;
            let delta = parse_f64(&rec, i, 3)?;
            if etas.last() != Some(&eta) {
                etas.push(eta);
                values.push(Vec::new());
            }
            if etas.len() == 1 {
                taus.push(tau);
            }
            let row = values.last_mut().expect("row pushed above");
            if taus.get(row.len()) != Some(&tau) {
                return Err(Error::InvalidState(format!("delay {tau} out of order for eta {eta}")));
            }
            row.push(delta);
        }
        if values.iter().any(|row| row.len() != taus.len()) {
            return Err(Error::InvalidState("ragged witness table".into()));
        }
        if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidState("witness values must lie in [0, 1]".into()));
        }
        Ok(WitnessCurve {
            sweep: DelaySweep::new(etas, taus)?,
            values,
            fit: Vec::new(),
            meta: CurveMeta::default(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidState(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidState(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WitnessMethod {
    GridMax,
    /// Fit the Lorentzian closed form to each η row and take its maximum.
    #[default]
    FitClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessMax {
    pub value: f64,
    pub method: WitnessMethod,
    pub fits: Vec<CurveFit>,
    /// The fit failed and `value` is the grid maximum instead.
    pub fell_back: bool,
    pub degenerate_basis: bool,
}

/// max_τ Δ(τ), either the sample maximum or the maximum of the fitted
/// closed form. `delta_omega` is the known linewidth used by the fit.
pub fn witness_max(curve: &WitnessCurve, method: WitnessMethod, delta_omega: f64) -> Result<WitnessMax> {
    check_positive("delta_omega", delta_omega)?;
    let grid = curve.grid_max();
    let mut out = WitnessMax {
        value: grid,
        method,
        fits: Vec::new(),
        fell_back: false,
        degenerate_basis: curve.meta.degenerate_basis,
    };
    if curve.meta.degenerate_basis {
        out.value = 0.0;
        return Ok(out);
    }
    if method == WitnessMethod::GridMax || grid == 0.0 {
        return Ok(out);
    }
    for (&eta, row) in curve.sweep.etas().iter().zip(&curve.values) {
        match fit_row(curve.sweep.taus(), row, delta_omega) {
            Some(f) => out.fits.push(CurveFit { eta, ..f }),
            None => {
                warn!("delay-curve fit failed at eta = {eta}; using the grid maximum");
                out.fits.clear();
                out.fell_back = true;
                return Ok(out);
            }
        }
    }
    out.value = out.fits.iter().map(|f| f.max_value).fold(0.0, f64::max);
    Ok(out)
}

/// Closed-form model d·|e^{−δω|t+τ|} − e^{−δω|t−τ|}| and its gradient in (t, d).
fn model(tau: f64, t: f64, d: f64, dw: f64) -> (f64, [f64; 2]) {
    let a = (-dw * (t + tau).abs()).exp();
    let b = (-dw * (t - tau).abs()).exp();
    let g = a - b;
    let dg_dt = -dw * (t + tau).signum() * a + dw * (t - tau).signum() * b;
    (d * g.abs(), [d * g.signum() * dg_dt, g.abs()])
}

fn fit_row(taus: &[f64], row: &[f64], dw: f64) -> Option<CurveFit> {
    let (imax, &peak) = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let t0 = taus[imax].abs();
    if peak <= 0.0 || t0 == 0.0 {
        return None;
    }
    let d0 = (peak / (1.0 - (-2.0 * dw * t0).exp())).min(0.5);
    let span = taus.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let residuals = |p: &[f64]| {
        taus.iter()
            .zip(row)
            .map(|(&tau, &y)| model(tau, p[0], p[1], dw).0 - y)
            .collect()
    };
    let jacobian = |p: &[f64]| DMatrix::from_fn(taus.len(), 2, |i, j| model(taus[i], p[0], p[1], dw).1[j]);
    let rep = levenberg_marquardt(
        residuals,
        jacobian,
        &[t0, d0],
        &[0.0, 0.0],
        &[2.0 * span, 0.5],
        LmOptions::default(),
    );
    let (t_hat, d_hat) = (rep.params[0], rep.params[1]);
    if !rep.converged || !rep.cost.is_finite() {
        return None;
    }
    Some(CurveFit {
        eta: 0.0,
        t_hat,
        d_hat,
        rms_residual: (2.0 * rep.cost / taus.len() as f64).sqrt(),
        max_value: d_hat * (1.0 - (-2.0 * dw * t_hat).exp()),
    })
}

/// δ = ‖ρ_SE − ρ′_SE‖, the total correlation with respect to the reference.
pub fn delta_total(state: &JointBlockState, reference: &JointBlockState) -> Result<f64> {
    Ok(2.0 * trace_distance_joint(state, reference)?)
}

/// d·|e^{−δω|t+τ|} − e^{−δω|t−τ|}|
pub fn analytic_delta_lorentzian(d: f64, delta_omega: f64, t: f64, tau: f64) -> Result<f64> {
    check_positive("delta_omega", delta_omega)?;
    check_finite("t", t)?;
    check_finite("tau", tau)?;
    Ok(model(tau, t, d, delta_omega).0)
}

/// d·(1 − e^{−2δω t}), the maximum over τ of the Lorentzian delay curve.
pub fn analytic_max_lorentzian(d: f64, delta_omega: f64, t: f64) -> Result<f64> {
    check_positive("delta_omega", delta_omega)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("{t} must be non-negative")));
    }
    Ok(d * (1.0 - (-2.0 * delta_omega * t).exp()))
}

/// d·|∫G(ω)(e^{ixt} − e^{−ixt})e^{ixτ}dω| = d·|I(τ + t) − I(τ − t)| with
/// I(k) = ∫G e^{ixk}, each I evaluated by quadrature.
pub fn analytic_delta_general(spec: &SpectralDensity, d: f64, t: f64, tau: f64) -> Result<f64> {
    check_coherence(d)?;
    check_finite("t", t)?;
    check_finite("tau", tau)?;
    if t == 0.0 || d == 0.0 {
        return Ok(0.0);
    }
    let plus = spec.expect_phase(tau + t)?;
    let minus = spec.expect_phase(tau - t)?;
    Ok(d * (plus - minus).norm())
}

/// Absolute accuracy of [`analytic_delta_general`].
pub const ANALYTIC_TOL: f64 = QUAD_ABS_TOL;

/// Everything needed to run the protocol end to end on one crystal.
#[derive(Debug, Clone)]
pub struct ProtocolSpec {
    pub params: PreparationParams,
    pub grid: Arc<FrequencyGrid>,
    pub rotation_seed: u64,
    pub sampler: RotationSampler,
    pub basis_mode: BasisMode,
    pub dephasing: DephasingMode,
    pub sweep: DelaySweep,
    pub method: WitnessMethod,
    pub delta_omega: f64,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub curve: WitnessCurve,
    pub witness: WitnessMax,
    pub delta_total: f64,
    pub rotation: RotationRecord,
}

pub fn run_protocol(spec: &ProtocolSpec) -> Result<ProtocolOutcome> {
    let (state, rotation) =
        prepare_alice_state(&spec.params, Arc::clone(&spec.grid), spec.rotation_seed, spec.sampler)?;
    let reference = build_reference(&state, spec.basis_mode, spec.dephasing)?;
    let mut curve = local_distance_curve(&state, &reference, &spec.sweep, Carrier::RotatingFrame)?;
    curve.meta.delta_omega = Some(spec.delta_omega);
    curve.meta.crystal_delay_ps = Some(spec.params.t);
    curve.meta.rotation = Some(rotation);
    let witness = witness_max(&curve, spec.method, spec.delta_omega)?;
    curve.fit = witness.fits.clone();
    let delta_total = delta_total(&state, &reference.state)?;
    Ok(ProtocolOutcome {
        curve,
        witness,
        delta_total,
        rotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{lab_delta_omega, lab_omega0, CALCITE_DELTA_N, CRYSTAL_LENGTH_MM};
    use crate::spectrum::{discretize, quad_correlation_integral};
    use crate::states::trace_distance_qubit;

    fn spec() -> SpectralDensity {
        SpectralDensity::lorentzian(lab_omega0(), lab_delta_omega()).unwrap()
    }

    fn quantile(n: usize) -> Arc<FrequencyGrid> {
        Arc::new(discretize(&spec(), GridScheme::Quantile { n_bins: n }).unwrap())
    }

    fn lab_params() -> PreparationParams {
        PreparationParams::from_crystal(0.5, 0.0, CRYSTAL_LENGTH_MM, CALCITE_DELTA_N).unwrap()
    }

    #[test]
    fn standard_sweep_shape() {
        let s = DelaySweep::standard(lab_delta_omega()).unwrap();
        assert_eq!(s.etas().len(), 8);
        assert_eq!(s.taus().len(), 24);
        assert!((s.taus()[12]).abs() < 1e-15);
        assert!((s.taus()[0] + 12.0 * 9.703 / 2.0).abs() < 1e-12);
        assert!((s.x_mm()[14] - 0.299_792_458 * 9.703 / 2.0).abs() < 1e-12);
        let d = DelaySweep::dense(lab_delta_omega(), vec![0.0]).unwrap();
        assert_eq!(d.taus().len(), 481);
        assert!((d.taus()[240]).abs() < 1e-12);
        assert!((d.taus()[480] - 6.0 * 9.703).abs() < 1e-9);
    }

    #[test]
    fn sweep_validation() {
        assert!(DelaySweep::new(vec![PI], vec![0.0]).is_err());
        assert!(DelaySweep::new(vec![0.0], vec![1.0, 0.0]).is_err());
        assert!(DelaySweep::new(vec![], vec![0.0]).is_err());
    }

    #[test]
    fn closed_forms() {
        let dw = lab_delta_omega();
        assert_eq!(analytic_delta_lorentzian(0.5, dw, 21.0, 0.0).unwrap(), 0.0);
        let peak = analytic_delta_lorentzian(0.5, dw, 21.0, 21.0).unwrap();
        assert!((peak - analytic_max_lorentzian(0.5, dw, 21.0).unwrap()).abs() < 1e-15);
        assert_eq!(
            analytic_delta_lorentzian(0.5, dw, 21.0, 7.5).unwrap(),
            analytic_delta_lorentzian(0.5, dw, 21.0, -7.5).unwrap()
        );
        assert_eq!(analytic_max_lorentzian(0.5, dw, 0.0).unwrap(), 0.0);
        assert!((analytic_max_lorentzian(0.5, dw, 1e6).unwrap() - 0.5).abs() < 1e-15);
        assert!(analytic_max_lorentzian(0.5, -1.0, 1.0).is_err());
    }

    #[test]
    fn max_at_lab_lengths() {
        let dw = lab_delta_omega();
        let t = |l: f64| crate::constants::birefringent_delay_ps(l, CALCITE_DELTA_N);
        assert!((analytic_max_lorentzian(0.5, dw, t(8.98)).unwrap() - 0.3344).abs() < 1e-4);
        assert!((analytic_max_lorentzian(0.5, dw, t(35.92)).unwrap() - 0.4940).abs() < 1e-4);
    }

    #[test]
    fn general_matches_lorentzian() {
        let dw = lab_delta_omega();
        for &(t, tau) in &[(21.4, 0.0), (21.4, 21.4), (21.4, -30.0), (5.0, 3.0), (0.0, 4.0)] {
            let a = analytic_delta_general(&spec(), 0.5, t, tau).unwrap();
            let b = analytic_delta_lorentzian(0.5, dw, t, tau).unwrap();
            assert!((a - b).abs() < 1e-8, "t={t} tau={tau}: {a} vs {b}");
        }
    }

    #[test]
    fn general_respects_triangle_bound() {
        let t = 21.4;
        let bound = quad_correlation_integral(&spec(), t, 0.5).unwrap();
        for k in -20..=20 {
            let v = analytic_delta_general(&spec(), 0.5, t, k as f64 * 3.0).unwrap();
            assert!(v <= bound + 1e-8);
        }
    }

    #[test]
    fn alice_state_is_reproducible() {
        let g = quantile(256);
        let (a, ra) = prepare_alice_state(&lab_params(), Arc::clone(&g), 5, RotationSampler::Haar).unwrap();
        let (b, rb) = prepare_alice_state(&lab_params(), g, 5, RotationSampler::Haar).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn no_crystal_means_no_correlations() {
        let g = quantile(256);
        let p = PreparationParams::from_crystal(0.5, 0.0, 0.0, CALCITE_DELTA_N).unwrap();
        let (s, _) = prepare_alice_state(&p, g, 1, RotationSampler::HalfWavePlate).unwrap();
        let r = build_reference(&s, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
        assert!(delta_total(&s, &r.state).unwrap() < 1e-12);
        let curve = local_distance_curve(
            &s,
            &r,
            &DelaySweep::standard(lab_delta_omega()).unwrap(),
            Carrier::RotatingFrame,
        )
        .unwrap();
        assert!(curve.grid_max() < 1e-12);
    }

    #[test]
    fn degenerate_state_reports_zero() {
        let g = quantile(256);
        let p = PreparationParams::new(0.0, 0.0, 0.0).unwrap();
        let (s, _) = prepare_alice_state(&p, g, 1, RotationSampler::Identity).unwrap();
        let r = build_reference(&s, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
        assert!(r.degenerate);
        let curve = local_distance_curve(
            &s,
            &r,
            &DelaySweep::standard(lab_delta_omega()).unwrap(),
            Carrier::RotatingFrame,
        )
        .unwrap();
        let w = witness_max(&curve, WitnessMethod::FitClosedForm, lab_delta_omega()).unwrap();
        assert_eq!(w.value, 0.0);
        assert!(w.degenerate_basis);
    }

    #[test]
    fn reference_keeps_reduced_state() {
        let g = quantile(1024);
        let (s, _) = prepare_alice_state(&lab_params(), g, 3, RotationSampler::HalfWavePlate).unwrap();
        let r = build_reference(&s, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
        assert!(trace_distance_qubit(&reduce_system(&s), &reduce_system(&r.state)) < 1e-12);
    }

    #[test]
    fn tomographic_basis_is_close() {
        // With n photons per setting each Bloch component carries noise
        // σ ≈ 1/√n; the two components transverse to r tilt the eigenbasis by
        // a Rayleigh-distributed Bloch angle, half of which is the state-space
        // angle: mean ½·√(π/2)·σ/|r|.
        let n = 1_000_000u64;
        let g = quantile(1024);
        let (s, _) = prepare_alice_state(&lab_params(), g, 3, RotationSampler::Identity).unwrap();
        let exact = build_reference(&s, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
        let r = reduce_system(&s).bloch().iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected = 0.5 * (PI / 2.0).sqrt() / (n as f64).sqrt() / r;
        let seeds = 200;
        let mean = (0..seeds)
            .map(|seed| {
                let tomo = build_reference(&s, BasisMode::Tomographic { n, seed }, DephasingMode::Projective).unwrap();
                assert!(tomo.tomography.is_some());
                let u = exact.basis.u;
                let v = tomo.basis.u;
                (u[0].conj() * v[0] + u[1].conj() * v[1]).norm().min(1.0).acos()
            })
            .sum::<f64>()
            / seeds as f64;
        assert!((mean / expected - 1.0).abs() < 0.15, "mean {mean} vs {expected}");
        // ≈ 0.33° at the 35.92 mm crystal length.
        assert!(mean.to_degrees() < 0.4);
    }

    #[test]
    fn curve_has_zero_column_and_matches_closed_form() {
        let dw = lab_delta_omega();
        let p = lab_params();
        let (s, _) = prepare_alice_state(&p, quantile(8192), 4, RotationSampler::HalfWavePlate).unwrap();
        let r = build_reference(&s, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
        let sweep = DelaySweep::standard(dw).unwrap();
        let c = local_distance_curve(&s, &r, &sweep, Carrier::RotatingFrame).unwrap();
        for m in 0..8 {
            assert!(c.values[m][12] < 1e-12);
            for (n, &tau) in sweep.taus().iter().enumerate() {
                let exact = analytic_delta_lorentzian(0.5, dw, p.t, tau).unwrap();
                assert!((c.values[m][n] - exact).abs() < 5e-3);
                assert!((c.values[m][n] - c.values[0][n]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fit_recovers_closed_form_parameters() {
        let dw = lab_delta_omega();
        let t = 21.447;
        let sweep = DelaySweep::standard(dw).unwrap();
        let row: Vec<f64> = sweep
            .taus()
            .iter()
            .map(|&tau| analytic_delta_lorentzian(0.5, dw, t, tau).unwrap())
            .collect();
        let curve = WitnessCurve {
            sweep: sweep.clone(),
            values: vec![row; 8],
            fit: Vec::new(),
            meta: CurveMeta::default(),
        };
        let w = witness_max(&curve, WitnessMethod::FitClosedForm, dw).unwrap();
        assert!(!w.fell_back);
        assert_eq!(w.fits.len(), 8);
        assert!((w.fits[0].t_hat - t).abs() < 1e-6, "{:?}", w.fits[0]);
        assert!((w.fits[0].d_hat - 0.5).abs() < 1e-8);
        assert!((w.value - analytic_max_lorentzian(0.5, dw, t).unwrap()).abs() < 1e-8);
        let g = witness_max(&curve, WitnessMethod::GridMax, dw).unwrap();
        assert!(g.value <= w.value + 1e-12);
    }

    #[test]
    fn zero_curve_gives_zero() {
        let sweep = DelaySweep::standard(lab_delta_omega()).unwrap();
        let curve = WitnessCurve {
            sweep,
            values: vec![vec![0.0; 24]; 8],
            fit: Vec::new(),
            meta: CurveMeta::default(),
        };
        let w = witness_max(&curve, WitnessMethod::FitClosedForm, lab_delta_omega()).unwrap();
        assert_eq!(w.value, 0.0);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dw = lab_delta_omega();
        let g = quantile(512);
        let spec = ProtocolSpec {
            params: lab_params(),
            grid: g,
            rotation_seed: 2,
            sampler: RotationSampler::HalfWavePlate,
            basis_mode: BasisMode::ExactEigenbasis,
            dephasing: DephasingMode::Projective,
            sweep: DelaySweep::standard(dw).unwrap(),
            method: WitnessMethod::FitClosedForm,
            delta_omega: dw,
        };
        let out = run_protocol(&spec).unwrap();
        let mut buf = Vec::new();
        out.curve.write_csv(&mut buf).unwrap();
        let back = WitnessCurve::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values, out.curve.values);
        assert_eq!(back.sweep, out.curve.sweep);
        let json = out.curve.to_json().unwrap();
        assert_eq!(WitnessCurve::from_json(&json).unwrap(), out.curve);
    }

    #[test]
    fn witness_bounded_by_delta() {
        let dw = lab_delta_omega();
        let spec = ProtocolSpec {
            params: lab_params(),
            grid: quantile(4096),
            rotation_seed: 9,
            sampler: RotationSampler::HalfWavePlate,
            basis_mode: BasisMode::ExactEigenbasis,
            dephasing: DephasingMode::Projective,
            sweep: DelaySweep::dense(dw, vec![0.0, PI / 4.0]).unwrap(),
            method: WitnessMethod::GridMax,
            delta_omega: dw,
        };
        let out = run_protocol(&spec).unwrap();
        assert!(out.witness.value <= out.delta_total + 1e-10);
        let q = quad_correlation_integral(
            &SpectralDensity::lorentzian(lab_omega0(), dw).unwrap(),
            spec.params.t,
            0.5,
        )
        .unwrap();
        assert!((out.delta_total - q).abs() < 5e-3);
    }
}
