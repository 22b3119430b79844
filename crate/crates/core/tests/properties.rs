//! Randomized invariants of the protocol.

use std::sync::{Arc, OnceLock};

use approx::assert_relative_eq;
use proptest::prelude::*;
use qwitness::channels::{dephase_exact, BasisSpec, Carrier, PreparationParams, RotationSampler};
use qwitness::constants::{lab_delta_omega, lab_omega0, CALCITE_DELTA_N};
use qwitness::estimation::{birefringence_shift_mm, estimate_birefringence};
use qwitness::spectrum::{discretize, FrequencyGrid, GridScheme, SpectralDensity};
use qwitness::states::{reduce_system, trace_distance_qubit, QubitDensity};
use qwitness::tomography::{reconstruct, CountRecord};
use qwitness::witness::{
    build_reference, delta_total, local_distance_curve, prepare_alice_state, witness_max, BasisMode, DelaySweep,
    DephasingMode, WitnessMethod,
};

fn grid() -> Arc<FrequencyGrid> {
    static GRID: OnceLock<Arc<FrequencyGrid>> = OnceLock::new();
    Arc::clone(GRID.get_or_init(|| {
        let spec = SpectralDensity::lorentzian(lab_omega0(), lab_delta_omega()).unwrap();
        Arc::new(discretize(&spec, GridScheme::Quantile { n_bins: 512 }).unwrap())
    }))
}

fn bloch() -> impl Strategy<Value = [f64; 3]> {
    (0.0..=1.0f64, 0.0..std::f64::consts::PI, 0.0..std::f64::consts::TAU)
        .prop_map(|(r, th, ph)| [r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_distance_is_a_bounded_metric(a in bloch(), b in bloch()) {
        let (x, y) = (QubitDensity::from_bloch(a).unwrap(), QubitDensity::from_bloch(b).unwrap());
        let d = trace_distance_qubit(&x, &y);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - trace_distance_qubit(&y, &x)).abs() < 1e-15);
        // For qubits D = ½|r_a − r_b|.
        let half = 0.5 * a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!((d - half).abs() < 1e-12);
    }

    #[test]
    fn dephasing_keeps_marginal_and_is_idempotent(length in 0.0..60.0f64, seed in any::<u64>(), eta in 0.0..3.0f64) {
        let p = PreparationParams::from_crystal(0.5, 0.0, length, CALCITE_DELTA_N).unwrap();
        let (state, _) = prepare_alice_state(&p, grid(), seed, RotationSampler::HalfWavePlate).unwrap();
        let basis = BasisSpec::eta(eta);
        let once = dephase_exact(&state, &basis);
        let twice = dephase_exact(&once, &basis);
        let err = once.blocks().iter().zip(twice.blocks()).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        prop_assert!(err < 1e-15);
        let r = build_reference(&state, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
        prop_assert!(reduce_system(&state).matrix().max_abs_diff(reduce_system(&r.state).matrix()) < 1e-12);
    }

    #[test]
    fn local_distance_never_exceeds_total(length in 0.0..60.0f64, seed in any::<u64>()) {
        let p = PreparationParams::from_crystal(0.5, 0.0, length, CALCITE_DELTA_N).unwrap();
        let (state, _) = prepare_alice_state(&p, grid(), seed, RotationSampler::HalfWavePlate).unwrap();
        let r = build_reference(&state, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
        let curve = local_distance_curve(&state, &r, &DelaySweep::standard(lab_delta_omega()).unwrap(), Carrier::RotatingFrame).unwrap();
        let delta = delta_total(&state, &r.state).unwrap();
        prop_assert!(curve.grid_max() <= delta + 1e-10);
        for row in &curve.values {
            prop_assert!(row[12].abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_seed_does_not_change_results(a in any::<u64>(), b in any::<u64>()) {
        let p = PreparationParams::from_crystal(0.5, 0.0, 26.94, CALCITE_DELTA_N).unwrap();
        let sweep = DelaySweep::standard(lab_delta_omega()).unwrap();
        let run = |seed| {
            let (state, _) = prepare_alice_state(&p, grid(), seed, RotationSampler::HalfWavePlate).unwrap();
            let r = build_reference(&state, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
            let curve = local_distance_curve(&state, &r, &sweep, Carrier::RotatingFrame).unwrap();
            let w = witness_max(&curve, WitnessMethod::GridMax, lab_delta_omega()).unwrap().value;
            (w, delta_total(&state, &r.state).unwrap())
        };
        let (wa, da) = run(a);
        let (wb, db) = run(b);
        prop_assert!((wa - wb).abs() < 1e-10);
        prop_assert!((da - db).abs() < 1e-10);
    }

    #[test]
    fn reconstruction_is_always_physical(c in prop::array::uniform3((0u64..=1000, 0u64..=1000))) {
        let n = 1000;
        let counts = c.map(|(p, _)| (p, n - p));
        let rho = reconstruct(&CountRecord::new(counts).unwrap());
        let ev = rho.matrix().hermitian_eigenvalues();
        prop_assert!(ev[0] >= -1e-12 && ev[1] <= 1.0 + 1e-12);
        prop_assert!((rho.matrix().trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn birefringence_round_trip(length in 0.1..100.0f64, dn in 1e-5..0.5f64) {
        let x = birefringence_shift_mm(length, dn);
        assert_relative_eq!(estimate_birefringence(x, length).unwrap(), dn, max_relative = 1e-12);
    }
}
