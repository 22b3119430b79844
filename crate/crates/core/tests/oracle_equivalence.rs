//! Block-diagonal pipeline versus the dense 2N×2N reference implementation.

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use qwitness::channels::{
    apply_controlled_phase, dephase_fiber, prepare_pre_initial, BasisSpec, Carrier, PreparationParams, RotationSampler,
};
use qwitness::constants::{lab_delta_omega, lab_omega0, CALCITE_DELTA_N, CRYSTAL_LENGTH_MM};
use qwitness::oracle::*;
use qwitness::spectrum::FrequencyGrid;
use qwitness::states::{qubit_eigenbasis, trace_distance_qubit};
use qwitness::witness::{
    build_reference, delta_total, local_distance_curve, prepare_alice_state, BasisMode, DelaySweep, DephasingMode,
};

fn grid(n: usize) -> Arc<FrequencyGrid> {
    Arc::new(oracle_quantile_grid(lab_omega0(), lab_delta_omega(), n).unwrap())
}

fn params() -> PreparationParams {
    PreparationParams::from_crystal(0.5, 0.0, CRYSTAL_LENGTH_MM, CALCITE_DELTA_N).unwrap()
}

fn check_size(n: usize) {
    let g = grid(n);
    let p = params();
    let (state, rot) = prepare_alice_state(&p, Arc::clone(&g), 7, RotationSampler::HalfWavePlate).unwrap();
    let reference = build_reference(&state, BasisMode::ExactEigenbasis, DephasingMode::Projective).unwrap();
    let sweep = DelaySweep::standard(lab_delta_omega()).unwrap();
    let curve = local_distance_curve(&state, &reference, &sweep, Carrier::RotatingFrame).unwrap();

    let pre = dense_embed(&prepare_pre_initial(&p, Arc::clone(&g)).unwrap()).unwrap();
    let crystal = dense_apply_unitary(
        &pre,
        &dense_phase_unitary(&g, &BasisSpec::hv(), p.t, Carrier::RotatingFrame).unwrap(),
    )
    .unwrap();
    let rho = dense_apply_unitary(&crystal, &dense_local_operator(&rot.unitary, n)).unwrap();
    let basis = BasisSpec::custom(qubit_eigenbasis(&dense_reduce_system(&rho).unwrap()).basis[0]).unwrap();
    let rho_ref = dense_dephase(&rho, &basis);

    for (m, &eta) in sweep.etas().iter().enumerate().step_by(3) {
        for (k, &tau) in sweep.taus().iter().enumerate() {
            let u = dense_phase_unitary(&g, &BasisSpec::eta(eta), tau, Carrier::RotatingFrame).unwrap();
            let a = dense_reduce_system(&dense_apply_unitary(&rho, &u).unwrap()).unwrap();
            let b = dense_reduce_system(&dense_apply_unitary(&rho_ref, &u).unwrap()).unwrap();
            assert_abs_diff_eq!(curve.values[m][k], 2.0 * trace_distance_qubit(&a, &b), epsilon = 1e-11);
        }
    }

    let delta = delta_total(&state, &reference.state).unwrap();
    assert_abs_diff_eq!(
        delta,
        2.0 * dense_trace_distance(&rho, &rho_ref).unwrap(),
        epsilon = 1e-12
    );
    let spec = dense_difference_spectrum(&rho, &rho_ref).unwrap();
    for k in 0..n {
        assert_abs_diff_eq!(spec[k], -spec[2 * n - 1 - k], epsilon = 1e-12);
    }
}

#[test]
fn dense_and_block_agree_n8() {
    check_size(8);
}

#[test]
fn dense_and_block_agree_n32() {
    check_size(32);
}

#[test]
fn dense_and_block_agree_n64() {
    check_size(64);
}

#[test]
fn fiber_dephasing_matches_dense_full_carrier() {
    // Narrow uniform comb so the fiber resolution guard holds.
    let n = 24;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| ((i as f64 - 11.5) * 1e-3, 1.0 + 0.1 * i as f64))
        .collect();
    let g = Arc::new(FrequencyGrid::from_points(lab_omega0(), pts).unwrap());
    let p = PreparationParams::new(0.4, 0.3, 80.0).unwrap();
    let state = apply_controlled_phase(
        &prepare_pre_initial(&p, Arc::clone(&g)).unwrap(),
        &BasisSpec::hv(),
        p.t,
        Carrier::RotatingFrame,
    );
    let basis = BasisSpec::eta(0.4);
    let s = 120.0;
    let block = dephase_fiber(&state, &basis, s).unwrap();
    let dense = dense_apply_unitary(
        &dense_embed(&state).unwrap(),
        &dense_phase_unitary(&g, &basis, s, Carrier::FullCarrier).unwrap(),
    )
    .unwrap();
    let back = dense_extract_blocks(&dense).unwrap();
    for (a, b) in block.blocks().iter().zip(back.blocks()) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }
}

#[test]
fn dense_path_refuses_large_grids() {
    let g = Arc::new(oracle_quantile_grid(lab_omega0(), lab_delta_omega(), DENSE_MAX_BINS + 1).unwrap());
    let state = prepare_pre_initial(&params(), g).unwrap();
    assert!(matches!(dense_embed(&state), Err(qwitness::Error::SizeGuard { .. })));
}
