use std::f64::consts::PI;

use dsfq::spectrum::{align_gauge, solve, sweep, SweepParameter, SweepQuantity};
use dsfq::{build_hamiltonian, diagonalize, qubit_params, CircuitSpec, Complex64, EigenSolution, Error, Mat, Sector};

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

#[test]
fn eigensolution_invariants_hold() {
    let spec = CircuitSpec::single_loop(0.8, 0.997 * PI);
    let h = build_hamiltonian(&spec).unwrap();
    let sol = diagonalize(&h, 8).unwrap();
    assert!(sol.energies.windows(2).all(|w| w[0] <= w[1]));
    let gram = sol.states.adjoint() * &sol.states;
    for i in 0..8 {
        for j in 0..8 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-10);
        }
    }
    let norm = (0..h.dim()).map(|i| (0..h.dim()).map(|j| h.entries[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max);
    assert!(sol.max_residual(&h) <= 1e-9 * norm);
}

#[test]
fn k_out_of_range_is_an_error() {
    let h = build_hamiltonian(&CircuitSpec::single_loop(1.0, PI).with_cutoff(2)).unwrap();
    assert!(diagonalize(&h, 0).is_err());
    assert!(diagonalize(&h, 1000).is_err());
}

#[test]
fn non_hermitian_input_is_rejected() {
    let mut h = build_hamiltonian(&CircuitSpec::single_loop(1.0, PI).with_cutoff(2)).unwrap();
    h.entries[(0, 1)] += Complex64::new(1.0, 0.0);
    assert!(matches!(diagonalize(&h, 2), Err(Error::NotHermitian(_))));
}

#[test]
fn quoted_qubit_frequencies() {
    for (alpha, want) in [(1.0, 0.25), (0.7, 0.39)] {
        let p = qubit_params(&solve(&CircuitSpec::single_loop(alpha, 0.995 * PI), 3).unwrap()).unwrap();
        assert!((p.omega_q - want).abs() < 0.01, "alpha {alpha}: {}", p.omega_q);
    }
}

#[test]
fn harmonic_ladder_has_no_anharmonicity() {
    let sol = EigenSolution {
        energies: vec![0.0, 1.5, 3.0],
        states: Mat::identity(3, 3),
        basis: CircuitSpec::single_loop(1.0, PI).with_cutoff(1).basis(),
        k: 3,
    };
    let p = qubit_params(&sol).unwrap();
    assert_eq!(p.anharmonicity, 0.0);
    assert_eq!(p.omega_q, 1.5);
    let short = EigenSolution { k: 2, energies: vec![0.0, 1.0], ..sol };
    assert!(qubit_params(&short).is_err());
}

#[test]
fn protected_qubit_is_strongly_anharmonic() {
    let p = qubit_params(&solve(&CircuitSpec::single_loop(1.0, 0.997 * PI), 3).unwrap()).unwrap();
    assert!(p.anharmonicity.abs() > 5.0 * p.omega_q, "{p:?}");
}

/// Second derivatives of the potential (in units of E_J) at a minimum.
fn plasma_estimate(phi_ext: f64, ec: f64, ej: f64) -> f64 {
    // V = -2 cos(phi) cos(theta) - cos(2 phi + phi_ext); minimum on theta = 0.
    let v = |p: f64| -2.0 * p.cos() - (2.0 * p + phi_ext).cos();
    let (mut a, mut b) = (0.2, 1.8);
    for _ in 0..200 {
        let (m1, m2) = (a + (b - a) / 3.0, b - (b - a) / 3.0);
        if v(m1) < v(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let p = 0.5 * (a + b);
    let v_pp = 2.0 * p.cos() + 4.0 * (2.0 * p + phi_ext).cos();
    let v_tt = 2.0 * p.cos();
    // H_C = 2 E_C (n_phi^2 + n_theta^2): each mode oscillates at sqrt(4 E_C * E_J V'').
    let w_phi = (4.0 * ec * ej * v_pp).sqrt();
    let w_theta = (4.0 * ec * ej * v_tt).sqrt();
    w_phi.min(w_theta)
}

#[test]
fn second_level_matches_the_harmonic_well_estimate() {
    let spec = CircuitSpec::single_loop(1.0, PI);
    let sol = solve(&spec, 3).unwrap();
    let w = plasma_estimate(PI, spec.ec, spec.ej);
    let e20 = sol.energies[2] - sol.energies[0];
    assert!((e20 - w).abs() < 0.15 * w, "E2 - E0 = {e20}, harmonic {w}");
}

#[test]
fn align_gauge_removes_pure_phases() {
    let sol = solve(&CircuitSpec::single_loop(0.9, 0.997 * PI), 5).unwrap();
    let same = align_gauge(&sol, &sol).unwrap();
    let ph = Complex64::from_polar(1.0, PI / 3.0);
    let mut rotated = sol.clone();
    for j in 0..5 {
        for i in 0..rotated.states.nrows() {
            rotated.states[(i, j)] *= ph;
        }
    }
    let back = align_gauge(&sol, &rotated).unwrap();
    for out in [same, back] {
        assert_eq!(out.energies, sol.energies);
        for j in 0..5 {
            for i in 0..sol.states.nrows() {
                assert!((out.states[(i, j)] - sol.states[(i, j)]).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn small_alpha_step_keeps_states_continuous() {
    let a = solve(&CircuitSpec::single_loop(1.0, 0.997 * PI), 5).unwrap();
    let b = solve(&CircuitSpec::single_loop(0.99, 0.997 * PI), 5).unwrap();
    let energies = b.energies.clone();
    let aligned = align_gauge(&a, &b).unwrap();
    assert_eq!(aligned.energies, energies);
    let ov = a.states.adjoint() * &aligned.states;
    for i in 0..5 {
        let bound = if i < 2 { 0.999 } else { 0.99 };
        assert!(ov[(i, i)].re > bound && ov[(i, i)].im.abs() < 1e-12, "state {i}: {}", ov[(i, i)]);
    }
}

#[test]
fn alignment_across_a_large_jump_fails() {
    let a = solve(&CircuitSpec::single_loop(1.0, 0.9 * PI), 4).unwrap();
    let b = solve(&CircuitSpec::single_loop(1.0, 1.1 * PI), 4).unwrap();
    assert!(matches!(align_gauge(&a, &b), Err(Error::GaugeFailure { .. })));
}

#[test]
fn omega_q_rises_as_the_barrier_drops() {
    // Below alpha ~ 0.85 tunnelling dominates the 0.003 pi flux offset.
    let values: Vec<f64> = (0..=7).map(|i| 0.85 - 0.05 * i as f64).collect();
    let rows = sweep(&CircuitSpec::single_loop(1.0, 0.997 * PI), SweepParameter::Alpha, &values, SweepQuantity::OmegaQ, 3).unwrap();
    assert!(rows.windows(2).all(|w| w[1].values[0] > w[0].values[0]));
}

#[test]
fn tunnel_splitting_is_exponential_in_alpha() {
    let alphas: Vec<f64> = (0..=6).map(|i| 0.85 + 0.025 * i as f64).collect();
    let rows = sweep(&CircuitSpec::single_loop(1.0, PI), SweepParameter::Alpha, &alphas, SweepQuantity::OmegaQ, 3).unwrap();
    let logs: Vec<f64> = rows.iter().map(|r| r.values[0].ln()).collect();
    assert!(r_squared(&alphas, &logs) > 0.98);
    assert!(logs.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn flux_dispersion_is_linear_near_half_flux() {
    // Past |f - 1/2| ~ 0.02 the in-well excitation near 2 GHz becomes the
    // first excited level, so fit inside that window.
    let fluxes: Vec<f64> = (0..=12).map(|i| 2.0 * PI * (0.485 + 0.0025 * i as f64)).collect();
    let rows = sweep(&CircuitSpec::single_loop(1.0, PI), SweepParameter::PhiExt, &fluxes, SweepQuantity::OmegaQ, 3).unwrap();
    let (lo, hi): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.value < PI);
    for branch in [lo, hi] {
        let branch: Vec<_> = branch.into_iter().filter(|r| (r.value / (2.0 * PI) - 0.5).abs() > 0.002).collect();
        assert!(branch.len() >= 4);
        let x: Vec<f64> = branch.iter().map(|r| r.value / (2.0 * PI)).collect();
        let y: Vec<f64> = branch.iter().map(|r| r.values[0]).collect();
        assert!(r_squared(&x, &y) > 0.99);
    }
}

#[test]
fn single_point_sweep_matches_direct_solve() {
    let spec = CircuitSpec::single_loop(0.75, 0.997 * PI);
    let rows = sweep(&spec, SweepParameter::Alpha, &[0.75], SweepQuantity::Anharmonicity, 3).unwrap();
    let direct = qubit_params(&solve(&spec, 3).unwrap()).unwrap();
    assert_eq!(rows[0].values[0], direct.anharmonicity);
}

#[test]
fn sweep_direction_does_not_change_energies() {
    let spec = CircuitSpec::single_loop(1.0, 0.997 * PI);
    let fwd: Vec<f64> = (0..6).map(|i| 1.0 - 0.02 * i as f64).collect();
    let rev: Vec<f64> = fwd.iter().rev().copied().collect();
    let a = sweep(&spec, SweepParameter::Alpha, &fwd, SweepQuantity::Energies, 4).unwrap();
    let b = sweep(&spec, SweepParameter::Alpha, &rev, SweepQuantity::Energies, 4).unwrap();
    for (x, y) in a.iter().zip(b.iter().rev()) {
        for (p, q) in x.values.iter().zip(&y.values) {
            assert!((p - q).abs() < 1e-10);
        }
    }
}

#[test]
fn unknown_sweep_parameter_is_rejected() {
    assert!("barrier".parse::<SweepParameter>().is_err());
    assert_eq!("phi_ext".parse::<SweepParameter>().unwrap(), SweepParameter::PhiExt);
}

#[test]
fn full_basis_interleaves_the_half_charge_copy() {
    // With both parity blocks the lowest splitting collapses; the even
    // sector is the physical one.
    let even = solve(&CircuitSpec::single_loop(1.0, 0.995 * PI), 2).unwrap();
    let all = solve(&CircuitSpec::single_loop(1.0, 0.995 * PI).with_sector(Sector::All), 2).unwrap();
    assert!(all.energies[1] - all.energies[0] < 1e-3);
    assert!(even.energies[1] - even.energies[0] > 0.2);
}
