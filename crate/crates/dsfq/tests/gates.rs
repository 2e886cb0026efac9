use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use dsfq::evolve::AlphaProfile;
use dsfq::gates::{
    calibrate_drive_with, cphase, marker_search, cz, decay_channels, effective_couplings, entangling_power, fsim,
    fsim_decompose, gate_fidelity, identity, iswap, kron, linear_entropy, pauli_x, pauli_y,
    pauli_z, rotation, sqrt_iswap, swap, zz_strength, DecayModel, GateOptions, Refinement,
    SingleQubitGate, TwoQubitGate,
};
use dsfq::{CircuitSpec, Complex64, CoupledSpec, DrivePulse, Environment, Error, FidelityMode, Mat, PropagationSettings};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Mat<Complex64>;

fn diag(p: &[f64]) -> M {
    Mat::from_fn(p.len(), p.len(), |i, j| if i == j { Complex64::from_polar(1.0, p[i]) } else { Complex64::new(0.0, 0.0) })
}

/// Z(a) (x) Z(b) as a diagonal on |00>, |01>, |10>, |11>.
fn zz(a: f64, b: f64) -> M {
    diag(&[0.0, b, a, a + b])
}

fn scale(u: &M, s: Complex64) -> M {
    Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * s)
}

fn su2(a: f64, b: f64, c: f64) -> M {
    rotation(a, b) * rotation(c, b + FRAC_PI_2)
}

fn max_diff(a: &M, b: &M) -> f64 {
    let mut w = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            w = w.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    w
}

#[test]
fn fidelity_of_target_and_phase_copies() {
    let t = pauli_x();
    assert!((gate_fidelity(&t, &t, FidelityMode::Plain).unwrap() - 1.0).abs() < 1e-15);
    let ph = scale(&t, Complex64::from_polar(1.0, PI / 7.0));
    assert!((gate_fidelity(&ph, &t, FidelityMode::Plain).unwrap() - 1.0).abs() < 1e-15);
    // orthogonal Paulis: (0 + 2)/6
    assert!((gate_fidelity(&pauli_z(), &t, FidelityMode::Plain).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(matches!(gate_fidelity(&identity(2), &identity(4), FidelityMode::Plain), Err(Error::DimensionMismatch { .. })));
    assert!(gate_fidelity(&identity(3), &identity(3), FidelityMode::Plain).is_err());
}

#[test]
fn leaked_columns_lower_the_fidelity() {
    let mut u = identity(2);
    u[(1, 1)] = Complex64::new(0.9, 0.0);
    let f = gate_fidelity(&u, &identity(2), FidelityMode::Plain).unwrap();
    assert!((f - (1.9f64.powi(2) + 2.0) / 6.0).abs() < 1e-15);
}

#[test]
fn pauli_algebra() {
    let i = Complex64::new(0.0, 1.0);
    assert!(max_diff(&(pauli_x() * pauli_y()), &scale(&pauli_z(), i)) < 1e-15);
    assert!(max_diff(&rotation(PI, 0.0), &scale(&pauli_x(), -i)) < 1e-15);
    assert!(max_diff(&rotation(PI, FRAC_PI_2), &scale(&pauli_y(), i)) < 1e-15);
    assert!(max_diff(&(sqrt_iswap() * sqrt_iswap()), &iswap()) < 1e-15);
    assert!(max_diff(&cz(), &diag(&[0.0, 0.0, 0.0, PI])) < 1e-15);
}

#[test]
fn fsim_corners() {
    let id = fsim_decompose(&identity(4)).unwrap();
    assert!(id.theta.abs() < 1e-15 && id.phi.abs() < 1e-15 && id.residual < 1e-12);
    let c = fsim_decompose(&cphase(0.7)).unwrap();
    assert!(c.theta.abs() < 1e-15 && (c.phi - 0.7).abs() < 1e-12);
    let s = fsim_decompose(&iswap()).unwrap();
    assert!((s.theta - FRAC_PI_2).abs() < 1e-15 && s.phi.abs() < 1e-12);
    assert!(s.residual < 1e-9);
    assert!(!s.degenerate);
    let mut bad = identity(4);
    bad[(0, 0)] = Complex64::new(0.5, 0.0);
    assert!(fsim_decompose(&bad).is_err());
}

#[test]
fn degenerate_swap_angle_is_flagged() {
    // |01> -> |11>: both U_01,01 and U_01,10 vanish
    let p = Mat::from_fn(4, 4, |i, j| {
        let map = [0, 3, 2, 1];
        if map[j] == i { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let f = fsim_decompose(&p).unwrap();
    assert!(f.degenerate && f.theta == FRAC_PI_2);
}

#[test]
fn entangling_power_anchors() {
    assert!(entangling_power(&identity(4)).unwrap().abs() < 1e-14);
    assert!(entangling_power(&swap()).unwrap().abs() < 1e-14);
    assert!((entangling_power(&cz()).unwrap() - 1.0).abs() < 1e-14);
    assert!((entangling_power(&iswap()).unwrap() - 1.0).abs() < 1e-14);
    assert!(entangling_power(&identity(2)).is_err());
}

/// Haar-random qubit state: z uniform on [-1, 1], azimuth uniform.
fn haar_qubit(rng: &mut impl Rng) -> [Complex64; 2] {
    let u: f64 = rng.gen();
    let phi = 2.0 * PI * rng.gen::<f64>();
    [Complex64::new(u.sqrt(), 0.0), Complex64::from_polar((1.0 - u).sqrt(), phi)]
}

#[test]
fn entangling_power_matches_monte_carlo() {
    let u = sqrt_iswap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // standard error at 1e5 samples is 1.6e-3, so use enough for 1e-3 to be meaningful
    let n = 4_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let (a, b) = (haar_qubit(&mut rng), haar_qubit(&mut rng));
        let input = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|j| u[(i, j)] * input[j]).sum();
        }
        acc += linear_entropy(&out);
    }
    let mc = acc / n as f64 / (2.0 / 9.0);
    let exact = entangling_power(&u).unwrap();
    assert!((mc - exact).abs() < 1e-3, "{mc} vs {exact}");
    assert!((exact - 0.75).abs() < 1e-12);
}

#[test]
fn up_to_z_fidelity_ignores_z_dressing() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let target = fsim(FRAC_PI_4, 0.0);
    for _ in 0..5 {
        let p: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-PI..PI));
        let u = zz(p[0], p[1]) * &target * zz(p[2], p[3]);
        let f = gate_fidelity(&u, &target, FidelityMode::UpToZ).unwrap();
        assert!((f - 1.0).abs() < 1e-9, "{f}");
        assert!(gate_fidelity(&u, &target, FidelityMode::Plain).unwrap() <= f + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fsim_angles_survive_z_dressing(
        theta in 0.05f64..1.5,
        phi in -3.0f64..3.0,
        p in proptest::array::uniform4(-PI..PI),
        g in -PI..PI,
    ) {
        let u = scale(&(zz(p[0], p[1]) * fsim(theta, phi) * zz(p[2], p[3])), Complex64::from_polar(1.0, g));
        let f = fsim_decompose(&u).unwrap();
        prop_assert!((f.theta - theta).abs() < 1e-9);
        prop_assert!((f.phi - phi).abs() < 1e-9);
        prop_assert!(f.residual < 1e-9);
    }

    #[test]
    fn entangling_power_is_locally_invariant(
        a in proptest::array::uniform3(-PI..PI),
        b in proptest::array::uniform3(-PI..PI),
        c in proptest::array::uniform3(-PI..PI),
        d in proptest::array::uniform3(-PI..PI),
        theta in 0.0f64..1.5,
        phi in -3.0f64..3.0,
    ) {
        let core = fsim(theta, phi);
        let pre = kron(&su2(a[0], a[1], a[2]), &su2(b[0], b[1], b[2]));
        let post = kron(&su2(c[0], c[1], c[2]), &su2(d[0], d[1], d[2]));
        let dressed = post * &core * pre;
        let (x, y) = (entangling_power(&core).unwrap(), entangling_power(&dressed).unwrap());
        prop_assert!((x - y).abs() < 1e-6);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&y));
    }
}

fn single_qubit_engine() -> (SingleQubitGate, AlphaProfile, PropagationSettings) {
    let spec = CircuitSpec::single_loop(1.0, 0.995 * PI);
    let profile = AlphaProfile::single_qubit(7.0, 11.0, 0.7).unwrap();
    let settings = PropagationSettings::single_qubit().with_steps(100);
    let options = GateOptions { settings, ..GateOptions::single_qubit() };
    (SingleQubitGate::new(&spec, &profile, options).unwrap(), profile, settings)
}

#[test]
fn calibration_scales_inversely_with_envelope_area() {
    let (gate, profile, settings) = single_qubit_engine();
    let mut long = DrivePulse::centered(7.0, 11.0, 0.0);
    long.carrier_freq = 0.979 * gate.plateau_frequency(&profile, &long).unwrap();
    let short = DrivePulse { flat: 5.5, ..long };
    let a = calibrate_drive_with(&gate, &profile, &long, PI, None, Refinement::None, &settings).unwrap();
    let b = calibrate_drive_with(&gate, &profile, &short, PI, None, Refinement::None, &settings).unwrap();
    assert!((b.pulse.amplitude / a.pulse.amplitude - 2.0).abs() < 1e-12);
    let zero = calibrate_drive_with(&gate, &profile, &long, 0.0, None, Refinement::None, &settings).unwrap();
    assert_eq!(zero.pulse.amplitude, 0.0);
    assert!(calibrate_drive_with(&gate, &profile, &long, -1.0, None, Refinement::None, &settings).is_err());
}

#[test]
fn rabi_pi_pulse_transfers_the_population() {
    let (gate, profile, settings) = single_qubit_engine();
    let transfer = |ratio: f64| {
        let mut t = DrivePulse::centered(7.0, 11.0, 1.5);
        t.carrier_freq = ratio * gate.plateau_frequency(&profile, &t).unwrap();
        let cal = calibrate_drive_with(&gate, &profile, &t, PI, None, Refinement::None, &settings).unwrap();
        gate.subspace_map(&profile, Some(&cal.pulse), &settings).unwrap().0[(1, 0)].norm_sqr()
    };
    // the strong drive pulls the resonance about 1% below omega_q
    let (on, shifted) = (transfer(1.0), transfer(0.99));
    assert!(on > 0.98, "{on}");
    assert!(shifted > 0.998 && shifted > on, "{shifted}");
}

#[test]
fn drive_must_sit_on_the_plateau() {
    let (gate, profile, settings) = single_qubit_engine();
    let early = DrivePulse { amplitude: 0.01, ..DrivePulse::centered(3.0, 11.0, 1.5) };
    assert!(gate.run(&profile, &early, &pauli_x()).is_err());
    assert!(calibrate_drive_with(&gate, &profile, &early, PI, None, Refinement::None, &settings).is_err());
    let unset = DrivePulse::centered(7.0, 11.0, 1.5);
    assert!(matches!(gate.run(&profile, &unset, &pauli_x()), Err(Error::Calibration(_))));
    let flat = AlphaProfile::constant(0.7, 25.0).unwrap();
    assert!(gate.run(&flat, &DrivePulse { amplitude: 0.01, ..unset }, &pauli_x()).is_err());
}

#[test]
fn decay_fidelity_falls_as_the_schedule_stretches() {
    let spec = CircuitSpec::single_loop(1.0, 0.995 * PI);
    let model = DecayModel::new(&spec, decay_channels(), Environment::default());
    let base = AlphaProfile::single_qubit(7.0, 11.0, 0.7).unwrap();
    let f: Vec<f64> = [1.0, 1.5, 2.0, 3.0].iter().map(|&s| model.fidelity(&base.stretched(s).unwrap(), 0.5).unwrap()).collect();
    assert!(f.iter().all(|x| (0.0..=1.0).contains(x)));
    assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");
}

#[test]
fn uncoupled_qubits_have_no_zz() {
    let c = CoupledSpec::symmetric(1.0, 1.0, 0.0);
    for (a, b) in [(1.0, 1.0), (0.7, 0.9), (0.6, 0.6)] {
        let z = zz_strength(&c, a, b).unwrap();
        assert!(z.zeta.abs() < 1e-10, "{a} {b}: {}", z.zeta);
        assert!(z.overlaps.iter().all(|w| *w > 1.0 - 1e-10));
    }
}

#[test]
fn lowering_both_barriers_enhances_zz() {
    let c = CoupledSpec::symmetric(1.0, 1.0, 0.3);
    let far = zz_strength(&c, 1.0, 1.0).unwrap().zeta.abs();
    let near = zz_strength(&c, 0.6, 0.6).unwrap().zeta.abs();
    assert!(near >= 1e3 * far, "{near} vs {far}");
}

#[test]
fn effective_model_without_coupling() {
    let c = CoupledSpec::symmetric(0.8, 0.8, 0.0);
    let m = effective_couplings(&c, 0.8).unwrap();
    assert!(m.g_xy.abs() < 1e-14 && m.g_z.abs() < 1e-14);
    let (q1, _) = c.dressed_qubits();
    let mut q = q1.clone();
    q.alpha = Some(0.8);
    let sol = dsfq::spectrum::solve(&q, 2).unwrap();
    assert!((m.omega1 - (sol.energies[1] - sol.energies[0])).abs() < 1e-10);
    assert!((m.omega1 - m.omega2).abs() < 1e-12);
}

#[test]
fn exchange_coupling_grows_as_the_barriers_drop() {
    let c = CoupledSpec::symmetric(1.0, 1.0, 0.3);
    let at_one = effective_couplings(&c, 1.0).unwrap().g_xy.abs();
    assert!(at_one < 1e-4, "{at_one}");
    let mut last = at_one;
    let mut last_ratio = 0.0;
    for a in [0.9, 0.8, 0.75, 0.7] {
        let m = effective_couplings(&c, a).unwrap();
        assert!(m.g_xy.abs() > last);
        last = m.g_xy.abs();
        // First-order exchange against the exact 01/10 splitting. Dressing by
        // higher levels closes the gap as the barriers drop.
        let z = zz_strength(&c, a, a).unwrap();
        let ratio = (z.levels[2] - z.levels[1]) / (2.0 * m.g_xy.abs());
        assert!(ratio > last_ratio && ratio < 1.0, "alpha {a}: {ratio}");
        last_ratio = ratio;
        if a <= 0.75 {
            assert!((1.0 - ratio).abs() < 0.1, "alpha {a}: {ratio}");
        }
    }
}

#[test]
fn flat_barrier_gate_is_a_z_dressed_identity() {
    let c = CoupledSpec::symmetric(1.0, 1.0, 0.3);
    let gate = TwoQubitGate::new(&c, 0.99, GateOptions::two_qubit()).unwrap();
    let r = gate.run(0.0, 10.0).unwrap();
    let f = gate_fidelity(&r.unitary, &identity(4), FidelityMode::UpToZ).unwrap();
    assert!(f > 0.9999, "{f}");
    assert!(r.leakage < 1e-10);
    assert!((0.0..=1.0).contains(&r.t1_limited_fidelity));
}

#[test]
fn swap_angle_is_periodic_in_the_waiting_time() {
    let c = CoupledSpec::symmetric(1.0, 1.0, 0.3);
    let t_a = 40.0;
    let a_min = dsfq::evolve::two_qubit_alpha_min(t_a);
    let gate = TwoQubitGate::new(&c, a_min - 1e-3, GateOptions::two_qubit()).unwrap();
    let z = zz_strength(&c, a_min, a_min).unwrap();
    let period = 1.0 / (z.levels[2] - z.levels[1]);
    let a = gate.run(t_a, 3.0).unwrap().fsim.unwrap();
    let b = gate.run(t_a, 3.0 + period).unwrap().fsim.unwrap();
    assert!((a.theta - b.theta).abs() < 0.02, "{} vs {} (period {period})", a.theta, b.theta);
}

#[test]
fn marker_search_stays_inside_its_window() {
    let c = CoupledSpec::symmetric(1.0, 1.0, 0.3);
    let options = GateOptions { settings: PropagationSettings::two_qubit().with_steps(50), ..GateOptions::two_qubit() };
    let gate = TwoQubitGate::new(&c, 0.85, options).unwrap();
    // the target is out of reach, so the optimizer pushes on the window edges
    let m = marker_search(&gate, &sqrt_iswap(), 6.0, 7.0, 3.0).unwrap();
    assert!((6.0 - 1e-12..=7.0 + 1e-12).contains(&m.total_time()), "{m:?}");
    assert!(m.t_a >= 0.0 && m.t_w >= 0.0 && m.t_a <= m.total_time());
    assert!((gate.score(m.t_a, m.t_w, &sqrt_iswap()).unwrap() - m.fidelity).abs() < 1e-12);
    assert!(marker_search(&gate, &sqrt_iswap(), 7.0, 6.0, 3.0).is_err());
}
