use std::f64::consts::PI;

use dsfq::coherence::{
    channel_operator, channel_rates, decay_integrated_fidelity, dephasing_rates, frequency_slope,
    relaxation_rates, ChargeUnits, DielectricConvention,
};
use dsfq::spectrum::solve;
use dsfq::{coherence, build_operator, ChannelKind, CircuitSpec, Complex64, Environment, Error, NoiseChannel, OperatorKind};

fn spec(alpha: f64) -> CircuitSpec {
    CircuitSpec::single_loop(alpha, 0.997 * PI)
}

fn rate_of(report: &[(ChannelKind, f64)], kind: ChannelKind) -> f64 {
    report.iter().find(|r| r.0 == kind).map(|r| r.1).unwrap()
}

#[test]
fn t2_combines_t1_and_tphi() {
    let r = coherence(&spec(0.8), &NoiseChannel::reference_set(), &Environment::default()).unwrap();
    let lhs = 1.0 / r.t2;
    let rhs = 1.0 / (2.0 * r.t1) + 1.0 / r.tphi;
    assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    assert!(r.t1.is_finite() && r.tphi.is_finite());
}

#[test]
fn relaxation_and_dephasing_split_the_report() {
    let env = Environment::default();
    let chans = NoiseChannel::reference_set();
    let t1 = relaxation_rates(&spec(0.8), &chans, &env).unwrap();
    let tp = dephasing_rates(&spec(0.8), &chans, &env).unwrap();
    assert!(t1.tphi.is_infinite() && t1.gammaphi_by_channel.is_empty());
    assert!(tp.t1.is_infinite() && tp.gamma1_by_channel.is_empty());
    assert_eq!(t1.gamma1_by_channel.len(), chans.len());
}

#[test]
fn rates_scale_with_amplitude() {
    let env = Environment::default();
    let s = spec(0.7);
    for c in NoiseChannel::reference_set() {
        let small = NoiseChannel { amplitude: c.amplitude * 1e-3, ..c };
        let a = coherence(&s, &[c], &env).unwrap();
        let b = coherence(&s, &[small], &env).unwrap();
        let power = if c.kind == ChannelKind::Dielectric { 1.0 } else { 2.0 };
        let ratio = a.gamma1_total() / b.gamma1_total();
        assert!((ratio / 1e3f64.powf(power) - 1.0).abs() < 1e-9, "{:?}: {ratio}", c.kind);
    }
}

#[test]
fn empty_or_non_positive_channels_are_rejected() {
    let env = Environment::default();
    assert!(coherence(&spec(1.0), &[], &env).is_err());
    let zero = NoiseChannel::new(ChannelKind::Flux1f, 0.0);
    assert!(coherence(&spec(1.0), &[zero], &env).is_err());
    let cold = Environment { temperature: 0.0, ..env };
    assert!(coherence(&spec(1.0), &NoiseChannel::reference_set(), &cold).is_err());
}

#[test]
fn degenerate_qubit_is_an_error_not_infinity() {
    let s = spec(0.8);
    let mut sol = solve(&s, 2).unwrap();
    sol.energies[1] = sol.energies[0];
    let env = Environment::default();
    let c = NoiseChannel::new(ChannelKind::Flux1f, 1e-6);
    let op = channel_operator(&s, &c, &env).unwrap();
    assert!(matches!(channel_rates(&sol, &op, &c, &s, &env), Err(Error::DegenerateQubit(_))));
}

#[test]
fn rates_are_gauge_invariant() {
    let s = spec(0.75);
    let env = Environment::default();
    let sol = solve(&s, 2).unwrap();
    let mut twisted = sol.clone();
    for (j, ph) in [0.4, -2.1].iter().enumerate() {
        for i in 0..twisted.states.nrows() {
            twisted.states[(i, j)] *= Complex64::from_polar(1.0, *ph);
        }
    }
    let pairs: Vec<_> = NoiseChannel::reference_set()
        .into_iter()
        .map(|c| {
            let op = channel_operator(&s, &c, &env).unwrap();
            (channel_rates(&sol, &op, &c, &s, &env).unwrap(), channel_rates(&twisted, &op, &c, &s, &env).unwrap())
        })
        .collect();
    // symmetry-suppressed channels sit at roundoff, so compare on the total scale
    let scale: f64 = pairs.iter().map(|(a, _)| a.0 + a.1).sum();
    for (a, b) in pairs {
        assert!((a.0 - b.0).abs() <= 1e-12 * a.0 + 1e-14 * scale);
        assert!((a.1 - b.1).abs() <= 1e-12 * a.1 + 1e-14 * scale);
    }
}

#[test]
fn hellmann_feynman_slope_matches_finite_difference() {
    for alpha in [1.0, 0.6] {
        let s = spec(alpha);
        let op = build_operator(OperatorKind::DhDphiExt, &s).unwrap();
        let hf = frequency_slope(&s, &op).unwrap();
        let h = 1e-6;
        let w = |p: f64| {
            let sol = solve(&CircuitSpec::single_loop(alpha, p), 2).unwrap();
            sol.energies[1] - sol.energies[0]
        };
        let fd = (w(0.997 * PI + h) - w(0.997 * PI - h)) / (2.0 * h);
        assert!((hf - fd).abs() <= 1e-4 * fd.abs(), "alpha {alpha}: {hf} vs {fd}");
    }
}

#[test]
fn half_flux_is_a_first_order_sweet_spot() {
    let slope = |p: f64| {
        let s = CircuitSpec::single_loop(1.0, p);
        frequency_slope(&s, &build_operator(OperatorKind::DhDphiExt, &s).unwrap()).unwrap()
    };
    let at_pi = slope(PI).abs();
    let away = slope(0.98 * PI).abs();
    assert!(at_pi < 1e-3 * away, "{at_pi} vs {away}");
    // the transverse element stays large
    let s = CircuitSpec::single_loop(1.0, PI);
    let sol = solve(&s, 2).unwrap();
    let op = build_operator(OperatorKind::DhDphiExt, &s).unwrap();
    let m10 = op.expectation(&sol.state(1), &sol.state(0)).norm();
    assert!(m10 > 1.0, "{m10}");
}

#[test]
fn t1_grows_with_the_barrier() {
    let env = Environment::default();
    let chans = NoiseChannel::reference_set();
    let t1: Vec<f64> = [0.6, 0.7, 0.8, 0.9, 1.0]
        .iter()
        .map(|&a| coherence(&spec(a), &chans, &env).unwrap().t1)
        .collect();
    assert!(t1.windows(2).all(|w| w[1] > w[0]), "{t1:?}");
    assert!(t1[4] / coherence(&spec(0.5), &chans, &env).unwrap().t1 >= 1e2);
}

#[test]
fn electron_units_quarter_the_charge_rates() {
    let base = Environment::default();
    let e = Environment { charge_units: ChargeUnits::Electron, ..base };
    let s = spec(0.6);
    let c = [NoiseChannel::new(ChannelKind::ChargeOhmicPhi, 5.2e-9)];
    let a = coherence(&s, &c, &base).unwrap().gamma1_total();
    let b = coherence(&s, &c, &e).unwrap().gamma1_total();
    assert!((a / b - 4.0).abs() < 1e-9);
}

#[test]
fn standard_dielectric_form_differs_only_in_the_thermal_factor() {
    let s = spec(0.5);
    let c = [NoiseChannel::new(ChannelKind::Dielectric, 2e-7)];
    let a = coherence(&s, &c, &Environment::default()).unwrap();
    let b = coherence(&s, &c, &Environment { dielectric: DielectricConvention::Standard, ..Default::default() })
        .unwrap();
    let x = a.omega_q / dsfq::units::thermal_frequency_ghz(0.02);
    let want = (1.0 / (0.5 * x).tanh() + 1.0) / (1.0 / x.tanh() + 1.0);
    let got = rate_of(&b.gamma1_by_channel, ChannelKind::Dielectric) / rate_of(&a.gamma1_by_channel, ChannelKind::Dielectric);
    assert!((got / want - 1.0).abs() < 1e-12);
}

#[test]
fn thermal_frequency_at_20_mk() {
    assert!((dsfq::units::thermal_frequency_ghz(0.02) - 0.4167).abs() < 1e-4);
}

#[test]
fn decay_integrated_fidelity_examples() {
    let g = 1.0 / 519e3; // 1/ns
    let f = decay_integrated_fidelity(&[0.0, 500.0, 1000.0], &[g, g, g]).unwrap();
    assert!((f - (-1.0f64 / 519.0).exp()).abs() < 1e-15);
    assert!((f - 0.99808).abs() < 5e-6);
    assert_eq!(decay_integrated_fidelity(&[0.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
    assert!(decay_integrated_fidelity(&[0.0, 1.0], &[0.1, -0.1]).is_err());
    assert!(decay_integrated_fidelity(&[0.0, 1.0, 0.5], &[0.1, 0.1, 0.1]).is_err());
    assert!(decay_integrated_fidelity(&[0.0, 1.0], &[0.1]).is_err());
}

#[test]
fn gradiometric_global_channel_uses_both_loops() {
    let g = CircuitSpec::gradiometric(0.5, 0.5, PI, -PI).with_cutoff(8);
    let env = Environment::default();
    let mut c = NoiseChannel::new(ChannelKind::FluxGlobal1f, 1e-6);
    c.area_asymmetry = 0.0;
    let op = channel_operator(&g, &c, &env).unwrap();
    let d1 = build_operator(OperatorKind::DhDphiExt1, &g).unwrap();
    let d2 = build_operator(OperatorKind::DhDphiExt2, &g).unwrap();
    for (i, j) in [(0, 1), (5, 7), (30, 12)] {
        let want = 2.0 * PI * (d1.entries[(i, j)] - d2.entries[(i, j)]);
        assert!((op.entries[(i, j)] - want).norm() < 1e-12);
    }
}
