use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use dsfq::circuit::DEFAULT_PHI_EXT;
use dsfq::evolve::{FrameCache, SingleQubitSystem, FRAME_CACHE_STEP};
use dsfq::gates::{entangling_power, sqrt_iswap, zz_strength};
use dsfq::readout::{dispersive_shift, ResonatorSpec};
use dsfq::spectrum::solve;
use dsfq::{
    build_hamiltonian, coherence, AlphaProfile, CircuitSpec, CoupledSpec, Environment, NoiseChannel,
    PropagationSettings,
};

fn spectrum(c: &mut Criterion) {
    let spec = CircuitSpec::single_loop(1.0, DEFAULT_PHI_EXT);
    c.bench_function("build_hamiltonian_cutoff12", |b| b.iter(|| build_hamiltonian(black_box(&spec)).unwrap()));
    c.bench_function("solve_3_levels_cutoff12", |b| b.iter(|| solve(black_box(&spec), 3).unwrap()));
    let grad = CircuitSpec::gradiometric(1.0, 1.0, PI, -PI);
    c.bench_function("solve_gradiometric_2_levels", |b| b.iter(|| solve(black_box(&grad), 2).unwrap()));
}

fn coherence_and_readout(c: &mut Criterion) {
    let spec = CircuitSpec::single_loop(0.8, DEFAULT_PHI_EXT);
    let channels = NoiseChannel::reference_set();
    let env = Environment::default();
    c.bench_function("coherence_reference_channels", |b| {
        b.iter(|| coherence(black_box(&spec), &channels, &env).unwrap())
    });
    let readout = CircuitSpec::single_loop(1.0, 1.023 * PI);
    let res = ResonatorSpec::reference();
    c.bench_function("dispersive_shift_20_levels", |b| {
        b.iter(|| dispersive_shift(black_box(&readout), &res, 20).unwrap())
    });
}

fn propagation(c: &mut Criterion) {
    let mut g = c.benchmark_group("propagation");
    g.sample_size(10);
    let spec = CircuitSpec::single_loop(1.0, DEFAULT_PHI_EXT);
    let profile = AlphaProfile::single_qubit(1.0, 1.0, 0.9).unwrap();
    let system = SingleQubitSystem::for_profile(&spec, &profile).unwrap();
    let psi = vec![system.eigen(1.0, 1).unwrap().state(0)];
    let settings = PropagationSettings::single_qubit().with_steps(200);
    g.bench_function("single_qubit_3ns_200_steps_per_ns", |b| {
        b.iter(|| system.propagate(&profile, None, &psi, &settings).unwrap())
    });
    let coupled = CoupledSpec::symmetric(1.0, 1.0, 0.3);
    let cache = FrameCache::build(&coupled, 0.95, FRAME_CACHE_STEP, 24).unwrap();
    let schedule = AlphaProfile::two_qubit(6.0, 2.0).unwrap();
    let settings = PropagationSettings::two_qubit();
    g.bench_function("two_qubit_8ns_k24", |b| b.iter(|| cache.propagate(&schedule, &settings).unwrap()));
    g.bench_function("zz_strength_24_levels", |b| b.iter(|| zz_strength(&coupled, 0.8, 0.8).unwrap()));
    g.finish();
    c.bench_function("entangling_power_octahedron", |b| b.iter(|| entangling_power(black_box(&sqrt_iswap())).unwrap()));
}

criterion_group!(benches, spectrum, coherence_and_readout, propagation);
criterion_main!(benches);
