//! Gate construction and scoring: single-qubit drive gates, two-qubit fSim
//! gates, fidelities, fSim decomposition, entangling power, ZZ and the
//! effective two-qubit model.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Mutex;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::circuit::{build_operator, CircuitSpec, CoupledSpec, OperatorKind};
use crate::coherence::{coherence, decay_integrated_fidelity, ChannelKind, Environment, NoiseChannel};
use crate::error::{Error, Result};
use crate::evolve::{
    coupled_eigensystem, AlphaProfile, CoupledEigen, DrivePulse, FrameCache, PropagationSettings,
    SingleQubitSystem, FRAME_CACHE_STEP,
};
use crate::linalg::{self, ONE, ZERO};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(d: usize) -> Mat<C64> {
    Mat::identity(d, d)
}

pub fn pauli_x() -> Mat<C64> {
    Mat::from_fn(2, 2, |i, j| if i != j { ONE } else { ZERO })
}

pub fn pauli_y() -> Mat<C64> {
    Mat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 1) => c(0.0, -1.0),
        (1, 0) => c(0.0, 1.0),
        _ => ZERO,
    })
}

pub fn pauli_z() -> Mat<C64> {
    Mat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) => ONE,
        (1, 1) => -ONE,
        _ => ZERO,
    })
}

/// exp(-i theta/2 (cos(phi) X - sin(phi) Y)), the rotation a drive with
/// phase offset `phi` produces.
pub fn rotation(theta: f64, phi: f64) -> Mat<C64> {
    let (ch, sh) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    let n = C64::from_polar(1.0, phi);
    Mat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) | (1, 1) => c(ch, 0.0),
        // -i sh (cos phi X - sin phi Y)
        (0, 1) => c(0.0, -sh) * n,
        _ => c(0.0, -sh) * n.conj(),
    })
}

/// (X - Y)/sqrt(2)
pub fn pauli_xy() -> Mat<C64> {
    Mat::from_fn(2, 2, |i, j| FRAC_1_SQRT_2 * (pauli_x()[(i, j)] - pauli_y()[(i, j)]))
}

/// fSim(theta, phi) in the |00>, |01>, |10>, |11> order.
pub fn fsim(theta: f64, phi: f64) -> Mat<C64> {
    let (ct, st) = (theta.cos(), theta.sin());
    Mat::from_fn(4, 4, |i, j| match (i, j) {
        (0, 0) => ONE,
        (1, 1) | (2, 2) => c(ct, 0.0),
        (1, 2) | (2, 1) => c(0.0, -st),
        (3, 3) => C64::from_polar(1.0, -phi),
        _ => ZERO,
    })
}

/// The theta = 0 edge of fSim: diag(1, 1, 1, e^{-i phi}).
pub fn cphase(phi: f64) -> Mat<C64> {
    fsim(0.0, phi)
}

pub fn cz() -> Mat<C64> {
    cphase(PI)
}

pub fn iswap() -> Mat<C64> {
    Mat::from_fn(4, 4, |i, j| match (i, j) {
        (0, 0) | (3, 3) => ONE,
        (1, 2) | (2, 1) => c(0.0, 1.0),
        _ => ZERO,
    })
}

pub fn sqrt_iswap() -> Mat<C64> {
    Mat::from_fn(4, 4, |i, j| match (i, j) {
        (0, 0) | (3, 3) => ONE,
        (1, 1) | (2, 2) => c(FRAC_1_SQRT_2, 0.0),
        (1, 2) | (2, 1) => c(0.0, FRAC_1_SQRT_2),
        _ => ZERO,
    })
}

pub fn swap() -> Mat<C64> {
    Mat::from_fn(4, 4, |i, j| match (i, j) {
        (0, 0) | (3, 3) | (1, 2) | (2, 1) => ONE,
        _ => ZERO,
    })
}

pub fn kron(a: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    Mat::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityMode {
    Plain,
    /// Maximized over single-qubit Z phases before and after the gate.
    UpToZ,
}

fn plain_fidelity(u: &Mat<C64>, target: &Mat<C64>) -> f64 {
    let d = u.nrows() as f64;
    let mut tr = ZERO;
    for i in 0..u.nrows() {
        for j in 0..u.nrows() {
            tr += target[(j, i)].conj() * u[(j, i)];
        }
    }
    (tr.norm_sqr() + d) / (d * (d + 1.0))
}

/// Diagonal phases of local Z rotations: qubit phases `q` (one per qubit).
fn z_phases(d: usize, q: &[f64]) -> Vec<C64> {
    match d {
        2 => vec![ONE, C64::from_polar(1.0, q[0])],
        _ => vec![ONE, C64::from_polar(1.0, q[1]), C64::from_polar(1.0, q[0]), C64::from_polar(1.0, q[0] + q[1])],
    }
}

/// diag(post) U diag(pre)
fn dress(u: &Mat<C64>, pre: &[C64], post: &[C64]) -> Mat<C64> {
    Mat::from_fn(u.nrows(), u.ncols(), |i, j| post[i] * u[(i, j)] * pre[j])
}

fn check_square(u: &Mat<C64>, target: &Mat<C64>) -> Result<usize> {
    let d = u.nrows();
    if u.ncols() != d || !(d == 2 || d == 4) {
        return Err(Error::InvalidArgument(format!("gate must be 2x2 or 4x4, got {}x{}", d, u.ncols())));
    }
    if target.nrows() != d || target.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.nrows() });
    }
    Ok(d)
}

/// Average gate fidelity (|tr(T^dag U)|^2 + d)/(d(d+1)), global phase free.
pub fn gate_fidelity(u: &Mat<C64>, target: &Mat<C64>, mode: FidelityMode) -> Result<f64> {
    let d = check_square(u, target)?;
    match mode {
        FidelityMode::Plain => Ok(plain_fidelity(u, target)),
        FidelityMode::UpToZ => Ok(best_z_dressing(u, target, d)?.0),
    }
}

/// Z phases (pre, post) maximizing the plain fidelity, and that fidelity.
pub fn best_z_dressing(u: &Mat<C64>, target: &Mat<C64>, d: usize) -> Result<(f64, Vec<f64>)> {
    let nq = if d == 2 { 1 } else { 2 };
    let f = |p: &[f64]| -> Result<f64> {
        let v = dress(u, &z_phases(d, &p[..nq]), &z_phases(d, &p[nq..]));
        Ok(1.0 - plain_fidelity(&v, target))
    };
    let starts = [0.0, PI * 0.5, PI, -PI * 0.5];
    let mut best = (f64::INFINITY, vec![0.0; 2 * nq]);
    let mut tried = 0;
    // deterministic spread of starting points on the phase torus
    for (s, &a) in starts.iter().enumerate() {
        for &b in &starts[..if nq == 1 { 4 } else { 2 }] {
            let mut p0 = vec![0.0; 2 * nq];
            p0[0] = a;
            p0[nq] = b;
            if nq == 2 {
                p0[1] = starts[(s + 1) % 4];
                p0[3] = -b;
            }
            let (p, v) = nelder_mead(&f, &p0, 0.4, 1e-15, 2000)?;
            tried += 1;
            if v < best.0 {
                best = (v, p);
            }
            if best.0 < 1e-13 && tried >= 2 {
                break;
            }
        }
    }
    // polish from the best point with a smaller simplex
    let (p, v) = nelder_mead(&f, &best.1, 1e-3, 1e-18, 2000)?;
    if v < best.0 {
        best = (v, p);
    }
    Ok((1.0 - best.0, best.1))
}

struct Problem<'a> {
    f: &'a dyn Fn(&[f64]) -> Result<f64>,
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        (self.f)(p).map_err(argmin::core::Error::from)
    }
}

/// Nelder-Mead from `start` with an axis simplex of size `scale`.
pub(crate) fn nelder_mead(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    start: &[f64],
    scale: f64,
    sd_tol: f64,
    max_iters: u64,
) -> Result<(Vec<f64>, f64)> {
    let scales = vec![scale; start.len()];
    nelder_mead_scaled(f, start, &scales, sd_tol, max_iters)
}

pub(crate) fn nelder_mead_scaled(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    start: &[f64],
    scales: &[f64],
    sd_tol: f64,
    max_iters: u64,
) -> Result<(Vec<f64>, f64)> {
    let mut simplex = vec![start.to_vec()];
    for (i, s) in scales.iter().enumerate() {
        let mut p = start.to_vec();
        p[i] += s;
        simplex.push(p);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(sd_tol)
        .map_err(|e| Error::Calibration(e.to_string()))?;
    let res = Executor::new(Problem { f }, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|e| match e.downcast::<Error>() {
            Ok(inner) => inner,
            Err(other) => Error::Calibration(other.to_string()),
        })?;
    let state = res.state();
    let p = state.get_best_param().cloned().unwrap_or_else(|| start.to_vec());
    Ok((p, state.get_best_cost()))
}

/// Subspace gate with scores.
#[derive(Debug, Clone)]
pub struct GateReport {
    /// Computational-subspace map, global phase removed.
    pub unitary: Mat<C64>,
    /// Norm of each column of the subspace map (1 - leaked amplitude).
    pub column_norms: Vec<f64>,
    pub coherent_fidelity: f64,
    /// |<target 0|U 0>|^2 (single-qubit gates).
    pub state_fidelity: Option<f64>,
    pub t1_limited_fidelity: f64,
    pub leakage: f64,
    pub gate_time: f64,
    pub fsim: Option<FsimParams>,
}

/// Leakage above this is not a gate.
pub const MAX_LEAKAGE: f64 = 0.05;

fn column_norms(u: &Mat<C64>) -> Vec<f64> {
    (0..u.ncols()).map(|j| (0..u.nrows()).map(|i| u[(i, j)].norm_sqr()).sum::<f64>().sqrt()).collect()
}

fn leakage(norms: &[f64]) -> f64 {
    (1.0 - norms.iter().map(|n| n * n).sum::<f64>() / norms.len() as f64).max(0.0)
}

/// Multiplies by a global phase so that tr(T^dag U) is real positive.
fn remove_global_phase(u: &Mat<C64>, target: &Mat<C64>) -> Mat<C64> {
    let mut tr = ZERO;
    for i in 0..u.nrows() {
        for j in 0..u.nrows() {
            tr += target[(j, i)].conj() * u[(j, i)];
        }
    }
    let ph = if tr.norm() > 0.0 { tr.conj() / tr.norm() } else { ONE };
    Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * ph)
}

/// Channels used for decay-limited fidelities: dielectric and 1/f.
pub fn decay_channels() -> Vec<NoiseChannel> {
    NoiseChannel::reference_set()
        .into_iter()
        .filter(|c| c.kind == ChannelKind::Dielectric || c.kind.is_one_over_f())
        .collect()
}

/// Gamma_1(alpha) in 1/ns with memoization on alpha.
pub struct DecayModel {
    spec: CircuitSpec,
    channels: Vec<NoiseChannel>,
    env: Environment,
    cache: Mutex<HashMap<u64, f64>>,
}

impl DecayModel {
    pub fn new(spec: &CircuitSpec, channels: Vec<NoiseChannel>, env: Environment) -> Self {
        Self { spec: spec.clone(), channels, env, cache: Mutex::new(HashMap::new()) }
    }

    pub fn gamma1(&self, alpha: f64) -> Result<f64> {
        let key = alpha.to_bits();
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let mut s = self.spec.clone();
        s.alpha = Some(alpha);
        let g = coherence(&s, &self.channels, &self.env)?.gamma1_total();
        self.cache.lock().expect("cache lock").insert(key, g);
        Ok(g)
    }

    /// exp(-int Gamma_1(alpha(t)) dt) sampled every `dt_sample` ns.
    pub fn fidelity(&self, profile: &AlphaProfile, dt_sample: f64) -> Result<f64> {
        self.fidelity_scaled(profile, dt_sample, 1)
    }

    /// As `fidelity` with the rate multiplied by `copies` (independent qubits
    /// on the same schedule).
    fn fidelity_scaled(&self, profile: &AlphaProfile, dt_sample: f64, copies: usize) -> Result<f64> {
        let total = profile.total_time();
        let n = ((total / dt_sample).ceil() as usize).max(1);
        let times: Vec<f64> = (0..=n).map(|i| total * i as f64 / n as f64).collect();
        let rates = times
            .iter()
            .map(|&t| Ok(copies as f64 * self.gamma1(profile.alpha(t))?))
            .collect::<Result<Vec<_>>>()?;
        decay_integrated_fidelity(&times, &rates)
    }
}

/// Shared options for gate runs.
#[derive(Debug, Clone)]
pub struct GateOptions {
    pub settings: PropagationSettings,
    pub channels: Vec<NoiseChannel>,
    pub env: Environment,
    /// Sampling interval of Gamma_1 along the schedule (ns).
    pub decay_sample: f64,
}

impl GateOptions {
    pub fn single_qubit() -> Self {
        Self {
            settings: PropagationSettings::single_qubit(),
            channels: decay_channels(),
            env: Environment::default(),
            decay_sample: 0.5,
        }
    }

    pub fn two_qubit() -> Self {
        Self { settings: PropagationSettings::two_qubit(), ..Self::single_qubit() }
    }
}

/// Single-qubit gate engine: propagator, eigenbasis at alpha = 1 and the
/// decay model, built once and reused across pulses.
pub struct SingleQubitGate {
    pub system: SingleQubitSystem,
    /// |0>, |1> at alpha = 1 with <0|n1|1> real positive.
    basis: [Vec<C64>; 2],
    decay: DecayModel,
    pub options: GateOptions,
}

impl SingleQubitGate {
    pub fn new(spec: &CircuitSpec, profile: &AlphaProfile, options: GateOptions) -> Result<Self> {
        let system = SingleQubitSystem::for_profile(spec, profile)?;
        let sol = system.eigen(1.0, 2)?;
        let n1 = build_operator(OperatorKind::N1, &system.spec_at(1.0))?;
        let (b0, mut b1) = (sol.state(0), sol.state(1));
        let m = n1.expectation(&b0, &b1);
        if m.norm() < 1e-14 {
            return Err(Error::InvalidSpec("drive matrix element <0|n1|1> vanishes".into()));
        }
        let ph = m.conj() / m.norm();
        b1.iter_mut().for_each(|x| *x *= ph);
        let decay = DecayModel::new(spec, options.channels.clone(), options.env);
        Ok(Self { system, basis: [b0, b1], decay, options })
    }

    /// Subspace map U_ij = <i|psi_j(T)> in the qubit frame, plus the final
    /// full states.
    pub fn subspace_map(
        &self,
        profile: &AlphaProfile,
        pulse: Option<&DrivePulse>,
        settings: &PropagationSettings,
    ) -> Result<(Mat<C64>, Vec<Vec<C64>>)> {
        let (traj, finals) = self.system.propagate(profile, pulse, &self.basis, settings)?;
        let frame = [ONE, C64::from_polar(1.0, traj.frame_phase)];
        let u = Mat::from_fn(2, 2, |i, j| frame[i] * linalg::dot(&self.basis[i], &finals[j]));
        Ok((u, finals))
    }

    fn check(&self, profile: &AlphaProfile, pulse: &DrivePulse) -> Result<()> {
        if !profile.is_gate_schedule() {
            return Err(Error::InvalidArgument("gate schedules must start and end at alpha = 1".into()));
        }
        if pulse.t_end() > profile.total_time() || !profile.is_flat_on(pulse.t_start, pulse.t_end()) {
            return Err(Error::InvalidArgument("drive must sit inside the alpha plateau".into()));
        }
        Ok(())
    }

    pub fn run(&self, profile: &AlphaProfile, pulse: &DrivePulse, target: &Mat<C64>) -> Result<GateReport> {
        check_square(target, target)?;
        self.check(profile, pulse)?;
        if pulse.amplitude == 0.0 && plain_fidelity(&identity(2), target) < 1.0 - 1e-12 {
            return Err(Error::Calibration("drive amplitude unset; run calibrate_drive first".into()));
        }
        let (u, _) = self.subspace_map(profile, Some(pulse), &self.options.settings)?;
        let norms = column_norms(&u);
        let leak = leakage(&norms);
        if leak > MAX_LEAKAGE {
            return Err(Error::ExcessiveLeakage(leak));
        }
        let u = remove_global_phase(&u, target);
        let coherent = plain_fidelity(&u, target);
        let state = (0..2).map(|i| target[(i, 0)].conj() * u[(i, 0)]).sum::<C64>().norm_sqr();
        Ok(GateReport {
            column_norms: norms,
            coherent_fidelity: coherent,
            state_fidelity: Some(state),
            t1_limited_fidelity: self.decay.fidelity(profile, self.options.decay_sample)?,
            leakage: leak,
            gate_time: profile.total_time(),
            fsim: None,
            unitary: u,
        })
    }

    /// |<0|n1|1>| at the pulse plateau.
    pub fn drive_matrix_element(&self, alpha: f64) -> Result<f64> {
        let sol = self.system.eigen(alpha, 2)?;
        let n1 = build_operator(OperatorKind::N1, &self.system.spec_at(alpha))?;
        Ok(n1.expectation(&sol.state(0), &sol.state(1)).norm())
    }

    /// omega_q at the pulse plateau.
    pub fn plateau_frequency(&self, profile: &AlphaProfile, pulse: &DrivePulse) -> Result<f64> {
        let sol = self.system.eigen(profile.alpha(pulse.t_start + 0.5 * pulse.duration()), 2)?;
        Ok(sol.energies[1] - sol.energies[0])
    }
}

/// Scalar-only calibration outcome.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pulse: DrivePulse,
    /// Amplitude from the Rabi-area formula before refinement.
    pub rabi_amplitude: f64,
    /// Coherent fidelity at `settings` resolution.
    pub fidelity: f64,
    pub evaluations: usize,
    /// Max |U(n steps) - U(2n steps)| at the calibrated point.
    pub step_doubling_deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Rabi formula only.
    None,
    /// 1-D scan over +-5% amplitude, golden-section polish.
    AmplitudeScan,
    /// Nelder-Mead over (amplitude factor, carrier/omega_q).
    AmplitudeAndDetuning,
}

/// Sets the pulse amplitude so that 2 pi |<0|n1|1>| * int eps dt equals
/// `rotation`, then refines against `target` (default: the rotation about the
/// pulse's own axis).
pub fn calibrate_drive_with(
    gate: &SingleQubitGate,
    profile: &AlphaProfile,
    template: &DrivePulse,
    rotation_angle: f64,
    target: Option<&Mat<C64>>,
    refine: Refinement,
    settings: &PropagationSettings,
) -> Result<CalibrationReport> {
    template.validate()?;
    gate.check(profile, template)?;
    if !rotation_angle.is_finite() || rotation_angle < 0.0 {
        return Err(Error::InvalidArgument("rotation angle must be non-negative".into()));
    }
    let alpha_p = profile.alpha(template.t_start + 0.5 * template.duration());
    let m = gate.drive_matrix_element(alpha_p)?;
    let area = template.shape_area();
    if area <= 0.0 {
        return Err(Error::InvalidArgument("pulse envelope has zero area".into()));
    }
    let rabi = rotation_angle / (2.0 * PI * m * area);
    let mut pulse = DrivePulse { amplitude: rabi, ..*template };
    if rotation_angle == 0.0 {
        return Ok(CalibrationReport {
            pulse,
            rabi_amplitude: 0.0,
            fidelity: 1.0,
            evaluations: 0,
            step_doubling_deviation: 0.0,
        });
    }
    let tgt = target.cloned().unwrap_or_else(|| rotation(rotation_angle, template.phase_offset));
    check_square(&tgt, &tgt)?;
    let w_q = gate.plateau_frequency(profile, template)?;
    let evals = std::cell::Cell::new(0usize);
    let score = |factor: f64, carrier: f64| -> Result<f64> {
        evals.set(evals.get() + 1);
        let p = DrivePulse { amplitude: rabi * factor, carrier_freq: carrier, ..*template };
        let (u, _) = gate.subspace_map(profile, Some(&p), settings)?;
        Ok(plain_fidelity(&u, &tgt))
    };
    match refine {
        Refinement::None => {}
        Refinement::AmplitudeScan => {
            let factors: Vec<f64> = (0..=10).map(|i| 0.95 + 0.01 * i as f64).collect();
            let vals = factors.iter().map(|&f| score(f, template.carrier_freq)).collect::<Result<Vec<_>>>()?;
            let best = (0..vals.len()).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
            if best == 0 || best == vals.len() - 1 {
                return Err(Error::Calibration(format!(
                    "amplitude scan peaks at the edge factor {:.2}; no bracketed maximum",
                    factors[best]
                )));
            }
            let f = golden_max(|x| score(x, template.carrier_freq), factors[best - 1], factors[best + 1], 2e-4)?;
            pulse.amplitude = rabi * f;
        }
        Refinement::AmplitudeAndDetuning => {
            let ratio0 = template.carrier_freq / w_q;
            let cost = |p: &[f64]| -> Result<f64> { Ok(1.0 - score(p[0], p[1] * w_q)?) };
            let (p, _) = nelder_mead_scaled(&cost, &[1.0, ratio0], &[0.02, 0.004], 1e-9, 60)?;
            pulse.amplitude = rabi * p[0];
            pulse.carrier_freq = p[1] * w_q;
        }
    }
    let (u1, _) = gate.subspace_map(profile, Some(&pulse), settings)?;
    let fine = settings.with_steps(2 * settings.steps_per_ns);
    let (u2, _) = gate.subspace_map(profile, Some(&pulse), &fine)?;
    let dev = (0..4).map(|k| (u1[(k / 2, k % 2)] - u2[(k / 2, k % 2)]).norm()).fold(0.0, f64::max);
    Ok(CalibrationReport {
        pulse,
        rabi_amplitude: rabi,
        fidelity: plain_fidelity(&u1, &tgt),
        evaluations: evals.get() + 2,
        step_doubling_deviation: dev,
    })
}

/// Rabi-area calibration followed by the +-5% amplitude scan.
pub fn calibrate_drive(
    spec: &CircuitSpec,
    profile: &AlphaProfile,
    template: &DrivePulse,
    rotation_angle: f64,
) -> Result<DrivePulse> {
    let gate = SingleQubitGate::new(spec, profile, GateOptions::single_qubit())?;
    let settings = gate.options.settings;
    Ok(calibrate_drive_with(&gate, profile, template, rotation_angle, None, Refinement::AmplitudeScan, &settings)?.pulse)
}

fn golden_max(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while b - a > tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Runs one single-qubit gate with default options.
pub fn run_single_qubit_gate(
    spec: &CircuitSpec,
    profile: &AlphaProfile,
    pulse: &DrivePulse,
    target: &Mat<C64>,
) -> Result<GateReport> {
    SingleQubitGate::new(spec, profile, GateOptions::single_qubit())?.run(profile, pulse, target)
}

/// fSim angles of a two-qubit unitary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsimParams {
    pub theta: f64,
    pub phi: f64,
    /// 1 - up-to-Z fidelity to fSim(theta, phi).
    pub residual: f64,
    /// Swap angle ill-defined (both |U_01,01| and |U_01,10| vanish).
    pub degenerate: bool,
}

fn wrap_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// theta = atan2(|U_12|, |U_11|), phi = -(arg U_00 + arg U_33 - arg U_11 - arg U_22).
pub fn fsim_decompose(u: &Mat<C64>) -> Result<FsimParams> {
    check_square(u, u)?;
    if u.nrows() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, got: u.nrows() });
    }
    let defect = linalg::unitarity_defect(u.as_ref());
    if defect > 1e-6 {
        return Err(Error::InvalidArgument(format!("fsim_decompose needs a unitary (defect {defect:e})")));
    }
    let (a, b) = (u[(1, 1)].norm(), u[(1, 2)].norm());
    let degenerate = a < 1e-8 && b < 1e-8;
    let theta = if degenerate { 0.5 * PI } else { b.atan2(a) };
    let phi = wrap_pi(-(u[(0, 0)].arg() + u[(3, 3)].arg() - u[(1, 1)].arg() - u[(2, 2)].arg()));
    let residual = 1.0 - best_z_dressing(u, &fsim(theta, phi), 4)?.0;
    Ok(FsimParams { theta, phi, residual: residual.max(0.0), degenerate })
}

/// Six single-qubit states forming a 3-design (octahedron).
fn octahedron() -> [[C64; 2]; 6] {
    let s = FRAC_1_SQRT_2;
    [
        [ONE, ZERO],
        [ZERO, ONE],
        [c(s, 0.0), c(s, 0.0)],
        [c(s, 0.0), c(-s, 0.0)],
        [c(s, 0.0), c(0.0, s)],
        [c(s, 0.0), c(0.0, -s)],
    ]
}

/// Linear entropy 1 - tr(rho_A^2) of a two-qubit pure state.
pub fn linear_entropy(psi: &[C64; 4]) -> f64 {
    // rho_A = M M^dag with M[i][j] = psi[2i + j]
    let m = |i: usize, j: usize| psi[2 * i + j];
    let mut purity = 0.0;
    for i in 0..2 {
        for k in 0..2 {
            let r: C64 = (0..2).map(|j| m(i, j) * m(k, j).conj()).sum();
            purity += r.norm_sqr();
        }
    }
    1.0 - purity
}

/// Mean linear entropy over Haar product inputs, normalized so CZ -> 1.
/// The average is exact over the 36 octahedron product states.
pub fn entangling_power(u: &Mat<C64>) -> Result<f64> {
    if u.nrows() != 4 || u.ncols() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, got: u.nrows() });
    }
    let states = octahedron();
    let mut acc = 0.0;
    for a in &states {
        for b in &states {
            let input = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
            let mut out = [ZERO; 4];
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..4).map(|j| u[(i, j)] * input[j]).sum();
            }
            acc += linear_entropy(&out);
        }
    }
    Ok(acc / 36.0 / (2.0 / 9.0))
}

/// Frame states spanning the computational subspace at alpha = 1: a k x 4
/// isometry in frame coordinates, columns |00>, |01>, |10>, |11>.
pub fn computational_frame(eig: &CoupledEigen) -> Result<(Mat<C64>, [f64; 4])> {
    let k = eig.vectors.ncols();
    let v = &eig.vectors;
    let mut b = Mat::<C64>::zeros(k, 4);
    let mut weights = [0.0; 4];
    let mut used = Vec::new();
    for (col, (i, j)) in [(0usize, (0usize, 0usize)), (3, (1, 1))] {
        let (idx, w) = eig.best_match(i, j);
        let amp = v[(eig.product_index(i, j), idx)];
        b[(idx, col)] = amp.conj() / amp.norm();
        weights[col] = w;
        used.push(idx);
    }
    let (r01, r10) = (eig.product_index(0, 1), eig.product_index(1, 0));
    let mut cand: Vec<(usize, f64)> = (0..k)
        .filter(|c| !used.contains(c))
        .map(|c| (c, v[(r01, c)].norm_sqr() + v[(r10, c)].norm_sqr()))
        .collect();
    cand.sort_by(|x, y| y.1.total_cmp(&x.1));
    if cand.len() < 2 {
        return Err(Error::InvalidArgument("not enough frame states for the computational subspace".into()));
    }
    let pair = [cand[0].0, cand[1].0];
    // S[x][y] = <bare x | frame p_y>
    let s = Mat::<C64>::from_fn(2, 2, |x, y| v[([r01, r10][x], pair[y])]);
    let r = linalg::polar_unitary(s.adjoint().to_owned().as_ref())?;
    for y in 0..2 {
        for x in 0..2 {
            b[(pair[y], 1 + x)] = r[(y, x)];
        }
    }
    for x in 0..2 {
        let w: C64 = (0..2).map(|y| s[(x, y)] * r[(y, x)]).sum();
        weights[1 + x] = w.norm_sqr();
    }
    Ok((b, weights))
}

/// Two-qubit gate engine sharing one frame cache across schedules.
pub struct TwoQubitGate {
    pub coupled: CoupledSpec,
    pub cache: FrameCache,
    /// k x 4 computational isometry in frame coordinates.
    pub comp: Mat<C64>,
    /// Overlap of each computational frame vector with its bare product.
    pub comp_weights: [f64; 4],
    decay: [DecayModel; 2],
    pub options: GateOptions,
}

impl TwoQubitGate {
    /// Cache down to `alpha_min` (0.5 covers every T_a <= 70 ns).
    pub fn new(coupled: &CoupledSpec, alpha_min: f64, options: GateOptions) -> Result<Self> {
        let cache = FrameCache::build(coupled, alpha_min, FRAME_CACHE_STEP, options.settings.subspace_k)?;
        let (comp, comp_weights) = computational_frame(&cache.frame0)?;
        let (q1, q2) = coupled.dressed_qubits();
        let decay = [
            DecayModel::new(&q1, options.channels.clone(), options.env),
            DecayModel::new(&q2, options.channels.clone(), options.env),
        ];
        Ok(Self { coupled: coupled.clone(), cache, comp, comp_weights, decay, options })
    }

    /// 4 x 4 computational block of the frame unitary.
    pub fn subspace_map(&self, profile: &AlphaProfile) -> Result<Mat<C64>> {
        let traj = self.cache.propagate(profile, &self.options.settings)?;
        let u = traj.final_unitary().expect("propagation records the final unitary");
        Ok(self.comp.adjoint() * u * &self.comp)
    }

    pub fn run_profile(&self, profile: &AlphaProfile) -> Result<GateReport> {
        let u = self.subspace_map(profile)?;
        let norms = column_norms(&u);
        let leak = leakage(&norms);
        if leak > MAX_LEAKAGE {
            return Err(Error::ExcessiveLeakage(leak));
        }
        let unitary_part = linalg::polar_unitary(u.as_ref())?;
        let fs = fsim_decompose(&unitary_part)?;
        let ideal = fsim(fs.theta, fs.phi);
        let coherent = gate_fidelity(&u, &ideal, FidelityMode::UpToZ)?;
        let dt = self.options.decay_sample;
        let f1 = self.decay[0].fidelity(profile, dt)?;
        let f2 = if self.coupled.qubit1 == self.coupled.qubit2 { f1 } else { self.decay[1].fidelity(profile, dt)? };
        Ok(GateReport {
            unitary: remove_global_phase(&u, &ideal),
            column_norms: norms,
            coherent_fidelity: coherent,
            state_fidelity: None,
            t1_limited_fidelity: f1 * f2,
            leakage: leak,
            gate_time: profile.total_time(),
            fsim: Some(fs),
        })
    }

    pub fn run(&self, t_a: f64, t_w: f64) -> Result<GateReport> {
        self.run_profile(&AlphaProfile::two_qubit(t_a, t_w)?)
    }

    /// Up-to-Z fidelity of the (T_a, T_w) gate against `target`.
    pub fn score(&self, t_a: f64, t_w: f64, target: &Mat<C64>) -> Result<f64> {
        let u = self.subspace_map(&AlphaProfile::two_qubit(t_a, t_w)?)?;
        gate_fidelity(&u, target, FidelityMode::UpToZ)
    }
}

/// Builds the engine at the spec's cache floor and runs one schedule.
pub fn run_two_qubit_gate(coupled: &CoupledSpec, t_a: f64, t_w: f64) -> Result<GateReport> {
    let profile = AlphaProfile::two_qubit(t_a, t_w)?;
    let floor = (profile.alpha_range().0 - FRAME_CACHE_STEP).clamp(0.4, 1.0 - FRAME_CACHE_STEP);
    TwoQubitGate::new(coupled, floor, GateOptions::two_qubit())?.run_profile(&profile)
}

/// Best (T_a, T_w) found by a local search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarkerPoint {
    pub t_a: f64,
    pub t_w: f64,
    pub fidelity: f64,
    pub evaluations: usize,
}

impl MarkerPoint {
    pub fn total_time(&self) -> f64 {
        self.t_a + self.t_w
    }
}

/// Searches total times in [t_lo, t_hi]: a coarse scan over the ramp share
/// (T_a step `coarse`) at three totals, then Nelder-Mead on
/// (T_a, T_total) clamped to the window.
pub fn marker_search(
    gate: &TwoQubitGate,
    target: &Mat<C64>,
    t_lo: f64,
    t_hi: f64,
    coarse: f64,
) -> Result<MarkerPoint> {
    if !(t_lo > 0.0 && t_hi >= t_lo && coarse > 0.0) {
        return Err(Error::InvalidArgument("marker window must satisfy 0 < t_lo <= t_hi".into()));
    }
    let t_a_max = (2.0 * (1.0 - gate.cache.alpha_min()) * crate::evolve::TWO_QUBIT_RAMP_NS).min(70.0);
    let evals = std::cell::Cell::new(0usize);
    let eval = |t_a: f64, total: f64| -> Result<f64> {
        let total = total.clamp(t_lo, t_hi);
        let t_a = t_a.clamp(0.0, t_a_max.min(total));
        evals.set(evals.get() + 1);
        match gate.score(t_a, (total - t_a).max(0.0), target) {
            Ok(f) => Ok(f),
            Err(Error::ExcessiveLeakage(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let mut best = (f64::NEG_INFINITY, 0.0, t_lo);
    for total in [t_lo, 0.5 * (t_lo + t_hi), t_hi] {
        let mut t_a = 0.0;
        while t_a <= t_a_max.min(total) + 1e-9 {
            let f = eval(t_a, total)?;
            if f > best.0 {
                best = (f, t_a, total);
            }
            t_a += coarse;
        }
    }
    let cost = |p: &[f64]| -> Result<f64> { Ok(1.0 - eval(p[0], p[1])?) };
    let span = (t_hi - t_lo).max(0.2);
    let (p, v) = nelder_mead_scaled(&cost, &[best.1, best.2], &[0.5 * coarse, 0.25 * span], 1e-10, 40)?;
    let total = p[1].clamp(t_lo, t_hi);
    let t_a = p[0].clamp(0.0, t_a_max.min(total));
    let (fidelity, t_a, total) = if 1.0 - v > best.0 { (1.0 - v, t_a, total) } else { best };
    Ok(MarkerPoint { t_a, t_w: (total - t_a).max(0.0), fidelity, evaluations: evals.get() })
}

/// Conditional frequency shift and identification diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZzResult {
    /// omega_00 - omega_01 - omega_10 + omega_11 in GHz.
    pub zeta: f64,
    /// Energies of the states identified as 00, 01-like, 10-like, 11.
    pub levels: [f64; 4],
    /// Weight of each identified state on its bare product (01/10: on the
    /// two-state span).
    pub overlaps: [f64; 4],
}

/// Levels kept when identifying computational states for ZZ.
pub const ZZ_LEVELS: usize = 24;

pub fn zz_strength(coupled: &CoupledSpec, alpha1: f64, alpha2: f64) -> Result<ZzResult> {
    let spec = coupled.with_alphas(alpha1, alpha2);
    let m = spec.levels_per_qubit;
    let eig = coupled_eigensystem(&spec, ZZ_LEVELS.min(m * m))?;
    let (i00, w00) = eig.best_match(0, 0);
    let (i11, w11) = eig.best_match(1, 1);
    let (r01, r10) = (eig.product_index(0, 1), eig.product_index(1, 0));
    let v = &eig.vectors;
    let mut cand: Vec<(usize, f64)> = (0..v.ncols())
        .filter(|&c| c != i00 && c != i11)
        .map(|c| (c, v[(r01, c)].norm_sqr() + v[(r10, c)].norm_sqr()))
        .collect();
    cand.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (a, b) = (cand[0], cand[1]);
    let e = &eig.energies;
    let zeta = e[i00] - e[a.0] - e[b.0] + e[i11];
    let (lo, hi) = if e[a.0] <= e[b.0] { (a, b) } else { (b, a) };
    Ok(ZzResult {
        zeta,
        levels: [e[i00], e[lo.0], e[hi.0], e[i11]],
        overlaps: [w00, lo.1, hi.1, w11],
    })
}

/// Parameters of H_eff = -w1/2 Z1 - w2/2 Z2 + g_xy/2 (XX + YY) + g_z/2 ZZ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    pub omega1: f64,
    pub omega2: f64,
    pub g_xy: f64,
    pub g_z: f64,
    /// Identity coefficient (energy offset).
    pub offset: f64,
    /// Frobenius norm of the part of the projected H outside the model.
    pub residual: f64,
    /// Eigenvalue spread of the projected H.
    pub spread: f64,
}

/// Relative residual above which the fit is rejected.
pub const EFFECTIVE_FIT_LIMIT: f64 = 0.05;

/// Projects the coupled Hamiltonian onto the bare computational products and
/// fits H_eff by Pauli decomposition (orthogonal least squares).
pub fn effective_couplings(coupled: &CoupledSpec, alpha: f64) -> Result<EffectiveModel> {
    let spec = coupled.with_alphas(alpha, alpha);
    spec.validate()?;
    let (q1, q2) = spec.dressed_qubits();
    let kappa = spec.coupling_prefactor();
    // per qubit: energies, |<0|n1|1>| (gauge fixed real positive), <i|n1|i>
    let qubit = |q: &CircuitSpec| -> Result<([f64; 2], C64, [f64; 2])> {
        let sol = crate::spectrum::solve(q, 2)?;
        let n1 = build_operator(OperatorKind::N1, q)?;
        let (s0, s1) = (sol.state(0), sol.state(1));
        let m = n1.expectation(&s0, &s1).norm();
        let d = [n1.expectation(&s0, &s0).re, n1.expectation(&s1, &s1).re];
        Ok(([sol.energies[0], sol.energies[1]], c(m, 0.0), d))
    };
    let (e1, m1, d1) = qubit(&q1)?;
    let (e2, m2, d2) = qubit(&q2)?;
    let n1a = Mat::<C64>::from_fn(2, 2, |i, j| if i == j { c(d1[i], 0.0) } else { m1 });
    let n1b = Mat::<C64>::from_fn(2, 2, |i, j| if i == j { c(d2[i], 0.0) } else { m2 });
    let h = Mat::<C64>::from_fn(4, 4, |r, col| {
        let (i, j, ip, jp) = (r / 2, r % 2, col / 2, col % 2);
        let mut v = kappa * n1a[(i, ip)] * n1b[(j, jp)];
        if r == col {
            v += e1[i] + e2[j];
        }
        v
    });
    let (x, y, z) = (pauli_x(), pauli_y(), pauli_z());
    let id = identity(2);
    let coef = |p: &Mat<C64>| -> f64 {
        let mut tr = ZERO;
        for i in 0..4 {
            for j in 0..4 {
                tr += p[(j, i)].conj() * h[(j, i)];
            }
        }
        tr.re / 4.0
    };
    let c_ii = coef(&kron(&id, &id));
    let c_zi = coef(&kron(&z, &id));
    let c_iz = coef(&kron(&id, &z));
    let c_xy = 0.5 * (coef(&kron(&x, &x)) + coef(&kron(&y, &y)));
    let c_zz = coef(&kron(&z, &z));
    let fit = Mat::<C64>::from_fn(4, 4, |i, j| {
        let term = |p: &Mat<C64>, w: f64| p[(i, j)] * w;
        term(&kron(&id, &id), c_ii)
            + term(&kron(&z, &id), c_zi)
            + term(&kron(&id, &z), c_iz)
            + term(&kron(&x, &x), c_xy)
            + term(&kron(&y, &y), c_xy)
            + term(&kron(&z, &z), c_zz)
    });
    let mut res = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            res += (h[(i, j)] - fit[(i, j)]).norm_sqr();
        }
    }
    let residual = res.sqrt();
    let (w, _) = linalg::eigh(h.as_ref())?;
    let spread = w[3] - w[0];
    let model = EffectiveModel {
        omega1: -2.0 * c_zi,
        omega2: -2.0 * c_iz,
        g_xy: 2.0 * c_xy,
        g_z: 2.0 * c_zz,
        offset: c_ii,
        residual,
        spread,
    };
    if residual > EFFECTIVE_FIT_LIMIT * spread {
        return Err(Error::FitResidual { residual, limit: EFFECTIVE_FIT_LIMIT * spread });
    }
    Ok(model)
}
