//! Time-dependent propagation: barrier schedules, drive pulses, direct
//! charge-basis propagation of one qubit and moving-eigenframe propagation of
//! the coupled pair.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    build_hamiltonian, build_operator, CircuitSpec, CoupledSpec, OperatorKind, Variant,
};
use crate::error::{Error, Result};
use crate::linalg::{self, CsrMatrix, ONE, ZERO};
use crate::spectrum::{diagonalize, solve, EigenSolution};

/// Lowest barrier ratio a schedule may visit.
pub const ALPHA_FLOOR: f64 = 0.4;
/// Two-qubit ramp: alpha falls by 1 over this many ns.
pub const TWO_QUBIT_RAMP_NS: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
}

impl AlphaSegment {
    fn rate(&self) -> f64 {
        (self.alpha_end - self.alpha_start) / (self.t_end - self.t_start)
    }
}

/// Piecewise-linear alpha(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaProfile {
    pub segments: Vec<AlphaSegment>,
}

impl AlphaProfile {
    pub fn new(segments: Vec<AlphaSegment>) -> Result<Self> {
        let p = Self { segments };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.segments.is_empty() {
            return bad("profile has no segments".into());
        }
        if self.segments[0].t_start != 0.0 {
            return bad("profile must start at t = 0".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            let vals = [s.t_start, s.t_end, s.alpha_start, s.alpha_end];
            if vals.iter().any(|v| !v.is_finite()) {
                return bad(format!("segment {i} has non-finite values"));
            }
            if s.t_end <= s.t_start {
                return bad(format!("segment {i} has non-positive duration"));
            }
            for a in [s.alpha_start, s.alpha_end] {
                if !(ALPHA_FLOOR..=1.0).contains(&a) {
                    return bad(format!("alpha {a} outside [{ALPHA_FLOOR}, 1]"));
                }
            }
            if i > 0 {
                let prev = &self.segments[i - 1];
                if (prev.t_end - s.t_start).abs() > 1e-12 {
                    return bad(format!("segment {i} is not contiguous in time"));
                }
                if (prev.alpha_end - s.alpha_start).abs() > 1e-12 {
                    return bad(format!("alpha jumps at segment {i}"));
                }
            }
        }
        Ok(())
    }

    pub fn constant(alpha: f64, duration: f64) -> Result<Self> {
        Self::new(vec![AlphaSegment { t_start: 0.0, t_end: duration, alpha_start: alpha, alpha_end: alpha }])
    }

    /// Builds contiguous segments from (duration, alpha_end) knots starting at
    /// alpha = 1, dropping zero-length pieces.
    fn from_knots(knots: &[(f64, f64)]) -> Result<Self> {
        let mut segs = Vec::new();
        let (mut t, mut a) = (0.0, 1.0);
        for &(dt, a_end) in knots {
            if dt > 0.0 {
                segs.push(AlphaSegment { t_start: t, t_end: t + dt, alpha_start: a, alpha_end: a_end });
                t += dt;
                a = a_end;
            }
        }
        Self::new(segs)
    }

    /// Linear ramp 1 -> alpha_p, plateau, ramp back.
    pub fn single_qubit(ramp: f64, plateau: f64, alpha_p: f64) -> Result<Self> {
        Self::from_knots(&[(ramp, alpha_p), (plateau, alpha_p), (ramp, 1.0)])
    }

    /// 7 ns ramps to 0.7 around an 11 ns plateau.
    pub fn single_qubit_default() -> Self {
        Self::single_qubit(7.0, 11.0, 0.7).expect("default schedule is valid")
    }

    /// Trapezoid: down for T_a/2 at 1/70 per ns, wait T_w, back up.
    pub fn two_qubit(t_a: f64, t_w: f64) -> Result<Self> {
        if !(0.0..=TWO_QUBIT_RAMP_NS).contains(&t_a) || t_w < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "T_a = {t_a} must lie in [0, {TWO_QUBIT_RAMP_NS}] and T_w = {t_w} must be non-negative"
            )));
        }
        let a_min = two_qubit_alpha_min(t_a);
        Self::from_knots(&[(0.5 * t_a, a_min), (t_w, a_min), (0.5 * t_a, 1.0)])
    }

    pub fn total_time(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    fn segment_at(&self, t: f64) -> &AlphaSegment {
        let i = self.segments.partition_point(|s| s.t_end < t);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    /// alpha(t), clamped to the end values outside [0, T].
    pub fn alpha(&self, t: f64) -> f64 {
        let s = self.segment_at(t);
        let t = t.clamp(s.t_start, s.t_end);
        s.alpha_start + (t - s.t_start) * s.rate()
    }

    /// d alpha / dt per ns.
    pub fn rate(&self, t: f64) -> f64 {
        self.segment_at(t).rate()
    }

    /// (min, max) alpha reached.
    pub fn alpha_range(&self) -> (f64, f64) {
        self.segments.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.alpha_start).min(s.alpha_end), hi.max(s.alpha_start).max(s.alpha_end))
        })
    }

    /// Gate schedules start and end at alpha = 1.
    pub fn is_gate_schedule(&self) -> bool {
        let first = self.segments[0].alpha_start;
        let last = self.segments[self.segments.len() - 1].alpha_end;
        (first - 1.0).abs() < 1e-12 && (last - 1.0).abs() < 1e-12
    }

    /// True when alpha is constant on [t0, t1].
    pub fn is_flat_on(&self, t0: f64, t1: f64) -> bool {
        self.segments
            .iter()
            .filter(|s| s.t_end > t0 && s.t_start < t1)
            .all(|s| s.alpha_start == s.alpha_end)
    }

    /// The same schedule run backwards in time.
    pub fn reversed(&self) -> Self {
        let total = self.total_time();
        let segments = self
            .segments
            .iter()
            .rev()
            .map(|s| AlphaSegment {
                t_start: total - s.t_end,
                t_end: total - s.t_start,
                alpha_start: s.alpha_end,
                alpha_end: s.alpha_start,
            })
            .collect();
        Self { segments }
    }

    /// Every duration multiplied by `factor`.
    pub fn stretched(&self, factor: f64) -> Result<Self> {
        let segments = self
            .segments
            .iter()
            .map(|s| AlphaSegment { t_start: s.t_start * factor, t_end: s.t_end * factor, ..*s })
            .collect();
        Self::new(segments)
    }

    /// Profile followed by `other`, shifted in time.
    pub fn then(&self, other: &Self) -> Result<Self> {
        let shift = self.total_time();
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().map(|s| AlphaSegment {
            t_start: s.t_start + shift,
            t_end: s.t_end + shift,
            ..*s
        }));
        Self::new(segments)
    }
}

/// alpha_min = 1 - (T_a/2)/70 ns.
pub fn two_qubit_alpha_min(t_a: f64) -> f64 {
    1.0 - 0.5 * t_a / TWO_QUBIT_RAMP_NS
}

/// Microwave drive eps(t) cos(carrier phase) n1 on island 1.
///
/// `amplitude` is the peak coefficient of n1 in H (GHz); the gate voltage it
/// corresponds to is amplitude / coupling_ratio. The carrier phase is locked
/// to the qubit frame: it is the accumulated frame phase plus `phase_offset`,
/// and inside the pulse window the frame advances at `carrier_freq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivePulse {
    pub t_start: f64,
    pub ramp: f64,
    pub flat: f64,
    pub amplitude: f64,
    pub carrier_freq: f64,
    pub phase_offset: f64,
    /// C_d / (C + C_d)
    pub coupling_ratio: f64,
}

impl DrivePulse {
    /// Fig. 3 shape: 1.5 ns cosine ramps inside an 11 ns window at t = 7 ns.
    pub fn centered(t_start: f64, window: f64, ramp: f64) -> Self {
        Self {
            t_start,
            ramp,
            flat: window - 2.0 * ramp,
            amplitude: 0.0,
            carrier_freq: 0.0,
            phase_offset: 0.0,
            coupling_ratio: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.t_start, self.ramp, self.flat, self.amplitude, self.carrier_freq, self.phase_offset];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("drive pulse has non-finite fields".into()));
        }
        if self.ramp < 0.0 || self.flat < 0.0 || self.amplitude < 0.0 || self.t_start < 0.0 {
            return Err(Error::InvalidArgument("ramp, flat, amplitude and t_start must be non-negative".into()));
        }
        if !(self.coupling_ratio > 0.0 && self.coupling_ratio <= 1.0) {
            return Err(Error::InvalidArgument("coupling_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.ramp + self.flat
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration()
    }

    pub fn in_window(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end()
    }

    /// Unit-peak envelope shape.
    pub fn shape(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        let d = self.duration();
        if s < 0.0 || s > d {
            return 0.0;
        }
        if self.ramp > 0.0 {
            if s < self.ramp {
                return 0.5 * (1.0 - (PI * s / self.ramp).cos());
            }
            if s > d - self.ramp {
                return 0.5 * (1.0 - (PI * (d - s) / self.ramp).cos());
            }
        }
        1.0
    }

    pub fn envelope(&self, t: f64) -> f64 {
        self.amplitude * self.shape(t)
    }

    /// Integral of the unit-peak shape: flat + ramp.
    pub fn shape_area(&self) -> f64 {
        self.flat + self.ramp
    }

    /// Gate voltage in units where the H coefficient is V_d * coupling_ratio.
    pub fn drive_voltage(&self) -> f64 {
        self.amplitude / self.coupling_ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMethod {
    /// exp(-i dt H(t_mid)) per step.
    PerStepExponential,
    /// Classic fourth-order Runge-Kutta, for cross-checks.
    Integrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSettings {
    pub steps_per_ns: usize,
    pub method: PropagationMethod,
    pub subspace_k: usize,
    /// Interval between recorded samples; endpoints are always recorded.
    #[serde(default)]
    pub sample_every: Option<f64>,
    /// Instantaneous eigenstates used for spectral weights.
    #[serde(default = "default_spectral_levels")]
    pub spectral_levels: usize,
}

fn default_spectral_levels() -> usize {
    6
}

pub const SINGLE_QUBIT_STEPS_PER_NS: usize = 857;
pub const TWO_QUBIT_STEPS_PER_NS: usize = 286;
pub const DEFAULT_SUBSPACE_K: usize = 24;

impl PropagationSettings {
    pub fn single_qubit() -> Self {
        Self {
            steps_per_ns: SINGLE_QUBIT_STEPS_PER_NS,
            method: PropagationMethod::PerStepExponential,
            subspace_k: DEFAULT_SUBSPACE_K,
            sample_every: None,
            spectral_levels: default_spectral_levels(),
        }
    }

    pub fn two_qubit() -> Self {
        Self { steps_per_ns: TWO_QUBIT_STEPS_PER_NS, ..Self::single_qubit() }
    }

    pub fn with_steps(mut self, steps_per_ns: usize) -> Self {
        self.steps_per_ns = steps_per_ns;
        self
    }

    pub fn with_samples(mut self, every: f64) -> Self {
        self.sample_every = Some(every);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_ns < 50 {
            return Err(Error::InvalidArgument(format!("steps_per_ns = {} below 50", self.steps_per_ns)));
        }
        if self.subspace_k < 4 {
            return Err(Error::InvalidArgument("subspace_k must be at least 4".into()));
        }
        if let Some(e) = self.sample_every {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidArgument("sample_every must be positive".into()));
            }
        }
        Ok(())
    }

    fn step_grid(&self, total: f64) -> (usize, f64, usize) {
        let n = ((total * self.steps_per_ns as f64).round() as usize).max(1);
        let dt = total / n as f64;
        let every = self.sample_every.map_or(n, |e| ((e / dt).round() as usize).max(1));
        (n, dt, every)
    }
}

/// Recorded propagation samples.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Full-basis states (single-qubit runs).
    pub states: Vec<Vec<C64>>,
    /// k x k frame unitaries (coupled runs).
    pub unitaries: Vec<Mat<C64>>,
    /// |<E_j(t)|psi(t)>|^2 per sample (single-qubit runs).
    pub spectral_weights: Vec<Vec<f64>>,
    /// Qubit-frame phase accumulated over the run (radians).
    pub frame_phase: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&[C64]> {
        self.states.last().map(|s| s.as_slice())
    }

    pub fn final_unitary(&self) -> Option<&Mat<C64>> {
        self.unitaries.last()
    }
}

/// omega_q(alpha) on a uniform grid with cubic (Catmull-Rom) interpolation.
#[derive(Debug, Clone)]
pub struct OmegaTable {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

/// Target grid spacing of [`OmegaTable`].
pub const OMEGA_TABLE_STEP: f64 = 0.005;

impl OmegaTable {
    pub fn build(spec: &CircuitSpec, lo: f64, hi: f64) -> Result<Self> {
        let lo = (lo - 2.0 * OMEGA_TABLE_STEP).max(0.0);
        let hi = hi + 2.0 * OMEGA_TABLE_STEP;
        let cells = (((hi - lo) / OMEGA_TABLE_STEP).ceil() as usize).max(3);
        let step = (hi - lo) / cells as f64;
        let values = (0..=cells)
            .into_par_iter()
            .map(|i| {
                let mut s = spec.clone();
                s.alpha = Some(lo + i as f64 * step);
                let sol = solve(&s, 2)?;
                Ok(sol.energies[1] - sol.energies[0])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { lo, step, values })
    }

    pub fn omega(&self, alpha: f64) -> f64 {
        let n = self.values.len();
        let x = ((alpha - self.lo) / self.step).clamp(0.0, (n - 1) as f64);
        let i = (x.floor() as usize).min(n - 2);
        let u = x - i as f64;
        let p = |j: isize| self.values[j.clamp(0, n as isize - 1) as usize];
        let (p0, p1, p2, p3) = (p(i as isize - 1), p(i as isize), p(i as isize + 1), p(i as isize + 2));
        0.5 * (2.0 * p1
            + (-p0 + p2) * u
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u)
    }
}

/// Operators of one qubit split as H(alpha) = A + alpha B, restricted to the
/// basis sector, plus the omega_q table needed for the drive frame.
#[derive(Debug, Clone)]
pub struct SingleQubitSystem {
    spec: CircuitSpec,
    keep: Vec<usize>,
    full_dim: usize,
    a_part: CsrMatrix,
    b_part: CsrMatrix,
    n1: Vec<f64>,
    table: OmegaTable,
}

impl SingleQubitSystem {
    /// `alpha_lo..=alpha_hi` bounds the schedules this system will run.
    pub fn new(spec: &CircuitSpec, alpha_lo: f64, alpha_hi: f64) -> Result<Self> {
        if !matches!(spec.variant, Variant::SingleLoop | Variant::NodeBasis) {
            return Err(Error::InvalidSpec("single-qubit propagation needs a single tunable junction".into()));
        }
        let at = |a: f64| {
            let mut s = spec.clone();
            s.alpha = Some(a);
            build_hamiltonian(&s)
        };
        let h1 = at(1.0)?;
        let h_half = at(0.5)?;
        let basis = h1.basis;
        let keep = basis.sector_indices();
        let b = Mat::<C64>::from_fn(h1.dim(), h1.dim(), |i, j| 2.0 * (h1.entries[(i, j)] - h_half.entries[(i, j)]));
        let a = Mat::<C64>::from_fn(h1.dim(), h1.dim(), |i, j| h1.entries[(i, j)] - b[(i, j)]);
        let n1_op = build_operator(OperatorKind::N1, &h1_spec(spec))?;
        let n1 = keep.iter().map(|&i| n1_op.entries[(i, i)].re).collect();
        Ok(Self {
            spec: spec.clone(),
            full_dim: basis.dim(),
            a_part: CsrMatrix::from_dense_restricted(a.as_ref(), &keep, 1e-14),
            b_part: CsrMatrix::from_dense_restricted(b.as_ref(), &keep, 1e-14),
            keep,
            n1,
            table: OmegaTable::build(spec, alpha_lo, alpha_hi)?,
        })
    }

    pub fn for_profile(spec: &CircuitSpec, profile: &AlphaProfile) -> Result<Self> {
        let (lo, hi) = profile.alpha_range();
        Self::new(spec, lo, hi)
    }

    pub fn spec_at(&self, alpha: f64) -> CircuitSpec {
        let mut s = self.spec.clone();
        s.alpha = Some(alpha);
        s
    }

    pub fn omega_q(&self, alpha: f64) -> f64 {
        self.table.omega(alpha)
    }

    pub fn eigen(&self, alpha: f64, k: usize) -> Result<EigenSolution> {
        solve(&self.spec_at(alpha), k)
    }

    pub fn dim(&self) -> usize {
        self.full_dim
    }

    /// y = (A + alpha B + d n1) x
    fn apply(&self, alpha: f64, d: f64, x: &[C64], y: &mut [C64]) {
        self.a_part.matvec(x, y);
        self.b_part.matvec_add(C64::new(alpha, 0.0), x, y);
        if d != 0.0 {
            for ((yi, xi), n) in y.iter_mut().zip(x).zip(&self.n1) {
                *yi += d * n * xi;
            }
        }
    }

    fn restrict(&self, psi: &[C64]) -> Result<Vec<C64>> {
        if psi.len() != self.full_dim {
            return Err(Error::DimensionMismatch { expected: self.full_dim, got: psi.len() });
        }
        let total: f64 = psi.iter().map(|x| x.norm_sqr()).sum();
        let inside: Vec<C64> = self.keep.iter().map(|&i| psi[i]).collect();
        let kept: f64 = inside.iter().map(|x| x.norm_sqr()).sum();
        if (total.sqrt() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("initial state norm {} is not 1", total.sqrt())));
        }
        if total - kept > 1e-12 {
            return Err(Error::InvalidArgument("initial state has weight outside the basis sector".into()));
        }
        Ok(inside)
    }

    fn embed(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.full_dim];
        for (v, &i) in x.iter().zip(&self.keep) {
            out[i] = *v;
        }
        out
    }

    /// Propagates several initial states through the same schedule. The
    /// returned trajectory records samples of `psis[0]` (and its spectral
    /// weights when `settings.sample_every` is set); the final state of every
    /// input is returned separately.
    pub fn propagate(
        &self,
        profile: &AlphaProfile,
        pulse: Option<&DrivePulse>,
        psis: &[Vec<C64>],
        settings: &PropagationSettings,
    ) -> Result<(Trajectory, Vec<Vec<C64>>)> {
        settings.validate()?;
        profile.validate()?;
        if let Some(p) = pulse {
            p.validate()?;
        }
        let mut states = psis.iter().map(|p| self.restrict(p)).collect::<Result<Vec<_>>>()?;
        let (n, dt, every) = settings.step_grid(profile.total_time());
        let record_weights = settings.sample_every.is_some();
        let mut traj = Trajectory::default();
        let mut last_eigen: Option<EigenSolution> = None;
        let mut record = |t: f64, st: &[C64], traj: &mut Trajectory| -> Result<()> {
            let full = self.embed(st);
            if record_weights {
                let sol = self.eigen(profile.alpha(t), settings.spectral_levels)?;
                let sol = match &last_eigen {
                    Some(prev) => track_solution(prev, sol)?,
                    None => sol,
                };
                traj.spectral_weights
                    .push((0..sol.k).map(|j| linalg::dot(&sol.state(j), &full).norm_sqr()).collect());
                last_eigen = Some(sol);
            }
            traj.times.push(t);
            traj.states.push(full);
            Ok(())
        };
        if let Some(first) = states.first() {
            record(0.0, first, &mut traj)?;
        }
        let dim = self.keep.len();
        let mut theta = 0.0;
        let mut work = Workspace::new(dim);
        for s in 0..n {
            let t0 = s as f64 * dt;
            let tm = t0 + 0.5 * dt;
            let on = pulse.is_some_and(|p| p.in_window(tm));
            let w = match pulse {
                Some(p) if on => p.carrier_freq,
                _ => self.omega_q(profile.alpha(tm)),
            };
            let drive = |t: f64| -> f64 {
                match pulse {
                    Some(p) => {
                        let phase = theta + 2.0 * PI * w * (t - t0) + p.phase_offset;
                        p.envelope(t) * phase.cos()
                    }
                    None => 0.0,
                }
            };
            for st in states.iter_mut() {
                match settings.method {
                    PropagationMethod::PerStepExponential => {
                        self.taylor_step(profile.alpha(tm), drive(tm), dt, st, &mut work)?;
                    }
                    PropagationMethod::Integrator => {
                        let h = [
                            (profile.alpha(t0), drive(t0)),
                            (profile.alpha(tm), drive(tm)),
                            (profile.alpha(t0 + dt), drive(t0 + dt)),
                        ];
                        self.rk4_step(h, dt, st, &mut work);
                    }
                }
            }
            theta += 2.0 * PI * w * dt;
            if (s + 1) % every == 0 || s + 1 == n {
                if let Some(first) = states.first() {
                    record(t0 + dt, first, &mut traj)?;
                }
            }
        }
        for st in &states {
            let drift = (linalg::norm(st) - 1.0).abs();
            if drift > 1e-6 {
                return Err(Error::NormDrift(drift));
            }
        }
        traj.frame_phase = theta;
        let finals = states.iter().map(|s| self.embed(s)).collect();
        Ok((traj, finals))
    }

    fn taylor_step(&self, alpha: f64, d: f64, dt: f64, psi: &mut [C64], w: &mut Workspace) -> Result<()> {
        w.term.copy_from_slice(psi);
        let c = C64::new(0.0, -2.0 * PI * dt);
        for k in 1..=MAX_TAYLOR_TERMS {
            self.apply(alpha, d, &w.term, &mut w.tmp);
            let f = c / k as f64;
            let mut biggest = 0.0f64;
            for ((t, x), p) in w.term.iter_mut().zip(&w.tmp).zip(psi.iter_mut()) {
                *t = f * x;
                *p += *t;
                biggest = biggest.max(t.norm_sqr());
            }
            if biggest < TAYLOR_TOL * TAYLOR_TOL {
                return Ok(());
            }
        }
        Err(Error::NormDrift(f64::NAN))
    }

    fn rk4_step(&self, h: [(f64, f64); 3], dt: f64, psi: &mut [C64], w: &mut Workspace) {
        let c = C64::new(0.0, -2.0 * PI);
        let n = psi.len();
        let mut ks: [Vec<C64>; 4] = std::array::from_fn(|_| vec![ZERO; n]);
        let stages = [(h[0], 0.0), (h[1], 0.5), (h[1], 0.5), (h[2], 1.0)];
        for (i, &((a, d), frac)) in stages.iter().enumerate() {
            if i == 0 {
                w.term.copy_from_slice(psi);
            } else {
                for j in 0..n {
                    w.term[j] = psi[j] + frac * dt * ks[i - 1][j];
                }
            }
            self.apply(a, d, &w.term, &mut w.tmp);
            for j in 0..n {
                ks[i][j] = c * w.tmp[j];
            }
        }
        for j in 0..n {
            psi[j] += dt / 6.0 * (ks[0][j] + 2.0 * ks[1][j] + 2.0 * ks[2][j] + ks[3][j]);
        }
    }
}

/// Reorders `cur` to follow `prev` through level crossings (greedy overlap
/// assignment) and rephases each state to a real positive overlap.
fn track_solution(prev: &EigenSolution, cur: EigenSolution) -> Result<EigenSolution> {
    let overlap = prev.states.adjoint() * &cur.states;
    let perm = greedy_assignment(&overlap);
    let mut out = cur.clone();
    for (slot, &col) in perm.iter().enumerate() {
        let o = overlap[(slot, col)];
        if o.norm() < 0.5 {
            return Err(Error::GaugeFailure { index: slot, overlap: o.norm() });
        }
        let phase = o.conj() / o.norm();
        out.energies[slot] = cur.energies[col];
        for r in 0..cur.states.nrows() {
            out.states[(r, slot)] = cur.states[(r, col)] * phase;
        }
    }
    Ok(out)
}

fn h1_spec(spec: &CircuitSpec) -> CircuitSpec {
    let mut s = spec.clone();
    s.alpha = Some(1.0);
    s
}

const MAX_TAYLOR_TERMS: usize = 80;
const TAYLOR_TOL: f64 = 1e-15;

struct Workspace {
    term: Vec<C64>,
    tmp: Vec<C64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self { term: vec![ZERO; n], tmp: vec![ZERO; n] }
    }
}

/// One-shot single-state propagation through H(t) = H(alpha(t)) + H_d(t).
pub fn propagate_state(
    spec: &CircuitSpec,
    profile: &AlphaProfile,
    pulse: Option<&DrivePulse>,
    psi0: &[C64],
    settings: &PropagationSettings,
) -> Result<Trajectory> {
    let system = SingleQubitSystem::for_profile(spec, profile)?;
    Ok(system.propagate(profile, pulse, &[psi0.to_vec()], settings)?.0)
}

/// Two-stage eigensystem of the coupled pair: each qubit truncated to m
/// levels, coupled in the m^2 product space, k lowest states kept. Product
/// index is i * m + j for qubit-1 level i and qubit-2 level j.
#[derive(Debug, Clone)]
pub struct CoupledEigen {
    pub m: usize,
    pub qubit_energies: [Vec<f64>; 2],
    /// Full-basis qubit eigenvectors, dim x m.
    pub qubit_states: [Mat<C64>; 2],
    /// <i|n1|j> per qubit, m x m.
    pub n1: [Mat<C64>; 2],
    pub energies: Vec<f64>,
    /// m^2 x k
    pub vectors: Mat<C64>,
}

impl CoupledEigen {
    pub fn product_index(&self, i: usize, j: usize) -> usize {
        i * self.m + j
    }

    /// Frame state with the largest weight on bare product |i j>.
    pub fn best_match(&self, i: usize, j: usize) -> (usize, f64) {
        let r = self.product_index(i, j);
        (0..self.vectors.ncols())
            .map(|c| (c, self.vectors[(r, c)].norm_sqr()))
            .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best })
    }
}

fn qubit_eigen(q: &CircuitSpec, m: usize) -> Result<(Vec<f64>, Mat<C64>, Mat<C64>)> {
    let sol = solve(q, m)?;
    let n1 = build_operator(OperatorKind::N1, q)?;
    let elems = sol.matrix_elements(&n1);
    Ok((sol.energies, sol.states, elems))
}

/// Coupled eigenproblem at the spec's own barrier ratios.
pub fn coupled_eigensystem(coupled: &CoupledSpec, k: usize) -> Result<CoupledEigen> {
    coupled.validate()?;
    let m = coupled.levels_per_qubit;
    if k == 0 || k > m * m {
        return Err(Error::InvalidArgument(format!("k={k} outside 1..={}", m * m)));
    }
    let (q1, q2) = coupled.dressed_qubits();
    let first = qubit_eigen(&q1, m)?;
    let second = if q1 == q2 { first.clone() } else { qubit_eigen(&q2, m)? };
    let kappa = coupled.coupling_prefactor();
    let h = Mat::<C64>::from_fn(m * m, m * m, |r, c| {
        let (i, j) = (r / m, r % m);
        let (ip, jp) = (c / m, c % m);
        let mut v = kappa * first.2[(i, ip)] * second.2[(j, jp)];
        if r == c {
            v += first.0[i] + second.0[j];
        }
        v
    });
    let (w, v) = linalg::eigh(h.as_ref())?;
    Ok(CoupledEigen {
        m,
        qubit_energies: [first.0, second.0],
        qubit_states: [first.1, second.1],
        n1: [first.2, second.2],
        energies: w[..k].to_vec(),
        vectors: v.subcols(0, k).to_owned(),
    })
}

/// Eigenframes of the coupled pair along alpha1 = alpha2 = alpha, tracked by
/// overlap from alpha = 1 downward, with the frame connection per grid cell.
#[derive(Debug, Clone)]
pub struct FrameCache {
    pub k: usize,
    pub step: f64,
    /// Descending from 1.
    pub alphas: Vec<f64>,
    /// Energies in tracked order, one row per grid point.
    pub energies: Vec<Vec<f64>>,
    /// V_g^dag dV/d alpha on cell g (anti-Hermitian, k x k).
    connections: Vec<Mat<C64>>,
    /// Eigensystem at alpha = 1; its column order is the tracked order.
    pub frame0: CoupledEigen,
    /// Smallest |<V_g|V_{g+1}>| along the diagonal after tracking.
    pub min_tracking_overlap: f64,
}

/// Default alpha-grid spacing of the frame cache.
pub const FRAME_CACHE_STEP: f64 = 1e-3;

impl FrameCache {
    /// Eigensolves run in parallel, then tracking runs sequentially.
    pub fn build(coupled: &CoupledSpec, alpha_min: f64, step: f64, k: usize) -> Result<Self> {
        if !(step > 0.0 && step <= 0.1) || !(ALPHA_FLOOR..1.0).contains(&alpha_min) {
            return Err(Error::InvalidArgument(format!(
                "frame cache needs 0 < step <= 0.1 and alpha_min in [{ALPHA_FLOOR}, 1)"
            )));
        }
        let cells = ((1.0 - alpha_min) / step - 1e-9).ceil() as usize;
        let alphas: Vec<f64> = (0..=cells).map(|g| 1.0 - g as f64 * step).collect();
        let points = alphas
            .par_iter()
            .map(|&a| coupled_eigensystem(&coupled.with_alphas(a, a), k))
            .collect::<Result<Vec<_>>>()?;
        let mut energies = Vec::with_capacity(points.len());
        let mut connections = Vec::with_capacity(cells);
        let mut min_overlap = 1.0f64;
        energies.push(points[0].energies.clone());
        let mut prev_vectors = points[0].vectors.clone();
        for g in 0..cells {
            let (a, b) = (&points[g], &points[g + 1]);
            let o1 = a.qubit_states[0].adjoint() * &b.qubit_states[0];
            let o2 = a.qubit_states[1].adjoint() * &b.qubit_states[1];
            let moved = product_apply(&o1, &o2, &b.vectors, a.m);
            let overlap = prev_vectors.adjoint() * &moved;
            let perm = greedy_assignment(&overlap);
            let mut tracked = Mat::<C64>::zeros(b.vectors.nrows(), k);
            let mut tracked_overlap = Mat::<C64>::zeros(k, k);
            let mut e = vec![0.0; k];
            for (slot, &col) in perm.iter().enumerate() {
                let o = overlap[(slot, col)];
                let phase = if o.norm() > 0.0 { o.conj() / o.norm() } else { ONE };
                min_overlap = min_overlap.min(o.norm());
                e[slot] = b.energies[col];
                for r in 0..tracked.nrows() {
                    tracked[(r, slot)] = b.vectors[(r, col)] * phase;
                }
                for r in 0..k {
                    tracked_overlap[(r, slot)] = overlap[(r, col)] * phase;
                }
            }
            let da = alphas[g + 1] - alphas[g];
            connections.push(Mat::<C64>::from_fn(k, k, |i, j| {
                let x = tracked_overlap[(i, j)] - if i == j { ONE } else { ZERO };
                let y = tracked_overlap[(j, i)].conj() - if i == j { ONE } else { ZERO };
                0.5 * (x - y) / da
            }));
            energies.push(e);
            prev_vectors = tracked;
        }
        let frame0 = points.into_iter().next().expect("at least one grid point");
        Ok(Self { k, step, alphas, energies, connections, frame0, min_tracking_overlap: min_overlap })
    }

    pub fn alpha_min(&self) -> f64 {
        *self.alphas.last().expect("non-empty grid")
    }

    /// Times inside the profile where the frame generator is discontinuous:
    /// segment joins and crossings of the cache's cell boundaries.
    fn breakpoints(&self, profile: &AlphaProfile) -> Vec<f64> {
        let cells = self.connections.len();
        let mut out = Vec::new();
        for seg in profile.segments.iter().filter(|s| s.t_end > s.t_start) {
            out.push(seg.t_start);
            let (lo, hi) = (seg.alpha_start.min(seg.alpha_end), seg.alpha_start.max(seg.alpha_end));
            if hi - lo <= 0.0 || cells == 0 {
                continue;
            }
            let first = (((1.0 - hi) / self.step).floor().max(0.0) as usize).max(1);
            let last = (((1.0 - lo) / self.step).ceil().max(0.0) as usize).min(cells - 1);
            for g in first..=last {
                let ab = 1.0 - g as f64 * self.step;
                if ab > lo && ab < hi {
                    let t = seg.t_start + (ab - seg.alpha_start) / seg.rate();
                    out.push(t);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    fn locate(&self, alpha: f64) -> (usize, f64) {
        let cells = self.connections.len();
        if cells == 0 {
            return (0, 0.0);
        }
        let x = ((1.0 - alpha) / self.step).max(0.0);
        let g = (x.floor() as usize).min(cells - 1);
        (g, (x - g as f64).min(1.0))
    }

    /// Tracked energies linearly interpolated in alpha.
    pub fn energies_at(&self, alpha: f64) -> Vec<f64> {
        let (g, f) = self.locate(alpha);
        if self.connections.is_empty() {
            return self.energies[0].clone();
        }
        (0..self.k).map(|i| (1.0 - f) * self.energies[g][i] + f * self.energies[g + 1][i]).collect()
    }

    /// k x k frame unitary over `profile` (alpha1 = alpha2 = alpha(t)),
    /// expressed in the alpha = 1 eigenframe at both ends.
    pub fn propagate(&self, profile: &AlphaProfile, settings: &PropagationSettings) -> Result<Trajectory> {
        settings.validate()?;
        profile.validate()?;
        if settings.subspace_k != self.k {
            return Err(Error::InvalidArgument(format!(
                "settings ask for k={} but the cache holds k={}",
                settings.subspace_k, self.k
            )));
        }
        let (lo, _) = profile.alpha_range();
        if lo < self.alpha_min() - 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "profile reaches alpha={lo} below the cache floor {}",
                self.alpha_min()
            )));
        }
        let (n, dt, every) = settings.step_grid(profile.total_time());
        let k = self.k;
        let advance = |t0: f64, t1: f64| -> Result<Mat<C64>> {
            let (tm, h) = (0.5 * (t0 + t1), t1 - t0);
            let alpha = profile.alpha(tm);
            let rate = profile.rate(tm);
            let e = self.energies_at(alpha);
            if rate == 0.0 || self.connections.is_empty() {
                return Ok(Mat::<C64>::from_fn(k, k, |i, j| {
                    if i == j {
                        C64::from_polar(1.0, -2.0 * PI * e[i] * h)
                    } else {
                        ZERO
                    }
                }));
            }
            let (g, _) = self.locate(alpha);
            let a = &self.connections[g];
            let gen = Mat::<C64>::from_fn(k, k, |i, j| {
                let d = if i == j { C64::new(2.0 * PI * e[i], 0.0) } else { ZERO };
                d - C64::new(0.0, rate) * a[(i, j)]
            });
            linalg::expm_neg_i_hermitian(gen.as_ref(), h)
        };
        // steps are split where the generator jumps so each piece stays second order
        let breaks = self.breakpoints(profile);
        let mut next = 0;
        let mut u = Mat::<C64>::identity(k, k);
        let mut traj = Trajectory { times: vec![0.0], unitaries: vec![u.clone()], ..Default::default() };
        for s in 0..n {
            let (t0, t1) = (s as f64 * dt, (s + 1) as f64 * dt);
            let eps = 1e-9 * dt;
            while next < breaks.len() && breaks[next] <= t0 + eps {
                next += 1;
            }
            let mut a = t0;
            while next < breaks.len() && breaks[next] < t1 - eps {
                u = &advance(a, breaks[next])? * &u;
                a = breaks[next];
                next += 1;
            }
            u = &advance(a, t1)? * &u;
            if (s + 1) % every == 0 || s + 1 == n {
                let drift = linalg::unitarity_defect(u.as_ref());
                if drift > 1e-6 {
                    return Err(Error::UnitarityDrift(drift));
                }
                traj.times.push((s + 1) as f64 * dt);
                traj.unitaries.push(u.clone());
            }
        }
        Ok(traj)
    }
}

/// (O1 (x) O2) applied to each column of `v`, product index i * m + j.
fn product_apply(o1: &Mat<C64>, o2: &Mat<C64>, v: &Mat<C64>, m: usize) -> Mat<C64> {
    let mut out = Mat::<C64>::zeros(v.nrows(), v.ncols());
    for c in 0..v.ncols() {
        let x = Mat::<C64>::from_fn(m, m, |i, j| v[(i * m + j, c)]);
        let y = o1 * &x * o2.transpose();
        for i in 0..m {
            for j in 0..m {
                out[(i * m + j, c)] = y[(i, j)];
            }
        }
    }
    out
}

/// perm[slot] = column assigned to row `slot`, largest |M| first.
fn greedy_assignment(m: &Mat<C64>) -> Vec<usize> {
    let k = m.nrows();
    let mut pairs: Vec<(usize, usize, f64)> =
        (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| (i, j, m[(i, j)].norm())).collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (i, j, _) in pairs {
        if perm[i] == usize::MAX && !used[j] {
            perm[i] = j;
            used[j] = true;
        }
    }
    perm
}

/// Builds the frame cache down to the profile's lowest alpha and propagates.
pub fn propagate_subspace_unitary(
    coupled: &CoupledSpec,
    profile: &AlphaProfile,
    settings: &PropagationSettings,
) -> Result<Trajectory> {
    let (lo, _) = profile.alpha_range();
    let floor = (lo - FRAME_CACHE_STEP).max(ALPHA_FLOOR);
    let cache = FrameCache::build(coupled, floor.min(1.0 - FRAME_CACHE_STEP), FRAME_CACHE_STEP, settings.subspace_k)?;
    cache.propagate(profile, settings)
}

/// Spectral weights of a state against the `k` lowest eigenstates of `spec`.
pub fn spectral_weights(spec: &CircuitSpec, psi: &[C64], k: usize) -> Result<Vec<f64>> {
    let sol = diagonalize(&build_hamiltonian(spec)?, k)?;
    Ok((0..k).map(|j| linalg::dot(&sol.state(j), psi).norm_sqr()).collect())
}
