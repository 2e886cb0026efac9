//! Noise channels, Golden-rule relaxation, first-order 1/f dephasing and
//! decay-integrated fidelities.
//!
//! Matrix elements come out of the circuit module in GHz per unit noise
//! parameter. Every rate is assembled in SI (rad/s, 1/s) in one place,
//! [`channel_rates`], and returned in 1/ns.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circuit::{build_operator, CircuitSpec, HermitianOperator, OperatorKind, Variant};
use crate::circuit::DEFAULT_GRID_POINTS;
use crate::error::{Error, Result};
use crate::spectrum::{solve, EigenSolution};
use crate::units::{angular_si, per_ns, thermal_frequency_ghz, HZ_PER_GHZ, NS_PER_US};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// 1/f flux noise through the loop (loop 1 for the gradiometric circuit).
    #[serde(rename = "flux_1f")]
    Flux1f,
    /// 1/f noise in the global field of a gradiometric circuit.
    #[serde(rename = "flux_global_1f")]
    FluxGlobal1f,
    #[serde(rename = "charge_1f_phi")]
    Charge1fPhi,
    #[serde(rename = "charge_1f_theta")]
    Charge1fTheta,
    ChargeOhmicPhi,
    ChargeOhmicTheta,
    Dielectric,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Flux1f => "flux_1f",
            Self::FluxGlobal1f => "flux_global_1f",
            Self::Charge1fPhi => "charge_1f_phi",
            Self::Charge1fTheta => "charge_1f_theta",
            Self::ChargeOhmicPhi => "charge_ohmic_phi",
            Self::ChargeOhmicTheta => "charge_ohmic_theta",
            Self::Dielectric => "dielectric",
        }
    }

    pub fn is_one_over_f(self) -> bool {
        matches!(self, Self::Flux1f | Self::FluxGlobal1f | Self::Charge1fPhi | Self::Charge1fTheta)
    }
}

/// One noise source. Amplitude is A or B in Phi_0/sqrt(Hz) or charge/sqrt(Hz),
/// or tan(delta) for dielectric loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseChannel {
    pub kind: ChannelKind,
    pub amplitude: f64,
    /// Loop-area asymmetry r used by the global-flux channel.
    #[serde(default)]
    pub area_asymmetry: f64,
}

impl NoiseChannel {
    pub fn new(kind: ChannelKind, amplitude: f64) -> Self {
        Self { kind, amplitude, area_asymmetry: 0.0 }
    }

    /// Reference amplitudes used for every coherence figure.
    pub fn reference_set() -> Vec<Self> {
        vec![
            Self::new(ChannelKind::Flux1f, 1e-6),
            Self::new(ChannelKind::Charge1fPhi, 1e-4),
            Self::new(ChannelKind::Charge1fTheta, 1e-4),
            Self::new(ChannelKind::ChargeOhmicPhi, 5.2e-9),
            Self::new(ChannelKind::ChargeOhmicTheta, 5.2e-9),
            Self::new(ChannelKind::Dielectric, 2e-7),
        ]
    }
}

/// Interpretation of the charge-noise amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeUnits {
    CooperPair,
    /// Amplitudes quoted per electron charge; dH/dn_g is halved.
    Electron,
}

/// Argument of the thermal factor in the dielectric spectral function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DielectricConvention {
    /// coth(hbar omega / k_B T)
    AsPrinted,
    /// coth(hbar omega / 2 k_B T)
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    /// Kelvin.
    pub temperature: f64,
    /// omega_ir * t.
    pub ir_cutoff_product: f64,
    pub charge_units: ChargeUnits,
    pub dielectric: DielectricConvention,
    pub grid_points: usize,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            temperature: 0.020,
            ir_cutoff_product: 2.0 * PI * 1e-6,
            charge_units: ChargeUnits::CooperPair,
            dielectric: DielectricConvention::AsPrinted,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if !(self.ir_cutoff_product > 0.0 && self.ir_cutoff_product < 1.0) {
            return Err(Error::InvalidArgument("ir_cutoff_product must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-channel rates (1/ns) and combined times (us).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub omega_q: f64,
    pub gamma1_by_channel: Vec<(ChannelKind, f64)>,
    pub gammaphi_by_channel: Vec<(ChannelKind, f64)>,
    pub t1: f64,
    pub tphi: f64,
    pub t2: f64,
}

fn time_us(rates: &[(ChannelKind, f64)]) -> f64 {
    let total: f64 = rates.iter().map(|r| r.1).sum();
    if total > 0.0 {
        1.0 / total / NS_PER_US
    } else {
        f64::INFINITY
    }
}

impl CoherenceReport {
    fn assemble(
        omega_q: f64,
        gamma1_by_channel: Vec<(ChannelKind, f64)>,
        gammaphi_by_channel: Vec<(ChannelKind, f64)>,
    ) -> Self {
        let t1 = time_us(&gamma1_by_channel);
        let tphi = time_us(&gammaphi_by_channel);
        let inv = 1.0 / (2.0 * t1) + 1.0 / tphi;
        let t2 = if inv > 0.0 { 1.0 / inv } else { f64::INFINITY };
        Self { omega_q, gamma1_by_channel, gammaphi_by_channel, t1, tphi, t2 }
    }

    pub fn gamma1_total(&self) -> f64 {
        self.gamma1_by_channel.iter().map(|r| r.1).sum()
    }
}

/// dH/d(lambda) in GHz per unit of the channel's noise parameter.
pub fn channel_operator(
    spec: &CircuitSpec,
    channel: &NoiseChannel,
    env: &Environment,
) -> Result<HermitianOperator> {
    let charge_scale = match env.charge_units {
        ChargeUnits::CooperPair => 1.0,
        ChargeUnits::Electron => 0.5,
    };
    let scaled = |op: HermitianOperator, s: f64| op.scale(s);
    let flux = |kind| -> Result<HermitianOperator> {
        Ok(scaled(build_operator(kind, spec)?, 2.0 * PI))
    };
    match channel.kind {
        ChannelKind::Flux1f => match spec.variant {
            Variant::Gradiometric => flux(OperatorKind::DhDphiExt1),
            _ => flux(OperatorKind::DhDphiExt),
        },
        ChannelKind::FluxGlobal1f => match spec.variant {
            Variant::Gradiometric => {
                let r = channel.area_asymmetry;
                let d1 = build_operator(OperatorKind::DhDphiExt1, spec)?;
                let d2 = build_operator(OperatorKind::DhDphiExt2, spec)?;
                d1.combine(2.0 * PI * (1.0 + r), &d2, -2.0 * PI * (1.0 - r), "dH_dphi_global")
            }
            _ => flux(OperatorKind::DhDphiExt),
        },
        ChannelKind::Charge1fPhi | ChannelKind::ChargeOhmicPhi => {
            Ok(scaled(build_operator(OperatorKind::DhDngPhi, spec)?, charge_scale))
        }
        ChannelKind::Charge1fTheta | ChannelKind::ChargeOhmicTheta => {
            Ok(scaled(build_operator(OperatorKind::DhDngTheta, spec)?, charge_scale))
        }
        ChannelKind::Dielectric => build_operator(OperatorKind::PhiGrid { points: env.grid_points }, spec),
    }
}

/// (Gamma_1, Gamma_phi) in 1/ns for one channel given the two qubit states.
///
/// Conventions: omega = 2 pi f_q in rad/s; S_1/f = 2 pi A^2 (1 Hz)/omega;
/// S_ohmic = B^2 omega / (2 pi 1 GHz); S_diel = (omega^2 tan d / 4 E_C)
/// [coth(x) + 1] with x = hbar omega/k_B T (or half of it, standard form).
pub fn channel_rates(
    sol: &EigenSolution,
    op: &HermitianOperator,
    channel: &NoiseChannel,
    spec: &CircuitSpec,
    env: &Environment,
) -> Result<(f64, f64)> {
    let f = sol.energies[1] - sol.energies[0];
    if f <= 1e-12 {
        return Err(Error::DegenerateQubit(f));
    }
    let omega = angular_si(f);
    let psi0 = sol.state(0);
    let psi1 = sol.state(1);
    let m10 = op.expectation(&psi1, &psi0).norm();
    let a = channel.amplitude;
    let g1 = match channel.kind {
        ChannelKind::Dielectric => {
            let x = f / thermal_frequency_ghz(env.temperature);
            let x = match env.dielectric {
                DielectricConvention::AsPrinted => x,
                DielectricConvention::Standard => 0.5 * x,
            };
            let thermal = 1.0 / x.tanh() + 1.0;
            m10 * m10 * omega * omega * a / (4.0 * 2.0 * PI * spec.ec * HZ_PER_GHZ) * thermal
        }
        kind => {
            let coupling = angular_si(m10);
            let s = if kind.is_one_over_f() {
                2.0 * PI * a * a / omega
            } else {
                a * a * omega / (2.0 * PI * HZ_PER_GHZ)
            };
            coupling * coupling * s
        }
    };
    let gphi = if channel.kind.is_one_over_f() {
        let slope = (op.expectation(&psi1, &psi1) - op.expectation(&psi0, &psi0)).re;
        let d = angular_si(slope);
        (2.0 * a * a * d * d * env.ir_cutoff_product.ln().abs()).sqrt()
    } else {
        0.0
    };
    Ok((per_ns(g1), per_ns(gphi)))
}

/// Full report: relaxation and dephasing per channel.
pub fn coherence(
    spec: &CircuitSpec,
    channels: &[NoiseChannel],
    env: &Environment,
) -> Result<CoherenceReport> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("no noise channels given".into()));
    }
    for c in channels {
        if !(c.amplitude > 0.0) {
            return Err(Error::InvalidArgument(format!("{} amplitude must be positive", c.kind.name())));
        }
    }
    env.validate()?;
    let sol = solve(spec, 2)?;
    let mut g1 = Vec::with_capacity(channels.len());
    let mut gp = Vec::with_capacity(channels.len());
    for c in channels {
        let op = channel_operator(spec, c, env)?;
        let (a, b) = channel_rates(&sol, &op, c, spec, env)?;
        g1.push((c.kind, a));
        if c.kind.is_one_over_f() {
            gp.push((c.kind, b));
        }
    }
    Ok(CoherenceReport::assemble(sol.energies[1] - sol.energies[0], g1, gp))
}

/// Relaxation part only (dephasing list empty, tphi infinite).
pub fn relaxation_rates(
    spec: &CircuitSpec,
    channels: &[NoiseChannel],
    env: &Environment,
) -> Result<CoherenceReport> {
    let full = coherence(spec, channels, env)?;
    Ok(CoherenceReport::assemble(full.omega_q, full.gamma1_by_channel, Vec::new()))
}

/// Dephasing part only (relaxation list empty, t1 infinite).
pub fn dephasing_rates(
    spec: &CircuitSpec,
    channels: &[NoiseChannel],
    env: &Environment,
) -> Result<CoherenceReport> {
    let full = coherence(spec, channels, env)?;
    Ok(CoherenceReport::assemble(full.omega_q, Vec::new(), full.gammaphi_by_channel))
}

/// d omega_q / d lambda (GHz per unit) via Hellmann-Feynman.
pub fn frequency_slope(spec: &CircuitSpec, op: &HermitianOperator) -> Result<f64> {
    let sol = solve(spec, 2)?;
    let (p0, p1) = (sol.state(0), sol.state(1));
    Ok((op.expectation(&p1, &p1) - op.expectation(&p0, &p0)).re)
}

/// F = exp(-int Gamma_1 dt) by the trapezoidal rule; times in ns, rates in 1/ns.
pub fn decay_integrated_fidelity(times: &[f64], gamma1: &[f64]) -> Result<f64> {
    if times.len() != gamma1.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: gamma1.len() });
    }
    if let Some(g) = gamma1.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative or NaN rate sample {g}")));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("time grid must increase strictly".into()));
    }
    let integral: f64 = times
        .windows(2)
        .zip(gamma1.windows(2))
        .map(|(t, g)| 0.5 * (g[0] + g[1]) * (t[1] - t[0]))
        .sum();
    Ok((-integral).exp())
}
