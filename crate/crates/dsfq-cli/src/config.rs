//! Experiment configuration: a JSON envelope with a versioned schema and an
//! experiment-specific `params` block. Both levels reject unknown keys.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use dsfq::circuit::{COUPLED_CUTOFF, COUPLED_PHI_EXT, DEFAULT_PHI_EXT};
use dsfq::evolve::{DEFAULT_SUBSPACE_K, SINGLE_QUBIT_STEPS_PER_NS, TWO_QUBIT_STEPS_PER_NS};
use dsfq::gates::Refinement;
use dsfq::readout::MIN_LEVELS;
use dsfq::{
    AlphaProfile, CircuitSpec, CoupledSpec, CouplingConvention, DrivePulse, Environment,
    NoiseChannel, ResonatorSpec, Variant,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SpectrumVsAlpha,
    FluxDispersion,
    CoherenceVsAlpha,
    GradiometricDispersion,
    SingleQubitGate,
    TwoQubitMap,
    ZzMap,
    DispersiveShiftSweep,
}

impl ExperimentKind {
    pub const ALL: [Self; 8] = [
        Self::SpectrumVsAlpha,
        Self::FluxDispersion,
        Self::CoherenceVsAlpha,
        Self::GradiometricDispersion,
        Self::SingleQubitGate,
        Self::TwoQubitMap,
        Self::ZzMap,
        Self::DispersiveShiftSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SpectrumVsAlpha => "spectrum_vs_alpha",
            Self::FluxDispersion => "flux_dispersion",
            Self::CoherenceVsAlpha => "coherence_vs_alpha",
            Self::GradiometricDispersion => "gradiometric_dispersion",
            Self::SingleQubitGate => "single_qubit_gate",
            Self::TwoQubitMap => "two_qubit_map",
            Self::ZzMap => "zz_map",
            Self::DispersiveShiftSweep => "dispersive_shift_sweep",
        }
    }

    /// Circuit used when the config has no `circuit` block.
    pub fn default_circuit(self) -> CircuitSpec {
        match self {
            Self::GradiometricDispersion => CircuitSpec::gradiometric(1.0, 1.0, PI, -PI),
            Self::TwoQubitMap | Self::ZzMap => {
                CircuitSpec::node_basis(1.0, COUPLED_PHI_EXT).with_cutoff(COUPLED_CUTOFF)
            }
            Self::DispersiveShiftSweep => CircuitSpec::single_loop(1.0, PI),
            Self::SingleQubitGate => CircuitSpec::single_loop(1.0, 0.995 * PI),
            _ => CircuitSpec::single_loop(1.0, DEFAULT_PHI_EXT),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rejected before any computation.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (this build reads {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

/// Raw document as written by the user.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    experiment: ExperimentKind,
    #[serde(default)]
    circuit: Option<CircuitSpec>,
    #[serde(default)]
    params: Option<Value>,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    workers: Option<usize>,
}

/// Inclusive uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub const fn new(start: f64, stop: f64, points: usize) -> Self {
        Self { start, stop, points }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let h = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| if i + 1 == self.points { self.stop } else { self.start + h * i as f64 }).collect()
    }

    fn check(&self, field: &str, lo: f64, hi: f64) -> Result<(), ConfigError> {
        if self.points == 0 {
            return Err(invalid(field, "points must be at least 1"));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(invalid(field, "start and stop must be finite"));
        }
        if self.points == 1 && self.start != self.stop {
            return Err(invalid(field, "a single-point grid needs start == stop"));
        }
        for v in [self.start, self.stop] {
            if v < lo || v > hi {
                return Err(invalid(field, format!("{v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumParams {
    pub alpha: Grid,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self { alpha: Grid::new(0.5, 1.0, 51) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxParams {
    /// phi_ext in units of pi.
    pub phi_ext_over_pi: Grid,
}

impl Default for FluxParams {
    fn default() -> Self {
        Self { phi_ext_over_pi: Grid::new(0.94, 1.06, 49) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoherenceParams {
    pub alpha: Grid,
    pub channels: Vec<NoiseChannel>,
    pub environment: Environment,
}

impl Default for CoherenceParams {
    fn default() -> Self {
        Self {
            alpha: Grid::new(0.5, 1.0, 11),
            channels: NoiseChannel::reference_set(),
            environment: Environment::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradiometricParams {
    /// Global flux Phi_G in flux quanta.
    pub global_flux: Grid,
    /// Loop-area asymmetry of the non-identical cases.
    pub area_asymmetry: f64,
    /// alpha2/alpha1 - 1 of the compensated case; `None` uses the closed
    /// form for `area_asymmetry`.
    pub delta: Option<f64>,
}

impl Default for GradiometricParams {
    fn default() -> Self {
        Self { global_flux: Grid::new(0.45, 0.55, 41), area_asymmetry: 0.01, delta: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateAxis {
    X,
    Y,
    /// (sigma_x - sigma_y)/sqrt 2
    Xy,
}

impl GateAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::X => "x",
            Self::Y => "y",
            Self::Xy => "xy",
        }
    }

    pub fn phase_offset(self) -> f64 {
        match self {
            Self::X => 0.0,
            Self::Y => 0.5 * PI,
            Self::Xy => 0.25 * PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleQubitParams {
    pub gates: Vec<GateAxis>,
    pub ramp_ns: f64,
    pub plateau_ns: f64,
    pub alpha_plateau: f64,
    pub pulse_ramp_ns: f64,
    /// Carrier as a fraction of omega_q on the plateau.
    pub carrier_ratio: f64,
    pub refinement: Refinement,
    pub steps_per_ns: usize,
    /// Trajectory sampling interval.
    pub sample_every_ns: f64,
    pub channels: Vec<NoiseChannel>,
    pub environment: Environment,
}

impl Default for SingleQubitParams {
    fn default() -> Self {
        Self {
            gates: vec![GateAxis::X, GateAxis::Y, GateAxis::Xy],
            ramp_ns: 7.0,
            plateau_ns: 11.0,
            alpha_plateau: 0.7,
            pulse_ramp_ns: 1.5,
            carrier_ratio: 0.979,
            refinement: Refinement::AmplitudeAndDetuning,
            steps_per_ns: SINGLE_QUBIT_STEPS_PER_NS,
            sample_every_ns: 0.25,
            channels: dsfq::gates::decay_channels(),
            environment: Environment::default(),
        }
    }
}

impl SingleQubitParams {
    pub fn profile(&self) -> dsfq::Result<AlphaProfile> {
        AlphaProfile::single_qubit(self.ramp_ns, self.plateau_ns, self.alpha_plateau)
    }

    /// Drive template with the amplitude and carrier still unset.
    pub fn template(&self, axis: GateAxis) -> DrivePulse {
        DrivePulse {
            phase_offset: axis.phase_offset(),
            ..DrivePulse::centered(self.ramp_ns, self.plateau_ns, self.pulse_ramp_ns)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingParams {
    /// C_g / C
    pub cg_ratio: f64,
    pub convention: CouplingConvention,
    pub levels_per_qubit: usize,
}

impl Default for CouplingParams {
    fn default() -> Self {
        Self { cg_ratio: 0.3, convention: CouplingConvention::Exact, levels_per_qubit: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoQubitParams {
    pub t_a_ns: Grid,
    pub t_w_ns: Grid,
    pub coupling: CouplingParams,
    pub subspace_k: usize,
    pub steps_per_ns: usize,
    pub channels: Vec<NoiseChannel>,
    pub environment: Environment,
    /// Samples of the Monte-Carlo entangling-power cross-check (0 skips it).
    pub monte_carlo_samples: usize,
}

impl Default for TwoQubitParams {
    fn default() -> Self {
        Self {
            t_a_ns: Grid::new(5.0, 60.0, 12),
            t_w_ns: Grid::new(0.0, 44.0, 12),
            coupling: CouplingParams::default(),
            subspace_k: DEFAULT_SUBSPACE_K,
            steps_per_ns: TWO_QUBIT_STEPS_PER_NS,
            channels: dsfq::gates::decay_channels(),
            environment: Environment::default(),
            monte_carlo_samples: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZzParams {
    pub alpha1: Grid,
    pub alpha2: Grid,
    pub coupling: CouplingParams,
}

impl Default for ZzParams {
    fn default() -> Self {
        Self { alpha1: Grid::new(0.5, 1.0, 11), alpha2: Grid::new(0.5, 1.0, 11), coupling: CouplingParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispersiveParams {
    pub phi_ext_over_pi: Grid,
    pub resonator: ResonatorSpec,
    pub levels: usize,
}

impl Default for DispersiveParams {
    fn default() -> Self {
        Self { phi_ext_over_pi: Grid::new(1.0, 1.03, 31), resonator: ResonatorSpec::reference(), levels: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Spectrum(SpectrumParams),
    Flux(FluxParams),
    Coherence(CoherenceParams),
    Gradiometric(GradiometricParams),
    SingleQubit(SingleQubitParams),
    TwoQubit(TwoQubitParams),
    Zz(ZzParams),
    Dispersive(DispersiveParams),
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub circuit: CircuitSpec,
    pub params: Params,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub workers: Option<usize>,
}

fn parse_params<T: for<'de> Deserialize<'de> + Default>(v: Option<Value>) -> Result<T, ConfigError> {
    match v {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v).map_err(|e| ConfigError::Parse(format!("params: {e}"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(raw.schema_version));
        }
        let kind = raw.experiment;
        let params = match kind {
            ExperimentKind::SpectrumVsAlpha => Params::Spectrum(parse_params(raw.params)?),
            ExperimentKind::FluxDispersion => Params::Flux(parse_params(raw.params)?),
            ExperimentKind::CoherenceVsAlpha => Params::Coherence(parse_params(raw.params)?),
            ExperimentKind::GradiometricDispersion => Params::Gradiometric(parse_params(raw.params)?),
            ExperimentKind::SingleQubitGate => Params::SingleQubit(parse_params(raw.params)?),
            ExperimentKind::TwoQubitMap => Params::TwoQubit(parse_params(raw.params)?),
            ExperimentKind::ZzMap => Params::Zz(parse_params(raw.params)?),
            ExperimentKind::DispersiveShiftSweep => Params::Dispersive(parse_params(raw.params)?),
        };
        let cfg = Self {
            schema_version: raw.schema_version,
            experiment: kind,
            circuit: raw.circuit.unwrap_or_else(|| kind.default_circuit()),
            params,
            output: raw.output,
            seed: raw.seed,
            workers: raw.workers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization: defaults filled, fixed key order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Number of independent sweep points.
    pub fn points(&self) -> usize {
        match &self.params {
            Params::Spectrum(p) => p.alpha.points,
            Params::Flux(p) => p.phi_ext_over_pi.points,
            Params::Coherence(p) => p.alpha.points,
            Params::Gradiometric(p) => p.global_flux.points,
            Params::SingleQubit(p) => p.gates.len(),
            Params::TwoQubit(p) => p.t_a_ns.points * p.t_w_ns.points,
            Params::Zz(p) => p.alpha1.points * p.alpha2.points,
            Params::Dispersive(p) => p.phi_ext_over_pi.points,
        }
    }

    pub fn coupled(&self, c: &CouplingParams) -> CoupledSpec {
        let mut q = self.circuit.clone();
        q.alpha = Some(1.0);
        CoupledSpec {
            qubit1: q.clone(),
            qubit2: q,
            cg_ratio: c.cg_ratio,
            convention: c.convention,
            levels_per_qubit: c.levels_per_qubit,
        }
    }

    fn expect_variant(&self, allowed: &[Variant]) -> Result<(), ConfigError> {
        if !allowed.contains(&self.circuit.variant) {
            return Err(invalid(
                "circuit.variant",
                format!("{} needs one of {:?}, got {:?}", self.experiment, allowed, self.circuit.variant),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        use Variant::*;
        fn dsfq_err(field: &'static str) -> impl Fn(dsfq::Error) -> ConfigError {
            move |e| invalid(field, e)
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be at least 1"));
        }
        self.circuit.validate().map_err(dsfq_err("circuit"))?;
        let channels = |c: &[NoiseChannel], env: &Environment| -> Result<(), ConfigError> {
            if c.is_empty() {
                return Err(invalid("params.channels", "at least one noise channel is required"));
            }
            if let Some(bad) = c.iter().find(|c| !(c.amplitude.is_finite() && c.amplitude > 0.0)) {
                return Err(invalid("params.channels", format!("{} amplitude must be positive", bad.kind.name())));
            }
            env.validate().map_err(dsfq_err("params.environment"))
        };
        match &self.params {
            Params::Spectrum(p) => {
                self.expect_variant(&[SingleLoop, NodeBasis])?;
                p.alpha.check("params.alpha", 0.0, 1.0)?;
            }
            Params::Flux(p) => {
                self.expect_variant(&[SingleLoop, NodeBasis])?;
                p.phi_ext_over_pi.check("params.phi_ext_over_pi", -4.0, 4.0)?;
            }
            Params::Coherence(p) => {
                self.expect_variant(&[SingleLoop, NodeBasis, Gradiometric])?;
                p.alpha.check("params.alpha", 0.0, 1.0)?;
                channels(&p.channels, &p.environment)?;
            }
            Params::Gradiometric(p) => {
                self.expect_variant(&[Gradiometric])?;
                p.global_flux.check("params.global_flux", -2.0, 2.0)?;
                if !(p.area_asymmetry.abs() < 0.2) {
                    return Err(invalid("params.area_asymmetry", "|r| must be below 0.2"));
                }
                if let Some(d) = p.delta {
                    if !(d.is_finite() && d > -1.0) {
                        return Err(invalid("params.delta", "must be finite and above -1"));
                    }
                }
            }
            Params::SingleQubit(p) => {
                self.expect_variant(&[SingleLoop, NodeBasis])?;
                if p.gates.is_empty() {
                    return Err(invalid("params.gates", "list at least one gate"));
                }
                let profile = p.profile().map_err(dsfq_err("params"))?;
                let t = p.template(GateAxis::X);
                t.validate().map_err(dsfq_err("params.pulse_ramp_ns"))?;
                if t.flat < 0.0 || !profile.is_flat_on(t.t_start, t.t_end()) {
                    return Err(invalid("params.pulse_ramp_ns", "the pulse must fit inside the plateau"));
                }
                if !(p.carrier_ratio > 0.0 && p.carrier_ratio.is_finite()) {
                    return Err(invalid("params.carrier_ratio", "must be positive"));
                }
                if p.steps_per_ns == 0 {
                    return Err(invalid("params.steps_per_ns", "must be positive"));
                }
                if !(p.sample_every_ns > 0.0) {
                    return Err(invalid("params.sample_every_ns", "must be positive"));
                }
                channels(&p.channels, &p.environment)?;
            }
            Params::TwoQubit(p) => {
                self.expect_variant(&[NodeBasis])?;
                p.t_a_ns.check("params.t_a_ns", 0.0, dsfq::evolve::TWO_QUBIT_RAMP_NS)?;
                p.t_w_ns.check("params.t_w_ns", 0.0, 1e4)?;
                self.coupled(&p.coupling).validate().map_err(dsfq_err("params.coupling"))?;
                let dim = p.coupling.levels_per_qubit * p.coupling.levels_per_qubit;
                if p.subspace_k < 4 || p.subspace_k > dim {
                    return Err(invalid("params.subspace_k", format!("must lie in [4, {dim}]")));
                }
                if p.steps_per_ns == 0 {
                    return Err(invalid("params.steps_per_ns", "must be positive"));
                }
                channels(&p.channels, &p.environment)?;
            }
            Params::Zz(p) => {
                self.expect_variant(&[NodeBasis])?;
                p.alpha1.check("params.alpha1", 0.0, 1.0)?;
                p.alpha2.check("params.alpha2", 0.0, 1.0)?;
                self.coupled(&p.coupling).validate().map_err(dsfq_err("params.coupling"))?;
            }
            Params::Dispersive(p) => {
                self.expect_variant(&[SingleLoop])?;
                p.phi_ext_over_pi.check("params.phi_ext_over_pi", -4.0, 4.0)?;
                p.resonator.validate().map_err(dsfq_err("params.resonator"))?;
                if p.levels < MIN_LEVELS {
                    return Err(invalid("params.levels", format!("must be at least {MIN_LEVELS}")));
                }
            }
        }
        Ok(())
    }
}
