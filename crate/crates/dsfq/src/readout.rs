//! Dispersive readout: second-order shifts from qubit eigendata and the
//! frozen-well picture of the theta plasmon.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circuit::{build_operator, CircuitSpec, OperatorKind, Variant};
use crate::error::{Error, Result};
use crate::spectrum::{solve, EigenSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorSpec {
    pub omega_r: f64,
    pub g: f64,
}

impl ResonatorSpec {
    /// 4.8 GHz resonator, 25 MHz coupling.
    pub fn reference() -> Self {
        Self { omega_r: 4.8, g: 0.025 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_r > 0.0 && self.g >= 0.0 && self.omega_r.is_finite() && self.g.is_finite()) {
            return Err(Error::InvalidArgument("resonator needs omega_r > 0 and g >= 0".into()));
        }
        Ok(())
    }
}

/// Smallest level count accepted by [`dispersive_shift`].
pub const MIN_LEVELS: usize = 10;
/// Denominators below this are treated as exact resonances.
pub const RESONANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersiveShift {
    /// chi = sum_j chi_1j - chi_0j (GHz).
    pub chi: f64,
    /// chi_0j and chi_1j for j < levels (diagonal entries are zero).
    pub chi_0j: Vec<f64>,
    pub chi_1j: Vec<f64>,
    /// Qubit frequency shift: half the difference of the zero-photon
    /// second-order level shifts of |1> and |0>.
    pub delta: f64,
    /// False when some |E_i - E_j +- omega_r| < 5 g for i in {0, 1}.
    pub valid: bool,
    /// (i, j) pairs that tripped the validity check.
    pub flagged: Vec<(usize, usize)>,
}

fn n_theta_elements(spec: &CircuitSpec, sol: &EigenSolution) -> Result<faer::Mat<num_complex::Complex64>> {
    let op = build_operator(OperatorKind::NTheta, spec)?;
    Ok(sol.matrix_elements(&op))
}

/// chi_ij = g^2 |<i|n_theta|j>|^2 (1/(E_i - E_j - w_r) + 1/(E_i - E_j + w_r)).
pub fn dispersive_shift(spec: &CircuitSpec, res: &ResonatorSpec, levels: usize) -> Result<DispersiveShift> {
    res.validate()?;
    if levels < MIN_LEVELS {
        return Err(Error::InvalidArgument(format!("levels = {levels} below {MIN_LEVELS}")));
    }
    let sol = solve(spec, levels)?;
    let nt = n_theta_elements(spec, &sol)?;
    let e = &sol.energies;
    let g2 = res.g * res.g;
    let mut flagged = Vec::new();
    let mut rows = [vec![0.0; levels], vec![0.0; levels]];
    let mut lamb = [0.0; 2];
    for i in 0..2 {
        for j in 0..levels {
            if j == i {
                continue;
            }
            let de = e[i] - e[j];
            let (minus, plus) = (de - res.omega_r, de + res.omega_r);
            for d in [minus, plus] {
                if d.abs() < RESONANCE_FLOOR {
                    return Err(Error::Resonance(d));
                }
                if d.abs() < 5.0 * res.g {
                    flagged.push((i, j));
                }
            }
            let w = g2 * nt[(i, j)].norm_sqr();
            rows[i][j] = w * (1.0 / minus + 1.0 / plus);
            lamb[i] += w / minus;
        }
    }
    flagged.dedup();
    let [chi_0j, chi_1j] = rows;
    let chi = chi_1j.iter().sum::<f64>() - chi_0j.iter().sum::<f64>();
    Ok(DispersiveShift {
        chi,
        chi_0j,
        chi_1j,
        delta: 0.5 * (lamb[1] - lamb[0]),
        valid: flagged.is_empty(),
        flagged,
    })
}

/// |<0|n_theta|1>|^2 relative to the largest |<0|n_theta|j>|^2, j >= 1.
pub fn purcell_ratio(spec: &CircuitSpec, levels: usize) -> Result<f64> {
    if levels < 2 {
        return Err(Error::InvalidArgument("need at least two levels".into()));
    }
    let sol = solve(spec, levels)?;
    let nt = n_theta_elements(spec, &sol)?;
    let biggest = (1..levels).map(|j| nt[(0, j)].norm_sqr()).fold(0.0, f64::max);
    if biggest == 0.0 {
        return Ok(0.0);
    }
    Ok(nt[(0, 1)].norm_sqr() / biggest)
}

/// F = exp(-t_int / T1), both in us.
pub fn t1_limited_readout_fidelity(t1: f64, integration_time: f64) -> Result<f64> {
    if !(t1 > 0.0 && integration_time >= 0.0) {
        return Err(Error::InvalidArgument("t1 must be positive and the integration time non-negative".into()));
    }
    Ok((-integration_time / t1).exp())
}

/// Theta-mode parameters with phi frozen in one of the two wells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenWell {
    pub delta_phi_ext: f64,
    /// E~_C = 2 E_C
    pub ec_eff: f64,
    /// E~_J^+- = E_J (1 +- d/sqrt(3))
    pub ej_plus: f64,
    pub ej_minus: f64,
    /// Constant parts of V_+- : -+ E_J d/(2 sqrt(3)).
    pub offset_plus: f64,
    pub offset_minus: f64,
    /// phi at the minima, (+-pi - d)/3.
    pub phi_plus: f64,
    pub phi_minus: f64,
    /// sqrt(8 E~_C E~_J^+-)
    pub omega_plus: f64,
    pub omega_minus: f64,
}

impl FrozenWell {
    /// (omega, offset) of the well with the lower offset.
    pub fn lower_well(&self) -> (f64, f64) {
        if self.offset_plus <= self.offset_minus {
            (self.omega_plus, self.offset_plus)
        } else {
            (self.omega_minus, self.offset_minus)
        }
    }

    /// Plasma frequency closest to `omega_r`.
    pub fn closest_to(&self, omega_r: f64) -> f64 {
        if (self.omega_plus - omega_r).abs() <= (self.omega_minus - omega_r).abs() {
            self.omega_plus
        } else {
            self.omega_minus
        }
    }
}

/// Largest offset accepted by the frozen-well expansion.
pub const FROZEN_WELL_LIMIT: f64 = 0.3;

pub fn frozen_well_model(spec: &CircuitSpec, delta_phi_ext: f64) -> Result<FrozenWell> {
    if spec.variant == Variant::Gradiometric {
        return Err(Error::InvalidSpec("frozen-well model needs a single tunable junction".into()));
    }
    if (spec.alpha()? - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument("frozen-well model is derived at alpha = 1 only".into()));
    }
    if !(delta_phi_ext.abs() < FROZEN_WELL_LIMIT) {
        return Err(Error::InvalidArgument(format!("|delta_phi_ext| = {} not below {FROZEN_WELL_LIMIT}", delta_phi_ext.abs())));
    }
    let d = delta_phi_ext;
    let s3 = 3f64.sqrt();
    let ec_eff = 2.0 * spec.ec;
    let ej_plus = spec.ej * (1.0 + d / s3);
    let ej_minus = spec.ej * (1.0 - d / s3);
    Ok(FrozenWell {
        delta_phi_ext: d,
        ec_eff,
        ej_plus,
        ej_minus,
        offset_plus: -spec.ej * d / (2.0 * s3),
        offset_minus: spec.ej * d / (2.0 * s3),
        phi_plus: (PI - d) / 3.0,
        phi_minus: (-PI - d) / 3.0,
        omega_plus: (8.0 * ec_eff * ej_plus).sqrt(),
        omega_minus: (8.0 * ec_eff * ej_minus).sqrt(),
    })
}

/// Full-model counterpart of the frozen-well plasmon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasmonCheck {
    /// E_j - E_0 for the theta-excited partner j of the ground state.
    pub transition: f64,
    pub partner: usize,
    /// Sign of <sin 2 phi> of the ground state (+1 or -1).
    pub ground_well: i8,
    /// Frozen-well frequency of the ground state's well.
    pub model: f64,
    pub relative_error: f64,
}

/// Diagonalizes at phi_ext = pi + delta, assigns wells by the sign of
/// <sin 2 phi>, and finds the same-well state with the largest
/// |<0|n_theta|j>|^2. The model well is the one with the lower offset, which
/// holds the ground state.
pub fn plasmon_crosscheck(spec: &CircuitSpec, delta_phi_ext: f64, levels: usize) -> Result<PlasmonCheck> {
    let model = frozen_well_model(spec, delta_phi_ext)?;
    let mut s = spec.clone();
    s.phi_ext = Some(PI + delta_phi_ext);
    let sol = solve(&s, levels)?;
    let sin2 = build_operator(OperatorKind::Sin2Phi, &s)?;
    let well = |i: usize| -> f64 {
        let st = sol.state(i);
        sin2.expectation(&st, &st).re
    };
    let w0 = well(0);
    let nt = n_theta_elements(&s, &sol)?;
    let partner = (1..levels)
        .filter(|&j| well(j) * w0 > 0.0)
        .max_by(|&a, &b| nt[(0, a)].norm_sqr().total_cmp(&nt[(0, b)].norm_sqr()))
        .ok_or_else(|| Error::Eigensolver("no same-well partner state among the retained levels".into()))?;
    let transition = sol.energies[partner] - sol.energies[0];
    let (omega, _) = model.lower_well();
    Ok(PlasmonCheck {
        transition,
        partner,
        ground_well: if w0 >= 0.0 { 1 } else { -1 },
        model: omega,
        relative_error: (omega - transition).abs() / transition,
    })
}
