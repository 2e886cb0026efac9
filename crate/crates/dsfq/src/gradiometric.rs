//! Double-loop analysis: loop phases, the V_c/V_s decomposition, area
//! compensation and global-flux dispersion.
//!
//! Fields are expressed per unit area in flux quanta, so a loop of area A in
//! field B threads A*B flux quanta. The global reduced flux is
//! Phi_G = A_mean * B / 2, which makes phi_ext1 = 2 pi (1 + r) Phi_G and
//! phi_ext2 = -2 pi (1 - r) Phi_G for b = 0.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitSpec, Variant};
use crate::error::{Error, Result};
use crate::spectrum::solve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopGeometry {
    pub a1: f64,
    pub a2: f64,
    /// Global field B; the loops see B_{1,2} = (B +- b)/2.
    pub b_global: f64,
    pub b_gradient: f64,
}

impl LoopGeometry {
    /// Loops with mean area 1 and asymmetry r, field tuned to `phi_g`.
    pub fn with_asymmetry(r: f64, phi_g: f64) -> Self {
        let mut g = Self { a1: 1.0 + r, a2: 1.0 - r, b_global: 0.0, b_gradient: 0.0 };
        g.b_global = g.field_for_global_flux(phi_g);
        g
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.a2 > 0.0) {
            return Err(Error::InvalidArgument("loop areas must be positive".into()));
        }
        Ok(())
    }

    /// r = (A1 - A2)/(A1 + A2)
    pub fn asymmetry(&self) -> f64 {
        (self.a1 - self.a2) / (self.a1 + self.a2)
    }

    pub fn mean_area(&self) -> f64 {
        0.5 * (self.a1 + self.a2)
    }

    /// Phi_G in flux quanta.
    pub fn global_flux(&self) -> f64 {
        0.5 * self.mean_area() * self.b_global
    }

    pub fn field_for_global_flux(&self, phi_g: f64) -> f64 {
        2.0 * phi_g / self.mean_area()
    }

    /// Global flux at which sin(phi_ext2) = 0, i.e. phi_ext2 = -pi.
    pub fn sweet_spot_flux(&self) -> f64 {
        0.5 / (1.0 - self.asymmetry())
    }
}

/// (phi_ext1, phi_ext2) = (+2 pi A1 B1, -2 pi A2 B2).
pub fn flux_phases(geom: &LoopGeometry) -> (f64, f64) {
    let b1 = 0.5 * (geom.b_global + geom.b_gradient);
    let b2 = 0.5 * (geom.b_global - geom.b_gradient);
    (2.0 * PI * geom.a1 * b1, -2.0 * PI * geom.a2 * b2)
}

/// (V_c, V_s) multiplying cos(2 phi) and sin(2 phi).
pub fn vc_vs(alpha1: f64, alpha2: f64, phi_ext1: f64, phi_ext2: f64) -> (f64, f64) {
    (
        alpha1 * phi_ext1.cos() + alpha2 * phi_ext2.cos(),
        alpha1 * phi_ext1.sin() + alpha2 * phi_ext2.sin(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationDelta {
    pub exact: f64,
    /// 2r
    pub approx: f64,
    pub difference: f64,
}

/// delta = -1 + (1 + r)/(1 - r) cos(2 pi r/(1 - r)) and its 2r limit.
pub fn compensation_delta(r: f64) -> Result<CompensationDelta> {
    if !(r.abs() < 0.2) {
        return Err(Error::InvalidArgument(format!("|r| = {} outside the small-asymmetry regime", r.abs())));
    }
    let exact = -1.0 + (1.0 + r) / (1.0 - r) * (2.0 * PI * r / (1.0 - r)).cos();
    Ok(CompensationDelta { exact, approx: 2.0 * r, difference: exact - 2.0 * r })
}

/// Gradiometric spec with loop phases taken from the geometry.
pub fn spec_at(spec: &CircuitSpec, geom: &LoopGeometry) -> Result<CircuitSpec> {
    if spec.variant != Variant::Gradiometric {
        return Err(Error::InvalidSpec("global dispersion needs a gradiometric circuit".into()));
    }
    let (p1, p2) = flux_phases(geom);
    let mut s = spec.clone();
    s.phi_ext1 = Some(p1);
    s.phi_ext2 = Some(p2);
    Ok(s)
}

/// omega_q at global flux `phi_g` (b kept from `geom`).
pub fn omega_at_global_flux(spec: &CircuitSpec, geom: &LoopGeometry, phi_g: f64) -> Result<f64> {
    let mut g = *geom;
    g.b_global = g.field_for_global_flux(phi_g);
    let sol = solve(&spec_at(spec, &g)?, 2)?;
    Ok(sol.energies[1] - sol.energies[0])
}

/// Five-point stencil step in flux quanta.
pub const SLOPE_STEP: f64 = 1e-4;

/// d omega_q / d Phi_G in GHz per flux quantum at `phi_g`.
pub fn global_slope(spec: &CircuitSpec, geom: &LoopGeometry, phi_g: f64) -> Result<f64> {
    let h = SLOPE_STEP;
    let f: Vec<f64> = [-2.0, -1.0, 1.0, 2.0]
        .par_iter()
        .map(|k| omega_at_global_flux(spec, geom, phi_g + k * h))
        .collect::<Result<_>>()?;
    Ok((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub b_global: f64,
    pub global_flux: f64,
    pub omega_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalDispersion {
    pub rows: Vec<DispersionRow>,
    /// Operating point (sweet-spot global flux) and the slope there.
    pub operating_flux: f64,
    pub slope: f64,
}

/// omega_q over the given global fields, plus the slope at the sweet spot.
pub fn global_dispersion(
    spec: &CircuitSpec,
    geom: &LoopGeometry,
    b_values: &[f64],
) -> Result<GlobalDispersion> {
    geom.validate()?;
    let rows = b_values
        .par_iter()
        .map(|&b| {
            let mut g = *geom;
            g.b_global = b;
            let sol = solve(&spec_at(spec, &g)?, 2)?;
            Ok(DispersionRow { b_global: b, global_flux: g.global_flux(), omega_q: sol.energies[1] - sol.energies[0] })
        })
        .collect::<Result<Vec<_>>>()?;
    let operating_flux = geom.sweet_spot_flux();
    let slope = global_slope(spec, geom, operating_flux)?;
    Ok(GlobalDispersion { rows, operating_flux, slope })
}
