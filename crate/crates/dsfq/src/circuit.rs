//! Hamiltonians and operators for the three circuit variants in truncated
//! charge bases, plus the phase-grid transform.
//!
//! Basis states are |a, b> with a, b in -N..=N. For `SingleLoop` the pair is
//! (n_phi, n_theta); for the node variants it is the two island charges
//! (n1, n2), related by n_phi = n1 - n2 and n_theta = n1 + n2. Row index is
//! `(a + N) * (2N + 1) + (b + N)`. The convention e^{i phi}|n> = |n + 1> is
//! used throughout.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_defect, max_abs, ZERO};

/// Hamiltonian builder selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SingleLoop,
    Gradiometric,
    NodeBasis,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::SingleLoop => "single_loop",
            Variant::Gradiometric => "gradiometric",
            Variant::NodeBasis => "node_basis",
        }
    }
}

/// Subset of basis states that diagonalization works in.
///
/// In (n_phi, n_theta) coordinates the Hamiltonian never mixes the parity of
/// n_phi + n_theta. Only the even block maps onto integer island charges; the
/// odd block is a half-charge copy of the spectrum and interleaves with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    All,
    EvenChargeSum,
}

/// Which coordinate pair labels the two modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModePair {
    PhiTheta,
    Nodes,
}

/// Two-mode truncated charge basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub modes: ModePair,
    pub cutoff: usize,
    pub sector: Sector,
}

impl Basis {
    pub fn mode_names(&self) -> [&'static str; 2] {
        match self.modes {
            ModePair::PhiTheta => ["n_phi", "n_theta"],
            ModePair::Nodes => ["n1", "n2"],
        }
    }

    pub fn dim_per_mode(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn dim(&self) -> usize {
        self.dim_per_mode() * self.dim_per_mode()
    }

    /// Row index of |a, b>, or None outside the truncation.
    pub fn index(&self, a: i64, b: i64) -> Option<usize> {
        let n = self.cutoff as i64;
        if a.abs() > n || b.abs() > n {
            return None;
        }
        Some(((a + n) as usize) * self.dim_per_mode() + (b + n) as usize)
    }

    /// Charges (a, b) of row `i`.
    pub fn charges(&self, i: usize) -> (i64, i64) {
        let d = self.dim_per_mode();
        let n = self.cutoff as i64;
        ((i / d) as i64 - n, (i % d) as i64 - n)
    }

    pub fn in_sector(&self, i: usize) -> bool {
        match self.sector {
            Sector::All => true,
            Sector::EvenChargeSum => {
                let (a, b) = self.charges(i);
                (a + b).rem_euclid(2) == 0
            }
        }
    }

    pub fn sector_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.in_sector(i)).collect()
    }

    /// Image of row `i` under phi -> -phi.
    pub fn parity_image(&self, i: usize) -> usize {
        let (a, b) = self.charges(i);
        let img = match self.modes {
            ModePair::PhiTheta => self.index(-a, b),
            ModePair::Nodes => self.index(b, a),
        };
        img.expect("parity maps the truncation onto itself")
    }
}

/// Full parameterization of one circuit.
///
/// Energies are E/h in GHz, phases in radians, offset charges in Cooper
/// pairs. Variant-specific fields are optional; the builders report which
/// one is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    pub variant: Variant,
    pub ej: f64,
    pub ec: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub alpha1: Option<f64>,
    #[serde(default)]
    pub alpha2: Option<f64>,
    #[serde(default)]
    pub phi_ext: Option<f64>,
    #[serde(default)]
    pub phi_ext1: Option<f64>,
    #[serde(default)]
    pub phi_ext2: Option<f64>,
    #[serde(default)]
    pub ng_phi: f64,
    #[serde(default)]
    pub ng_theta: f64,
    pub cutoff: usize,
    /// Charging prefactor multiplier on island 1 (node variants only). A
    /// capacitively coupled island carries (C + C_g)/(C + 2 C_g).
    #[serde(default = "one")]
    pub node1_charging_scale: f64,
    /// Diagonalization sector; `None` picks the physical default.
    #[serde(default)]
    pub sector: Option<Sector>,
}

fn one() -> f64 {
    1.0
}

pub const DEFAULT_EJ: f64 = 10.0;
pub const DEFAULT_EC: f64 = 0.1;
pub const DEFAULT_CUTOFF: usize = 12;
pub const DEFAULT_PHI_EXT: f64 = 0.997 * PI;

impl CircuitSpec {
    pub fn single_loop(alpha: f64, phi_ext: f64) -> Self {
        Self {
            variant: Variant::SingleLoop,
            ej: DEFAULT_EJ,
            ec: DEFAULT_EC,
            alpha: Some(alpha),
            alpha1: None,
            alpha2: None,
            phi_ext: Some(phi_ext),
            phi_ext1: None,
            phi_ext2: None,
            ng_phi: 0.0,
            ng_theta: 0.0,
            cutoff: DEFAULT_CUTOFF,
            node1_charging_scale: 1.0,
            sector: None,
        }
    }

    pub fn node_basis(alpha: f64, phi_ext: f64) -> Self {
        Self { variant: Variant::NodeBasis, ..Self::single_loop(alpha, phi_ext) }
    }

    pub fn gradiometric(alpha1: f64, alpha2: f64, phi_ext1: f64, phi_ext2: f64) -> Self {
        Self {
            variant: Variant::Gradiometric,
            alpha: None,
            phi_ext: None,
            alpha1: Some(alpha1),
            alpha2: Some(alpha2),
            phi_ext1: Some(phi_ext1),
            phi_ext2: Some(phi_ext2),
            ..Self::single_loop(1.0, PI)
        }
    }

    pub fn with_energies(mut self, ej: f64, ec: f64) -> Self {
        self.ej = ej;
        self.ec = ec;
        self
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_offsets(mut self, ng_phi: f64, ng_theta: f64) -> Self {
        self.ng_phi = ng_phi;
        self.ng_theta = ng_theta;
        self
    }

    pub fn with_sector(mut self, sector: Sector) -> Self {
        self.sector = Some(sector);
        self
    }

    fn need(&self, v: Option<f64>, field: &'static str) -> Result<f64> {
        v.ok_or(Error::MissingField { field, variant: self.variant.name() })
    }

    /// Barrier ratio of the single tunable junction.
    pub fn alpha(&self) -> Result<f64> {
        self.need(self.alpha, "alpha")
    }

    pub fn phi_ext(&self) -> Result<f64> {
        self.need(self.phi_ext, "phi_ext")
    }

    pub fn alphas(&self) -> Result<(f64, f64)> {
        Ok((self.need(self.alpha1, "alpha1")?, self.need(self.alpha2, "alpha2")?))
    }

    pub fn phi_exts(&self) -> Result<(f64, f64)> {
        Ok((self.need(self.phi_ext1, "phi_ext1")?, self.need(self.phi_ext2, "phi_ext2")?))
    }

    /// Checks invariants and variant fields.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.ej.is_finite() && self.ej > 0.0) {
            return bad(format!("ej must be positive, got {}", self.ej));
        }
        if !(self.ec.is_finite() && self.ec > 0.0) {
            return bad(format!("ec must be positive, got {}", self.ec));
        }
        if self.cutoff < 1 {
            return bad("cutoff must be at least 1".into());
        }
        if !(self.ng_phi.is_finite() && self.ng_theta.is_finite()) {
            return bad("offset charges must be finite".into());
        }
        if !(self.node1_charging_scale.is_finite() && self.node1_charging_scale > 0.0) {
            return bad("node1_charging_scale must be positive".into());
        }
        let check_alpha = |a: f64, name: &str| {
            if (0.0..=1.5).contains(&a) {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} must lie in [0, 1.5], got {a}")))
            }
        };
        let check_phase = |p: f64, name: &str| {
            if p.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} must be finite")))
            }
        };
        match self.variant {
            Variant::SingleLoop | Variant::NodeBasis => {
                check_alpha(self.alpha()?, "alpha")?;
                check_phase(self.phi_ext()?, "phi_ext")?;
            }
            Variant::Gradiometric => {
                let (a1, a2) = self.alphas()?;
                check_alpha(a1, "alpha1")?;
                check_alpha(a2, "alpha2")?;
                let (p1, p2) = self.phi_exts()?;
                check_phase(p1, "phi_ext1")?;
                check_phase(p2, "phi_ext2")?;
            }
        }
        if self.variant != Variant::SingleLoop && self.sector == Some(Sector::EvenChargeSum) {
            return bad("the even-charge-sum sector only applies to the single-loop basis".into());
        }
        Ok(())
    }

    pub fn basis(&self) -> Basis {
        let modes = match self.variant {
            Variant::SingleLoop => ModePair::PhiTheta,
            _ => ModePair::Nodes,
        };
        let default = match self.variant {
            Variant::SingleLoop => Sector::EvenChargeSum,
            _ => Sector::All,
        };
        Basis { modes, cutoff: self.cutoff, sector: self.sector.unwrap_or(default) }
    }

    /// Island offset charges (ng1, ng2) equivalent to (ng_phi, ng_theta).
    fn node_offsets(&self) -> (f64, f64) {
        (0.5 * (self.ng_theta + self.ng_phi), 0.5 * (self.ng_theta - self.ng_phi))
    }

    /// Coefficient c of the shift |a+1, b-1><a, b| in the node potential, so
    /// that the term is c S + c* S^dag.
    fn node_cross_coefficient(&self) -> Result<C64> {
        match self.variant {
            Variant::NodeBasis => {
                Ok(-0.5 * self.alpha()? * self.ej * C64::from_polar(1.0, self.phi_ext()?))
            }
            Variant::Gradiometric => {
                let (a1, a2) = self.alphas()?;
                let (p1, p2) = self.phi_exts()?;
                Ok(-0.25 * self.ej * (a1 * C64::from_polar(1.0, p1) + a2 * C64::from_polar(1.0, p2)))
            }
            Variant::SingleLoop => Err(Error::UnsupportedOperator("node cross term")),
        }
    }
}

/// Labeled Hermitian matrix in a declared basis.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    pub label: String,
    pub basis: Basis,
    pub entries: Mat<C64>,
}

impl HermitianOperator {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Max |M - M^dag| relative to max |M|.
    pub fn relative_hermiticity_defect(&self) -> f64 {
        let scale = max_abs(self.entries.as_ref());
        if scale == 0.0 {
            0.0
        } else {
            hermiticity_defect(self.entries.as_ref()) / scale
        }
    }

    pub fn check_hermitian(&self) -> Result<()> {
        let d = self.relative_hermiticity_defect();
        if d > 1e-12 {
            return Err(Error::NotHermitian(d));
        }
        Ok(())
    }

    /// Multiplies every entry by `s`.
    pub fn scale(mut self, s: f64) -> Self {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                self.entries[(i, j)] *= s;
            }
        }
        self
    }

    /// a * self + b * other, same basis required.
    pub fn combine(&self, a: f64, other: &HermitianOperator, b: f64, label: &str) -> Result<Self> {
        if self.basis != other.basis {
            return Err(Error::InvalidArgument("operators live in different bases".into()));
        }
        let n = self.dim();
        let entries = Mat::<C64>::from_fn(n, n, |i, j| a * self.entries[(i, j)] + b * other.entries[(i, j)]);
        Ok(Self { label: label.to_string(), basis: self.basis, entries })
    }

    /// <u| M |v>
    pub fn expectation(&self, u: &[C64], v: &[C64]) -> C64 {
        let n = self.dim();
        let mut acc = ZERO;
        for j in 0..n {
            if v[j] == ZERO {
                continue;
            }
            let mut col = ZERO;
            for i in 0..n {
                col += u[i].conj() * self.entries[(i, j)];
            }
            acc += col * v[j];
        }
        acc
    }
}

/// Operators available from [`build_operator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    NPhi,
    NTheta,
    N1,
    /// phi multiplication operator through the phase grid.
    PhiGrid { points: usize },
    /// sin(2 phi), a branch-free well indicator.
    Sin2Phi,
    DhDphiExt,
    DhDphiExt1,
    DhDphiExt2,
    DhDngPhi,
    DhDngTheta,
}

/// Default phase-grid resolution per mode.
pub const DEFAULT_GRID_POINTS: usize = 256;

struct Builder {
    basis: Basis,
    m: Mat<C64>,
}

impl Builder {
    fn new(basis: Basis) -> Self {
        let d = basis.dim();
        Self { basis, m: Mat::zeros(d, d) }
    }

    fn diag(&mut self, f: impl Fn(i64, i64) -> f64) {
        for i in 0..self.basis.dim() {
            let (a, b) = self.basis.charges(i);
            self.m[(i, i)] += C64::new(f(a, b), 0.0);
        }
    }

    /// Adds c |a+da, b+db><a, b| + h.c. for every in-range pair.
    fn shift(&mut self, da: i64, db: i64, c: C64) {
        for i in 0..self.basis.dim() {
            let (a, b) = self.basis.charges(i);
            if let Some(j) = self.basis.index(a + da, b + db) {
                self.m[(j, i)] += c;
                self.m[(i, j)] += c.conj();
            }
        }
    }

    fn finish(self, label: &str) -> HermitianOperator {
        HermitianOperator { label: label.to_string(), basis: self.basis, entries: self.m }
    }
}

/// H = H_C + H_J in the spec's charge basis.
pub fn build_hamiltonian(spec: &CircuitSpec) -> Result<HermitianOperator> {
    spec.validate()?;
    let basis = spec.basis();
    let mut b = Builder::new(basis);
    let (ej, ec) = (spec.ej, spec.ec);
    match spec.variant {
        Variant::SingleLoop => {
            let (alpha, phi_ext) = (spec.alpha()?, spec.phi_ext()?);
            let (gp, gt) = (spec.ng_phi, spec.ng_theta);
            b.diag(|a, t| 2.0 * ec * ((a as f64 - gp).powi(2) + (t as f64 - gt).powi(2)));
            // -2 E_J cos(phi) cos(theta): four diagonal unit shifts.
            let w = C64::new(-0.5 * ej, 0.0);
            b.shift(1, 1, w);
            b.shift(1, -1, w);
            b.shift(2, 0, -0.5 * alpha * ej * C64::from_polar(1.0, phi_ext));
        }
        Variant::NodeBasis | Variant::Gradiometric => {
            let (g1, g2) = spec.node_offsets();
            let s = spec.node1_charging_scale;
            b.diag(|n1, n2| 4.0 * ec * (s * (n1 as f64 - g1).powi(2) + (n2 as f64 - g2).powi(2)));
            let w = C64::new(-0.5 * ej, 0.0);
            b.shift(1, 0, w);
            b.shift(0, 1, w);
            b.shift(1, -1, spec.node_cross_coefficient()?);
        }
    }
    Ok(b.finish("H"))
}

/// Charge, phase, and parameter-derivative operators.
pub fn build_operator(kind: OperatorKind, spec: &CircuitSpec) -> Result<HermitianOperator> {
    spec.validate()?;
    let basis = spec.basis();
    let nodes = basis.modes == ModePair::Nodes;
    let mut b = Builder::new(basis);
    let ec = spec.ec;
    let label = match kind {
        OperatorKind::NPhi => {
            b.diag(|a, t| if nodes { (a - t) as f64 } else { a as f64 });
            "n_phi"
        }
        OperatorKind::NTheta => {
            b.diag(|a, t| if nodes { (a + t) as f64 } else { t as f64 });
            "n_theta"
        }
        OperatorKind::N1 => {
            b.diag(|a, t| if nodes { a as f64 } else { 0.5 * (a + t) as f64 });
            "n1"
        }
        OperatorKind::Sin2Phi => {
            // sin(2 phi) = (e^{2i phi} - e^{-2i phi}) / 2i; in node variables 2 phi = phi1 - phi2.
            let c = C64::new(0.0, -0.5);
            if nodes {
                b.shift(1, -1, c);
            } else {
                b.shift(2, 0, c);
            }
            "sin_2phi"
        }
        OperatorKind::DhDphiExt => {
            let c = match spec.variant {
                Variant::SingleLoop | Variant::NodeBasis => {
                    C64::new(0.0, -0.5) * spec.alpha()? * spec.ej * C64::from_polar(1.0, spec.phi_ext()?)
                }
                Variant::Gradiometric => return Err(Error::UnsupportedOperator("dH_dphi_ext")),
            };
            if nodes {
                b.shift(1, -1, c);
            } else {
                b.shift(2, 0, c);
            }
            "dH_dphi_ext"
        }
        OperatorKind::DhDphiExt1 | OperatorKind::DhDphiExt2 => {
            if spec.variant != Variant::Gradiometric {
                return Err(Error::UnsupportedOperator("dH_dphi_ext1/2"));
            }
            let (a1, a2) = spec.alphas()?;
            let (p1, p2) = spec.phi_exts()?;
            let (a, p, label) = if kind == OperatorKind::DhDphiExt1 {
                (a1, p1, "dH_dphi_ext1")
            } else {
                (a2, p2, "dH_dphi_ext2")
            };
            b.shift(1, -1, C64::new(0.0, -0.25) * a * spec.ej * C64::from_polar(1.0, p));
            label
        }
        OperatorKind::DhDngPhi | OperatorKind::DhDngTheta => {
            let theta = kind == OperatorKind::DhDngTheta;
            if nodes {
                let (g1, g2) = spec.node_offsets();
                let s = spec.node1_charging_scale;
                let sign = if theta { -1.0 } else { 1.0 };
                b.diag(|n1, n2| {
                    -4.0 * ec * s * (n1 as f64 - g1) + sign * 4.0 * ec * (n2 as f64 - g2)
                });
            } else if theta {
                let g = spec.ng_theta;
                b.diag(|_, t| -4.0 * ec * (t as f64 - g));
            } else {
                let g = spec.ng_phi;
                b.diag(|a, _| -4.0 * ec * (a as f64 - g));
            }
            if theta {
                "dH_dng_theta"
            } else {
                "dH_dng_phi"
            }
        }
        OperatorKind::PhiGrid { points } => {
            check_grid(points, &basis)?;
            // <a'|phi|a> = (1/M) sum_j x_j e^{i (a - a') x_j} on the grid.
            let kmax = 2 * spec.cutoff as i64;
            let fourier = |k: i64, f: &dyn Fn(usize) -> f64| -> C64 {
                let mut acc = ZERO;
                for j in 0..points {
                    let x = grid_coordinate(j, points);
                    acc += f(j) * C64::from_polar(1.0, k as f64 * x);
                }
                acc / points as f64
            };
            if nodes {
                // phi = wrap(phi1 - phi2) / 2 depends only on the node difference.
                let half_wrapped = |m: usize| {
                    let s = if m >= points / 2 { m as i64 - points as i64 } else { m as i64 };
                    PI * s as f64 / points as f64
                };
                for k in -kmax..=kmax {
                    let mut acc = ZERO;
                    for m in 0..points {
                        let u = 2.0 * PI * m as f64 / points as f64;
                        acc += half_wrapped(m) * C64::from_polar(1.0, k as f64 * u);
                    }
                    let c = acc / points as f64;
                    add_shift_once(&mut b, -k, k, c);
                }
            } else {
                for k in -kmax..=kmax {
                    let c = fourier(k, &|j| grid_coordinate(j, points));
                    add_shift_once(&mut b, -k, 0, c);
                }
            }
            "phi_grid"
        }
    };
    Ok(b.finish(label))
}

/// Adds c |a+da, b+db><a, b| without the Hermitian partner.
fn add_shift_once(b: &mut Builder, da: i64, db: i64, c: C64) {
    for i in 0..b.basis.dim() {
        let (a, t) = b.basis.charges(i);
        if let Some(j) = b.basis.index(a + da, t + db) {
            b.m[(j, i)] += c;
        }
    }
}

fn check_grid(points: usize, basis: &Basis) -> Result<()> {
    if !points.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("grid size {points} is not a power of two")));
    }
    if points < 2 * (4 * basis.cutoff + 1) {
        return Err(Error::InvalidArgument(format!(
            "grid size {points} aliases charge differences up to {}",
            4 * basis.cutoff
        )));
    }
    Ok(())
}

/// Grid coordinate x_j = -pi + 2 pi j / M.
pub fn grid_coordinate(j: usize, points: usize) -> f64 {
    -PI + 2.0 * PI * j as f64 / points as f64
}

/// Wavefunction sampled on a uniform grid over [-pi, pi)^2.
#[derive(Debug, Clone)]
pub struct PhaseField {
    pub points: usize,
    /// values[(i, j)] is psi at (x_i, x_j) for the two basis modes.
    pub values: Mat<C64>,
}

impl PhaseField {
    pub fn coordinate(&self, j: usize) -> f64 {
        grid_coordinate(j, self.points)
    }

    /// Area element of one grid cell.
    pub fn cell_area(&self) -> f64 {
        (2.0 * PI / self.points as f64).powi(2)
    }

    /// sum |psi|^2 dA
    pub fn total_probability(&self) -> f64 {
        let mut s = 0.0;
        for j in 0..self.points {
            for i in 0..self.points {
                s += self.values[(i, j)].norm_sqr();
            }
        }
        s * self.cell_area()
    }
}

/// psi(x, y) = sum c_{a,b} e^{i a x} e^{i b y} / (2 pi) on the grid.
pub fn to_phase_grid(state: &[C64], basis: &Basis, points: usize) -> Result<PhaseField> {
    if state.len() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: state.len() });
    }
    if points == 0 {
        return Err(Error::InvalidArgument("grid size must be positive".into()));
    }
    let d = basis.dim_per_mode();
    let n = basis.cutoff as i64;
    let coeffs = Mat::<C64>::from_fn(d, d, |a, b| state[a * d + b]);
    let e = Mat::<C64>::from_fn(points, d, |j, a| {
        C64::from_polar(1.0, (a as i64 - n) as f64 * grid_coordinate(j, points))
    });
    let mut values = &e * &coeffs * e.transpose();
    let inv = 1.0 / (2.0 * PI);
    for j in 0..points {
        for i in 0..points {
            values[(i, j)] *= inv;
        }
    }
    Ok(PhaseField { points, values })
}

/// Shunted two-island coupling convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingConvention {
    /// 8 E_C C_g / (C + 2 C_g), from inverting the capacitance matrix.
    Exact,
    /// 4 E_C C_g / (C + C_g).
    AsPrinted,
}

/// Two node-basis qubits coupled capacitively through island 1 of each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledSpec {
    pub qubit1: CircuitSpec,
    pub qubit2: CircuitSpec,
    /// C_g / C
    pub cg_ratio: f64,
    #[serde(default = "exact")]
    pub convention: CouplingConvention,
    /// Per-qubit levels kept before forming the product space.
    #[serde(default = "default_levels")]
    pub levels_per_qubit: usize,
}

fn exact() -> CouplingConvention {
    CouplingConvention::Exact
}

fn default_levels() -> usize {
    12
}

/// Default two-qubit external phase.
pub const COUPLED_PHI_EXT: f64 = 0.99 * PI;
/// Default node-basis cutoff for each coupled qubit.
pub const COUPLED_CUTOFF: usize = 9;

impl CoupledSpec {
    /// Identical qubits at the given barrier ratios with C_g/C = `cg_ratio`.
    pub fn symmetric(alpha1: f64, alpha2: f64, cg_ratio: f64) -> Self {
        let q = |a| CircuitSpec::node_basis(a, COUPLED_PHI_EXT).with_cutoff(COUPLED_CUTOFF);
        Self {
            qubit1: q(alpha1),
            qubit2: q(alpha2),
            cg_ratio,
            convention: CouplingConvention::Exact,
            levels_per_qubit: default_levels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for q in [&self.qubit1, &self.qubit2] {
            if q.variant != Variant::NodeBasis {
                return Err(Error::InvalidSpec("coupled qubits must use the node basis".into()));
            }
            q.validate()?;
        }
        if !(self.cg_ratio.is_finite() && self.cg_ratio >= 0.0) {
            return Err(Error::InvalidSpec("cg_ratio must be non-negative".into()));
        }
        if self.levels_per_qubit < 2 {
            return Err(Error::InvalidSpec("levels_per_qubit must be at least 2".into()));
        }
        Ok(())
    }

    /// Charging multiplier on the coupled island: (C + C_g)/(C + 2 C_g).
    pub fn island_scale(&self) -> f64 {
        (1.0 + self.cg_ratio) / (1.0 + 2.0 * self.cg_ratio)
    }

    /// Coefficient kappa of kappa n1 n3 (GHz), from qubit 1's E_C.
    pub fn coupling_prefactor(&self) -> f64 {
        let (ec, r) = (self.qubit1.ec, self.cg_ratio);
        match self.convention {
            CouplingConvention::Exact => 8.0 * ec * r / (1.0 + 2.0 * r),
            CouplingConvention::AsPrinted => 4.0 * ec * r / (1.0 + r),
        }
    }

    /// Qubit specs with the renormalized island charging applied.
    pub fn dressed_qubits(&self) -> (CircuitSpec, CircuitSpec) {
        let s = self.island_scale();
        let mut q1 = self.qubit1.clone();
        let mut q2 = self.qubit2.clone();
        q1.node1_charging_scale = s;
        q2.node1_charging_scale = s;
        (q1, q2)
    }

    pub fn with_alphas(&self, alpha1: f64, alpha2: f64) -> Self {
        let mut c = self.clone();
        c.qubit1.alpha = Some(alpha1);
        c.qubit2.alpha = Some(alpha2);
        c
    }
}
