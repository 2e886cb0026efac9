//! Hermitian eigensolutions with gauge continuity and derived qubit numbers.

use std::str::FromStr;

use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{build_hamiltonian, Basis, CircuitSpec, HermitianOperator};
use crate::error::{Error, Result};
use crate::linalg::{self, CsrMatrix, ZERO};

/// Above this sector dimension the Lanczos path is used.
pub const DENSE_LIMIT: usize = 2000;

/// Ascending eigenvalues with gauge-fixed eigenvectors embedded in the full
/// basis (zero outside the diagonalization sector).
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub energies: Vec<f64>,
    /// dim x k, one state per column.
    pub states: Mat<C64>,
    pub basis: Basis,
    pub k: usize,
}

impl EigenSolution {
    pub fn state(&self, i: usize) -> Vec<C64> {
        linalg::column(self.states.as_ref(), i)
    }

    /// Matrix elements <i|O|j> for i, j < k.
    pub fn matrix_elements(&self, op: &HermitianOperator) -> Mat<C64> {
        let ov = &op.entries * &self.states;
        self.states.adjoint() * ov
    }

    /// max_i ||H psi_i - E_i psi_i||
    pub fn max_residual(&self, h: &HermitianOperator) -> f64 {
        let hv = &h.entries * &self.states;
        (0..self.k)
            .map(|c| {
                (0..hv.nrows())
                    .map(|r| (hv[(r, c)] - self.energies[c] * self.states[(r, c)]).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Qubit splitting and anharmonicity in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    pub omega_q: f64,
    pub anharmonicity: f64,
}

/// Makes the largest-modulus component of each column real positive.
pub(crate) fn fix_phases(states: &mut Mat<C64>) {
    for c in 0..states.ncols() {
        let mut best = 0usize;
        let mut best_mod = -1.0;
        for r in 0..states.nrows() {
            let m = states[(r, c)].norm();
            if m > best_mod * (1.0 + 1e-10) {
                best = r;
                best_mod = m;
            }
        }
        if best_mod > 0.0 {
            let phase = states[(best, c)].conj() / best_mod;
            for r in 0..states.nrows() {
                states[(r, c)] *= phase;
            }
        }
    }
}

fn degeneracy_tolerance(scale: f64) -> f64 {
    1e-10 * scale.max(1.0)
}

/// Within degenerate clusters, rotate to parity eigenstates, even first.
fn resolve_degeneracies(basis: &Basis, energies: &[f64], states: &mut Mat<C64>, tol: f64) {
    let k = energies.len();
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && energies[end] - energies[end - 1] < tol {
            end += 1;
        }
        if end - start > 1 {
            let m = end - start;
            let dim = states.nrows();
            let p = Mat::<C64>::from_fn(m, m, |i, j| {
                let mut acc = ZERO;
                for r in 0..dim {
                    acc += states[(r, start + i)].conj() * states[(basis.parity_image(r), start + j)];
                }
                acc
            });
            let p = Mat::<C64>::from_fn(m, m, |i, j| 0.5 * (p[(i, j)] + p[(j, i)].conj()));
            if let Ok((_, w)) = linalg::eigh(p.as_ref()) {
                let block = states.subcols(start, m).to_owned();
                // eigenvalues ascend, so reversed columns put parity +1 first
                for (out, col) in (0..m).rev().enumerate() {
                    for r in 0..dim {
                        let mut acc = ZERO;
                        for i in 0..m {
                            acc += block[(r, i)] * w[(i, col)];
                        }
                        states[(r, start + out)] = acc;
                    }
                }
            }
        }
        start = end;
    }
}

/// The `k` lowest eigenpairs of `h` inside its basis sector.
pub fn diagonalize(h: &HermitianOperator, k: usize) -> Result<EigenSolution> {
    h.check_hermitian()?;
    let basis = h.basis;
    let keep = basis.sector_indices();
    if k == 0 || k > keep.len() {
        return Err(Error::InvalidArgument(format!(
            "k={k} outside 1..={} for this sector",
            keep.len()
        )));
    }
    let (values, vecs) = if keep.len() <= DENSE_LIMIT {
        let sub = Mat::<C64>::from_fn(keep.len(), keep.len(), |i, j| h.entries[(keep[i], keep[j])]);
        let (w, v) = linalg::eigh(sub.as_ref())?;
        (w[..k].to_vec(), v.subcols(0, k).to_owned())
    } else {
        let csr = CsrMatrix::from_dense_restricted(h.entries.as_ref(), &keep, 0.0);
        linalg::lanczos_lowest(&csr, k, 1e-10)?
    };
    let mut states = Mat::<C64>::zeros(basis.dim(), k);
    for c in 0..k {
        for (i, &row) in keep.iter().enumerate() {
            states[(row, c)] = vecs[(i, c)];
        }
    }
    let scale = linalg::max_abs(h.entries.as_ref());
    resolve_degeneracies(&basis, &values, &mut states, degeneracy_tolerance(scale));
    fix_phases(&mut states);
    let sol = EigenSolution { energies: values, states, basis, k };
    let norm = CsrMatrix::from_dense(h.entries.as_ref(), 0.0).norm_bound();
    let res = sol.max_residual(h);
    if res > 1e-9 * norm.max(1.0) {
        return Err(Error::Eigensolver(format!("residual {res:e} exceeds 1e-9 ||H|| = {norm:e}")));
    }
    Ok(sol)
}

/// Builds and diagonalizes in one step.
pub fn solve(spec: &CircuitSpec, k: usize) -> Result<EigenSolution> {
    diagonalize(&build_hamiltonian(spec)?, k)
}

pub fn qubit_params(sol: &EigenSolution) -> Result<QubitParams> {
    if sol.k < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 levels, have {}", sol.k)));
    }
    let e = &sol.energies;
    let omega = e[1] - e[0];
    Ok(QubitParams { omega_q: omega, anharmonicity: (e[2] - e[0]) - 2.0 * omega })
}

/// Rephases (and within degenerate clusters rotates) `current` so that each
/// <ref_i|cur_i> is real positive. Energies are never touched.
pub fn align_gauge(reference: &EigenSolution, current: &EigenSolution) -> Result<EigenSolution> {
    if reference.basis != current.basis || reference.k != current.k {
        return Err(Error::InvalidArgument("align_gauge needs matching basis and k".into()));
    }
    let k = current.k;
    let dim = current.basis.dim();
    let mut out = current.clone();
    let overlaps = reference.states.adjoint() * &current.states;
    let scale = current.energies.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    let tol = degeneracy_tolerance(scale);
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && current.energies[end] - current.energies[end - 1] < tol {
            end += 1;
        }
        let m = end - start;
        if m > 1 {
            // maximize overlap with the reference block: X = polar(C^dag R)
            let block = Mat::<C64>::from_fn(m, m, |i, j| overlaps[(start + j, start + i)].conj());
            let x = linalg::polar_unitary(block.as_ref())?;
            for c in 0..m {
                for r in 0..dim {
                    let mut acc = ZERO;
                    for i in 0..m {
                        acc += current.states[(r, start + i)] * x[(i, c)];
                    }
                    out.states[(r, start + c)] = acc;
                }
            }
        }
        start = end;
    }
    for i in 0..k {
        let mut o = ZERO;
        for r in 0..dim {
            o += reference.states[(r, i)].conj() * out.states[(r, i)];
        }
        if o.norm() < 0.5 {
            return Err(Error::GaugeFailure { index: i, overlap: o.norm() });
        }
        let phase = o.conj() / o.norm();
        for r in 0..dim {
            out.states[(r, i)] *= phase;
        }
    }
    Ok(out)
}

/// Circuit field addressed by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    PhiExt,
    Alpha1,
    Alpha2,
    PhiExt1,
    PhiExt2,
    Ej,
    Ec,
    NgPhi,
    NgTheta,
}

impl FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => Self::Alpha,
            "phi_ext" => Self::PhiExt,
            "alpha1" => Self::Alpha1,
            "alpha2" => Self::Alpha2,
            "phi_ext1" => Self::PhiExt1,
            "phi_ext2" => Self::PhiExt2,
            "ej" => Self::Ej,
            "ec" => Self::Ec,
            "ng_phi" => Self::NgPhi,
            "ng_theta" => Self::NgTheta,
            _ => return Err(Error::InvalidArgument(format!("unknown sweep parameter `{s}`"))),
        })
    }
}

impl SweepParameter {
    pub fn apply(self, spec: &CircuitSpec, value: f64) -> CircuitSpec {
        let mut s = spec.clone();
        match self {
            Self::Alpha => s.alpha = Some(value),
            Self::PhiExt => s.phi_ext = Some(value),
            Self::Alpha1 => s.alpha1 = Some(value),
            Self::Alpha2 => s.alpha2 = Some(value),
            Self::PhiExt1 => s.phi_ext1 = Some(value),
            Self::PhiExt2 => s.phi_ext2 = Some(value),
            Self::Ej => s.ej = value,
            Self::Ec => s.ec = value,
            Self::NgPhi => s.ng_phi = value,
            Self::NgTheta => s.ng_theta = value,
        }
        s
    }
}

/// Quantity tabulated by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepQuantity {
    Energies,
    OmegaQ,
    Anharmonicity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// Energies (k levels), or a single omega_q / anharmonicity entry.
    pub values: Vec<f64>,
    /// |<prev_i|cur_i>| minimum after alignment; None for the first row or
    /// when alignment failed.
    pub min_overlap: Option<f64>,
}

/// Diagonalizes at every value in parallel, then stitches the gauge
/// sequentially along the sweep.
pub fn sweep(
    spec: &CircuitSpec,
    parameter: SweepParameter,
    values: &[f64],
    quantity: SweepQuantity,
    k: usize,
) -> Result<Vec<SweepRow>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sweep values must be finite".into()));
    }
    let k = match quantity {
        SweepQuantity::Energies => k.max(1),
        _ => k.max(3),
    };
    let sols: Vec<EigenSolution> = values
        .par_iter()
        .map(|&v| solve(&parameter.apply(spec, v), k))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(values.len());
    let mut prev: Option<EigenSolution> = None;
    for (sol, &v) in sols.into_iter().zip(values) {
        let (sol, min_overlap) = match &prev {
            Some(p) => match align_gauge(p, &sol) {
                Ok(aligned) => {
                    let ov = p.states.adjoint() * &aligned.states;
                    let m = (0..k).map(|i| ov[(i, i)].norm()).fold(f64::INFINITY, f64::min);
                    (aligned, Some(m))
                }
                Err(_) => (sol, None),
            },
            None => (sol, None),
        };
        let row_values = match quantity {
            SweepQuantity::Energies => sol.energies.clone(),
            SweepQuantity::OmegaQ => vec![qubit_params(&sol)?.omega_q],
            SweepQuantity::Anharmonicity => vec![qubit_params(&sol)?.anharmonicity],
        };
        rows.push(SweepRow { value: v, values: row_values, min_overlap });
        prev = Some(sol);
    }
    Ok(rows)
}
