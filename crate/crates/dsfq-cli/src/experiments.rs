//! The eight named experiments: table layout, per-point work and the
//! built-in oracles reported in the manifest.

use std::f64::consts::PI;
use std::time::Instant;

use dsfq::evolve::{two_qubit_alpha_min, FRAME_CACHE_STEP};
use dsfq::gates::{
    calibrate_drive_with, entangling_power, fsim, linear_entropy, rotation, zz_strength, GateOptions,
    SingleQubitGate, TwoQubitGate,
};
use dsfq::gradiometric::{compensation_delta, global_slope, omega_at_global_flux};
use dsfq::readout::dispersive_shift;
use dsfq::spectrum::solve;
use dsfq::{coherence, qubit_params, CircuitSpec, Complex64, Error, LoopGeometry, Mat, PropagationSettings, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Grid, Params};
use crate::output::{bare, col, Cell, Column, OracleOutcome, Row, TableSink, TableSpec};
use crate::RunError;

/// Cutoff increment used by the truncation oracles.
const CUTOFF_STEP: usize = 2;
const CUTOFF_TOLERANCE_GHZ: f64 = 1e-6;

/// Tables of every experiment, in the order they are written.
pub fn tables(cfg: &ExperimentConfig) -> Vec<TableSpec> {
    match &cfg.params {
        Params::Spectrum(_) => vec![TableSpec::new(
            "spectrum_vs_alpha.csv",
            vec![bare("alpha"), col("omega_q", "GHz"), col("anharmonicity", "GHz")],
        )],
        Params::Flux(_) => vec![TableSpec::new(
            "flux_dispersion.csv",
            vec![col("phi_ext", "rad"), bare("phi_ext_over_2pi"), col("omega_q", "GHz")],
        )],
        Params::Coherence(_) => vec![
            TableSpec::new(
                "coherence_vs_alpha.csv",
                vec![bare("alpha"), col("omega_q", "GHz"), col("T1", "us"), col("Tphi", "us"), col("T2", "us")],
            ),
            TableSpec::new(
                "coherence_channels.csv",
                vec![bare("alpha"), bare("channel"), col("gamma1", "per_ns"), col("gammaphi", "per_ns")],
            ),
        ],
        Params::Gradiometric(_) => vec![
            TableSpec::new(
                "gradiometric_dispersion.csv",
                vec![
                    col("global_flux", "Phi0"),
                    col("omega_q_identical", "GHz"),
                    col("omega_q_asymmetric", "GHz"),
                    col("omega_q_compensated", "GHz"),
                ],
            ),
            TableSpec::new(
                "gradiometric_slopes.csv",
                vec![
                    bare("case"),
                    bare("area_asymmetry"),
                    bare("delta"),
                    col("operating_flux", "Phi0"),
                    col("slope", "GHz_per_Phi0"),
                ],
            ),
        ],
        Params::SingleQubit(_) => {
            let mut traj = vec![bare("gate"), col("time", "ns"), bare("alpha")];
            traj.extend((0..PropagationSettings::single_qubit().spectral_levels).map(|j| bare(format!("weight_{j}"))));
            vec![
                TableSpec::new(
                    "single_qubit_gate.csv",
                    vec![
                        bare("gate"),
                        col("gate_time", "ns"),
                        col("amplitude", "GHz"),
                        col("rabi_amplitude", "GHz"),
                        col("carrier", "GHz"),
                        bare("coherent_fidelity"),
                        bare("state_fidelity"),
                        bare("leakage"),
                        bare("t1_limited_fidelity"),
                        bare("step_doubling_deviation"),
                        bare("evaluations"),
                    ],
                ),
                TableSpec::new("single_qubit_trajectory.csv", traj),
            ]
        }
        Params::TwoQubit(p) => {
            let grid = |file: &str, q: &str, unit: Option<&'static str>| {
                let mut cols = vec![col("t_a", "ns")];
                cols.extend(p.t_w_ns.values().iter().map(|w| Column { name: format!("{q}_at_t_w_{w}ns"), unit }));
                TableSpec::new(file, cols)
            };
            vec![
                TableSpec::new(
                    "two_qubit_map.csv",
                    vec![
                        col("t_a", "ns"),
                        col("t_w", "ns"),
                        col("gate_time", "ns"),
                        bare("alpha_min"),
                        col("theta_swap", "rad"),
                        col("phi_cphase", "rad"),
                        bare("fsim_residual"),
                        bare("entangling_power"),
                        bare("coherent_fidelity"),
                        bare("leakage"),
                        bare("t1_limited_fidelity"),
                    ],
                ),
                grid("entangling_power.csv", "entangling_power", None),
                grid("phi_cphase.csv", "phi_cphase", Some("rad")),
                grid("theta_swap.csv", "theta_swap", Some("rad")),
            ]
        }
        Params::Zz(_) => vec![TableSpec::new(
            "zz_map.csv",
            vec![bare("alpha1"), bare("alpha2"), col("zeta_zz", "GHz"), bare("min_identification_overlap")],
        )],
        Params::Dispersive(_) => vec![TableSpec::new(
            "dispersive_shift_sweep.csv",
            vec![
                col("phi_ext", "rad"),
                bare("phi_ext_over_pi"),
                col("omega_q", "GHz"),
                col("chi", "GHz"),
                col("delta", "GHz"),
                bare("dispersive_valid"),
            ],
        )],
    }
}

/// Streams sweep points in chunks of `chunk` through the single table
/// writer, keeping sweep order regardless of worker count.
pub struct Runner {
    pub sink: TableSink,
    pub chunk: usize,
    pub points_done: usize,
    pub timings: Vec<(String, f64)>,
}

impl Runner {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T, RunError>) -> Result<T, RunError> {
        let t0 = Instant::now();
        let out = f(self);
        self.timings.push((name.into(), t0.elapsed().as_secs_f64()));
        out
    }

    /// Evaluates `f` on 0..n and hands each result, in order, to `emit`.
    /// On the first failing point the rows before it are flushed and the
    /// failure is returned.
    fn sweep<T: Send>(
        &mut self,
        n: usize,
        f: impl Fn(usize) -> dsfq::Result<T> + Sync,
        mut emit: impl FnMut(&mut TableSink, usize, &T) -> std::io::Result<()>,
    ) -> Result<Vec<T>, RunError> {
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + self.chunk).min(n);
            let results: Vec<dsfq::Result<T>> = (start..end).into_par_iter().map(&f).collect();
            for (i, r) in (start..).zip(results) {
                match r {
                    Ok(v) => {
                        emit(&mut self.sink, i, &v)?;
                        self.points_done += 1;
                        out.push(v);
                    }
                    Err(source) => {
                        self.sink.flush()?;
                        return Err(RunError::Compute { point: Some(i), source });
                    }
                }
            }
            self.sink.flush()?;
            start = end;
        }
        Ok(out)
    }
}

fn compute_err(source: Error) -> RunError {
    RunError::Compute { point: None, source }
}

fn with_alpha(spec: &CircuitSpec, alpha: f64) -> CircuitSpec {
    let mut s = spec.clone();
    match s.variant {
        Variant::Gradiometric => {
            let (a1, a2) = s.alphas().unwrap_or((1.0, 1.0));
            let ratio = if a1 != 0.0 { a2 / a1 } else { 1.0 };
            s.alpha1 = Some(alpha);
            s.alpha2 = Some(alpha * ratio);
        }
        _ => s.alpha = Some(alpha),
    }
    s
}

fn with_phi(spec: &CircuitSpec, phi: f64) -> CircuitSpec {
    let mut s = spec.clone();
    s.phi_ext = Some(phi);
    s
}

fn omega_q(spec: &CircuitSpec) -> dsfq::Result<f64> {
    let sol = solve(spec, 2)?;
    Ok(sol.energies[1] - sol.energies[0])
}

/// |omega_q(cutoff) - omega_q(cutoff + 2)| at each spec.
fn cutoff_oracle(specs: &[CircuitSpec]) -> Result<OracleOutcome, RunError> {
    let worst = specs
        .par_iter()
        .map(|s| {
            let coarse = omega_q(s)?;
            let fine = omega_q(&s.clone().with_cutoff(s.cutoff + CUTOFF_STEP))?;
            Ok((coarse - fine).abs())
        })
        .collect::<dsfq::Result<Vec<f64>>>()
        .map_err(compute_err)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(OracleOutcome::at_most(
        "cutoff_convergence_GHz",
        worst,
        CUTOFF_TOLERANCE_GHZ,
        format!("omega_q change when the charge cutoff grows by {CUTOFF_STEP}, worst grid endpoint"),
    ))
}

fn endpoints(g: &Grid) -> Vec<f64> {
    if g.points == 1 {
        vec![g.start]
    } else {
        vec![g.start, g.stop]
    }
}

/// Largest mismatch between row i and its mirror n - 1 - i when the grid is
/// symmetric about `centre`.
fn mirror_gap(grid: &Grid, centre: f64, ys: &[f64]) -> Option<f64> {
    if grid.points < 2 || ((grid.start + grid.stop) - 2.0 * centre).abs() > 1e-12 {
        return None;
    }
    let n = ys.len();
    Some((0..n / 2).map(|i| (ys[i] - ys[n - 1 - i]).abs()).fold(0.0, f64::max))
}

/// Runs the configured experiment; returns the oracle outcomes.
pub fn execute(cfg: &ExperimentConfig, run: &mut Runner) -> Result<Vec<OracleOutcome>, RunError> {
    let spec = &cfg.circuit;
    match &cfg.params {
        Params::Spectrum(p) => {
            let alphas = p.alpha.values();
            run.stage("sweep", |r| {
                r.sweep(
                    alphas.len(),
                    |i| qubit_params(&solve(&with_alpha(spec, alphas[i]), 3)?),
                    |s, i, q| s.write(0, &[alphas[i].into(), q.omega_q.into(), q.anharmonicity.into()]),
                )
            })?;
            let ends: Vec<_> = endpoints(&p.alpha).into_iter().map(|a| with_alpha(spec, a)).collect();
            Ok(vec![run.stage("oracles", |_| cutoff_oracle(&ends))?])
        }
        Params::Flux(p) => {
            let phis: Vec<f64> = p.phi_ext_over_pi.values().iter().map(|x| x * PI).collect();
            let omegas = run.stage("sweep", |r| {
                r.sweep(
                    phis.len(),
                    |i| omega_q(&with_phi(spec, phis[i])),
                    |s, i, w| s.write(0, &[phis[i].into(), (phis[i] / (2.0 * PI)).into(), (*w).into()]),
                )
            })?;
            let mut oracles = Vec::new();
            if spec.ng_phi == 0.0 && spec.ng_theta == 0.0 {
                if let Some(gap) = mirror_gap(&p.phi_ext_over_pi, 1.0, &omegas) {
                    oracles.push(OracleOutcome::at_most(
                        "half_flux_mirror_symmetry_GHz",
                        gap,
                        1e-8,
                        "omega_q(pi + d) vs omega_q(pi - d) on the mirrored grid",
                    ));
                }
            }
            let ends: Vec<_> = endpoints(&p.phi_ext_over_pi).into_iter().map(|x| with_phi(spec, x * PI)).collect();
            oracles.push(run.stage("oracles", |_| cutoff_oracle(&ends))?);
            Ok(oracles)
        }
        Params::Coherence(p) => {
            let alphas = p.alpha.values();
            let reports = run.stage("sweep", |r| {
                r.sweep(
                    alphas.len(),
                    |i| coherence(&with_alpha(spec, alphas[i]), &p.channels, &p.environment),
                    |s, i, rep| {
                        let a = alphas[i];
                        s.write(0, &[a.into(), rep.omega_q.into(), rep.t1.into(), rep.tphi.into(), rep.t2.into()])?;
                        for ((kind, g1), (_, gphi)) in rep.gamma1_by_channel.iter().zip(&rep.gammaphi_by_channel) {
                            s.write(1, &[a.into(), kind.name().into(), (*g1).into(), (*gphi).into()])?;
                        }
                        Ok(())
                    },
                )
            })?;
            // 1/T2 = 1/(2 T1) + 1/Tphi, checked from the per-channel rates
            let worst = reports
                .iter()
                .map(|r| {
                    let g1: f64 = r.gamma1_by_channel.iter().map(|c| c.1).sum();
                    let gp: f64 = r.gammaphi_by_channel.iter().map(|c| c.1).sum();
                    let want = 0.5 * g1 + gp;
                    let got = 1.0 / (r.t2 * dsfq::units::NS_PER_US);
                    if want > 0.0 { ((got - want) / want).abs() } else { 0.0 }
                })
                .fold(0.0, f64::max);
            Ok(vec![OracleOutcome::at_most(
                "t2_rate_identity_rel",
                worst,
                1e-12,
                "1/T2 against half the relaxation rate plus the dephasing rate",
            )])
        }
        Params::Gradiometric(p) => {
            let r = p.area_asymmetry;
            let delta = match p.delta {
                Some(d) => d,
                None => compensation_delta(r).map_err(compute_err)?.exact,
            };
            let (a1, _) = spec.alphas().map_err(compute_err)?;
            let mut comp = spec.clone();
            comp.alpha2 = Some((1.0 + delta) * a1);
            let cases = [
                ("identical", spec.clone(), 0.0, 0.0),
                ("asymmetric", spec.clone(), r, 0.0),
                ("compensated", comp, r, delta),
            ];
            let fluxes = p.global_flux.values();
            run.stage("sweep", |rn| {
                rn.sweep(
                    fluxes.len(),
                    |i| {
                        cases
                            .iter()
                            .map(|(_, s, r, _)| omega_at_global_flux(s, &LoopGeometry::with_asymmetry(*r, 0.5), fluxes[i]))
                            .collect::<dsfq::Result<Vec<f64>>>()
                    },
                    |s, i, w| s.write(0, &[fluxes[i].into(), w[0].into(), w[1].into(), w[2].into()]),
                )
            })?;
            run.stage("oracles", |rn| {
                let slopes = cases
                    .par_iter()
                    .map(|(_, s, r, _)| {
                        let g = LoopGeometry::with_asymmetry(*r, 0.5);
                        let at = g.sweet_spot_flux();
                        Ok((at, global_slope(s, &g, at)?))
                    })
                    .collect::<dsfq::Result<Vec<_>>>()
                    .map_err(compute_err)?;
                for ((name, _, r, d), (at, slope)) in cases.iter().zip(&slopes) {
                    rn.sink.write(1, &[(*name).into(), (*r).into(), (*d).into(), (*at).into(), (*slope).into()])?;
                }
                let mut oracles = vec![OracleOutcome::at_most(
                    "identical_loops_slope_GHz_per_Phi0",
                    slopes[0].1.abs(),
                    1e-6,
                    "|d omega_q / d Phi_G| at the sweet spot, identical loops",
                )];
                if r != 0.0 {
                    oracles.push(OracleOutcome::at_most(
                        "compensated_slope_GHz_per_Phi0",
                        slopes[2].1.abs(),
                        1e-5,
                        format!("|d omega_q / d Phi_G| at r = {r}, delta = {delta}"),
                    ));
                }
                Ok(oracles)
            })
        }
        Params::SingleQubit(p) => {
            let profile = p.profile().map_err(compute_err)?;
            let settings = PropagationSettings::single_qubit().with_steps(p.steps_per_ns);
            let options = GateOptions { settings, channels: p.channels.clone(), env: p.environment, decay_sample: 0.5 };
            let gate = run.stage("setup", |_| SingleQubitGate::new(spec, &profile, options).map_err(compute_err))?;
            let ground = gate.system.eigen(1.0, 1).map_err(compute_err)?.state(0);
            let rows = run.stage("sweep", |r| {
                r.sweep(
                    p.gates.len(),
                    |i| {
                        let axis = p.gates[i];
                        let mut template = p.template(axis);
                        template.carrier_freq = p.carrier_ratio * gate.plateau_frequency(&profile, &template)?;
                        let cal = calibrate_drive_with(&gate, &profile, &template, PI, None, p.refinement, &settings)?;
                        let target = rotation(PI, axis.phase_offset());
                        let report = gate.run(&profile, &cal.pulse, &target)?;
                        let (traj, _) = gate.system.propagate(
                            &profile,
                            Some(&cal.pulse),
                            std::slice::from_ref(&ground),
                            &settings.with_samples(p.sample_every_ns),
                        )?;
                        Ok((cal, report, traj))
                    },
                    |s, i, (cal, rep, traj)| {
                        let name = p.gates[i].name();
                        s.write(
                            0,
                            &[
                                name.into(),
                                rep.gate_time.into(),
                                cal.pulse.amplitude.into(),
                                cal.rabi_amplitude.into(),
                                cal.pulse.carrier_freq.into(),
                                rep.coherent_fidelity.into(),
                                rep.state_fidelity.unwrap_or(f64::NAN).into(),
                                rep.leakage.into(),
                                rep.t1_limited_fidelity.into(),
                                cal.step_doubling_deviation.into(),
                                cal.evaluations.into(),
                            ],
                        )?;
                        for (t, w) in traj.times.iter().zip(&traj.spectral_weights) {
                            let mut row: Row = vec![name.into(), (*t).into(), profile.alpha(*t).into()];
                            row.extend((0..settings.spectral_levels).map(|j| Cell::F(w.get(j).copied().unwrap_or(f64::NAN))));
                            s.write(1, &row)?;
                        }
                        Ok(())
                    },
                )
            })?;
            let mut oracles = Vec::new();
            for (axis, (cal, rep, _)) in p.gates.iter().zip(&rows) {
                oracles.push(OracleOutcome::at_most(
                    &format!("step_doubling_{}", axis.name()),
                    cal.step_doubling_deviation,
                    1e-6,
                    format!("max |U(n) - U(2n)| at {} steps/ns", p.steps_per_ns),
                ));
                oracles.push(OracleOutcome::at_most(
                    &format!("leakage_{}", axis.name()),
                    rep.leakage,
                    1e-3,
                    "population left outside the qubit subspace",
                ));
            }
            Ok(oracles)
        }
        Params::TwoQubit(p) => {
            let coupled = cfg.coupled(&p.coupling);
            let t_as = p.t_a_ns.values();
            let t_ws = p.t_w_ns.values();
            let floor = (two_qubit_alpha_min(p.t_a_ns.start.max(p.t_a_ns.stop)) - FRAME_CACHE_STEP)
                .clamp(dsfq::evolve::ALPHA_FLOOR, 1.0 - FRAME_CACHE_STEP);
            let settings = PropagationSettings::two_qubit().with_steps(p.steps_per_ns);
            let options = GateOptions {
                settings: PropagationSettings { subspace_k: p.subspace_k, ..settings },
                channels: p.channels.clone(),
                env: p.environment,
                decay_sample: 0.5,
            };
            let gate = run.stage("setup", |_| TwoQubitGate::new(&coupled, floor, options).map_err(compute_err))?;
            let nw = t_ws.len();
            let points = run.stage("sweep", |r| {
                r.sweep(
                    t_as.len() * nw,
                    |i| {
                        let (t_a, t_w) = (t_as[i / nw], t_ws[i % nw]);
                        match gate.run(t_a, t_w) {
                            Ok(rep) => {
                                let fs = rep.fsim.expect("two-qubit reports carry fSim angles");
                                let ep = entangling_power(&fsim(fs.theta, fs.phi))?;
                                Ok(MapPoint {
                                    theta: fs.theta,
                                    phi: fs.phi,
                                    residual: fs.residual,
                                    entangling_power: ep,
                                    coherent_fidelity: rep.coherent_fidelity,
                                    leakage: rep.leakage,
                                    t1_limited_fidelity: rep.t1_limited_fidelity,
                                })
                            }
                            Err(Error::ExcessiveLeakage(leak)) => Ok(MapPoint::leaky(leak)),
                            Err(e) => Err(e),
                        }
                    },
                    |s, i, m| {
                        let (t_a, t_w) = (t_as[i / nw], t_ws[i % nw]);
                        s.write(
                            0,
                            &[
                                t_a.into(),
                                t_w.into(),
                                (t_a + t_w).into(),
                                two_qubit_alpha_min(t_a).into(),
                                m.theta.into(),
                                m.phi.into(),
                                m.residual.into(),
                                m.entangling_power.into(),
                                m.coherent_fidelity.into(),
                                m.leakage.into(),
                                m.t1_limited_fidelity.into(),
                            ],
                        )
                    },
                )
            })?;
            run.stage("oracles", |r| {
                for (table, pick) in [
                    (1, (|m: &MapPoint| m.entangling_power) as fn(&MapPoint) -> f64),
                    (2, |m: &MapPoint| m.phi),
                    (3, |m: &MapPoint| m.theta),
                ] {
                    for (ia, t_a) in t_as.iter().enumerate() {
                        let mut row: Row = vec![(*t_a).into()];
                        row.extend(points[ia * nw..(ia + 1) * nw].iter().map(|m| Cell::F(pick(m))));
                        r.sink.write(table, &row)?;
                    }
                }
                let leaky = points.iter().filter(|m| m.coherent_fidelity.is_nan()).count();
                let mut oracles = vec![
                    OracleOutcome::at_least(
                        "computational_identification_overlap",
                        gate.comp_weights.iter().copied().fold(f64::INFINITY, f64::min),
                        0.9,
                        format!(
                            "weight of each alpha = 1 frame state on its bare product; smallest frame-tracking overlap {:.3}",
                            gate.cache.min_tracking_overlap
                        ),
                    ),
                    OracleOutcome::at_most(
                        "points_over_leakage_limit",
                        leaky as f64,
                        0.0,
                        format!("schedules leaking more than {} of the subspace", dsfq::gates::MAX_LEAKAGE),
                    ),
                ];
                if p.monte_carlo_samples > 0 {
                    if let Some(best) = points
                        .iter()
                        .filter(|m| !m.coherent_fidelity.is_nan())
                        .max_by(|a, b| a.entangling_power.total_cmp(&b.entangling_power))
                    {
                        let u = fsim(best.theta, best.phi);
                        let mc = monte_carlo_entangling_power(&u, p.monte_carlo_samples, cfg.seed);
                        oracles.push(OracleOutcome::at_most(
                            "entangling_power_monte_carlo",
                            (mc - best.entangling_power).abs(),
                            1e-3,
                            format!(
                                "{} Haar product samples, seed {}, at the most entangling grid point",
                                p.monte_carlo_samples, cfg.seed
                            ),
                        ));
                    }
                }
                Ok(oracles)
            })
        }
        Params::Zz(p) => {
            let coupled = cfg.coupled(&p.coupling);
            let a1s = p.alpha1.values();
            let a2s = p.alpha2.values();
            let n2 = a2s.len();
            let results = run.stage("sweep", |r| {
                r.sweep(
                    a1s.len() * n2,
                    |i| zz_strength(&coupled, a1s[i / n2], a2s[i % n2]),
                    |s, i, z| {
                        let ov = z.overlaps.iter().copied().fold(f64::INFINITY, f64::min);
                        s.write(0, &[a1s[i / n2].into(), a2s[i % n2].into(), z.zeta.into(), ov.into()])
                    },
                )
            })?;
            let min_ov = results.iter().flat_map(|z| z.overlaps).fold(f64::INFINITY, f64::min);
            let mut oracles = vec![OracleOutcome::at_least(
                "computational_identification_overlap",
                min_ov,
                0.5,
                "weight of each identified level on its bare product state",
            )];
            if p.alpha1 == p.alpha2 {
                let worst = (0..a1s.len())
                    .flat_map(|i| (0..n2).map(move |j| (i, j)))
                    .map(|(i, j)| (results[i * n2 + j].zeta - results[j * n2 + i].zeta).abs())
                    .fold(0.0, f64::max);
                oracles.push(OracleOutcome::at_most(
                    "exchange_symmetry_GHz",
                    worst,
                    1e-9,
                    "zeta(a, b) against zeta(b, a) for identical qubits",
                ));
            }
            Ok(oracles)
        }
        Params::Dispersive(p) => {
            let phis: Vec<f64> = p.phi_ext_over_pi.values().iter().map(|x| x * PI).collect();
            run.stage("sweep", |r| {
                r.sweep(
                    phis.len(),
                    |i| {
                        let s = with_phi(spec, phis[i]);
                        Ok((omega_q(&s)?, dispersive_shift(&s, &p.resonator, p.levels)?))
                    },
                    |s, i, (w, d)| {
                        s.write(
                            0,
                            &[
                                phis[i].into(),
                                (phis[i] / PI).into(),
                                (*w).into(),
                                d.chi.into(),
                                d.delta.into(),
                                d.valid.into(),
                            ],
                        )
                    },
                )
            })?;
            let last = with_phi(spec, p.phi_ext_over_pi.stop * PI);
            let levels_extra = p.levels + 10;
            run.stage("oracles", |_| {
                let a = dispersive_shift(&last, &p.resonator, p.levels).map_err(compute_err)?.chi;
                let b = dispersive_shift(&last, &p.resonator, levels_extra).map_err(compute_err)?.chi;
                let rel = if b != 0.0 { ((a - b) / b).abs() } else { (a - b).abs() };
                Ok(vec![OracleOutcome::at_most(
                    "chi_level_convergence_rel",
                    rel,
                    0.01,
                    format!("chi with {} vs {} levels at the last grid point", p.levels, levels_extra),
                )])
            })
        }
    }
}

struct MapPoint {
    theta: f64,
    phi: f64,
    residual: f64,
    entangling_power: f64,
    coherent_fidelity: f64,
    leakage: f64,
    t1_limited_fidelity: f64,
}

impl MapPoint {
    fn leaky(leakage: f64) -> Self {
        let nan = f64::NAN;
        Self {
            theta: nan,
            phi: nan,
            residual: nan,
            entangling_power: nan,
            coherent_fidelity: nan,
            leakage,
            t1_limited_fidelity: nan,
        }
    }
}

/// Mean linear entropy over Haar product inputs, normalized like
/// [`entangling_power`].
pub fn monte_carlo_entangling_power(u: &Mat<Complex64>, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qubit = || {
        let z: f64 = rng.gen();
        let ph = 2.0 * PI * rng.gen::<f64>();
        [Complex64::new(z.sqrt(), 0.0), Complex64::from_polar((1.0 - z).sqrt(), ph)]
    };
    let mut acc = 0.0;
    for _ in 0..samples {
        let (a, b) = (qubit(), qubit());
        let input = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]];
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|j| u[(i, j)] * input[j]).sum();
        }
        acc += linear_entropy(&out);
    }
    acc / samples as f64 / (2.0 / 9.0)
}
