//! Config-driven front end for dsfq: named experiments, a bounded worker
//! pool over sweep points, CSV tables and a reproducibility manifest.

pub mod config;
pub mod experiments;
pub mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, SCHEMA_VERSION};
use crate::experiments::Runner;
use crate::output::{sha256_hex, FailureReport, Manifest, Status, TableSink};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "DSFQ_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}{source}", point.map(|p| format!("sweep point {p}: ")).unwrap_or_default())]
    Compute { point: Option<usize>, source: dsfq::Error },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_VALIDATION,
            RunError::Compute { source, .. } => match source {
                dsfq::Error::InvalidSpec(_)
                | dsfq::Error::MissingField { .. }
                | dsfq::Error::UnsupportedOperator(_)
                | dsfq::Error::InvalidArgument(_) => EXIT_VALIDATION,
                _ => EXIT_NUMERICAL,
            },
            RunError::Io(_) => EXIT_IO,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_VALIDATION => "validation",
            EXIT_NUMERICAL => "numerical",
            _ => "io",
        }
    }

    pub fn report(&self) -> FailureReport {
        let point = match self {
            RunError::Compute { point, .. } => *point,
            _ => None,
        };
        FailureReport { kind: self.kind(), message: self.to_string(), point }
    }
}

/// Worker count: explicit value, then the config, then `DSFQ_WORKERS`, then
/// the available parallelism.
pub fn resolve_workers(flag: Option<usize>, cfg: &ExperimentConfig) -> Result<usize, ConfigError> {
    if let Some(n) = flag.or(cfg.workers) {
        return if n == 0 {
            Err(ConfigError::Invalid { field: "workers".into(), message: "must be at least 1".into() })
        } else {
            Ok(n)
        };
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ConfigError::Invalid {
                field: WORKERS_ENV.into(),
                message: format!("expected a positive integer, got {v:?}"),
            }),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn resolve_output(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()))
}

/// What `run --dry-run` reports.
#[derive(Debug, Serialize)]
pub struct Plan {
    pub experiment: String,
    pub config_sha256: String,
    pub output: PathBuf,
    pub workers: usize,
    pub points: usize,
    pub files: Vec<String>,
}

pub fn plan(cfg: &ExperimentConfig, output: PathBuf, workers: usize) -> Plan {
    let mut files: Vec<String> = experiments::tables(cfg).into_iter().map(|t| t.file).collect();
    files.push(output::MANIFEST.into());
    Plan {
        experiment: cfg.experiment.name().into(),
        config_sha256: config_hash(cfg),
        output,
        workers,
        points: cfg.points(),
        files,
    }
}

/// SHA-256 of the canonical (defaults-filled) config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.canonical_json().as_bytes())
}

/// A failed run, with the manifest written for its partial results when the
/// output directory was usable.
#[derive(Debug)]
pub struct RunFailure {
    pub error: RunError,
    pub manifest: Option<Manifest>,
}

/// Runs `cfg` into `dir` with `workers` threads.
///
/// Linear algebra is pinned to one thread per sweep point, so the data files
/// do not depend on the worker count.
pub fn run(cfg: &ExperimentConfig, dir: &Path, workers: usize) -> Result<Manifest, RunFailure> {
    let fail = |error: RunError| RunFailure { error, manifest: None };
    let t0 = Instant::now();
    faer::set_global_parallelism(faer::Par::Seq);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| fail(RunError::Io(std::io::Error::other(e))))?;
    let sink = TableSink::create(dir, experiments::tables(cfg)).map_err(|e| fail(e.into()))?;
    let mut manifest = Manifest {
        status: Status::Partial,
        tool: "dsfq",
        version: VERSION,
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.name().into(),
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        workers,
        points_total: cfg.points(),
        points_done: 0,
        config: serde_json::to_value(cfg).expect("config serializes"),
        files: Vec::new(),
        timings_s: BTreeMap::new(),
        oracles: Vec::new(),
        error: None,
    };
    manifest.write(dir).map_err(|e| fail(e.into()))?;
    let mut runner = Runner { sink, chunk: workers, points_done: 0, timings: Vec::new() };
    let outcome = pool.install(|| experiments::execute(cfg, &mut runner));
    let Runner { sink, points_done, timings, .. } = runner;
    manifest.points_done = points_done;
    manifest.timings_s = timings.into_iter().collect();
    manifest.timings_s.insert("total".into(), t0.elapsed().as_secs_f64());
    let files = sink.finish();
    match (outcome, files) {
        (Ok(oracles), Ok(files)) => {
            manifest.status = Status::Complete;
            manifest.oracles = oracles;
            manifest.files = files;
            manifest.write(dir).map_err(|e| fail(e.into()))?;
            Ok(manifest)
        }
        (Err(error), files) => {
            manifest.files = files.unwrap_or_default();
            manifest.error = Some(error.report());
            let written = manifest.write(dir).is_ok();
            Err(RunFailure { error, manifest: written.then_some(manifest) })
        }
        (Ok(_), Err(e)) => {
            let error = RunError::Io(e);
            manifest.error = Some(error.report());
            let written = manifest.write(dir).is_ok();
            Err(RunFailure { error, manifest: written.then_some(manifest) })
        }
    }
}
