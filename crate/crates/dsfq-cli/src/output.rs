//! Result tables, the run manifest and the PARTIAL marker.
//!
//! Every table is streamed through one writer in sweep order; the manifest is
//! written as `partial` before the first row and rewritten on completion.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
/// Present while a run is unfinished or after it failed.
pub const PARTIAL_MARKER: &str = "PARTIAL";

/// Column header plus physical unit; dimensionless columns have no unit.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub unit: Option<&'static str>,
}

impl Column {
    pub fn header(&self) -> String {
        match self.unit {
            Some(u) => format!("{}_{}", self.name, u),
            None => self.name.clone(),
        }
    }
}

pub fn col(name: impl Into<String>, unit: &'static str) -> Column {
    Column { name: name.into(), unit: Some(unit) }
}

pub fn bare(name: impl Into<String>) -> Column {
    Column { name: name.into(), unit: None }
}

#[derive(Debug, Clone)]
pub struct TableSpec {
    pub file: String,
    pub columns: Vec<Column>,
}

impl TableSpec {
    pub fn new(file: impl Into<String>, columns: Vec<Column>) -> Self {
        Self { file: file.into(), columns }
    }
}

/// One CSV cell. Floats print in shortest round-trip form.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) if x.is_nan() => "NaN".into(),
            Cell::F(x) if x.is_infinite() => if *x > 0.0 { "inf".into() } else { "-inf".into() },
            Cell::F(x) => format!("{x:?}"),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => u8::from(*b).to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.into())
    }
}

pub type Row = Vec<Cell>;

struct OpenTable {
    spec: TableSpec,
    writer: csv::Writer<BufWriter<File>>,
    rows: usize,
}

/// Single writer for every table of a run.
pub struct TableSink {
    dir: PathBuf,
    tables: Vec<OpenTable>,
}

impl TableSink {
    pub fn create(dir: &Path, specs: Vec<TableSpec>) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut tables = Vec::with_capacity(specs.len());
        for spec in specs {
            let f = File::create(dir.join(&spec.file))?;
            let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(f));
            writer.write_record(spec.columns.iter().map(Column::header)).map_err(std::io::Error::other)?;
            tables.push(OpenTable { spec, writer, rows: 0 });
        }
        Ok(Self { dir: dir.to_path_buf(), tables })
    }

    pub fn index_of(&self, file: &str) -> usize {
        self.tables.iter().position(|t| t.spec.file == file).expect("table registered in the plan")
    }

    pub fn write(&mut self, table: usize, row: &[Cell]) -> std::io::Result<()> {
        let t = &mut self.tables[table];
        assert_eq!(row.len(), t.spec.columns.len(), "row width for {}", t.spec.file);
        t.writer.write_record(row.iter().map(Cell::render)).map_err(std::io::Error::other)?;
        t.rows += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        for t in &mut self.tables {
            t.writer.flush()?;
        }
        Ok(())
    }

    /// Flushes and checksums every table.
    pub fn finish(mut self) -> std::io::Result<Vec<FileRecord>> {
        self.flush()?;
        let mut out = Vec::with_capacity(self.tables.len());
        for t in &self.tables {
            let path = self.dir.join(&t.spec.file);
            let (sha256, bytes) = sha256_file(&path)?;
            out.push(FileRecord { name: t.spec.file.clone(), sha256, bytes, rows: t.rows });
        }
        Ok(out)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    format!("{:x}", Sha256::digest(data))
}

pub fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
    Ok((format!("{:x}", h.finalize()), n))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
    pub rows: usize,
}

/// Outcome of one built-in convergence or consistency check.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OracleOutcome {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub detail: String,
}

impl OracleOutcome {
    /// Passes when `value <= limit`.
    pub fn at_most(name: &str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, limit, passed: value <= limit, detail: detail.into() }
    }

    /// Passes when `value >= limit`.
    pub fn at_least(name: &str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, limit, passed: value >= limit, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Partial,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureReport {
    pub kind: &'static str,
    pub message: String,
    /// Sweep point that failed, when the failure is tied to one.
    pub point: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub status: Status,
    pub tool: &'static str,
    pub version: &'static str,
    pub schema_version: u32,
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub points_total: usize,
    pub points_done: usize,
    pub config: serde_json::Value,
    pub files: Vec<FileRecord>,
    /// Wall-clock seconds per stage; the only non-reproducible field.
    pub timings_s: BTreeMap<String, f64>,
    pub oracles: Vec<OracleOutcome>,
    pub error: Option<FailureReport>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(dir.join(MANIFEST))?);
        serde_json::to_writer_pretty(&mut f, self).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
        f.flush()?;
        let marker = dir.join(PARTIAL_MARKER);
        match self.status {
            Status::Partial => {
                let why = self.error.as_ref().map_or("run in progress", |e| e.message.as_str());
                fs::write(marker, format!("{why}\n"))
            }
            Status::Complete => match fs::remove_file(marker) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
                _ => Ok(()),
            },
        }
    }
}
