//! Problem files, gain files, result JSON and long-format CSV.
//!
//! Matrices are stored as row-major nested arrays. Floats are written with
//! the shortest representation that parses back to the same value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use lqr_mpi::{Error, Gain, Matrix, ProblemData};
use serde::{Deserialize, Serialize};

use crate::protocols::{ExperimentResult, MassReport, MonteCarloSummary};
use crate::real;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] Error),
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<Matrix, IoError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(IoError::Invalid(format!("{name} must be {r}x{c}")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// On-disk problem: `{"n", "m", "A", "B", "Q", "W"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
}

impl ProblemFile {
    pub fn from_problem(pd: &ProblemData) -> Self {
        Self {
            n: pd.n(),
            m: pd.m(),
            a: rows(pd.a()),
            b: rows(pd.b()),
            q: rows(pd.q()),
            w: rows(pd.w()),
        }
    }

    pub fn to_problem(&self) -> Result<ProblemData, IoError> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return Err(IoError::Invalid("n and m must be at least 1".into()));
        }
        Ok(ProblemData::new(
            from_rows("A", &self.a, n, n)?,
            from_rows("B", &self.b, n, m)?,
            from_rows("Q", &self.q, n + m, n + m)?,
            from_rows("W", &self.w, n, n)?,
        )?)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(open(path)?).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    let json_err = |source| IoError::Json {
        path: path.display().to_string(),
        source,
    };
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err)?;
    let file_err = |source| IoError::File {
        path: path.display().to_string(),
        source,
    };
    w.write_all(b"\n").map_err(file_err)?;
    w.flush().map_err(file_err)
}

pub fn read_problem(path: &Path) -> Result<ProblemData, IoError> {
    read_json::<ProblemFile>(path)?.to_problem()
}

pub fn write_problem(path: &Path, pd: &ProblemData) -> Result<(), IoError> {
    write_json(path, &ProblemFile::from_problem(pd))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GainFile {
    Rows(Vec<Vec<f64>>),
    Object {
        #[serde(rename = "K")]
        k: Vec<Vec<f64>>,
    },
}

/// Gain file: an `m × n` row-major nested array, or `{"K": [[...]]}`.
pub fn read_gain(path: &Path, m: usize, n: usize) -> Result<Gain, IoError> {
    let rows = match read_json::<GainFile>(path)? {
        GainFile::Rows(r) | GainFile::Object { k: r } => r,
    };
    Ok(Gain::new(from_rows("K", &rows, m, n)?)?)
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    rows(m)
}

/// One CSV row per (result, iteration).
pub struct CsvRow<'a> {
    pub instance: usize,
    pub result: &'a ExperimentResult,
    pub seed: u64,
}

pub const CSV_HEADER: [&str; 6] = [
    "instance",
    "algorithm",
    "iteration",
    "rel_error",
    "rho_A",
    "seed",
];

pub fn write_csv<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = CsvRow<'a>>,
) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        for (k, &e) in row.result.errors.iter().enumerate() {
            w.write_record([
                row.instance.to_string(),
                row.result.algorithm.to_string(),
                k.to_string(),
                real::format(e),
                real::format(row.result.problem.rho_a),
                row.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn mass_csv_rows(report: &MassReport) -> impl Iterator<Item = CsvRow<'_>> {
    report.results.iter().map(|r| CsvRow {
        instance: 0,
        result: r,
        seed: report.config.seed,
    })
}

pub fn monte_carlo_csv_rows(summary: &MonteCarloSummary) -> impl Iterator<Item = CsvRow<'_>> {
    summary.instances.iter().flat_map(|i| {
        [i.standard.as_ref(), i.midpoint.as_ref()]
            .into_iter()
            .flatten()
            .map(move |r| CsvRow {
                instance: i.index,
                result: r,
                seed: i.seeds.problem,
            })
    })
}

/// `out.json` → `out.csv`.
pub fn csv_path(json: &Path) -> std::path::PathBuf {
    json.with_extension("csv")
}
