//! CSV formats for matrices, traces and reports.
//!
//! Matrix files look like
//!
//! ```text
//! query,h1,h2*,h3
//! q1,3.2,4.1,
//! q2,>9,6.5,7
//! ```
//!
//! The first header cell is literally `query`; the remaining header cells
//! label hints, and a trailing `*` marks the default hint (column 0 when no
//! label is marked). A cell is a latency in seconds, empty for an unobserved
//! entry, or `>bound` for a run censored at `bound` seconds. Ground-truth
//! files only contain plain latencies.
//!
//! Every writer replaces its target atomically via a temporary file in the
//! same directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::matrix::{Entry, GroundTruth, WorkloadState};
use crate::simulator::{ExplorationTrace, ReportRow};

pub const TRACE_HEADER: &str =
    "step,explore_seconds,workload_latency_seconds,n_complete,n_censored";
pub const REPORT_HEADER: &str = "policy,budget_seconds,mean_latency_seconds,stddev_seconds";
pub const SPECTRUM_HEADER: &str = "index,singular_value";

/// What a matrix file turned out to contain.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    Truth(GroundTruth),
    State(WorkloadState),
}

struct Parsed {
    rows: Vec<Vec<Entry>>,
    default_hint: usize,
    fully_observed: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_cell(raw: &str, path: &Path, line: u64, column: usize, allow_zero: bool) -> Result<Entry> {
    let cell = raw.trim();
    if cell.is_empty() {
        return Ok(Entry::Unobserved);
    }
    let (censored, number) = match cell.strip_prefix('>') {
        Some(rest) => (true, rest.trim()),
        None => (false, cell),
    };
    let value: f64 = number.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        reason: format!("'{cell}' is not a number"),
    })?;
    let ok = value.is_finite() && (value > 0.0 || (allow_zero && value == 0.0 && !censored));
    if !ok {
        return Err(Error::Value {
            path: path.to_path_buf(),
            line,
            column,
            value,
        });
    }
    Ok(if censored {
        Entry::Censored(value)
    } else {
        // zero only reaches here for cost matrices, which never become states
        Entry::Complete(value)
    })
}

fn parse(text: &str, path: &Path, allow_zero: bool) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(e, path))?,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                column: 1,
                reason: "empty file".into(),
            })
        }
    };
    if header.get(0).map(str::trim) != Some("query") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            reason: "first header cell must be 'query'".into(),
        });
    }
    let k = header.len() - 1;
    if k == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 2,
            reason: "no hint columns".into(),
        });
    }
    let default_hint = header
        .iter()
        .skip(1)
        .position(|label| label.trim().ends_with('*'))
        .unwrap_or(0);

    let mut rows = Vec::new();
    let mut fully_observed = true;
    for record in records {
        let record = record.map_err(|e| csv_err(e, path))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != k + 1 {
            return Err(Error::Shape {
                path: path.to_path_buf(),
                line,
                expected: k + 1,
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(k);
        for (c, raw) in record.iter().enumerate().skip(1) {
            let e = parse_cell(raw, path, line, c + 1, allow_zero)?;
            fully_observed &= e.is_complete();
            row.push(e);
        }
        rows.push(row);
    }
    Ok(Parsed {
        rows,
        default_hint,
        fully_observed,
    })
}

fn csv_err(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 0,
        reason: e.to_string(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn to_truth(parsed: &Parsed) -> Result<GroundTruth> {
    let values: Vec<Vec<f64>> = parsed
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| e.complete_latency().unwrap_or(0.0))
                .collect()
        })
        .collect();
    GroundTruth::from_rows(&values)
}

/// Parses matrix text; the kind is a state if any cell is empty or censored.
pub fn parse_matrix(text: &str, path: &Path) -> Result<MatrixData> {
    let parsed = parse(text, path, false)?;
    if parsed.fully_observed {
        Ok(MatrixData::Truth(to_truth(&parsed)?))
    } else {
        Ok(MatrixData::State(WorkloadState::from_entries(
            parsed.rows,
            parsed.default_hint,
        )?))
    }
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixData> {
    let path = path.as_ref();
    parse_matrix(&read_text(path)?, path)
}

/// Reads a ground-truth file; empty or censored cells are rejected.
pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let parsed = parse(&read_text(path)?, path, false)?;
    for (i, row) in parsed.rows.iter().enumerate() {
        if let Some(c) = row.iter().position(|e| !e.is_complete()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                column: c + 2,
                reason: "ground truth cells must be plain latencies".into(),
            });
        }
    }
    to_truth(&parsed)
}

/// Reads any matrix file as a state; a fully observed file becomes an
/// all-complete state.
pub fn read_state(path: impl AsRef<Path>) -> Result<WorkloadState> {
    let path = path.as_ref();
    let parsed = parse(&read_text(path)?, path, false)?;
    WorkloadState::from_entries(parsed.rows, parsed.default_hint)
}

/// Reads an optimizer cost matrix. Same layout as a ground-truth file, but
/// zero costs are allowed.
pub fn read_costs(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let parsed = parse(&read_text(path)?, path, true)?;
    let n = parsed.rows.len();
    let k = parsed.rows.first().map_or(0, Vec::len);
    let mut out = DMatrix::zeros(n, k);
    for (i, row) in parsed.rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            out[(i, j)] = e.complete_latency().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                column: j + 2,
                reason: "cost cells must be plain numbers".into(),
            })?;
        }
    }
    Ok(out)
}

fn header(n_hints: usize, default_hint: Option<usize>) -> String {
    let mut out = String::from("query");
    for j in 0..n_hints {
        out.push_str(&format!(",h{}", j + 1));
        if Some(j) == default_hint {
            out.push('*');
        }
    }
    out.push('\n');
    out
}

pub fn format_truth(truth: &GroundTruth) -> String {
    format_values(truth.values(), None)
}

/// A dense latency matrix, such as a completed estimate, with an optional
/// default-hint marker.
pub fn format_values(values: &DMatrix<f64>, default_hint: Option<usize>) -> String {
    let mut out = header(values.ncols(), default_hint);
    for i in 0..values.nrows() {
        out.push_str(&format!("q{}", i + 1));
        for v in values.row(i).iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn format_state(state: &WorkloadState) -> String {
    let mut out = header(state.n_hints(), Some(state.default_hint()));
    for i in 0..state.n_queries() {
        out.push_str(&format!("q{}", i + 1));
        for e in state.row(i) {
            match *e {
                Entry::Unobserved => out.push(','),
                Entry::Complete(v) => out.push_str(&format!(",{v}")),
                Entry::Censored(b) => out.push_str(&format!(",>{b}")),
            }
        }
        out.push('\n');
    }
    out
}

pub fn format_trace(trace: &ExplorationTrace) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for (step, p) in trace.points.iter().enumerate() {
        out.push_str(&format!(
            "{step},{},{},{},{}\n",
            p.explore_seconds, p.workload_latency, p.n_complete, p.n_censored
        ));
    }
    out
}

pub fn format_report(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.policy, r.budget, r.mean_latency, r.stddev
        ));
    }
    out
}

pub fn format_spectrum(values: &[f64]) -> String {
    let mut out = format!("{SPECTRUM_HEADER}\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{v}\n", i + 1));
    }
    out
}

/// Writes `contents` to a temporary sibling of `path`, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    let dir: PathBuf = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = NamedTempFile::new_in(&dir).map_err(io_err(path))?;
    tmp.write_all(contents.as_bytes()).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn write_matrix(data: &MatrixData, path: impl AsRef<Path>) -> Result<()> {
    match data {
        MatrixData::Truth(t) => write_atomic(path, &format_truth(t)),
        MatrixData::State(s) => write_atomic(path, &format_state(s)),
    }
}

pub fn write_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &format_truth(truth))
}

pub fn write_values(
    values: &DMatrix<f64>,
    default_hint: Option<usize>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(path, &format_values(values, default_hint))
}

pub fn write_state(state: &WorkloadState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &format_state(state))
}

pub fn write_trace(trace: &ExplorationTrace, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &format_trace(trace))
}

pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &format_report(rows))
}

pub fn write_spectrum(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &format_spectrum(values))
}
