//! The workload matrix and its observation semantics.
//!
//! Rows are queries, columns are hints. An entry starts out unobserved, and
//! becomes either complete (the plan ran to completion) or censored (the plan
//! was killed at a timeout, so only a lower bound on its latency is known).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observation status of a single (query, hint) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Entry {
    Unobserved,
    /// Measured latency in seconds.
    Complete(f64),
    /// The run timed out after this many seconds; the true latency is at least this.
    Censored(f64),
}

impl Entry {
    pub fn is_complete(&self) -> bool {
        matches!(self, Entry::Complete(_))
    }

    pub fn complete_latency(&self) -> Option<f64> {
        match *self {
            Entry::Complete(v) => Some(v),
            _ => None,
        }
    }

    pub fn censored_bound(&self) -> Option<f64> {
        match *self {
            Entry::Censored(b) => Some(b),
            _ => None,
        }
    }
}

fn check_positive(v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidLatency(v))
    }
}

/// Fully known latency matrix, used as the oracle during simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    values: DMatrix<f64>,
}

impl GroundTruth {
    /// Wraps a matrix of latencies. Every entry must be finite and positive.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        for &v in values.iter() {
            check_positive(v)?;
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        for row in rows {
            if row.len() != k {
                return Err(Error::ShapeMismatch {
                    expected: (n, k),
                    found: (n, row.len()),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
    }

    pub fn n_queries(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_hints(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, query: usize, hint: usize) -> f64 {
        self.values[(query, hint)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Sum over queries of the best achievable latency.
    pub fn optimal_latency(&self) -> f64 {
        self.values
            .row_iter()
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .sum()
    }

    /// Sum of the given column: the workload latency when every query uses that hint.
    pub fn column_latency(&self, hint: usize) -> f64 {
        self.values.column(hint).sum()
    }

    /// Sum of every entry: the cost of exploring the whole matrix without timeouts.
    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }

    /// Default workload latency over optimal workload latency.
    pub fn headroom(&self, default_hint: usize) -> f64 {
        self.column_latency(default_hint) / self.optimal_latency()
    }

    /// Copy of `count` rows starting at `start`.
    pub fn rows(&self, start: usize, count: usize) -> GroundTruth {
        GroundTruth {
            values: self.values.rows(start, count).into_owned(),
        }
    }

    pub(crate) fn append_rows(&mut self, other: &GroundTruth) -> Result<()> {
        if other.n_hints() != self.n_hints() {
            return Err(Error::ShapeMismatch {
                expected: (other.n_queries(), self.n_hints()),
                found: (other.n_queries(), other.n_hints()),
            });
        }
        let (n, k) = self.values.shape();
        let m = other.n_queries();
        let values = DMatrix::from_fn(n + m, k, |i, j| {
            if i < n {
                self.values[(i, j)]
            } else {
                other.values[(i - n, j)]
            }
        });
        self.values = values;
        Ok(())
    }
}

/// The partially observed workload matrix.
#[derive(Debug, Clone)]
pub struct WorkloadState {
    n_queries: usize,
    n_hints: usize,
    /// Row-major.
    entries: Vec<Entry>,
    default_hint: usize,
    /// Running exploration totals (all columns, non-default columns), kept in
    /// the order charges occur so they match an external running sum exactly.
    charged: (f64, f64),
}

/// Equality covers shape, default hint and entries; the running charge totals
/// depend on the order entries were filled and are not part of a state's identity.
impl PartialEq for WorkloadState {
    fn eq(&self, other: &Self) -> bool {
        self.n_queries == other.n_queries
            && self.n_hints == other.n_hints
            && self.default_hint == other.default_hint
            && self.entries == other.entries
    }
}

fn cost(entry: Entry) -> f64 {
    match entry {
        Entry::Complete(v) | Entry::Censored(v) => v,
        Entry::Unobserved => 0.0,
    }
}

impl WorkloadState {
    /// An all-unobserved state.
    pub fn new(n_queries: usize, n_hints: usize, default_hint: usize) -> Result<Self> {
        if n_hints == 0 || default_hint >= n_hints {
            return Err(Error::OutOfBounds {
                query: 0,
                hint: default_hint,
                rows: n_queries,
                cols: n_hints,
            });
        }
        Ok(Self {
            n_queries,
            n_hints,
            entries: vec![Entry::Unobserved; n_queries * n_hints],
            default_hint,
            charged: (0.0, 0.0),
        })
    }

    /// Builds a state from explicit rows of entries, validating every value.
    pub fn from_entries(rows: Vec<Vec<Entry>>, default_hint: usize) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        let mut state = Self::new(n, k, default_hint)?;
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::ShapeMismatch {
                    expected: (n, k),
                    found: (n, row.len()),
                });
            }
            for (j, e) in row.into_iter().enumerate() {
                state.set(i, j, e)?;
            }
        }
        Ok(state)
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_hints(&self) -> usize {
        self.n_hints
    }

    pub fn default_hint(&self) -> usize {
        self.default_hint
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_queries, self.n_hints)
    }

    fn check_index(&self, query: usize, hint: usize) -> Result<usize> {
        if query >= self.n_queries || hint >= self.n_hints {
            return Err(Error::OutOfBounds {
                query,
                hint,
                rows: self.n_queries,
                cols: self.n_hints,
            });
        }
        Ok(query * self.n_hints + hint)
    }

    /// Panics if the index is out of bounds.
    pub fn entry(&self, query: usize, hint: usize) -> Entry {
        assert!(query < self.n_queries && hint < self.n_hints);
        self.entries[query * self.n_hints + hint]
    }

    pub fn row(&self, query: usize) -> &[Entry] {
        &self.entries[query * self.n_hints..(query + 1) * self.n_hints]
    }

    /// Overwrites an entry without observation semantics. Values are validated.
    pub fn set(&mut self, query: usize, hint: usize, entry: Entry) -> Result<()> {
        let idx = self.check_index(query, hint)?;
        match entry {
            Entry::Complete(v) | Entry::Censored(v) => check_positive(v)?,
            Entry::Unobserved => {}
        }
        let old = cost(self.entries[idx]);
        if old != 0.0 {
            self.charge(hint, -old);
        }
        self.charge(hint, cost(entry));
        self.entries[idx] = entry;
        Ok(())
    }

    /// Mask matrix: 1 where complete, 0 elsewhere. Censored cells are not in the mask.
    pub fn mask(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_queries, self.n_hints, |i, j| {
            if self.entry(i, j).is_complete() {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Timeout matrix: the censoring bound where censored, 0 elsewhere.
    pub fn timeouts(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_queries, self.n_hints, |i, j| {
            self.entry(i, j).censored_bound().unwrap_or(0.0)
        })
    }

    /// Complete latencies with zeros elsewhere.
    pub fn observed_values(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_queries, self.n_hints, |i, j| {
            self.entry(i, j).complete_latency().unwrap_or(0.0)
        })
    }

    pub fn n_complete(&self) -> usize {
        self.entries.iter().filter(|e| e.is_complete()).count()
    }

    pub fn n_censored(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, Entry::Censored(_)))
            .count()
    }

    /// Hint index and latency of the fastest complete entry in a row.
    /// Ties go to the lowest hint index.
    fn row_best(&self, query: usize) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (j, e) in self.row(query).iter().enumerate() {
            if let Entry::Complete(v) = *e {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((j, v));
                }
            }
        }
        best.ok_or(Error::RowUnbootstrapped(query))
    }

    /// Current best observed latency of a query. This is also the timeout
    /// used when exploring another hint for it.
    pub fn row_timeout(&self, query: usize) -> Result<f64> {
        if query >= self.n_queries {
            return Err(Error::OutOfBounds {
                query,
                hint: 0,
                rows: self.n_queries,
                cols: self.n_hints,
            });
        }
        self.row_best(query).map(|(_, v)| v)
    }

    /// Sum over queries of the best complete latency.
    pub fn workload_latency(&self) -> Result<f64> {
        (0..self.n_queries)
            .map(|i| self.row_best(i).map(|(_, v)| v))
            .sum()
    }

    /// Seconds spent revealing entries: complete latencies plus censoring bounds.
    /// With `charge_default` unset the default column is free.
    /// Runs whose outcome was later overwritten (a censored cell re-run with a
    /// larger timeout) stay charged.
    pub fn exploration_time(&self, charge_default: bool) -> f64 {
        if charge_default {
            self.charged.0
        } else {
            self.charged.1
        }
    }

    /// Per-query index of the fastest complete hint.
    pub fn best_hints(&self) -> Result<Vec<usize>> {
        (0..self.n_queries)
            .map(|i| self.row_best(i).map(|(j, _)| j))
            .collect()
    }

    /// Whether running (query, hint) with the row's current timeout could
    /// reveal anything: the cell is unobserved, or censored below the
    /// current best latency.
    pub fn is_explorable(&self, query: usize, hint: usize) -> bool {
        match self.entry(query, hint) {
            Entry::Unobserved => true,
            Entry::Complete(_) => false,
            Entry::Censored(b) => self.row_timeout(query).is_ok_and(|t| b < t),
        }
    }

    /// All explorable cells in row-major order.
    pub fn explorable(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_queries {
            let timeout = self.row_timeout(i).ok();
            for (j, e) in self.row(i).iter().enumerate() {
                let open = match *e {
                    Entry::Unobserved => true,
                    Entry::Complete(_) => false,
                    Entry::Censored(b) => timeout.is_some_and(|t| b < t),
                };
                if open {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Runs (query, hint) against its true latency with the given timeout and
    /// records the outcome. Returns the seconds charged for the run.
    pub fn observe(
        &mut self,
        query: usize,
        hint: usize,
        true_latency: f64,
        timeout: f64,
    ) -> Result<f64> {
        let idx = self.check_index(query, hint)?;
        if !(timeout.is_finite() && timeout > 0.0) {
            return Err(Error::NonPositiveTimeout(timeout));
        }
        check_positive(true_latency)?;
        match self.entries[idx] {
            Entry::Complete(_) => return Err(Error::AlreadyComplete(query, hint)),
            Entry::Censored(bound) if timeout <= bound => {
                return Err(Error::TimeoutNotIncreased {
                    query,
                    hint,
                    bound,
                    timeout,
                })
            }
            _ => {}
        }
        let (entry, charge) = if true_latency < timeout {
            (Entry::Complete(true_latency), true_latency)
        } else {
            (Entry::Censored(timeout), timeout)
        };
        self.entries[idx] = entry;
        self.charge(hint, charge);
        Ok(charge)
    }

    /// Appends unobserved rows.
    pub(crate) fn append_rows(&mut self, count: usize) {
        self.entries
            .extend(std::iter::repeat_n(Entry::Unobserved, count * self.n_hints));
        self.n_queries += count;
    }

    fn charge(&mut self, hint: usize, seconds: f64) {
        self.charged.0 += seconds;
        if hint != self.default_hint {
            self.charged.1 += seconds;
        }
    }

    /// Resets a row to unobserved; its entries stop counting as exploration time.
    pub(crate) fn clear_row(&mut self, query: usize) {
        for j in 0..self.n_hints {
            let old = cost(self.entry(query, j));
            if old != 0.0 {
                self.charge(j, -old);
            }
        }
        let k = self.n_hints;
        self.entries[query * k..(query + 1) * k].fill(Entry::Unobserved);
    }
}
