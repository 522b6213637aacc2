//! Exploration policies: which (query, hint) cells to run next.
//!
//! Every policy only proposes cells that can still reveal something (see
//! [`WorkloadState::is_explorable`]) and gives each one a timeout no larger
//! than the query's current best latency, so a run never costs more than the
//! plan it is trying to beat.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::completion::Factorization;
use crate::error::{Error, Result};
use crate::matrix::WorkloadState;

/// A proposed exploration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub query: usize,
    pub hint: usize,
    pub timeout: f64,
    /// Model prediction for the cell, when the policy has one.
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Random,
    Greedy,
    LimeQo,
    CostGreedy,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Greedy => "greedy",
            PolicyKind::LimeQo => "limeqo",
            PolicyKind::CostGreedy => "cost",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(PolicyKind::Random),
            "greedy" => Ok(PolicyKind::Greedy),
            "limeqo" => Ok(PolicyKind::LimeQo),
            "cost" | "cost-greedy" | "costgreedy" => Ok(PolicyKind::CostGreedy),
            other => Err(Error::DegenerateConfig(format!("unknown policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Cells proposed per batch.
    pub batch: usize,
    /// Timeout inflation over the predicted latency (LimeQO only).
    pub alpha: f64,
    pub seed: u64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            batch: 10,
            alpha: 2.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::DegenerateConfig(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::DegenerateConfig(format!(
                "alpha must be finite and at least 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn check_batch(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::DegenerateConfig(
            "batch size must be at least 1".into(),
        ))
    } else {
        Ok(())
    }
}

fn plain(state: &WorkloadState, query: usize, hint: usize) -> Result<Candidate> {
    Ok(Candidate {
        query,
        hint,
        timeout: state.row_timeout(query)?,
        predicted: None,
    })
}

/// Up to `m` distinct explorable cells drawn uniformly.
pub fn select_random(state: &WorkloadState, m: usize, seed: u64) -> Result<Vec<Candidate>> {
    check_batch(m)?;
    let open = state.explorable();
    if open.is_empty() {
        return Err(Error::NothingToExplore);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, open.len(), m.min(open.len()))
        .into_iter()
        .map(|idx| plain(state, open[idx].0, open[idx].1))
        .collect()
}

/// The `m` slowest queries (by current best latency) that still have an
/// explorable cell, each with one such hint picked uniformly.
pub fn select_greedy(state: &WorkloadState, m: usize, seed: u64) -> Result<Vec<Candidate>> {
    check_batch(m)?;
    let mut per_row: Vec<Vec<usize>> = vec![Vec::new(); state.n_queries()];
    for (i, j) in state.explorable() {
        per_row[i].push(j);
    }
    let mut rows = Vec::new();
    for (i, hints) in per_row.iter().enumerate() {
        if !hints.is_empty() {
            rows.push((i, state.row_timeout(i)?));
        }
    }
    if rows.is_empty() {
        return Err(Error::NothingToExplore);
    }
    // stable sort keeps lower query indices first among equal latencies
    rows.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.into_iter()
        .take(m)
        .map(|(i, timeout)| {
            let hints = &per_row[i];
            let j = hints[index::sample(&mut rng, hints.len(), 1).index(0)];
            Ok(Candidate {
                query: i,
                hint: j,
                timeout,
                predicted: None,
            })
        })
        .collect()
}

/// Predicted fractional gain of a query's best predicted hint over its best
/// observed hint: `(observed_min - predicted_min) / predicted_min`.
pub fn improvement_ratio(
    state: &WorkloadState,
    estimate: &Factorization,
    query: usize,
) -> Result<f64> {
    let observed = state.row_timeout(query)?;
    let (_, predicted) = estimate.row_argmin(query);
    if !(predicted > 0.0) {
        return Err(Error::ZeroPrediction(query));
    }
    Ok((observed - predicted) / predicted)
}

/// `min(row timeout, alpha * predicted)`, falling back to the row timeout
/// when that would not exceed the cell's existing censoring bound.
fn limeqo_timeout(
    state: &WorkloadState,
    query: usize,
    hint: usize,
    predicted: f64,
    alpha: f64,
) -> Result<f64> {
    let row = state.row_timeout(query)?;
    let timeout = row.min(predicted * alpha);
    let floor = state.entry(query, hint).censored_bound().unwrap_or(0.0);
    Ok(if timeout > floor { timeout } else { row })
}

/// Ranks queries by improvement ratio and proposes each top query's best
/// predicted hint; tops up the batch with uniformly drawn explorable cells
/// when fewer than `m` queries promise an improvement.
pub fn select_limeqo(
    state: &WorkloadState,
    estimate: &Factorization,
    m: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Candidate>> {
    check_batch(m)?;
    if estimate.estimate.shape() != state.shape() {
        return Err(Error::ShapeMismatch {
            expected: state.shape(),
            found: estimate.estimate.shape(),
        });
    }
    let open = state.explorable();
    if open.is_empty() {
        return Err(Error::NothingToExplore);
    }

    let mut scored = Vec::new();
    for i in 0..state.n_queries() {
        let ratio = match improvement_ratio(state, estimate, i) {
            Ok(r) => r,
            // a zero prediction gives no usable timeout; leave it to the random fill
            Err(Error::ZeroPrediction(_)) => continue,
            Err(e) => return Err(e),
        };
        let (j, _) = estimate.row_argmin(i);
        if ratio > 0.0 && state.is_explorable(i, j) {
            scored.push((i, j, ratio));
        }
    }
    scored.sort_by(|a, b| b.2.total_cmp(&a.2));
    scored.truncate(m);

    let mut picked: Vec<(usize, usize)> = scored.iter().map(|&(i, j, _)| (i, j)).collect();
    if picked.len() < m {
        let rest: Vec<(usize, usize)> = open.into_iter().filter(|c| !picked.contains(c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extra = (m - picked.len()).min(rest.len());
        picked.extend(
            index::sample(&mut rng, rest.len(), extra)
                .into_iter()
                .map(|idx| rest[idx]),
        );
    }

    picked
        .into_iter()
        .map(|(i, j)| {
            let predicted = estimate.get(i, j);
            Ok(Candidate {
                query: i,
                hint: j,
                timeout: limeqo_timeout(state, i, j, predicted, alpha)?,
                predicted: Some(predicted),
            })
        })
        .collect()
}

/// The `m` explorable cells with the lowest optimizer cost estimate.
pub fn select_cost_greedy(
    state: &WorkloadState,
    costs: &DMatrix<f64>,
    m: usize,
) -> Result<Vec<Candidate>> {
    check_batch(m)?;
    if costs.shape() != state.shape() {
        return Err(Error::ShapeMismatch {
            expected: state.shape(),
            found: costs.shape(),
        });
    }
    let mut open = state.explorable();
    if open.is_empty() {
        return Err(Error::NothingToExplore);
    }
    // explorable() is row-major, so the stable sort breaks ties lexicographically
    open.sort_by(|a, b| costs[*a].total_cmp(&costs[*b]));
    open.into_iter()
        .take(m)
        .map(|(i, j)| plain(state, i, j))
        .collect()
}
