//! Censored, non-negative alternating least squares.
//!
//! Each iteration fills the unobserved cells of the workload matrix with the
//! current prediction `Q Hᵀ`, lifts censored cells up to their timeout bound,
//! solves the ridge least-squares problem for one factor with the other held
//! fixed, and clips negative factor entries to zero. Complete cells always pass
//! through unchanged.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::WorkloadState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    /// Ridge penalty on both factors.
    pub lambda: f64,
    pub iterations: usize,
    /// Seed for the uniform [0, 1) factor initialization.
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            lambda: 0.2,
            iterations: 50,
            seed: 0,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self, n_queries: usize, n_hints: usize) -> Result<()> {
        if self.rank == 0 || self.rank > n_queries.min(n_hints) {
            return Err(Error::DegenerateConfig(format!(
                "rank {} must be in 1..={} for a {}x{} matrix",
                self.rank,
                n_queries.min(n_hints),
                n_queries,
                n_hints
            )));
        }
        if self.iterations == 0 {
            return Err(Error::DegenerateConfig(
                "iterations must be at least 1".into(),
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::DegenerateConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Rank-r factors and the completed matrix they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    /// n x r, non-negative.
    pub query_factors: DMatrix<f64>,
    /// k x r, non-negative.
    pub hint_factors: DMatrix<f64>,
    /// n x k: observed latencies where complete, clamped predictions elsewhere.
    pub estimate: DMatrix<f64>,
}

impl Factorization {
    pub fn get(&self, query: usize, hint: usize) -> f64 {
        self.estimate[(query, hint)]
    }

    /// Hint with the lowest predicted latency for a query (lowest index on ties).
    pub fn row_argmin(&self, query: usize) -> (usize, f64) {
        let row = self.estimate.row(query);
        let mut best = (0, row[0]);
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v < best.1 {
                best = (j, v);
            }
        }
        best
    }
}

/// Iterative solver state. [`als_complete`] drives it for the configured
/// number of iterations; stepping manually exposes the objective per iteration.
#[derive(Debug, Clone)]
pub struct Als {
    observed: DMatrix<f64>,
    mask: DMatrix<f64>,
    timeouts: DMatrix<f64>,
    lambda: f64,
    query_factors: DMatrix<f64>,
    hint_factors: DMatrix<f64>,
}

impl Als {
    pub fn new(state: &WorkloadState, cfg: &AlsConfig) -> Result<Self> {
        let (n, k) = state.shape();
        cfg.validate(n, k)?;
        if state.n_complete() == 0 {
            return Err(Error::NoObservations);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let query_factors =
            DMatrix::from_row_iterator(n, cfg.rank, (0..n * cfg.rank).map(|_| rng.random::<f64>()));
        let hint_factors =
            DMatrix::from_row_iterator(k, cfg.rank, (0..k * cfg.rank).map(|_| rng.random::<f64>()));
        Ok(Self {
            observed: state.observed_values(),
            mask: state.mask(),
            timeouts: state.timeouts(),
            lambda: cfg.lambda,
            query_factors,
            hint_factors,
        })
    }

    /// Observed cells pass through; everything else is `Q Hᵀ`, lifted to the
    /// censoring bound where one exists.
    fn filled(&self) -> DMatrix<f64> {
        let mut w = &self.query_factors * self.hint_factors.transpose();
        for ((w, &m), (&obs, &t)) in w
            .iter_mut()
            .zip(self.mask.iter())
            .zip(self.observed.iter().zip(self.timeouts.iter()))
        {
            if m == 1.0 {
                *w = obs;
            } else if t > 0.0 && *w < t {
                *w = t;
            }
        }
        w
    }

    /// One alternating pass: update query factors, then hint factors.
    pub fn step(&mut self) -> Result<()> {
        let w = self.filled();
        self.query_factors = ridge_update(&w, &self.hint_factors, self.lambda)?;
        let w = self.filled();
        self.hint_factors = ridge_update(&w.transpose(), &self.query_factors, self.lambda)?;
        Ok(())
    }

    /// Masked squared error plus the ridge penalty on both factors.
    pub fn objective(&self) -> f64 {
        objective(
            &self.observed,
            &self.mask,
            &self.query_factors,
            &self.hint_factors,
            self.lambda,
        )
    }

    pub fn factorization(&self) -> Factorization {
        Factorization {
            query_factors: self.query_factors.clone(),
            hint_factors: self.hint_factors.clone(),
            estimate: self.filled(),
        }
    }
}

/// Solves `X = W F (FᵀF + λI)⁻¹` and zeroes negative entries of X.
fn ridge_update(w: &DMatrix<f64>, fixed: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let r = fixed.ncols();
    let gram = fixed.transpose() * fixed + DMatrix::<f64>::identity(r, r) * lambda;
    let chol = Cholesky::new(gram).ok_or(Error::SingularSystem)?;
    if lambda == 0.0 {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = (diag.min(), diag.max());
        if !(lo * lo > f64::EPSILON * r as f64 * hi * hi) {
            return Err(Error::SingularSystem);
        }
    }
    // Gram is symmetric, so Xᵀ = Gram⁻¹ (W F)ᵀ.
    let rhs = (w * fixed).transpose();
    let mut x = chol.solve(&rhs).transpose();
    x.apply(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    Ok(x)
}

/// `‖M ⊙ (W̃ − Q Hᵀ)‖²_F + λ (‖Q‖²_F + ‖H‖²_F)`.
pub fn objective(
    observed: &DMatrix<f64>,
    mask: &DMatrix<f64>,
    query_factors: &DMatrix<f64>,
    hint_factors: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let pred = query_factors * hint_factors.transpose();
    let fit: f64 = observed
        .iter()
        .zip(pred.iter())
        .zip(mask.iter())
        .map(|((o, p), m)| m * (o - p) * (o - p))
        .sum();
    fit + lambda * (query_factors.norm_squared() + hint_factors.norm_squared())
}

/// Completes the workload matrix with `cfg.iterations` passes of censored ALS.
pub fn als_complete(state: &WorkloadState, cfg: &AlsConfig) -> Result<Factorization> {
    let mut als = Als::new(state, cfg)?;
    for _ in 0..cfg.iterations {
        als.step()?;
    }
    Ok(als.factorization())
}

/// Singular values of a dense matrix, descending.
pub fn singular_spectrum(matrix: &DMatrix<f64>) -> Vec<f64> {
    if matrix.is_empty() {
        return Vec::new();
    }
    let mut values: Vec<f64> = matrix
        .clone()
        .singular_values()
        .iter()
        .map(|s| s.max(0.0))
        .collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Smallest number of leading singular values holding `energy_fraction` of
/// the total squared energy.
pub fn effective_rank(spectrum: &[f64], energy_fraction: f64) -> Result<usize> {
    if spectrum.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    let target = energy_fraction.clamp(0.0, 1.0) * total;
    let mut acc = 0.0;
    for (m, s) in spectrum.iter().enumerate() {
        acc += s * s;
        // relative slack so a fraction of exactly 1.0 survives rounding
        if acc >= target * (1.0 - 1e-12) {
            return Ok(m + 1);
        }
    }
    Ok(spectrum.len())
}
