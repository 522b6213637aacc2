//! Planted low-rank workload generators.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub n_hints: usize,
    pub rank: usize,
    /// Each entry is scaled by `1 + ε` with ε uniform in `[-noise, noise]`.
    pub noise: f64,
    /// Median latency in seconds before noise.
    pub scale: f64,
    /// Rows replaced by a constant `10 * scale` that no hint can speed up.
    pub etl_rows: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_queries: 100,
            n_hints: 49,
            rank: 3,
            noise: 0.0,
            scale: 1.0,
            etl_rows: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DegenerateConfig(msg));
        if self.n_queries == 0 || self.n_hints == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.rank == 0 || self.rank > self.n_queries.min(self.n_hints) {
            return bad(format!("rank {} out of range", self.rank));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise {} must be in [0, 1)", self.noise));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale {} must be positive", self.scale));
        }
        if self.etl_rows > self.n_queries {
            return bad(format!("etl_rows {} exceeds n_queries", self.etl_rows));
        }
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// `W = Q Hᵀ` with factor entries uniform in [0.1, 1.1), rescaled to the
/// target median, then perturbed by multiplicative noise.
pub fn generate(cfg: &SynthConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let (n, k, r) = (cfg.n_queries, cfg.n_hints, cfg.rank);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = DMatrix::from_row_iterator(n, r, (0..n * r).map(|_| rng.random_range(0.1..1.1)));
    let h = DMatrix::from_row_iterator(k, r, (0..k * r).map(|_| rng.random_range(0.1..1.1)));
    let mut w = q * h.transpose();
    let factor = cfg.scale / median(w.as_slice());
    w *= factor;
    for v in w.iter_mut() {
        let eps = rng.random_range(-cfg.noise..=cfg.noise);
        *v *= 1.0 + eps;
    }
    for i in index::sample(&mut rng, n, cfg.etl_rows) {
        w.row_mut(i).fill(10.0 * cfg.scale);
    }
    GroundTruth::new(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::singular_spectrum;

    #[test]
    fn noiseless_is_planted_rank() {
        let cfg = SynthConfig {
            n_queries: 40,
            n_hints: 12,
            ..Default::default()
        };
        let w = generate(&cfg).unwrap();
        let s = singular_spectrum(w.values());
        assert!(s[3] / s[0] < 1e-8, "{s:?}");
        assert!(s[2] / s[0] > 1e-4);
    }

    #[test]
    fn median_hits_scale() {
        for (n, k) in [(40, 12), (41, 13)] {
            let cfg = SynthConfig {
                n_queries: n,
                n_hints: k,
                scale: 3.5,
                ..Default::default()
            };
            let w = generate(&cfg).unwrap();
            assert!((median(w.values().as_slice()) - 3.5).abs() < 1e-9);
        }
    }

    #[test]
    fn etl_rows_are_constant() {
        let cfg = SynthConfig {
            n_queries: 30,
            n_hints: 8,
            noise: 0.1,
            etl_rows: 2,
            seed: 4,
            ..Default::default()
        };
        let w = generate(&cfg).unwrap();
        let constant: Vec<usize> = (0..30)
            .filter(|&i| {
                let row = w.values().row(i);
                row.max() - row.min() == 0.0
            })
            .collect();
        assert_eq!(constant.len(), 2);
        for i in constant {
            assert_eq!(w.get(i, 0), 10.0 * cfg.scale);
        }
    }

    #[test]
    fn deterministic_and_positive() {
        let cfg = SynthConfig {
            noise: 0.3,
            seed: 11,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_ne!(a, generate(&SynthConfig { seed: 12, ..cfg }).unwrap());
        assert!(a.values().iter().all(|v| v.is_finite() && *v > 0.0));
        assert_eq!(a.values().shape(), (100, 49));
        assert!(a.headroom(0) >= 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SynthConfig {
                rank: 0,
                ..Default::default()
            },
            SynthConfig {
                rank: 50,
                ..Default::default()
            },
            SynthConfig {
                noise: 1.0,
                ..Default::default()
            },
            SynthConfig {
                scale: 0.0,
                ..Default::default()
            },
            SynthConfig {
                etl_rows: 101,
                ..Default::default()
            },
        ] {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }
}
