use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSet, Fork};
use crate::error::{Error, Result};

/// Lower bound on per-dimension standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Per-dimension mean and standard deviation of the ID training split.
///
/// The standard deviation uses the population divisor `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForkStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Always `"population"`; recorded so readers know which convention produced `sigma`.
    pub std_divisor: String,
    pub sigma_floor: f64,
}

impl ForkStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("stats serialize");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats: ForkStats = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            format: "fork stats",
            reason: e.to_string(),
        })?;
        if stats.mu.len() != stats.sigma.len() || stats.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Malformed {
                format: "fork stats",
                reason: "sigma must be positive and match mu in length".into(),
            });
        }
        Ok(stats)
    }
}

pub fn fit_fork_stats(train: &FeatureSet) -> Result<ForkStats> {
    if train.n < 2 {
        return Err(Error::invalid(format!(
            "fork statistics need n ≥ 2 rows, got {}",
            train.n
        )));
    }
    let n = train.n as f64;
    let mut mu = vec![0.0f64; train.d];
    for row in train.rows() {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; train.d];
    for row in train.rows() {
        for ((s, &m), &v) in var.iter_mut().zip(&mu).zip(row) {
            let dv = v as f64 - m;
            *s += dv * dv;
        }
    }
    let sigma = var.into_iter().map(|s| (s / n).sqrt().max(SIGMA_FLOOR)).collect();
    Ok(ForkStats {
        mu,
        sigma,
        std_divisor: "population".into(),
        sigma_floor: SIGMA_FLOOR,
    })
}

/// Routes raw features to a fork: Z-scored with `stats`, or unchanged with `None`.
pub fn apply_fork(fs: &FeatureSet, stats: Option<&ForkStats>) -> Result<FeatureSet> {
    let mut out = fs.clone();
    match stats {
        None => out.meta.fork = Some(Fork::Unnormed),
        Some(st) => {
            if st.dim() != fs.d {
                return Err(Error::DimensionMismatch {
                    what: "fork statistics",
                    expected: fs.d,
                    found: st.dim(),
                });
            }
            for row in out.data.chunks_exact_mut(fs.d) {
                for ((v, &m), &s) in row.iter_mut().zip(&st.mu).zip(&st.sigma) {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
            out.meta.fork = Some(Fork::Normed);
        }
    }
    Ok(out)
}

/// Undoes [`apply_fork`] with the same statistics.
pub fn invert_fork(fs: &FeatureSet, stats: &ForkStats) -> Result<FeatureSet> {
    if stats.dim() != fs.d {
        return Err(Error::DimensionMismatch {
            what: "fork statistics",
            expected: fs.d,
            found: stats.dim(),
        });
    }
    let mut out = fs.clone();
    for row in out.data.chunks_exact_mut(fs.d) {
        for ((v, &m), &s) in row.iter_mut().zip(&stats.mu).zip(&stats.sigma) {
            *v = (*v as f64 * s + m) as f32;
        }
    }
    out.meta.fork = None;
    Ok(out)
}
