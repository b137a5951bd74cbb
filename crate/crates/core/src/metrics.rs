//! Detection metrics and Kolmogorov–Smirnov helpers.
//!
//! Orientation is fixed: a lower score means more OOD-like, and OOD is the
//! positive class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// ID and OOD scores under the "lower ⇒ OOD" convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair<T> {
    id: Vec<T>,
    ood: Vec<T>,
}

impl<T: Real> ScoredPair<T> {
    pub fn new(id: Vec<T>, ood: Vec<T>) -> Result<Self> {
        if id.is_empty() || ood.is_empty() {
            return Err(Error::invalid("both ID and OOD score sets must be non-empty"));
        }
        if id.iter().chain(&ood).any(|v| !v.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(ScoredPair { id, ood })
    }

    pub fn id_scores(&self) -> &[T] {
        &self.id
    }

    pub fn ood_scores(&self) -> &[T] {
        &self.ood
    }

    /// The same scores with the roles of ID and OOD exchanged.
    pub fn swapped(&self) -> Self {
        ScoredPair {
            id: self.ood.clone(),
            ood: self.id.clone(),
        }
    }
}

/// P(ood < id) + ½·P(ood = id), from mid-rank sums.
pub fn auroc<T: Real>(p: &ScoredPair<T>) -> f64 {
    let (n_id, n_ood) = (p.id.len(), p.ood.len());
    let mut all: Vec<(T, bool)> =
        p.id.iter()
            .map(|&v| (v, true))
            .chain(p.ood.iter().map(|&v| (v, false)))
            .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut rank_sum_id = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let ids = all[i..j].iter().filter(|x| x.1).count();
        rank_sum_id += mid * ids as f64;
        i = j;
    }
    let u = rank_sum_id - (n_id * (n_id + 1)) as f64 / 2.0;
    u / (n_id as f64 * n_ood as f64)
}

/// FPR at the loosest threshold whose TPR reaches `tpr_target`.
///
/// With `t*` the `⌈target·m⌉`-th smallest OOD score, a sample is flagged when
/// its score is `≤ t*`; this is the limit of "score < t" as `t` decreases to
/// the smallest threshold that attains the target.
pub fn fpr_at_tpr<T: Real>(p: &ScoredPair<T>, tpr_target: f64) -> Result<f64> {
    if !(tpr_target > 0.0 && tpr_target < 1.0) {
        return Err(Error::invalid(format!(
            "tpr target must be in (0,1), got {tpr_target}"
        )));
    }
    let mut ood = p.ood.clone();
    ood.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let m = ood.len();
    let k = ((tpr_target * m as f64) - 1e-9).ceil().max(1.0) as usize;
    let t_star = ood[k.min(m) - 1];
    let flagged = p.id.iter().filter(|&&v| v <= t_star).count();
    Ok(flagged as f64 / p.id.len() as f64)
}

/// Sup-distance between the sample ECDF and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// KS distance to Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("ks_uniform needs at least one sample"));
    }
    if let Some(bad) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("sample {bad} outside [0,1]")));
    }
    Ok(ks_statistic(samples, |x| x))
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    xb.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn ks_c(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// Asymptotic one-sample KS critical value at level `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    ks_c(alpha) / (n as f64).sqrt()
}

pub fn ks_critical_two_sample(n: usize, m: usize, alpha: f64) -> f64 {
    ks_c(alpha) * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// `q`-quantile of the KS-to-uniform statistic for `n` uniform draws, by simulation.
pub fn ks_uniform_quantile_mc(n: usize, q: f64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..trials)
        .map(|_| {
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            ks_statistic(&xs, |x| x)
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((trials as f64 - 1.0) * q).round() as usize;
    stats[idx]
}

/// Two-sided exact sign test of zero median; zeros are dropped.
pub fn sign_test_p(diffs: &[f64]) -> f64 {
    let pos = diffs.iter().filter(|&&d| d > 0.0).count();
    let neg = diffs.iter().filter(|&&d| d < 0.0).count();
    let n = pos + neg;
    if n == 0 {
        return 1.0;
    }
    let k = pos.min(neg);
    // P(X ≤ k), X ~ Bin(n, ½), accumulated in log space
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_binom = 0.0f64;
    let mut tail = 0.0f64;
    for i in 0..=k {
        if i > 0 {
            ln_binom += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_binom + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}

/// Renders a metric pair the way result tables print them: `0.XXX (0.XXX)`.
pub fn format_auroc_fpr(auroc: f64, fpr: f64) -> String {
    format!("{auroc:.3} ({fpr:.3})")
}
