//! ID-only encoder diagnostics: class effect size η², corruption shift Δμ,
//! and Spearman-ρ redundancy screening.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_SCREEN_THRESHOLD: f64 = 0.5;

fn check_finite<T: Real>(v: &[T]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(row) => Err(Error::NonFinite { row, col: 0 }),
        None => Ok(()),
    }
}

fn mean<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64()).sum::<f64>() / v.len() as f64
}

/// `SS_between / SS_total` of `lls` grouped by `labels`; 0 when every value is equal.
pub fn eta_squared<T: Real>(lls: &[T], labels: &[u32]) -> Result<f64> {
    if lls.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: lls.len(),
            found: labels.len(),
        });
    }
    check_finite(lls)?;
    let mut groups: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    for (&l, &c) in lls.iter().zip(labels) {
        let g = groups.entry(c).or_default();
        g.0 += 1;
        g.1 += l.as_f64();
    }
    if groups.len() < 2 {
        return Err(Error::NeedTwoClasses(groups.len()));
    }
    let mu = mean(lls);
    let ss_total: f64 = lls.iter().map(|l| (l.as_f64() - mu).powi(2)).sum();
    if ss_total == 0.0 {
        return Ok(0.0);
    }
    let ss_between: f64 = groups
        .values()
        .map(|&(n, s)| n as f64 * (s / n as f64 - mu).powi(2))
        .sum();
    Ok((ss_between / ss_total).clamp(0.0, 1.0))
}

/// `mean(clean) − mean(corrupt)` in nats.
pub fn delta_mu<T: Real>(clean: &[T], corrupt: &[T]) -> Result<f64> {
    if clean.is_empty() || corrupt.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    check_finite(clean)?;
    check_finite(corrupt)?;
    Ok(mean(clean) - mean(corrupt))
}

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks<T: Real>(v: &[T]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` if either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_rho<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "rank correlation input",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::invalid("rank correlation needs at least 3 points"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let constant = |r: &[f64]| r.iter().all(|&x| x == r[0]);
    if constant(&ra) {
        return Err(Error::RankUndefined("first argument"));
    }
    if constant(&rb) {
        return Err(Error::RankUndefined("second argument"));
    }
    pearson(&ra, &rb).ok_or(Error::RankUndefined("input"))
}

/// Symmetric Spearman matrix with unit diagonal.
pub fn rho_matrix<T: Real>(models: &[&[T]]) -> Result<Vec<Vec<f64>>> {
    let k = models.len();
    let mut m = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let r = spearman_rho(models[i], models[j])?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub threshold: f64,
    pub accepted: Vec<String>,
    pub rejected: Vec<String>,
    pub rho: Vec<Vec<f64>>,
}

/// Greedy in input order: a candidate joins iff its ρ with every accepted
/// model is below `threshold`.
pub fn screen_encoders(names: &[String], rho: &[Vec<f64>], threshold: f64) -> Result<ScreeningReport> {
    let k = names.len();
    if rho.len() != k || rho.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            what: "rho matrix",
            expected: k,
            found: rho.len(),
        });
    }
    let mut accepted: Vec<usize> = Vec::new();
    let mut rejected = Vec::new();
    for i in 0..k {
        if accepted.iter().all(|&j| rho[i][j] < threshold) {
            accepted.push(i);
        } else {
            rejected.push(names[i].clone());
        }
    }
    Ok(ScreeningReport {
        threshold,
        accepted: accepted.into_iter().map(|i| names[i].clone()).collect(),
        rejected,
        rho: rho.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    pub encoder: String,
    pub fork: String,
    pub eta2_clean: Option<f64>,
    pub eta2_corr: Option<f64>,
    pub delta_mu: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticProfile {
    pub models: Vec<ModelDiagnostics>,
    /// Row/column labels of `rho`.
    pub rho_labels: Vec<String>,
    pub rho: Vec<Vec<f64>>,
}

/// CSV with a header row and one labelled row per model.
pub fn matrix_csv(labels: &[String], m: &[Vec<f64>]) -> String {
    let mut out = String::from("model");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(m) {
        out.push_str(l);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
