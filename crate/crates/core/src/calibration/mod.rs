//! ECDF p-values and the two-level min-gate.
//!
//! Per sample: `r_{k,f} = F̂_{k,f}(ℓ_{k,f})`, `e_k = min_f r_{k,f}`,
//! `ê_k = Ĝ_k(e_k)`, `s = min_k ê_k`, and the sample is OOD iff `s < τ`.

mod cal_file;
mod ecdf;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::feature_store::Fork;
use crate::real::Real;

pub use cal_file::{read_cal, write_cal, CAL1_MAGIC, CAL1_VERSION};
pub use ecdf::{level1_min, EcdfTable};

pub const MIN_CALIBRATION_SAMPLES: usize = 20;

/// Log-likelihoods of one encoder, one array per fork.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderScores<T> {
    pub name: String,
    pub forks: Vec<(Fork, Vec<T>)>,
}

impl<T> EncoderScores<T> {
    pub fn new(name: impl Into<String>, forks: Vec<(Fork, Vec<T>)>) -> Self {
        EncoderScores {
            name: name.into(),
            forks,
        }
    }

    fn fork(&self, f: Fork) -> Option<&[T]> {
        self.forks
            .iter()
            .find(|(g, _)| *g == f)
            .map(|(_, v)| v.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCalibration<T> {
    pub name: String,
    pub forks: Vec<(Fork, EcdfTable<T>)>,
    /// `Ĝ_k`, fitted on the validation `e_k`.
    pub level1: EcdfTable<T>,
}

impl<T: Real> EncoderCalibration<T> {
    #[inline]
    fn e_level(&self, lls: &[&[T]], i: usize) -> T {
        e_level(&self.forks, lls, i)
    }
}

#[inline]
fn e_level<T: Real>(forks: &[(Fork, EcdfTable<T>)], lls: &[&[T]], i: usize) -> T {
    let mut e = T::one();
    for ((_, tab), ll) in forks.iter().zip(lls) {
        e = level1_min(e, tab.eval(ll[i]));
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBundle<T> {
    encoders: Vec<EncoderCalibration<T>>,
    alpha: f64,
    tau: T,
    s_val: Vec<T>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must be in (0, 0.5], got {alpha}")))
    }
}

fn common_len<T>(scores: &[EncoderScores<T>]) -> Result<usize> {
    let n = scores
        .first()
        .and_then(|e| e.forks.first())
        .map(|(_, v)| v.len())
        .ok_or_else(|| Error::invalid("no encoder scores supplied"))?;
    for e in scores {
        if e.forks.is_empty() {
            return Err(Error::invalid(format!("encoder {:?} has no forks", e.name)));
        }
        for (_, v) in &e.forks {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "score array length",
                    expected: n,
                    found: v.len(),
                });
            }
        }
    }
    Ok(n)
}

/// Offline phase: fits every ECDF on the ID validation log-likelihoods and
/// sets `τ` to the lower `alpha`-quantile of the validation `s`.
pub fn calibrate<T: Real>(val: &[EncoderScores<T>], alpha: f64) -> Result<CalibrationBundle<T>> {
    check_alpha(alpha)?;
    let n = common_len(val)?;
    if n < MIN_CALIBRATION_SAMPLES {
        return Err(Error::invalid(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {n}"
        )));
    }
    for (i, e) in val.iter().enumerate() {
        if val[..i].iter().any(|o| o.name == e.name) {
            return Err(Error::invalid(format!("duplicate encoder {:?}", e.name)));
        }
        for (j, (f, _)) in e.forks.iter().enumerate() {
            if e.forks[..j].iter().any(|(g, _)| g == f) {
                return Err(Error::invalid(format!(
                    "duplicate fork {f} for encoder {:?}",
                    e.name
                )));
            }
        }
    }

    let mut encoders = Vec::with_capacity(val.len());
    let mut s = vec![T::one(); n];
    for e in val {
        let forks = e
            .forks
            .iter()
            .map(|(f, v)| Ok((*f, EcdfTable::new(v.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let lls: Vec<&[T]> = e.forks.iter().map(|(_, v)| v.as_slice()).collect();
        let e_k: Vec<T> = (0..n).map(|i| e_level(&forks, &lls, i)).collect();
        let level1 = EcdfTable::new(e_k.clone())?;
        for (si, &ek) in s.iter_mut().zip(&e_k) {
            *si = si.min(level1.eval(ek));
        }
        encoders.push(EncoderCalibration {
            name: e.name.clone(),
            forks,
            level1,
        });
    }
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let tau = ecdf::lower_quantile(&s, alpha);
    Ok(CalibrationBundle {
        encoders,
        alpha,
        tau,
        s_val: s,
    })
}

impl<T: Real> CalibrationBundle<T> {
    pub(crate) fn from_parts(
        encoders: Vec<EncoderCalibration<T>>,
        alpha: f64,
        tau: T,
        s_val: Vec<T>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if encoders.is_empty() || s_val.is_empty() {
            return Err(Error::invalid(
                "calibration bundle has no encoders or no validation scores",
            ));
        }
        if s_val.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("stored validation scores are not sorted"));
        }
        Ok(CalibrationBundle {
            encoders,
            alpha,
            tau,
            s_val,
        })
    }

    pub fn encoders(&self) -> &[EncoderCalibration<T>] {
        &self.encoders
    }

    pub fn encoder_names(&self) -> Vec<String> {
        self.encoders.iter().map(|e| e.name.clone()).collect()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// Combined validation scores, ascending.
    pub fn s_val(&self) -> &[T] {
        &self.s_val
    }

    /// Same bundle with `τ` re-read from the stored validation scores.
    pub fn adjust_threshold(&self, alpha_new: f64) -> Result<Self> {
        check_alpha(alpha_new)?;
        Ok(CalibrationBundle {
            alpha: alpha_new,
            tau: ecdf::lower_quantile(&self.s_val, alpha_new),
            ..self.clone()
        })
    }

    /// Online phase. Keys in `test` the bundle does not know are ignored.
    pub fn detect(&self, test: &[EncoderScores<T>]) -> Result<DetectionReport<T>> {
        let mut arrays: Vec<Vec<&[T]>> = Vec::with_capacity(self.encoders.len());
        for enc in &self.encoders {
            let src = test.iter().find(|e| e.name == enc.name);
            let mut per_fork = Vec::with_capacity(enc.forks.len());
            for (f, _) in &enc.forks {
                let arr = src.and_then(|e| e.fork(*f)).ok_or_else(|| Error::MissingKey {
                    encoder: enc.name.clone(),
                    fork: f.to_string(),
                })?;
                per_fork.push(arr);
            }
            arrays.push(per_fork);
        }
        let n = arrays[0][0].len();
        for a in arrays.iter().flatten() {
            if a.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "score array length",
                    expected: n,
                    found: a.len(),
                });
            }
            if let Some(row) = a.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col: 0 });
            }
        }

        let k = self.encoders.len();
        let rows: Vec<(T, usize, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let e_hat: Vec<T> = self
                    .encoders
                    .iter()
                    .zip(&arrays)
                    .map(|(enc, lls)| enc.level1.eval(enc.e_level(lls, i)))
                    .collect();
                let mut arg = 0;
                for j in 1..k {
                    if e_hat[j] < e_hat[arg] {
                        arg = j;
                    }
                }
                (e_hat[arg], arg, e_hat)
            })
            .collect();

        let mut report = DetectionReport {
            encoders: self.encoder_names(),
            tau: self.tau,
            s: Vec::with_capacity(n),
            is_ood: Vec::with_capacity(n),
            argmin: Vec::with_capacity(n),
            e_hat: Vec::with_capacity(n * k),
        };
        for (s, arg, e_hat) in rows {
            report.s.push(s);
            report.is_ood.push(s < self.tau);
            report.argmin.push(arg);
            report.e_hat.extend(e_hat);
        }
        Ok(report)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let encoders: Vec<_> = self
            .encoders
            .iter()
            .map(|e| {
                json!({
                    "name": e.name,
                    "forks": e.forks.iter().map(|(f, t)| json!({
                        "fork": f.as_str(),
                        "count": t.len(),
                        "min": t.sorted()[0].as_f64(),
                        "median": t.quantile(0.5).as_f64(),
                        "max": t.sorted()[t.len() - 1].as_f64(),
                    })).collect::<Vec<_>>(),
                    "level1_count": e.level1.len(),
                    "level1_median": e.level1.quantile(0.5).as_f64(),
                })
            })
            .collect();
        json!({
            "format": "CAL1",
            "alpha": self.alpha,
            "tau": self.tau.as_f64(),
            "n_val": self.s_val.len(),
            "encoders": encoders,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport<T> {
    pub encoders: Vec<String>,
    pub tau: T,
    pub s: Vec<T>,
    pub is_ood: Vec<bool>,
    /// Index into `encoders` of the smallest `ê_k` (lowest index on ties).
    pub argmin: Vec<usize>,
    /// n × K, row-major.
    pub e_hat: Vec<T>,
}

impl<T: Real> DetectionReport<T> {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn e_hat_row(&self, i: usize) -> &[T] {
        let k = self.encoders.len();
        &self.e_hat[i * k..(i + 1) * k]
    }

    pub fn flagged_fraction(&self) -> f64 {
        if self.s.is_empty() {
            return 0.0;
        }
        self.is_ood.iter().filter(|&&b| b).count() as f64 / self.s.len() as f64
    }

    /// `sample_index,s,is_ood,argmin_encoder,e_hat_1..e_hat_K`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_index,s,is_ood,argmin_encoder");
        for i in 1..=self.encoders.len() {
            out.push_str(&format!(",e_hat_{i}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{},{},{}",
                self.s[i].as_f64(),
                u8::from(self.is_ood[i]),
                self.encoders[self.argmin[i]]
            ));
            for v in self.e_hat_row(i) {
                out.push_str(&format!(",{}", v.as_f64()));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerCheck {
    /// Empirical `P(min_k U_k < τ)`.
    pub p_min: f64,
    /// Empirical `P(U_k < τ)` per encoder.
    pub p_each: Vec<f64>,
    pub holds: bool,
}

/// Checks `P(min_k U_k < τ) ≥ max_k P(U_k < τ)` on an OOD set.
pub fn min_gate_power_check<T: Real>(u: &[&[T]], tau: T) -> Result<PowerCheck> {
    let n = u
        .first()
        .map(|a| a.len())
        .ok_or_else(|| Error::invalid("no encoder arrays supplied"))?;
    if let Some(bad) = u.iter().find(|a| a.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "p-value array length",
            expected: n,
            found: bad.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyFeatureSet);
    }
    let frac = |c: usize| c as f64 / n as f64;
    let p_each: Vec<f64> = u
        .iter()
        .map(|a| frac(a.iter().filter(|&&v| v < tau).count()))
        .collect();
    let hits = (0..n)
        .filter(|&i| u.iter().map(|a| a[i]).fold(T::infinity(), T::min) < tau)
        .count();
    let p_min = frac(hits);
    let holds = p_each.iter().all(|&p| p_min >= p);
    Ok(PowerCheck { p_min, p_each, holds })
}
