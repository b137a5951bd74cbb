//! Feature matrices, their on-disk format, normalization forks and
//! synthetic multi-encoder scenarios.

mod fork;
mod fvec;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fork::{apply_fork, fit_fork_stats, invert_fork, ForkStats, SIGMA_FLOOR};
pub use fvec::{manifest_path, read_fvec, write_fvec, Manifest, FVEC_MAGIC, FVEC_VERSION};
pub use synthetic::{
    gen_synthetic, EncoderSpec, ShiftKind, ShiftSpec, SplitSizes, SyntheticData, SyntheticScenario, SCENARIOS,
};

/// Input view of one encoder: Z-scored with ID-train statistics, or raw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fork {
    Normed,
    Unnormed,
}

impl Fork {
    pub const ALL: [Fork; 2] = [Fork::Normed, Fork::Unnormed];

    pub fn as_str(self) -> &'static str {
        match self {
            Fork::Normed => "normed",
            Fork::Unnormed => "unnormed",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Fork::Normed => 0,
            Fork::Unnormed => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Fork> {
        match tag {
            0 => Some(Fork::Normed),
            1 => Some(Fork::Unnormed),
            _ => None,
        }
    }
}

impl fmt::Display for Fork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fork {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normed" | "n" => Ok(Fork::Normed),
            "unnormed" | "u" => Ok(Fork::Unnormed),
            other => Err(Error::invalid(format!(
                "unknown fork {other:?} (expected normed or unnormed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Provenance carried next to the matrix (persisted in the JSON manifest).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub encoder: String,
    /// `None` for raw encoder output that has not been routed to a fork yet.
    pub fork: Option<Fork>,
    pub split: Option<Split>,
    pub dataset: String,
    pub num_classes: Option<u32>,
    pub seed: Option<u64>,
    pub stats_file: Option<String>,
}

/// An n×d row-major matrix of encoder features plus optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f32>,
    pub labels: Option<Vec<u32>>,
    pub meta: FeatureMeta,
}

impl FeatureSet {
    /// Builds a validated feature set.
    pub fn new(
        n: usize,
        d: usize,
        data: Vec<f32>,
        labels: Option<Vec<u32>>,
        meta: FeatureMeta,
    ) -> Result<Self> {
        let fs = FeatureSet {
            n,
            d,
            data,
            labels,
            meta,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn from_rows(rows: &[Vec<f32>], meta: FeatureMeta) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: d,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, d, data, None, meta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::EmptyFeatureSet);
        }
        if self.data.len() != self.n * self.d {
            return Err(Error::DimensionMismatch {
                what: "data length (n·d)",
                expected: self.n * self.d,
                found: self.data.len(),
            });
        }
        if let Some(idx) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / self.d,
                col: idx % self.d,
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.n {
                return Err(Error::DimensionMismatch {
                    what: "label count",
                    expected: self.n,
                    found: labels.len(),
                });
            }
            if let Some(k) = self.meta.num_classes {
                if let Some(bad) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::invalid(format!(
                        "label {bad} out of range for {k} classes"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// Rows widened to `f64`, the usual input to training and likelihood code.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureSet {
            n: indices.len(),
            d: self.d,
            data,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            meta: self.meta.clone(),
        }
    }
}

/// Splits a pool into (remainder, held-out) with a seeded permutation.
///
/// Used to carve the validation split out of an ID test pool; the held-out
/// part gets `ceil(fraction·n)` rows. Both parts keep their original order.
pub fn holdout_split(pool: &FeatureSet, fraction: f64, seed: u64) -> Result<(FeatureSet, FeatureSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "holdout fraction must be in (0,1), got {fraction}"
        )));
    }
    let n_hold = ((pool.n as f64) * fraction).ceil() as usize;
    if n_hold == 0 || n_hold >= pool.n {
        return Err(Error::invalid(format!(
            "cannot hold out {n_hold} of {} rows",
            pool.n
        )));
    }
    let mut perm: Vec<usize> = (0..pool.n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held: Vec<usize> = perm[..n_hold].to_vec();
    let mut rest: Vec<usize> = perm[n_hold..].to_vec();
    held.sort_unstable();
    rest.sort_unstable();
    let mut rest_fs = pool.select(&rest);
    let mut held_fs = pool.select(&held);
    rest_fs.meta.seed = Some(seed);
    held_fs.meta.seed = Some(seed);
    held_fs.meta.split = Some(Split::Val);
    Ok((rest_fs, held_fs))
}
