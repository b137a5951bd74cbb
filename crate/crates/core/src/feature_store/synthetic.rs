//! Seeded multi-encoder feature generators.
//!
//! Every ID sample starts from a latent `u ~ N(0, I)` (optionally offset by a
//! class mean); encoder `k` observes `z_k = A_k u + noise_k·ξ`. A shift only
//! touches latent coordinates or noise channels that exactly one encoder
//! observes, so which encoder can detect it is fixed by construction.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureMeta, FeatureSet, Split};
use crate::error::{Error, Result};

/// Names accepted by [`SyntheticScenario::named`].
pub const SCENARIOS: &[&str] = &["tri-encoder"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    pub d: usize,
    /// d × latent_dim, row-major.
    pub projection: Vec<f64>,
    pub noise_scale: f64,
}

impl EncoderSpec {
    /// Channels this encoder responds to: latent coordinates with a non-zero
    /// projection column, plus its own noise channel.
    pub fn sensitivity_tags(&self, latent_dim: usize) -> BTreeSet<String> {
        let mut tags = BTreeSet::new();
        for j in 0..latent_dim {
            if (0..self.d).any(|i| self.projection[i * latent_dim + j] != 0.0) {
                tags.insert(format!("latent:{j}"));
            }
        }
        if self.noise_scale > 0.0 {
            tags.insert(format!("noise:{}", self.name));
        }
        tags
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShiftKind {
    /// `u[dim] += delta` (random sign per sample when `symmetric`).
    LatentOffset { dim: usize, delta: f64, symmetric: bool },
    /// `u[dim] *= factor`.
    LatentScale { dim: usize, factor: f64 },
    /// Multiplies one encoder's observation noise by `factor`.
    NoiseScale { encoder: usize, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub name: String,
    pub kind: ShiftKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub num_classes: usize,
    /// Latent coordinates that carry the class means.
    pub dims: Vec<usize>,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub name: String,
    pub latent_dim: usize,
    pub encoders: Vec<EncoderSpec>,
    pub shifts: Vec<ShiftSpec>,
    pub classes: Option<ClassSpec>,
    /// Multiplier on every shift's magnitude; 0 turns all shifts into no-ops.
    pub shift_strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub ood: usize,
}

impl SplitSizes {
    pub fn uniform(n: usize) -> Self {
        SplitSizes {
            train: n,
            val: n,
            test: n,
            ood: n,
        }
    }
}

/// ID splits for one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSplits {
    pub encoder: String,
    pub train: FeatureSet,
    pub val: FeatureSet,
    pub test: FeatureSet,
}

/// One shifted sample set, observed by every encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct OodSet {
    pub shift: String,
    /// Indexed like [`SyntheticScenario::encoders`].
    pub per_encoder: Vec<FeatureSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub id: Vec<EncoderSplits>,
    pub ood: Vec<OodSet>,
}

impl SyntheticData {
    pub fn encoder(&self, name: &str) -> Option<&EncoderSplits> {
        self.id.iter().find(|e| e.encoder == name)
    }

    pub fn shift(&self, name: &str) -> Option<&OodSet> {
        self.ood.iter().find(|s| s.shift == name)
    }
}

/// Orthonormal 3×3 block from two rotation angles, padded with zero rows.
fn rotated_block(d: usize, latent_dim: usize, cols: [usize; 3], theta: f64, phi: f64) -> Vec<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    // R_z(theta) · R_x(phi)
    let q = [[ct, -st * cp, st * sp], [st, ct * cp, -ct * sp], [0.0, sp, cp]];
    let mut a = vec![0.0; d * latent_dim];
    for (i, row) in q.iter().enumerate().take(d.min(3)) {
        for (c, &v) in cols.iter().zip(row) {
            a[i * latent_dim + c] = v;
        }
    }
    a
}

impl SyntheticScenario {
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "tri-encoder" => Ok(Self::tri_encoder()),
            other => Err(Error::invalid(format!(
                "unknown scenario {other:?}; available: {}",
                SCENARIOS.join(", ")
            ))),
        }
    }

    /// Three encoders sharing two latent coordinates, each with one private
    /// coordinate; one shift per encoder (domain → e1, semantic → e2,
    /// covariate → e3).
    pub fn tri_encoder() -> Self {
        let latent_dim = 5;
        let encoders = vec![
            EncoderSpec {
                name: "e1".into(),
                d: 3,
                projection: rotated_block(3, latent_dim, [0, 1, 2], 0.4, 1.1),
                noise_scale: 0.1,
            },
            EncoderSpec {
                name: "e2".into(),
                d: 4,
                projection: rotated_block(4, latent_dim, [0, 1, 3], 1.3, 0.5),
                noise_scale: 0.1,
            },
            EncoderSpec {
                name: "e3".into(),
                d: 5,
                projection: rotated_block(5, latent_dim, [0, 1, 4], 2.2, 0.8),
                noise_scale: 0.1,
            },
        ];
        let shifts = vec![
            ShiftSpec {
                name: "domain".into(),
                kind: ShiftKind::LatentOffset {
                    dim: 2,
                    delta: 6.0,
                    symmetric: false,
                },
            },
            ShiftSpec {
                name: "semantic".into(),
                kind: ShiftKind::LatentOffset {
                    dim: 3,
                    delta: 6.0,
                    symmetric: true,
                },
            },
            ShiftSpec {
                name: "covariate".into(),
                kind: ShiftKind::NoiseScale {
                    encoder: 2,
                    factor: 8.0,
                },
            },
        ];
        SyntheticScenario {
            name: "tri-encoder".into(),
            latent_dim,
            encoders,
            shifts,
            classes: Some(ClassSpec {
                num_classes: 4,
                dims: vec![0, 1],
                separation: 1.0,
            }),
            shift_strength: 1.0,
        }
    }

    pub fn with_shift_strength(mut self, strength: f64) -> Self {
        self.shift_strength = strength;
        self
    }

    fn shift_tag(&self, kind: &ShiftKind) -> Result<String> {
        match *kind {
            ShiftKind::LatentOffset { dim, .. } | ShiftKind::LatentScale { dim, .. } => {
                if dim >= self.latent_dim {
                    return Err(Error::invalid(format!(
                        "shift latent dim {dim} ≥ latent_dim {}",
                        self.latent_dim
                    )));
                }
                Ok(format!("latent:{dim}"))
            }
            ShiftKind::NoiseScale { encoder, .. } => self
                .encoders
                .get(encoder)
                .map(|e| format!("noise:{}", e.name))
                .ok_or_else(|| Error::invalid(format!("shift names encoder {encoder}"))),
        }
    }

    /// Index of the only encoder able to see `shift`.
    pub fn owner_of(&self, shift: &ShiftSpec) -> Result<usize> {
        let tag = self.shift_tag(&shift.kind)?;
        let owners: Vec<usize> = self
            .encoders
            .iter()
            .enumerate()
            .filter(|(_, e)| e.sensitivity_tags(self.latent_dim).contains(&tag))
            .map(|(k, _)| k)
            .collect();
        match owners.as_slice() {
            [k] => Ok(*k),
            _ => Err(Error::invalid(format!(
                "shift {:?} ({tag}) must be visible to exactly one encoder, found {}",
                shift.name,
                owners.len()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.encoders.is_empty() {
            return Err(Error::invalid("scenario needs a latent space and encoders"));
        }
        for e in &self.encoders {
            if e.d == 0 || e.projection.len() != e.d * self.latent_dim {
                return Err(Error::DimensionMismatch {
                    what: "encoder projection",
                    expected: e.d * self.latent_dim,
                    found: e.projection.len(),
                });
            }
        }
        if let Some(c) = &self.classes {
            if c.num_classes < 1 || c.dims.iter().any(|&j| j >= self.latent_dim) {
                return Err(Error::invalid("class spec out of range"));
            }
        }
        for s in &self.shifts {
            self.owner_of(s)?;
        }
        Ok(())
    }

    fn class_mean(&self, c: usize, j_slot: usize) -> f64 {
        let spec = self.classes.as_ref().expect("class spec present");
        let angle = std::f64::consts::TAU * c as f64 / spec.num_classes as f64
            + j_slot as f64 * std::f64::consts::FRAC_PI_2;
        spec.separation * angle.cos()
    }

    /// Draws `n` rows for every encoder, optionally under one shift.
    fn sample(&self, n: usize, shift: Option<&ShiftKind>, rng: &mut ChaCha8Rng) -> Vec<(Vec<f32>, Vec<u32>)> {
        let k = self.encoders.len();
        let mut out: Vec<(Vec<f32>, Vec<u32>)> = self
            .encoders
            .iter()
            .map(|e| (Vec::with_capacity(n * e.d), Vec::with_capacity(n)))
            .collect();
        let s = self.shift_strength;
        let mut u = vec![0.0f64; self.latent_dim];
        for _ in 0..n {
            let label = match &self.classes {
                Some(c) => rng.random_range(0..c.num_classes),
                None => 0,
            };
            for v in u.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            if let Some(c) = &self.classes {
                for (slot, &j) in c.dims.iter().enumerate() {
                    u[j] += self.class_mean(label, slot);
                }
            }
            let mut noise_factor = vec![1.0f64; k];
            match shift {
                Some(&ShiftKind::LatentOffset {
                    dim,
                    delta,
                    symmetric,
                }) => {
                    let sign = if symmetric && rng.random::<bool>() {
                        -1.0
                    } else {
                        1.0
                    };
                    u[dim] += sign * delta * s;
                }
                Some(&ShiftKind::LatentScale { dim, factor }) => {
                    u[dim] *= 1.0 + (factor - 1.0) * s;
                }
                Some(&ShiftKind::NoiseScale { encoder, factor }) => {
                    noise_factor[encoder] = 1.0 + (factor - 1.0) * s;
                }
                None => {}
            }
            for ((e, (data, labels)), &nf) in self.encoders.iter().zip(out.iter_mut()).zip(&noise_factor) {
                for i in 0..e.d {
                    let row = &e.projection[i * self.latent_dim..(i + 1) * self.latent_dim];
                    let signal: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
                    let xi: f64 = rng.sample(StandardNormal);
                    data.push((signal + e.noise_scale * nf * xi) as f32);
                }
                labels.push(label as u32);
            }
        }
        out
    }

    fn to_sets(
        &self,
        raw: Vec<(Vec<f32>, Vec<u32>)>,
        n: usize,
        split: Split,
        dataset: &str,
        seed: u64,
    ) -> Result<Vec<FeatureSet>> {
        raw.into_iter()
            .zip(&self.encoders)
            .map(|((data, labels), e)| {
                let meta = FeatureMeta {
                    encoder: e.name.clone(),
                    fork: None,
                    split: Some(split),
                    dataset: dataset.to_string(),
                    num_classes: self.classes.as_ref().map(|c| c.num_classes as u32),
                    seed: Some(seed),
                    stats_file: None,
                };
                FeatureSet::new(n, e.d, data, self.classes.as_ref().map(|_| labels), meta)
            })
            .collect()
    }
}

/// Generates ID train/val/test splits and one OOD set per shift.
///
/// Each split draws from its own ChaCha stream of `seed`, so outputs are a
/// pure function of `(scenario, sizes, seed)`.
pub fn gen_synthetic(scenario: &SyntheticScenario, sizes: SplitSizes, seed: u64) -> Result<SyntheticData> {
    scenario.validate()?;
    for (what, n) in [
        ("train", sizes.train),
        ("val", sizes.val),
        ("test", sizes.test),
        ("ood", sizes.ood),
    ] {
        if n < 2 {
            return Err(Error::invalid(format!("{what} split needs ≥ 2 rows, got {n}")));
        }
    }
    for e in &scenario.encoders {
        if e.projection.iter().all(|&a| a == 0.0) {
            log::warn!("encoder {} has a zero projection; it only observes noise", e.name);
        }
    }
    let stream_rng = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    };
    let id_name = format!("{}-id", scenario.name);
    let mut per_split = Vec::new();
    for (stream, split, n) in [
        (0, Split::Train, sizes.train),
        (1, Split::Val, sizes.val),
        (2, Split::Test, sizes.test),
    ] {
        let raw = scenario.sample(n, None, &mut stream_rng(stream));
        per_split.push(scenario.to_sets(raw, n, split, &id_name, seed)?);
    }
    let mut test = per_split.pop().unwrap().into_iter();
    let mut val = per_split.pop().unwrap().into_iter();
    let train = per_split.pop().unwrap().into_iter();
    let id = train
        .map(|tr| EncoderSplits {
            encoder: tr.meta.encoder.clone(),
            train: tr,
            val: val.next().unwrap(),
            test: test.next().unwrap(),
        })
        .collect();

    let mut ood = Vec::new();
    for (i, shift) in scenario.shifts.iter().enumerate() {
        let raw = scenario.sample(sizes.ood, Some(&shift.kind), &mut stream_rng(16 + i as u64));
        ood.push(OodSet {
            shift: shift.name.clone(),
            per_encoder: scenario.to_sets(raw, sizes.ood, Split::Test, &shift.name, seed)?,
        });
    }
    Ok(SyntheticData { id, ood })
}
