//! FVEC: a flat little-endian feature matrix with an optional label column.
//!
//! ```text
//! 0..4    b"FVEC"
//! 4       version (1)
//! 5       flags, bit0 = labels present
//! 6..8    reserved, zero
//! 8..16   n   u64 LE
//! 16..24  d   u64 LE
//! 24..32  reserved, zero
//! 32..    n·d f32 LE, row-major
//!         n u32 LE labels (if flagged)
//! ```
//!
//! Provenance lives next to the matrix in `<name>.manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureMeta, FeatureSet, Fork, Split};
use crate::error::{Error, Result};

pub const FVEC_MAGIC: &[u8; 4] = b"FVEC";
pub const FVEC_VERSION: u8 = 1;
const HEADER_LEN: usize = 32;
const FLAG_LABELS: u8 = 1;

/// Sibling JSON record written alongside every FVEC file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub n: u64,
    pub d: u64,
    pub encoder: String,
    pub fork: Option<Fork>,
    pub split: Option<Split>,
    pub dataset: String,
    pub num_classes: Option<u32>,
    pub seed: Option<u64>,
    pub stats_file: Option<String>,
}

impl Manifest {
    fn from_set(fs: &FeatureSet) -> Self {
        Manifest {
            format: "FVEC1".into(),
            n: fs.n as u64,
            d: fs.d as u64,
            encoder: fs.meta.encoder.clone(),
            fork: fs.meta.fork,
            split: fs.meta.split,
            dataset: fs.meta.dataset.clone(),
            num_classes: fs.meta.num_classes,
            seed: fs.meta.seed,
            stats_file: fs.meta.stats_file.clone(),
        }
    }

    fn into_meta(self) -> FeatureMeta {
        FeatureMeta {
            encoder: self.encoder,
            fork: self.fork,
            split: self.split,
            dataset: self.dataset,
            num_classes: self.num_classes,
            seed: self.seed,
            stats_file: self.stats_file,
        }
    }
}

/// `dir/name.fvec` → `dir/name.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

pub(crate) fn encode(fs: &FeatureSet) -> Result<Vec<u8>> {
    fs.validate()?;
    let label_bytes = if fs.labels.is_some() { 4 * fs.n } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * fs.data.len() + label_bytes);
    out.extend_from_slice(FVEC_MAGIC);
    out.push(FVEC_VERSION);
    out.push(if fs.labels.is_some() { FLAG_LABELS } else { 0 });
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(fs.n as u64).to_le_bytes());
    out.extend_from_slice(&(fs.d as u64).to_le_bytes());
    out.extend_from_slice(&[0u8; 8]);
    for v in &fs.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &fs.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8], meta: FeatureMeta) -> Result<FeatureSet> {
    if bytes.len() < 4 || &bytes[..4] != FVEC_MAGIC {
        return Err(Error::BadMagic { format: "FVEC" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            format: "FVEC",
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes[4] != FVEC_VERSION {
        return Err(Error::VersionMismatch {
            format: "FVEC",
            found: bytes[4],
            expected: FVEC_VERSION,
        });
    }
    let flags = bytes[5];
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let has_labels = flags & FLAG_LABELS != 0;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(if has_labels { n.checked_mul(4)? } else { 0 }))
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Malformed {
            format: "FVEC",
            reason: format!("header dimensions overflow: n={n}, d={d}"),
        })?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated {
            format: "FVEC",
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::Malformed {
            format: "FVEC",
            reason: format!("{} trailing bytes", found - expected),
        });
    }
    let (n, d) = (n as usize, d as usize);
    let payload = &bytes[HEADER_LEN..HEADER_LEN + 4 * n * d];
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = has_labels.then(|| {
        bytes[HEADER_LEN + 4 * n * d..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    });
    FeatureSet::new(n, d, data, labels, meta)
}

/// Writes `fs` to `path` and its manifest next to it.
pub fn write_fvec(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(fs)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&Manifest::from_set(fs)).expect("manifest serializes");
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Reads an FVEC file; provenance is taken from the sibling manifest when present.
pub fn read_fvec(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let meta = if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            format: "FVEC manifest",
            reason: e.to_string(),
        })?;
        manifest.into_meta()
    } else {
        FeatureMeta::default()
    };
    decode(&bytes, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureSet {
        FeatureSet::new(
            2,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            None,
            FeatureMeta {
                encoder: "clip".into(),
                fork: Some(Fork::Unnormed),
                split: Some(Split::Test),
                dataset: "toy".into(),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn two_by_three_is_56_bytes_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.fvec");
        let fs = sample();
        write_fvec(&fs, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 32 + 24);
        assert!(dir.path().join("toy.manifest.json").exists());
        assert_eq!(read_fvec(&path).unwrap(), fs);
    }

    #[test]
    fn empty_set_is_rejected() {
        let fs = FeatureSet {
            n: 0,
            d: 3,
            data: vec![],
            labels: None,
            meta: FeatureMeta::default(),
        };
        let err = encode(&fs).unwrap_err();
        assert_eq!(err.to_string(), "empty feature set");
    }

    #[test]
    fn nan_is_reported_with_its_position() {
        let mut fs = sample();
        fs.data[1] = f32::NAN;
        let err = encode(&fs).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
        assert!(err.to_string().contains("row 0, column 1"));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        let err = decode(&bytes, FeatureMeta::default()).unwrap_err();
        assert_eq!(err.to_string(), "not an FVEC file");
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode(&sample()).unwrap();
        bytes.truncate(bytes.len() - 4);
        let err = decode(&bytes, FeatureMeta::default()).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 9;
        let err = decode(&bytes, FeatureMeta::default()).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 9, .. }));
    }

    #[test]
    fn labels_are_appended_after_payload() {
        let mut fs = sample();
        fs.labels = Some(vec![3, 7]);
        let bytes = encode(&fs).unwrap();
        assert_eq!(bytes[5] & 1, 1);
        assert_eq!(bytes.len(), 32 + 24 + 8);
        assert_eq!(&bytes[56..60], &3u32.to_le_bytes());
        assert_eq!(decode(&bytes, fs.meta.clone()).unwrap(), fs);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            n in 1usize..12,
            d in 1usize..9,
            seed in any::<u64>(),
            with_labels in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n * d)
                .map(|_| f32::from_bits(rng.random::<u32>() & 0xff7f_ffff))
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let labels = with_labels.then(|| (0..n).map(|_| rng.random_range(0..10)).collect());
            let fs = FeatureSet::new(n, d, data, labels, FeatureMeta::default()).unwrap();
            let back = decode(&encode(&fs).unwrap(), FeatureMeta::default()).unwrap();
            prop_assert_eq!(back.labels, fs.labels);
            prop_assert!(back.data.iter().zip(&fs.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
