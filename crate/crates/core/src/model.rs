//! Trained score model and its "RDM1" file format.
//!
//! ```text
//! 0..4    b"RDM1"
//! 4       version (1)
//! 5..8    reserved, zero
//! 8..40   d, hidden, depth, t_emb_dim        u64 LE each
//! 40..72  beta_min, beta_max, T, t_eps       f64 LE each
//! 72..    trainable parameters, f32 LE, declaration order
//!         (w_in, b_in, [w_l, b_l]×depth, w_out, b_out), then the
//!         t_emb_dim/2 embedding frequencies
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::score_net::{NetDims, ScoreNet};
use crate::vpsde::VpSchedule;

pub const RDM1_MAGIC: &[u8; 4] = b"RDM1";
pub const RDM1_VERSION: u8 = 1;
const HEADER_LEN: usize = 72;

/// A score network together with the schedule it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel<T> {
    pub net: ScoreNet<T>,
    pub schedule: VpSchedule<T>,
}

impl<T: Real> ScoreModel<T> {
    pub fn dim(&self) -> usize {
        self.net.dims().d
    }

    pub fn cast<U: Real>(&self) -> ScoreModel<U> {
        ScoreModel {
            net: self.net.cast(),
            schedule: self.schedule.cast(),
        }
    }

    /// Serializes to RDM1; parameters are narrowed to `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.net.dims();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.net.params().len() + self.net.freqs().len()));
        out.extend_from_slice(RDM1_MAGIC);
        out.push(RDM1_VERSION);
        out.extend_from_slice(&[0, 0, 0]);
        for v in [dims.d, dims.hidden, dims.depth, dims.t_emb_dim] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        let s = &self.schedule;
        for v in [s.beta_min, s.beta_max, s.t_end, s.t_eps] {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        for p in self.net.params().iter().chain(self.net.freqs()) {
            out.extend_from_slice(&p.as_f32().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != RDM1_MAGIC {
            return Err(Error::BadMagic { format: "RDM1" });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                format: "RDM1",
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        if bytes[4] != RDM1_VERSION {
            return Err(Error::VersionMismatch {
                format: "RDM1",
                found: bytes[4],
                expected: RDM1_VERSION,
            });
        }
        let u = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let f = |i: usize| f64::from_le_bytes(bytes[40 + 8 * i..48 + 8 * i].try_into().unwrap());
        let malformed = |reason: String| Error::Malformed {
            format: "RDM1",
            reason,
        };
        let to_usize = |v: u64| usize::try_from(v).map_err(|_| malformed(format!("dimension {v} too large")));
        let dims = NetDims {
            d: to_usize(u(0))?,
            hidden: to_usize(u(1))?,
            depth: to_usize(u(2))?,
            t_emb_dim: to_usize(u(3))?,
        };
        dims.validate().map_err(|e| malformed(e.to_string()))?;
        if dims.d > 1 << 20 || dims.hidden > 1 << 20 || dims.depth > 1 << 12 || dims.t_emb_dim > 1 << 16 {
            return Err(malformed(format!("implausible dimensions {dims:?}")));
        }
        let schedule = VpSchedule::new(T::of(f(0)), T::of(f(1)), T::of(f(2)), T::of(f(3)))
            .map_err(|e| malformed(e.to_string()))?;
        let n_params = dims.param_count();
        let n_freqs = dims.t_emb_dim / 2;
        let expected = (HEADER_LEN + 4 * (n_params + n_freqs)) as u64;
        let found = bytes.len() as u64;
        if found < expected {
            return Err(Error::Truncated {
                format: "RDM1",
                expected,
                found,
            });
        }
        if found > expected {
            return Err(malformed(format!("{} trailing bytes", found - expected)));
        }
        let mut values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64));
        let params: Vec<T> = values.by_ref().take(n_params).collect();
        let freqs: Vec<T> = values.collect();
        let net = ScoreNet::from_parts(dims, params, freqs)?;
        Ok(ScoreModel { net, schedule })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
