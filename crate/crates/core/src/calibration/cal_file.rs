//! "CAL1" calibration bundles.
//!
//! ```text
//! 0..4    b"CAL1"
//! 4       version (1)
//! 5..8    reserved, zero
//! 8..16   alpha  f64 LE
//! 16..24  tau    f64 LE
//! 24..28  K      u32 LE
//! 28..36  n_val  u64 LE
//! then K encoder records:
//!   u32 name length, UTF-8 name, u8 fork count,
//!   per fork: u8 tag (0 normed, 1 unnormed), u64 N, N × f32 sorted references
//!   u64 N, N × f64 sorted level-1 references
//! then n_val × f64 sorted combined validation scores
//! ```

use std::fs;
use std::path::Path;

use super::{CalibrationBundle, EcdfTable, EncoderCalibration};
use crate::error::{Error, Result};
use crate::feature_store::Fork;
use crate::real::Real;

pub const CAL1_MAGIC: &[u8; 4] = b"CAL1";
pub const CAL1_VERSION: u8 = 1;
const FORMAT: &str = "CAL1";

pub fn to_bytes<T: Real>(b: &CalibrationBundle<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CAL1_MAGIC);
    out.push(CAL1_VERSION);
    out.extend_from_slice(&[0, 0, 0]);
    out.extend_from_slice(&b.alpha.to_le_bytes());
    out.extend_from_slice(&b.tau.as_f64().to_le_bytes());
    out.extend_from_slice(&(b.encoders.len() as u32).to_le_bytes());
    out.extend_from_slice(&(b.s_val.len() as u64).to_le_bytes());
    for e in &b.encoders {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.forks.len() as u8);
        for (f, tab) in &e.forks {
            out.push(f.tag());
            out.extend_from_slice(&(tab.len() as u64).to_le_bytes());
            for v in tab.sorted() {
                out.extend_from_slice(&v.as_f32().to_le_bytes());
            }
        }
        out.extend_from_slice(&(e.level1.len() as u64).to_le_bytes());
        for v in e.level1.sorted() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    for v in &b.s_val {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::Truncated {
                format: FORMAT,
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.buf.len() as u64,
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(width as u64) > remaining {
            return Err(Error::Truncated {
                format: FORMAT,
                expected: self.pos as u64 + n.saturating_mul(width as u64),
                found: self.buf.len() as u64,
            });
        }
        Ok(n as usize)
    }

    fn f32s<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }

    fn f64s<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Malformed {
        format: FORMAT,
        reason: reason.into(),
    }
}

pub fn from_bytes<T: Real>(buf: &[u8]) -> Result<CalibrationBundle<T>> {
    if buf.len() < 4 || &buf[..4] != CAL1_MAGIC {
        return Err(Error::BadMagic { format: FORMAT });
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u8()?;
    if version != CAL1_VERSION {
        return Err(Error::VersionMismatch {
            format: FORMAT,
            found: version,
            expected: CAL1_VERSION,
        });
    }
    r.take(3)?;
    let alpha = r.f64()?;
    let tau = r.f64()?;
    let k = r.u32()? as usize;
    let n_val = r.u64()?;
    let mut encoders = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| malformed("encoder name is not UTF-8"))?
            .to_string();
        let nf = r.u8()?;
        let mut forks = Vec::with_capacity(nf as usize);
        for _ in 0..nf {
            let tag = r.u8()?;
            let fork = Fork::from_tag(tag).ok_or_else(|| malformed(format!("unknown fork tag {tag}")))?;
            let n = r.len(4)?;
            forks.push((fork, EcdfTable::from_sorted(r.f32s(n)?)?));
        }
        let n = r.len(8)?;
        let level1 = EcdfTable::from_sorted(r.f64s(n)?)?;
        encoders.push(EncoderCalibration { name, forks, level1 });
    }
    let n_val = usize::try_from(n_val).map_err(|_| malformed("validation count overflows"))?;
    if n_val.saturating_mul(8) > buf.len() - r.pos {
        return Err(Error::Truncated {
            format: FORMAT,
            expected: (r.pos + n_val.saturating_mul(8)) as u64,
            found: buf.len() as u64,
        });
    }
    let s_val = r.f64s(n_val)?;
    if r.pos != buf.len() {
        return Err(malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    CalibrationBundle::from_parts(encoders, alpha, T::of(tau), s_val)
}

pub fn write_cal<T: Real>(path: impl AsRef<Path>, bundle: &CalibrationBundle<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(bundle)).map_err(|e| Error::io(path, e))
}

pub fn read_cal<T: Real>(path: impl AsRef<Path>) -> Result<CalibrationBundle<T>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
