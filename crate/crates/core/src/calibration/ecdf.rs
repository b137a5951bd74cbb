use crate::error::{Error, Result};
use crate::real::Real;

/// Sorted reference scores with the add-one smoothed ECDF
/// `F̂(x) = (#{r ≤ x} + 1) / (N + 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfTable<T> {
    sorted: Vec<T>,
}

impl<T: Real> EcdfTable<T> {
    pub fn new(mut refs: Vec<T>) -> Result<Self> {
        if refs.len() < 2 {
            return Err(Error::invalid(format!(
                "an ECDF needs at least 2 reference scores, got {}",
                refs.len()
            )));
        }
        if let Some(i) = refs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        refs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(EcdfTable { sorted: refs })
    }

    /// For tables whose contents were already checked and sorted.
    pub(crate) fn from_sorted(sorted: Vec<T>) -> Result<Self> {
        if sorted.len() < 2 {
            return Err(Error::invalid("an ECDF needs at least 2 reference scores"));
        }
        if sorted.iter().any(|v| !v.is_finite()) || sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("ECDF references must be finite and ascending"));
        }
        Ok(EcdfTable { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[T] {
        &self.sorted
    }

    pub fn eval(&self, x: T) -> T {
        let count = self.sorted.partition_point(|&r| r <= x);
        T::of_usize(count + 1) / T::of_usize(self.sorted.len() + 2)
    }

    /// Lowest attainable value, `1/(N+2)`.
    pub fn floor(&self) -> T {
        T::one() / T::of_usize(self.sorted.len() + 2)
    }

    /// Lower-interpolation empirical quantile `sorted[⌊(N−1)q⌋]`.
    pub fn quantile(&self, q: f64) -> T {
        lower_quantile(&self.sorted, q)
    }
}

pub(crate) fn lower_quantile<T: Real>(sorted: &[T], q: f64) -> T {
    let idx = ((sorted.len() - 1) as f64 * q).floor() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Within-encoder combination of fork p-values.
#[inline]
pub fn level1_min<T: Real>(r_n: T, r_u: T) -> T {
    r_n.min(r_u)
}
