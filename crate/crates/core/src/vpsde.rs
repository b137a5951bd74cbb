//! Variance-preserving SDE schedule and the denoising score-matching loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::score_net::{ScoreField, ScoreNet};

/// Linear schedule `β(t) = β_min + t(β_max − β_min)` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpSchedule<T> {
    pub beta_min: T,
    pub beta_max: T,
    pub t_end: T,
    /// Smallest diffusion time ever sampled or integrated from.
    pub t_eps: T,
}

impl<T: Real> Default for VpSchedule<T> {
    fn default() -> Self {
        VpSchedule {
            beta_min: T::of(0.1),
            beta_max: T::of(20.0),
            t_end: T::one(),
            t_eps: T::of(1e-5),
        }
    }
}

impl<T: Real> VpSchedule<T> {
    pub fn new(beta_min: T, beta_max: T, t_end: T, t_eps: T) -> Result<Self> {
        let s = VpSchedule {
            beta_min,
            beta_max,
            t_end,
            t_eps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if !(z < self.beta_min && self.beta_min < self.beta_max) {
            return Err(Error::invalid(format!(
                "need 0 < beta_min < beta_max, got {} and {}",
                self.beta_min, self.beta_max
            )));
        }
        if !(z < self.t_eps && self.t_eps < self.t_end) {
            return Err(Error::invalid(format!(
                "need 0 < t_eps < T, got {} and {}",
                self.t_eps, self.t_end
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> VpSchedule<U> {
        VpSchedule {
            beta_min: U::of(self.beta_min.as_f64()),
            beta_max: U::of(self.beta_max.as_f64()),
            t_end: U::of(self.t_end.as_f64()),
            t_eps: U::of(self.t_eps.as_f64()),
        }
    }

    #[inline]
    pub fn beta(&self, t: T) -> T {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    #[inline]
    fn int_beta_raw(&self, t: T) -> T {
        self.beta_min * t + T::of(0.5) * (self.beta_max - self.beta_min) * t * t
    }

    fn check_t(&self, t: T) -> Result<()> {
        if t >= T::zero() && t <= self.t_end {
            Ok(())
        } else {
            Err(Error::invalid(format!("t = {t} outside [0, {}]", self.t_end)))
        }
    }

    /// `∫₀ᵗ β(s) ds = β_min·t + ½(β_max − β_min)·t²`.
    pub fn int_beta(&self, t: T) -> Result<T> {
        self.check_t(t)?;
        Ok(self.int_beta_raw(t))
    }

    /// `(α_t, σ_t)` with `α_t = exp(−½∫β)` and `σ_t = √(1 − α_t²)`.
    pub fn marginal(&self, t: T) -> Result<(T, T)> {
        self.check_t(t)?;
        Ok(self.marginal_unchecked(t))
    }

    #[inline]
    pub(crate) fn marginal_unchecked(&self, t: T) -> (T, T) {
        let half = T::of(0.5);
        let ib = self.int_beta_raw(t);
        let alpha = (-half * ib).exp();
        // 1 − α² = −expm1(−∫β) keeps σ accurate for small t
        let sigma = (-(-ib).exp_m1()).sqrt();
        (alpha, sigma)
    }
}

/// Diffusion times and Gaussian noise for one batch of DSM rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmNoise<T> {
    pub t: Vec<T>,
    /// m × d, row-major.
    pub eps: Vec<T>,
}

/// Draws `t ~ U(t_eps, T)` and `ε ~ N(0, I)` independently for each row.
pub fn sample_dsm_noise<T: Real>(
    sched: &VpSchedule<T>,
    m: usize,
    d: usize,
    rng: &mut impl Rng,
) -> DsmNoise<T> {
    let (lo, hi) = (sched.t_eps.as_f64(), sched.t_end.as_f64());
    let mut t = Vec::with_capacity(m);
    let mut eps = Vec::with_capacity(m * d);
    for _ in 0..m {
        t.push(T::of(rng.random_range(lo..hi)));
        for _ in 0..d {
            eps.push(T::of(rng.sample::<f64, _>(StandardNormal)));
        }
    }
    DsmNoise { t, eps }
}

/// Mean over rows of `‖σ_t·s(α_t z + σ_t ε, t) + ε‖²`, for any score field.
pub fn dsm_loss_value<T: Real, S: ScoreField<T> + ?Sized>(
    score: &S,
    sched: &VpSchedule<T>,
    batch: &[T],
    noise: &DsmNoise<T>,
) -> T {
    let d = score.dim();
    let m = batch.len() / d;
    let mut zt = vec![T::zero(); d];
    let mut s = vec![T::zero(); d];
    let mut total = T::zero();
    for i in 0..m {
        let t = noise.t[i];
        let (alpha, sigma) = sched.marginal_unchecked(t);
        let z = &batch[i * d..(i + 1) * d];
        let e = &noise.eps[i * d..(i + 1) * d];
        for j in 0..d {
            zt[j] = alpha * z[j] + sigma * e[j];
        }
        score.eval(&zt, t, &mut s, &[], &mut []);
        total += s
            .iter()
            .zip(e)
            .map(|(&sj, &ej)| {
                let r = sigma * sj + ej;
                r * r
            })
            .sum::<T>();
    }
    total / T::of_usize(m)
}

/// DSM loss and its parameter gradient for given noise.
pub fn dsm_loss_with_noise<T: Real>(
    net: &ScoreNet<T>,
    sched: &VpSchedule<T>,
    batch: &[T],
    noise: &DsmNoise<T>,
) -> (T, Vec<T>) {
    let d = net.dims().d;
    let m = batch.len() / d;
    let scale = T::of(2.0) / T::of_usize(m);
    let mut grad = vec![T::zero(); net.params().len()];
    let mut zt = vec![T::zero(); d];
    let mut upstream = vec![T::zero(); d];
    let mut total = T::zero();
    for i in 0..m {
        let t = noise.t[i];
        let (alpha, sigma) = sched.marginal_unchecked(t);
        let z = &batch[i * d..(i + 1) * d];
        let e = &noise.eps[i * d..(i + 1) * d];
        for j in 0..d {
            zt[j] = alpha * z[j] + sigma * e[j];
        }
        let cache = net.forward_cached(&zt, t);
        for j in 0..d {
            let r = sigma * cache.output[j] + e[j];
            total += r * r;
            upstream[j] = scale * sigma * r;
        }
        net.accumulate_param_grad(&cache, &upstream, &mut grad);
    }
    (total / T::of_usize(m), grad)
}

/// Samples fresh noise from `rng`, then returns the DSM loss and gradient.
pub fn dsm_loss<T: Real>(
    net: &ScoreNet<T>,
    sched: &VpSchedule<T>,
    batch: &[T],
    rng: &mut impl Rng,
) -> Result<(T, Vec<T>)> {
    let d = net.dims().d;
    if batch.is_empty() || batch.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            what: "DSM batch (multiple of d)",
            expected: d,
            found: batch.len(),
        });
    }
    let noise = sample_dsm_noise(sched, batch.len() / d, d, rng);
    let (loss, grad) = dsm_loss_with_noise(net, sched, batch, &noise);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: 0,
            detail: format!("loss = {loss}"),
        });
    }
    Ok((loss, grad))
}
