//! Log-likelihood through the probability-flow ODE.
//!
//! The augmented state `[z̃; Λ]` is carried from `t_eps` to `T` under
//! `dz̃/dt = f(z̃, t)` and `dΛ/dt = ∇·f(z̃, t)`, and
//! `log p(z) = log N(z̃(T); 0, I) + Λ(T)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::ode::{integrate, OdeOptions, OdeStats};
use crate::real::Real;
use crate::score_net::ScoreField;
use crate::vpsde::VpSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceMode {
    Exact,
    Hutchinson,
}

impl std::str::FromStr for DivergenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(DivergenceMode::Exact),
            "hutchinson" => Ok(DivergenceMode::Hutchinson),
            other => Err(Error::invalid(format!("unknown divergence mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for DivergenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DivergenceMode::Exact => "exact",
            DivergenceMode::Hutchinson => "hutchinson",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    pub probes: usize,
    pub mode: DivergenceMode,
    pub rtol: f64,
    pub atol: f64,
    pub probe_seed_base: u64,
    pub h_init: f64,
    pub max_steps: usize,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            probes: 10,
            mode: DivergenceMode::Hutchinson,
            rtol: 1e-5,
            atol: 1e-5,
            probe_seed_base: 0,
            h_init: 1e-3,
            max_steps: 100_000,
        }
    }
}

impl LikelihoodConfig {
    pub fn exact() -> Self {
        LikelihoodConfig {
            mode: DivergenceMode::Exact,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == DivergenceMode::Hutchinson && self.probes == 0 {
            return Err(Error::invalid("hutchinson mode needs at least one probe"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if !(self.h_init > 0.0) || self.max_steps == 0 {
            return Err(Error::invalid("initial step and step budget must be positive"));
        }
        Ok(())
    }

    fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            h_init: self.h_init,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodEval<T> {
    pub nats: T,
    pub stats: OdeStats,
}

/// `M × d` Rademacher probes for sample `index`, row-major.
pub fn rademacher_probes<T: Real>(seed_base: u64, index: u64, m: usize, d: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base);
    rng.set_stream(index);
    (0..m * d)
        .map(|_| if rng.random::<bool>() { T::one() } else { -T::one() })
        .collect()
}

/// Row-major `d × d` identity, the directions of the exact trace.
pub fn unit_directions<T: Real>(d: usize) -> Vec<T> {
    let mut e = vec![T::zero(); d * d];
    for i in 0..d {
        e[i * d + i] = T::one();
    }
    e
}

/// `tr A` from the JVPs `A·e_i` stored row-major in `jvps`.
pub fn trace_exact<T: Real>(jvps: &[T], d: usize) -> T {
    (0..d).map(|i| jvps[i * d + i]).sum()
}

/// `(1/M) Σ_m ε_mᵀ A ε_m` given probes and their JVPs.
pub fn trace_hutchinson<T: Real>(probes: &[T], jvps: &[T], d: usize) -> T {
    let m = probes.len() / d;
    let total: T = probes.iter().zip(jvps).map(|(&e, &j)| e * j).sum();
    total / T::of_usize(m)
}

/// VP probability-flow drift `−½β(t)(z + s(z, t))`.
pub fn pf_drift<T: Real, S: ScoreField<T> + ?Sized>(
    score: &S,
    sched: &VpSchedule<T>,
    z: &[T],
    t: T,
) -> Result<Vec<T>> {
    let d = score.dim();
    check_point(d, z)?;
    let mut s = vec![T::zero(); d];
    score.eval(z, t, &mut s, &[], &mut []);
    let hb = T::of(0.5) * sched.beta(t);
    let out: Vec<T> = z.iter().zip(&s).map(|(&zi, &si)| -hb * (zi + si)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: t.as_f64() });
    }
    Ok(out)
}

/// `∇·f` at `(z, t)`. `probes` is only read in Hutchinson mode.
pub fn divergence<T: Real, S: ScoreField<T> + ?Sized>(
    score: &S,
    sched: &VpSchedule<T>,
    z: &[T],
    t: T,
    mode: DivergenceMode,
    probes: &[T],
) -> Result<T> {
    let d = score.dim();
    check_point(d, z)?;
    let dirs = match mode {
        DivergenceMode::Exact => unit_directions(d),
        DivergenceMode::Hutchinson => probes.to_vec(),
    };
    if dirs.is_empty() || dirs.len() % d != 0 {
        return Err(Error::invalid("probe matrix must be a non-empty multiple of d"));
    }
    let mut s = vec![T::zero(); d];
    let mut jvps = vec![T::zero(); dirs.len()];
    score.eval(z, t, &mut s, &dirs, &mut jvps);
    Ok(drift_divergence(sched, t, d, mode, &dirs, &jvps))
}

// ∂f/∂z = −½β(I + J_s); the identity contributes d under either trace
#[inline]
fn drift_divergence<T: Real>(
    sched: &VpSchedule<T>,
    t: T,
    d: usize,
    mode: DivergenceMode,
    dirs: &[T],
    jvps: &[T],
) -> T {
    let tr_js = match mode {
        DivergenceMode::Exact => trace_exact(jvps, d),
        DivergenceMode::Hutchinson => trace_hutchinson(dirs, jvps, d),
    };
    -T::of(0.5) * sched.beta(t) * (T::of_usize(d) + tr_js)
}

fn check_point<T: Real>(d: usize, z: &[T]) -> Result<()> {
    if z.len() != d {
        return Err(Error::DimensionMismatch {
            what: "likelihood input",
            expected: d,
            found: z.len(),
        });
    }
    if let Some(col) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, col });
    }
    Ok(())
}

/// Standard normal log-density.
pub fn std_normal_logpdf<T: Real>(x: &[T]) -> T {
    let sq: T = x.iter().map(|&v| v * v).sum();
    -T::of(0.5) * sq - T::of(0.5) * T::of_usize(x.len()) * T::TAU().ln()
}

/// Log-likelihood of `z` under any score field; `index` selects the probes.
pub fn log_likelihood_with<T: Real, S: ScoreField<T> + ?Sized>(
    score: &S,
    sched: &VpSchedule<T>,
    z: &[T],
    cfg: &LikelihoodConfig,
    index: u64,
) -> Result<LikelihoodEval<T>> {
    cfg.validate()?;
    sched.validate()?;
    let d = score.dim();
    check_point(d, z)?;
    let dirs = match cfg.mode {
        DivergenceMode::Exact => unit_directions(d),
        DivergenceMode::Hutchinson => rademacher_probes(cfg.probe_seed_base, index, cfg.probes, d),
    };
    let mut s = vec![T::zero(); d];
    let mut jvps = vec![T::zero(); dirs.len()];
    let rhs = |t: T, y: &[T], dy: &mut [T]| {
        let zt = &y[..d];
        score.eval(zt, t, &mut s, &dirs, &mut jvps);
        let hb = T::of(0.5) * sched.beta(t);
        for i in 0..d {
            dy[i] = -hb * (zt[i] + s[i]);
        }
        dy[d] = drift_divergence(sched, t, d, cfg.mode, &dirs, &jvps);
    };
    let mut y0 = z.to_vec();
    y0.push(T::zero());
    let (y, stats) = integrate(rhs, sched.t_eps, sched.t_end, &y0, &cfg.ode_options())?;
    let nats = std_normal_logpdf(&y[..d]) + y[d];
    if !nats.is_finite() {
        return Err(Error::NonFiniteState {
            t: sched.t_end.as_f64(),
        });
    }
    Ok(LikelihoodEval { nats, stats })
}

pub fn log_likelihood<T: Real>(
    model: &ScoreModel<T>,
    z: &[T],
    cfg: &LikelihoodConfig,
    index: u64,
) -> Result<LikelihoodEval<T>> {
    log_likelihood_with(&model.net, &model.schedule, z, cfg, index)
}

/// Evaluates every row of `rows` (n × d) in parallel; row `i` uses probe
/// index `i`, so the output equals sequential evaluation.
pub fn log_likelihood_batch<T: Real, S: ScoreField<T> + ?Sized>(
    score: &S,
    sched: &VpSchedule<T>,
    rows: &[T],
    cfg: &LikelihoodConfig,
) -> Result<Vec<LikelihoodEval<T>>> {
    let d = score.dim();
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            what: "batch row width",
            expected: d,
            found: rows.len() % d.max(1),
        });
    }
    rows.par_chunks(d)
        .enumerate()
        .map(|(i, z)| {
            log_likelihood_with(score, sched, z, cfg, i as u64).map_err(|e| match e {
                Error::NonFinite { col, .. } => Error::NonFinite { row: i, col },
                other => other,
            })
        })
        .collect()
}

/// Exact score of the VP-diffused `N(0, s²I)`: `s(z, t) = −z / (s²α_t² + σ_t²)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianScore<T> {
    pub dim: usize,
    pub scale2: T,
    pub schedule: VpSchedule<T>,
}

impl<T: Real> GaussianScore<T> {
    /// Closed-form log-density of the undiffused data distribution.
    pub fn data_logpdf(&self, z: &[T]) -> T {
        let sq: T = z.iter().map(|&v| v * v).sum();
        -T::of(0.5) * sq / self.scale2 - T::of(0.5) * T::of_usize(z.len()) * (T::TAU() * self.scale2).ln()
    }
}

impl<T: Real> ScoreField<T> for GaussianScore<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[T], t: T, out: &mut [T], dirs: &[T], jvps: &mut [T]) {
        let (a, s) = self.schedule.marginal_unchecked(t);
        let inv = T::one() / (self.scale2 * a * a + s * s);
        for (o, &zi) in out.iter_mut().zip(z) {
            *o = -zi * inv;
        }
        for (j, &v) in jvps.iter_mut().zip(dirs) {
            *j = -v * inv;
        }
    }
}
