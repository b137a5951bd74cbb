//! Embedded Dormand–Prince 5(4) integrator with PI step-size control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-5,
            atol: 1e-5,
            h_init: 1e-3,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub fevals: usize,
}

impl OdeStats {
    pub fn steps(&self) -> usize {
        self.accepted + self.rejected
    }
}

// Dormand & Prince (1980) tableau
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// 5th-order weights minus embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

/// Integrates `y' = f(t, y)` from `t0` to `t1`, returning `y(t1)`.
pub fn integrate<T, F>(mut f: F, t0: T, t1: T, y0: &[T], opts: &OdeOptions) -> Result<(Vec<T>, OdeStats)>
where
    T: Real,
    F: FnMut(T, &[T], &mut [T]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0 && opts.h_init > 0.0) {
        return Err(Error::invalid("ODE tolerances and initial step must be positive"));
    }
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    if t0 == t1 {
        return Ok((y, stats));
    }
    let dir = if t1 > t0 { T::one() } else { -T::one() };
    let (rtol, atol) = (T::of(opts.rtol), T::of(opts.atol));
    let expo = T::of(0.2 - PI_BETA * 0.75);
    let (safe, beta) = (T::of(SAFETY), T::of(PI_BETA));
    let (inv_fac_min, inv_fac_max) = (T::of(1.0 / FAC_MIN), T::of(1.0 / FAC_MAX));

    let mut k: Vec<Vec<T>> = vec![vec![T::zero(); n]; 7];
    let mut stage = vec![T::zero(); n];
    let mut y_new = vec![T::zero(); n];
    let mut t = t0;
    let mut h = dir * T::of(opts.h_init).min((t1 - t0).abs());
    let mut fac_old = T::of(1e-4);
    let mut last_rejected = false;

    f(t, &y, &mut k[0]);
    stats.fevals += 1;

    loop {
        if stats.steps() >= opts.max_steps {
            return Err(Error::TooManySteps {
                t: t.as_f64(),
                max_steps: opts.max_steps,
            });
        }
        if (t + h - t1) * dir > T::zero() {
            h = t1 - t;
        }
        for s in 0..6 {
            for i in 0..n {
                let mut acc = T::zero();
                for (j, &a) in A[s].iter().enumerate() {
                    acc += T::of(a) * k[j][i];
                }
                stage[i] = y[i] + h * acc;
            }
            let ts = t + T::of(C[s]) * h;
            if s == 5 {
                y_new.copy_from_slice(&stage);
            }
            f(ts, &stage, &mut k[s + 1]);
            stats.fevals += 1;
        }
        // y_new is the 5th-order solution; k[6] = f(t + h, y_new)
        let mut err_sq = T::zero();
        for i in 0..n {
            let mut e = T::zero();
            for (j, &ej) in E.iter().enumerate() {
                if ej != 0.0 {
                    e += T::of(ej) * k[j][i];
                }
            }
            let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
            let r = h * e / sc;
            err_sq += r * r;
        }
        let err = (err_sq / T::of_usize(n.max(1))).sqrt();
        if !err.is_finite() {
            return Err(Error::NonFiniteState { t: t.as_f64() });
        }

        let fac11 = err.powf(expo);
        if err <= T::one() {
            let fac = (fac11 / fac_old.powf(beta) / safe)
                .min(inv_fac_min)
                .max(inv_fac_max);
            let mut h_new = h / fac;
            fac_old = err.max(T::of(1e-4));
            t = t + h;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            stats.accepted += 1;
            if (t - t1) * dir >= T::zero() {
                return Ok((y, stats));
            }
            if last_rejected {
                h_new = dir * h_new.abs().min(h.abs());
            }
            last_rejected = false;
            h = h_new;
        } else {
            h = h / inv_fac_min.min(fac11 / safe);
            last_rejected = true;
            stats.rejected += 1;
        }
        if h.abs().as_f64() <= 16.0 * T::EPS_F64 * t.abs().as_f64().max(1e-300) {
            return Err(Error::StiffIntegration {
                t: t.as_f64(),
                step: h.as_f64(),
            });
        }
    }
}
