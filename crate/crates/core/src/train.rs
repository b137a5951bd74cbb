//! Adam training loop for the DSM objective with global-norm clipping and
//! early stopping on a fixed-noise validation loss.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;
use crate::model::ScoreModel;
use crate::real::Real;
use crate::score_net::{NetDims, ScoreNet, DEFAULT_DEPTH, DEFAULT_T_EMB_DIM};
use crate::vpsde::{dsm_loss_value, dsm_loss_with_noise, sample_dsm_noise, VpSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Hidden width; `None` means `2·d`.
    pub hidden: Option<usize>,
    pub depth: usize,
    pub t_emb_dim: usize,
    /// Decay of an exponential moving average of the parameters. When set,
    /// validation and the returned model use the averaged parameters.
    #[serde(default)]
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            max_epochs: 500,
            batch_size: 512,
            clip_norm: 1.0,
            patience: 20,
            min_delta: 1e-4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            hidden: None,
            depth: DEFAULT_DEPTH,
            t_emb_dim: DEFAULT_T_EMB_DIM,
            ema_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("clip_norm", self.clip_norm),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::invalid("Adam betas must be < 1"));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::invalid("batch_size and patience must be positive"));
        }
        if let Some(e) = self.ema_decay {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::invalid(format!("ema_decay must be in [0, 1), got {e}")));
            }
        }
        if self.min_delta < 0.0 {
            return Err(Error::invalid("min_delta must be non-negative"));
        }
        Ok(())
    }

    pub fn net_dims(&self, d: usize) -> NetDims {
        NetDims {
            d,
            hidden: self.hidden.unwrap_or(2 * d),
            depth: self.depth,
            t_emb_dim: self.t_emb_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ScoreModel<T>,
    pub log: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grad: &mut [T], max_norm: T) -> T {
    let norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr: T::of(lr),
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

// seed streams
const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_VAL: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains a fresh score network on row-major `train` / `val` matrices of width `d`.
pub fn train<T: Real>(
    train: &[T],
    val: &[T],
    d: usize,
    cfg: &TrainConfig,
    sched: &VpSchedule<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    sched.validate()?;
    if d == 0 || train.is_empty() || train.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            what: "training matrix (multiple of d)",
            expected: d,
            found: train.len(),
        });
    }
    if val.is_empty() || val.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            what: "validation matrix (multiple of d)",
            expected: d,
            found: val.len(),
        });
    }
    let n_train = train.len() / d;
    let n_val = val.len() / d;

    let mut net = ScoreNet::init(cfg.net_dims(d), &mut stream(cfg.seed, STREAM_INIT))?;
    let mut outcome = TrainOutcome {
        model: ScoreModel {
            net: net.clone(),
            schedule: *sched,
        },
        log: Vec::new(),
        best_epoch: 0,
        best_val_loss: None,
    };
    if cfg.max_epochs == 0 {
        return Ok(outcome);
    }

    let val_noise = sample_dsm_noise(sched, n_val, d, &mut stream(cfg.seed, STREAM_VAL));
    let mut rng = stream(cfg.seed, STREAM_TRAIN);
    let mut adam = Adam::<T>::new(net.params().len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size.min(n_train) * d);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let clip = T::of(cfg.clip_norm);
    let mut ema = cfg.ema_decay.map(|decay| (T::of(decay), net.clone()));

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            for &i in idx {
                batch.extend_from_slice(&train[i * d..(i + 1) * d]);
            }
            let noise = sample_dsm_noise(sched, idx.len(), d, &mut rng);
            let (loss, mut grad) = dsm_loss_with_noise(&net, sched, &batch, &noise);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!(
                        "batch loss {loss}; max |θ| = {}",
                        net.params().iter().fold(0.0f64, |a, p| a.max(p.as_f64().abs()))
                    ),
                });
            }
            clip_global_norm(&mut grad, clip);
            adam.step(net.params_mut(), &grad);
            if let Some((decay, avg)) = &mut ema {
                let keep = *decay;
                for (a, &p) in avg.params_mut().iter_mut().zip(net.params()) {
                    *a = keep * *a + (T::one() - keep) * p;
                }
            }
            loss_sum += loss.as_f64() * idx.len() as f64;
        }
        let eval_net = ema.as_ref().map_or(&net, |(_, avg)| avg);
        let val_loss = dsm_loss_value(eval_net, sched, val, &val_noise).as_f64();
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                value: val_loss,
            });
        }
        outcome.log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_train as f64,
            val_loss,
            lr: cfg.lr,
        });
        log::debug!(
            "epoch {epoch}: train {:.5} val {val_loss:.5}",
            loss_sum / n_train as f64
        );
        if val_loss < best - cfg.min_delta {
            best = val_loss;
            since_best = 0;
            outcome.model.net = eval_net.clone();
            outcome.best_epoch = epoch;
            outcome.best_val_loss = Some(val_loss);
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop at epoch {epoch}; best epoch {}", outcome.best_epoch);
                break;
            }
        }
    }
    Ok(outcome)
}

/// [`train`] on feature files, in the scalar type `T`.
pub fn train_features<T: Real>(
    train_fs: &FeatureSet,
    val_fs: &FeatureSet,
    cfg: &TrainConfig,
    sched: &VpSchedule<T>,
) -> Result<TrainOutcome<T>> {
    if train_fs.d != val_fs.d {
        return Err(Error::DimensionMismatch {
            what: "validation feature width",
            expected: train_fs.d,
            found: val_fs.d,
        });
    }
    let widen = |fs: &FeatureSet| fs.data.iter().map(|&v| T::of(v as f64)).collect::<Vec<T>>();
    train(&widen(train_fs), &widen(val_fs), train_fs.d, cfg, sched)
}

/// CSV with header `epoch,train_loss,val_loss,lr`.
pub fn training_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    out
}

pub fn write_training_log(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, training_log_csv(log)).map_err(|e| Error::io(path, e))
}
