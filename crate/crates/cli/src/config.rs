//! `key = value` run configuration. Later sources override earlier ones:
//! built-in defaults, then `--config FILE`, then command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rdm_core::{LikelihoodConfig, TrainConfig, VpSchedule};
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub schedule: VpSchedule<f64>,
    pub likelihood: LikelihoodConfig,
    pub alpha: f64,
    pub synth_seed: u64,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            schedule: VpSchedule::default(),
            likelihood: LikelihoodConfig::default(),
            alpha: 0.05,
            synth_seed: 0,
            jobs: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "lr",
    "max_epochs",
    "batch_size",
    "clip_norm",
    "patience",
    "min_delta",
    "seed",
    "beta1",
    "beta2",
    "adam_eps",
    "hidden",
    "depth",
    "t_emb_dim",
    "ema_decay",
    "beta_min",
    "beta_max",
    "t_end",
    "t_eps",
    "probes",
    "mode",
    "rtol",
    "atol",
    "probe_seed",
    "h_init",
    "max_steps",
    "alpha",
    "synth_seed",
    "jobs",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| anyhow::anyhow!("bad value for {key}: {v:?} ({e})"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.schedule;
        let l = &mut self.likelihood;
        match key {
            "lr" => t.lr = num(key, v)?,
            "max_epochs" => t.max_epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "clip_norm" => t.clip_norm = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "min_delta" => t.min_delta = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "beta1" => t.beta1 = num(key, v)?,
            "beta2" => t.beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "hidden" => t.hidden = Some(num(key, v)?),
            "depth" => t.depth = num(key, v)?,
            "t_emb_dim" => t.t_emb_dim = num(key, v)?,
            "ema_decay" => t.ema_decay = Some(num(key, v)?),
            "beta_min" => s.beta_min = num(key, v)?,
            "beta_max" => s.beta_max = num(key, v)?,
            "t_end" => s.t_end = num(key, v)?,
            "t_eps" => s.t_eps = num(key, v)?,
            "probes" => l.probes = num(key, v)?,
            "mode" => l.mode = v.parse()?,
            "rtol" => l.rtol = num(key, v)?,
            "atol" => l.atol = num(key, v)?,
            "probe_seed" => l.probe_seed_base = num(key, v)?,
            "h_init" => l.h_init = num(key, v)?,
            "max_steps" => l.max_steps = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "synth_seed" => self.synth_seed = num(key, v)?,
            "jobs" => self.jobs = Some(num(key, v)?),
            other => bail!(
                "unknown configuration key {other:?}; known keys: {}",
                KEYS.join(", ")
            ),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{origin}:{}: expected key = value", i + 1))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| rdm_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn train_json(&self) -> serde_json::Value {
        json!({ "train": self.train, "schedule": self.schedule })
    }

    pub fn likelihood_json(&self) -> serde_json::Value {
        json!({ "likelihood": self.likelihood })
    }
}
