use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rdm_core::calibration::{read_cal, write_cal};
use rdm_core::diagnostics::{
    delta_mu, eta_squared, matrix_csv, rho_matrix, screen_encoders, DiagnosticProfile, ModelDiagnostics,
};
use rdm_core::feature_store::{
    apply_fork, fit_fork_stats, gen_synthetic, read_fvec, write_fvec, ForkStats, SplitSizes,
    SyntheticScenario,
};
use rdm_core::likelihood::log_likelihood_batch;
use rdm_core::metrics::{auroc, format_auroc_fpr, fpr_at_tpr, ScoredPair};
use rdm_core::scores::write_scores;
use rdm_core::train::{train_features, training_log_csv};
use rdm_core::{calibrate, Fork, ScoreModel};
use serde_json::json;

use crate::artifacts::{
    ensure_new, ensure_parent, load_score_sets, read_score_file, with_suffix, write_bytes, write_sidecar,
    ScoreSpec,
};
use crate::config::RunConfig;
use crate::{Cli, Command, DiagnoseCmd};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(j) = cfg.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let force = cli.force;
    match cli.cmd {
        Command::Synth(a) => synth(a, cfg, force),
        Command::Train(a) => train(a, cfg, force),
        Command::Loglik(a) => loglik(a, cfg, force),
        Command::Calibrate(a) => calibrate_cmd(a, cfg, force),
        Command::Detect(a) => detect(a, force),
        Command::Diagnose(d) => diagnose(d, force),
        Command::Eval(a) => eval(a),
    }
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, v: Option<T>) -> Result<()> {
    if let Some(v) = v {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn synth(a: crate::SynthArgs, mut cfg: RunConfig, force: bool) -> Result<()> {
    set_opt(&mut cfg, "synth_seed", a.seed)?;
    let mut scenario = SyntheticScenario::named(&a.scenario)?;
    if let Some(s) = a.shift_strength {
        scenario = scenario.with_shift_strength(s);
    }
    let sizes = SplitSizes {
        train: a.n_train,
        val: a.n_val,
        test: a.n_test,
        ood: a.n_ood,
    };
    let data = gen_synthetic(&scenario, sizes, cfg.synth_seed)?;

    let mut files: Vec<(PathBuf, &rdm_core::FeatureSet)> = Vec::new();
    for e in &data.id {
        for (split, fs) in [("train", &e.train), ("val", &e.val), ("test", &e.test)] {
            files.push((a.out_dir.join(format!("{}_{split}.fvec", e.encoder)), fs));
        }
    }
    for o in &data.ood {
        for fs in &o.per_encoder {
            files.push((
                a.out_dir
                    .join(format!("{}_ood_{}.fvec", fs.meta.encoder, o.shift)),
                fs,
            ));
        }
    }
    let sidecar_anchor = a.out_dir.join("synth");
    let mut all: Vec<PathBuf> = files.iter().map(|(p, _)| p.clone()).collect();
    all.push(with_suffix(&sidecar_anchor, ".json"));
    ensure_new(&all.iter().map(|p| p.as_path()).collect::<Vec<_>>(), force)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| rdm_core::Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    for (p, fs) in &files {
        write_fvec(fs, p)?;
    }
    let config = json!({
        "scenario": scenario,
        "sizes": {"train": a.n_train, "val": a.n_val, "test": a.n_test, "ood": a.n_ood},
        "seed": cfg.synth_seed,
    });
    let outputs: Vec<String> = files.iter().map(|(p, _)| p.display().to_string()).collect();
    write_sidecar(
        &sidecar_anchor,
        "synth",
        config,
        &[],
        json!({ "outputs": outputs }),
    )?;
    log::info!("wrote {} feature files to {}", files.len(), a.out_dir.display());
    Ok(())
}

fn train(a: crate::TrainArgs, mut cfg: RunConfig, force: bool) -> Result<()> {
    set_opt(&mut cfg, "lr", a.lr)?;
    set_opt(&mut cfg, "max_epochs", a.epochs)?;
    set_opt(&mut cfg, "batch_size", a.batch_size)?;
    set_opt(&mut cfg, "hidden", a.hidden)?;
    set_opt(&mut cfg, "depth", a.depth)?;
    set_opt(&mut cfg, "patience", a.patience)?;
    set_opt(&mut cfg, "seed", a.seed)?;

    let stats_path = with_suffix(&a.out, ".stats.json");
    let log_path = with_suffix(&a.out, ".log.csv");
    let sidecar = with_suffix(&a.out, ".json");
    let mut outs = vec![a.out.as_path(), log_path.as_path(), sidecar.as_path()];
    if a.fork == Fork::Normed {
        outs.push(&stats_path);
    }
    ensure_new(&outs, force)?;

    let tr = read_fvec(&a.train).with_context(|| format!("reading {}", a.train.display()))?;
    let va = read_fvec(&a.val).with_context(|| format!("reading {}", a.val.display()))?;
    let stats = match a.fork {
        Fork::Normed => Some(fit_fork_stats(&tr)?),
        Fork::Unnormed => None,
    };
    let tr = apply_fork(&tr, stats.as_ref())?;
    let va = apply_fork(&va, stats.as_ref())?;

    let start = Instant::now();
    let out = train_features::<f64>(&tr, &va, &cfg.train, &cfg.schedule)?;
    let secs = start.elapsed().as_secs_f64();
    log::info!(
        "trained {} epochs in {secs:.1}s; best epoch {} (val loss {:?})",
        out.log.len(),
        out.best_epoch,
        out.best_val_loss
    );

    ensure_parent(&a.out)?;
    if let Some(s) = &stats {
        s.save(&stats_path)?;
    }
    out.model.save(&a.out)?;
    write_bytes(&log_path, training_log_csv(&out.log).as_bytes())?;
    write_sidecar(
        &a.out,
        "train",
        cfg.train_json(),
        &[&a.train, &a.val],
        json!({
            "fork": a.fork,
            "encoder": tr.meta.encoder,
            "dims": out.model.net.dims().d,
            "hidden": out.model.net.dims().hidden,
            "epochs_run": out.log.len(),
            "best_epoch": out.best_epoch,
            "best_val_loss": out.best_val_loss,
            "stats_file": stats.as_ref().map(|_| stats_path.display().to_string()),
            "wall_time_s": secs,
        }),
    )?;
    Ok(())
}

fn loglik(a: crate::LoglikArgs, mut cfg: RunConfig, force: bool) -> Result<()> {
    set_opt(&mut cfg, "mode", a.mode)?;
    set_opt(&mut cfg, "probes", a.probes)?;
    set_opt(&mut cfg, "rtol", a.rtol)?;
    set_opt(&mut cfg, "atol", a.atol)?;
    set_opt(&mut cfg, "probe_seed", a.probe_seed)?;
    cfg.likelihood.validate()?;
    ensure_new(&[&a.out, &with_suffix(&a.out, ".json")], force)?;

    let model = ScoreModel::<f32>::load(&a.model)?.cast::<f64>();
    let fs = read_fvec(&a.features).with_context(|| format!("reading {}", a.features.display()))?;
    let sibling = with_suffix(&a.model, ".stats.json");
    let stats_path = a.stats.clone().or_else(|| sibling.exists().then_some(sibling));
    let stats = stats_path.as_ref().map(ForkStats::load).transpose()?;
    let fs = apply_fork(&fs, stats.as_ref())?;
    if fs.d != model.dim() {
        bail!(
            "feature width {} does not match model input width {}",
            fs.d,
            model.dim()
        );
    }

    let start = Instant::now();
    let evals = log_likelihood_batch(&model.net, &model.schedule, &fs.to_f64(), &cfg.likelihood)?;
    let secs = start.elapsed().as_secs_f64();
    let nats: Vec<f32> = evals.iter().map(|e| e.nats as f32).collect();
    let mean_steps = evals.iter().map(|e| e.stats.steps() as f64).sum::<f64>() / evals.len().max(1) as f64;
    log::info!(
        "{} samples in {secs:.1}s, mean {mean_steps:.1} solver steps",
        nats.len()
    );

    ensure_parent(&a.out)?;
    write_scores(&a.out, &nats)?;
    let mut inputs: Vec<&Path> = vec![&a.model, &a.features];
    if let Some(p) = &stats_path {
        inputs.push(p);
    }
    write_sidecar(
        &a.out,
        "loglik",
        cfg.likelihood_json(),
        &inputs,
        json!({
            "model_sha256": crate::artifacts::file_sha256(&a.model)?,
            "n": nats.len(),
            "normalized": stats.is_some(),
            "mean_solver_steps": mean_steps,
            "wall_time_s": secs,
        }),
    )?;
    Ok(())
}

fn spec_paths(specs: &[ScoreSpec]) -> Vec<&Path> {
    specs.iter().map(|s| s.path.as_path()).collect()
}

fn calibrate_cmd(a: crate::CalibrateArgs, mut cfg: RunConfig, force: bool) -> Result<()> {
    set_opt(&mut cfg, "alpha", a.alpha)?;
    ensure_new(&[&a.out, &with_suffix(&a.out, ".json")], force)?;
    let val = load_score_sets(&a.scores)?;
    let bundle = calibrate(&val, cfg.alpha)?;
    ensure_parent(&a.out)?;
    write_cal(&a.out, &bundle)?;
    let keys: Vec<String> = a
        .scores
        .iter()
        .map(|s| format!("{}:{}", s.encoder, s.fork))
        .collect();
    write_sidecar(
        &a.out,
        "calibrate",
        json!({ "alpha": cfg.alpha, "keys": keys }),
        &spec_paths(&a.scores),
        json!({ "bundle": bundle.to_json() }),
    )?;
    log::info!("tau = {} at alpha = {}", bundle.tau(), bundle.alpha());
    Ok(())
}

fn detect(a: crate::DetectArgs, force: bool) -> Result<()> {
    ensure_new(&[&a.out, &with_suffix(&a.out, ".json")], force)?;
    let mut bundle = read_cal::<f64>(&a.bundle)?;
    if let Some(alpha) = a.alpha {
        bundle = bundle.adjust_threshold(alpha)?;
    }
    let test = load_score_sets(&a.scores)?;
    let report = bundle.detect(&test)?;
    write_bytes(&a.out, report.to_csv().as_bytes())?;
    let mut inputs = vec![a.bundle.as_path()];
    inputs.extend(spec_paths(&a.scores));
    write_sidecar(
        &a.out,
        "detect",
        json!({ "alpha": bundle.alpha() }),
        &inputs,
        json!({
            "tau": bundle.tau(),
            "n": report.len(),
            "flagged_fraction": report.flagged_fraction(),
            "encoders": report.encoders,
        }),
    )?;
    log::info!(
        "flagged {:.4} of {} samples",
        report.flagged_fraction(),
        report.len()
    );
    Ok(())
}

fn profile_entry(s: &ScoreSpec) -> ModelDiagnostics {
    ModelDiagnostics {
        encoder: s.encoder.clone(),
        fork: s.fork.to_string(),
        eta2_clean: None,
        eta2_corr: None,
        delta_mu: None,
    }
}

fn find_pair<'a>(spec: &ScoreSpec, others: &'a [ScoreSpec], what: &str) -> Result<&'a ScoreSpec> {
    others
        .iter()
        .find(|o| o.encoder == spec.encoder && o.fork == spec.fork)
        .with_context(|| format!("no {what} scores for {}:{}", spec.encoder, spec.fork))
}

fn diagnose(cmd: DiagnoseCmd, force: bool) -> Result<()> {
    match cmd {
        DiagnoseCmd::Eta2 {
            scores,
            labels,
            corrupt,
            out,
        } => {
            ensure_new(&[&out, &with_suffix(&out, ".json")], force)?;
            let fs = read_fvec(&labels)?;
            let lab = fs
                .labels
                .as_ref()
                .with_context(|| format!("{} carries no labels", labels.display()))?;
            let mut profile = DiagnosticProfile::default();
            for s in &scores {
                let mut m = profile_entry(s);
                m.eta2_clean = Some(eta_squared(&read_score_file(&s.path)?, lab)?);
                if !corrupt.is_empty() {
                    let c = find_pair(s, &corrupt, "corrupted")?;
                    m.eta2_corr = Some(eta_squared(&read_score_file(&c.path)?, lab)?);
                }
                profile.models.push(m);
            }
            let mut inputs = spec_paths(&scores);
            inputs.extend(spec_paths(&corrupt));
            inputs.push(&labels);
            finish_profile(&out, "diagnose eta2", &profile, &inputs)
        }
        DiagnoseCmd::Dmu { clean, corrupt, out } => {
            ensure_new(&[&out, &with_suffix(&out, ".json")], force)?;
            let mut profile = DiagnosticProfile::default();
            for s in &clean {
                let c = find_pair(s, &corrupt, "corrupted")?;
                let mut m = profile_entry(s);
                m.delta_mu = Some(delta_mu(&read_score_file(&s.path)?, &read_score_file(&c.path)?)?);
                profile.models.push(m);
            }
            let mut inputs = spec_paths(&clean);
            inputs.extend(spec_paths(&corrupt));
            finish_profile(&out, "diagnose dmu", &profile, &inputs)
        }
        DiagnoseCmd::Rho {
            scores,
            threshold,
            out,
        } => {
            let csv = with_suffix(&out, ".csv");
            ensure_new(&[&out, &csv, &with_suffix(&out, ".json")], force)?;
            let arrays = scores
                .iter()
                .map(|s| read_score_file(&s.path))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[f64]> = arrays.iter().map(|v| v.as_slice()).collect();
            let rho = rho_matrix(&refs)?;
            let labels: Vec<String> = scores.iter().map(|s| s.label.clone()).collect();
            let screen = screen_encoders(&labels, &rho, threshold)?;
            let profile = DiagnosticProfile {
                models: Vec::new(),
                rho_labels: labels.clone(),
                rho: rho.clone(),
            };
            write_bytes(&csv, matrix_csv(&labels, &rho).as_bytes())?;
            let doc = json!({ "profile": profile, "screening": screen });
            write_bytes(&out, (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())?;
            let inputs: Vec<&Path> = scores.iter().map(|s| s.path.as_path()).collect();
            write_sidecar(
                &out,
                "diagnose rho",
                json!({ "threshold": threshold }),
                &inputs,
                json!({}),
            )?;
            println!("accepted: {}", screen.accepted.join(", "));
            Ok(())
        }
    }
}

fn finish_profile(out: &Path, command: &str, profile: &DiagnosticProfile, inputs: &[&Path]) -> Result<()> {
    write_bytes(out, (serde_json::to_string_pretty(profile)? + "\n").as_bytes())?;
    write_sidecar(out, command, json!({}), inputs, json!({}))?;
    for m in &profile.models {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{}:{} eta2={} eta2_corr={} dmu={}",
            m.encoder,
            m.fork,
            show(m.eta2_clean),
            show(m.eta2_corr),
            show(m.delta_mu)
        );
    }
    Ok(())
}

/// Lower means more OOD in both accepted formats.
fn read_eval_scores(path: &Path) -> Result<Vec<f64>> {
    if path.extension().is_some_and(|e| e == "csv") {
        let text = fs::read_to_string(path).map_err(|e| rdm_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .with_context(|| format!("{} is empty", path.display()))?;
        let col = header
            .split(',')
            .position(|c| c == "s")
            .with_context(|| format!("{} has no 's' column", path.display()))?;
        lines
            .enumerate()
            .map(|(i, l)| {
                l.split(',')
                    .nth(col)
                    .and_then(|v| v.parse::<f64>().ok())
                    .with_context(|| format!("{}:{}: bad s value", path.display(), i + 2))
            })
            .collect()
    } else {
        read_score_file(path)
    }
}

fn eval(a: crate::EvalArgs) -> Result<()> {
    let pair = ScoredPair::new(read_eval_scores(&a.id)?, read_eval_scores(&a.ood)?)?;
    let au = auroc(&pair);
    let fpr = fpr_at_tpr(&pair, 0.95)?;
    println!("{}: {}", a.benchmark, format_auroc_fpr(au, fpr));
    if let Some(m) = &a.metrics {
        let fresh = !m.exists();
        ensure_parent(m)?;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(m)
            .map_err(|e| rdm_core::Error::Io {
                path: m.clone(),
                source: e,
            })?;
        let mut row = String::new();
        if fresh {
            row.push_str("benchmark,auroc,fpr95\n");
        }
        row.push_str(&format!("{},{au:.6},{fpr:.6}\n", a.benchmark));
        f.write_all(row.as_bytes()).map_err(|e| rdm_core::Error::Io {
            path: m.clone(),
            source: e,
        })?;
    }
    Ok(())
}
