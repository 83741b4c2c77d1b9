use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{GradcheckSettings, RunConfig};
use crate::dataset::{
    generate_synthetic, load_jsonl, missing_ratio, save_jsonl, stratified_split, Dataset, SignalMode, Split,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, WaveGnn};
use crate::tensor::{finite_diff_check, GradCheckReport, ParamGrads};
use crate::training::{
    ablation_csv, evaluate, run_ablation, run_leave_sensors_experiment, sample_loss_and_grads, summarize_ablation,
    train as fit, MetricsReport, Prepared,
};

/// Run settings stored inside a checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointRun {
    config: RunConfig,
    epochs: usize,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Validation(format!("--{flag} is required")))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = required(&cfg.out, "out")?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.json"), &cfg.to_json()?)?;
    Ok(dir)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    load_jsonl(required(&cfg.data, "data")?)
}

fn model_config(cfg: &RunConfig, dataset: &Dataset) -> Result<ModelConfig> {
    let m = cfg.model.clone().bind_dataset(dataset);
    m.validate()?;
    Ok(m)
}

fn split(cfg: &RunConfig, dataset: &Dataset) -> Result<Split> {
    let s = stratified_split(dataset, cfg.split, cfg.train.seed)?;
    if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
        return Err(Error::Validation(format!(
            "split of {} samples left an empty part ({}/{}/{})",
            dataset.len(),
            s.train.len(),
            s.val.len(),
            s.test.len()
        )));
    }
    Ok(s)
}

fn report_json(r: &MetricsReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(r)?)
}

fn print_summary(label: &str, r: &MetricsReport) {
    println!(
        "{label}: n={} accuracy={:.4} precision={:.4} recall={:.4} f1={:.4} macro_f1={:.4}",
        r.n_samples, r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1, r.macro_f1
    );
}

pub(super) fn gen(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let ds = generate_synthetic(&cfg.generator)?;
    save_jsonl(&ds, out)?;
    println!(
        "wrote {} samples ({} sensors, {} classes, missing ratio {:.3}) to {}",
        ds.len(),
        ds.n_sensors,
        ds.n_classes,
        missing_ratio(&ds)?,
        out.display()
    );
    Ok(())
}

pub(super) fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let mcfg = model_config(cfg, &ds)?;
    let sp = split(cfg, &ds)?;
    let dir = out_dir(cfg)?;
    let out = fit(WaveGnn::new(mcfg, cfg.train.seed)?, &sp.train, &sp.val, &cfg.train)?;
    let epochs = out.history.epochs.len();
    let mut report = evaluate(&out.model, &sp.test)?;
    report.meta.seed = Some(cfg.train.seed);
    report.meta.epochs = Some(epochs);
    let run = CheckpointRun {
        config: cfg.clone(),
        epochs,
    };
    let ckpt = Checkpoint {
        model: out.model,
        run: Some(serde_json::to_value(&run)?),
    };
    save_checkpoint(&ckpt, dir.join("checkpoint.json"))?;
    write(&dir.join("history.csv"), &out.history.to_csv())?;
    write(&dir.join("report.json"), &report_json(&report)?)?;
    println!("trained {epochs} epochs, best epoch {}", out.history.best_epoch);
    print_summary("test", &report);
    Ok(())
}

pub(super) fn eval(cfg: &RunConfig, ckpt_path: Option<&Path>) -> Result<()> {
    let ckpt_path = ckpt_path.ok_or_else(|| Error::Validation("--ckpt is required".into()))?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let ds = load_data(cfg)?;
    // With stored run settings, score the same held-out split as training.
    let run: Option<CheckpointRun> = match ckpt.run {
        Some(v) => Some(serde_json::from_value(v).map_err(|e| Error::Schema(format!("checkpoint run settings: {e}")))?),
        None => None,
    };
    let (target, label) = match &run {
        Some(r) => (split(&r.config, &ds)?.test, "test"),
        None => (ds, "all"),
    };
    let mut report = evaluate(&ckpt.model, &target)?;
    if let Some(r) = &run {
        report.meta.seed = Some(r.config.train.seed);
        report.meta.epochs = Some(r.epochs);
    }
    let text = report_json(&report)?;
    let file = match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            dir.join("eval_report.json")
        }
        None => ckpt_path.with_file_name("eval_report.json"),
    };
    write(&file, &text)?;
    println!("{text}");
    print_summary(label, &report);
    Ok(())
}

pub(super) fn ablate(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let mcfg = model_config(cfg, &ds)?;
    let sp = split(cfg, &ds)?;
    let dir = out_dir(cfg)?;
    let seeds: Vec<u64> = (0..cfg.ablation.n_seeds as u64).map(|k| cfg.train.seed + k).collect();
    let runs = run_ablation(&mcfg, &sp, &cfg.train, &cfg.ablation.variants, &seeds)?;
    let rows = summarize_ablation(&runs);
    write(&dir.join("ablation_runs.json"), &serde_json::to_string_pretty(&runs)?)?;
    write(&dir.join("ablation_summary.csv"), &ablation_csv(&rows))?;
    for r in &rows {
        println!(
            "{:<22} accuracy {:.4}±{:.4} precision {:.4} recall {:.4} f1 {:.4}±{:.4}",
            r.key, r.accuracy.mean, r.accuracy.std, r.precision.mean, r.recall.mean, r.f1.mean, r.f1.std
        );
    }
    Ok(())
}

pub(super) fn leaveout(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let mcfg = model_config(cfg, &ds)?;
    let sp = split(cfg, &ds)?;
    let dir = out_dir(cfg)?;
    let grid = run_leave_sensors_experiment(|seed| WaveGnn::new(mcfg.clone(), seed), &sp, &cfg.train, &cfg.leaveout)?;
    write(&dir.join("leaveout_grid.json"), &serde_json::to_string_pretty(&grid)?)?;
    write(&dir.join("leaveout_grid.csv"), &grid.to_csv())?;
    let summary = grid.summary_csv();
    write(&dir.join("leaveout_summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Runs the finite-difference check on a freshly generated tiny instance.
pub fn run_gradcheck(settings: &GradcheckSettings, model: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let gen_cfg = SyntheticConfig {
        n_samples: settings.n_samples.max(settings.n_classes),
        n_sensors: settings.n_sensors,
        timesteps: settings.timesteps,
        n_classes: settings.n_classes,
        static_dim: settings.static_dim,
        signal_mode: SignalMode::Both,
        seed,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&gen_cfg)?;
    let ds = ds.with_samples(ds.samples[..settings.n_samples.max(1)].to_vec());
    let mcfg = ModelConfig {
        embed_dim: settings.embed_dim,
        ..model.clone()
    }
    .bind_dataset(&ds);
    let base = WaveGnn::new(mcfg, seed)?;
    let data = Prepared::new(&ds)?;
    let objective = |params: &crate::tensor::ParamStore| -> Result<(f64, ParamGrads)> {
        let m = WaveGnn {
            config: base.config.clone(),
            params: params.clone(),
        };
        let mut total = 0.0;
        let mut grads = ParamGrads::default();
        for (inp, y) in data.inputs.iter().zip(&data.labels) {
            let (l, g) = sample_loss_and_grads(&m, inp, y, None)?;
            total += l;
            grads.accumulate(&g);
        }
        let k = 1.0 / data.len() as f64;
        grads.scale(k);
        Ok((total * k, grads))
    };
    finite_diff_check(objective, &base.params, settings.epsilon, settings.tol_rel)
}

pub(super) fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let report = run_gradcheck(&cfg.gradcheck, &cfg.model, cfg.train.seed)?;
    for p in &report.params {
        println!(
            "{:<28} n={:<5} max_rel_err={:.3e} max_abs_err={:.3e} {}",
            p.name,
            p.numel,
            p.max_rel_err,
            p.max_abs_err,
            if p.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = report.params.iter().filter(|p| !p.passed).count();
    println!(
        "{} of {} parameters passed at tol_rel {:e}",
        report.params.len() - failed,
        report.params.len(),
        report.tol_rel
    );
    if failed > 0 {
        return Err(Error::Validation(format!("gradient check failed for {failed} parameters")));
    }
    Ok(())
}
