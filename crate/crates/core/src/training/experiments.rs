//! Ablation and leave-sensors-out grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::trainer::{evaluate, train, train_monitored, TrainConfig};
use crate::dataset::{format_f64, leave_sensors_out, DropMode, SensorDropSpec, Split};
use crate::error::{Error, Result};
use crate::model::{AblationVariant, ModelConfig, WaveGnn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: AblationVariant,
    pub seed: u64,
    pub epochs: usize,
    pub report: MetricsReport,
}

/// Trains every variant from scratch once per seed and reports test metrics.
pub fn run_ablation(
    model_cfg: &ModelConfig,
    split: &Split,
    train_cfg: &TrainConfig,
    variants: &[AblationVariant],
    seeds: &[u64],
) -> Result<Vec<AblationRun>> {
    let cells: Vec<(AblationVariant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(variant, seed)| {
            let cfg = ModelConfig {
                variant,
                ..model_cfg.clone()
            };
            let tc = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let out = train(WaveGnn::new(cfg, seed)?, &split.train, &split.val, &tc)?;
            let mut report = evaluate(&out.model, &split.test)?;
            report.meta.seed = Some(seed);
            report.meta.epochs = Some(out.history.epochs.len());
            log::info!("{variant} seed {seed}: test F1 {:.4}", report.weighted_f1);
            Ok(AblationRun {
                variant,
                seed,
                epochs: out.history.epochs.len(),
                report,
            })
        })
        .collect()
}

/// Mean and sample standard deviation of a metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Accuracy, weighted precision/recall/F1 aggregated over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: String,
    pub runs: usize,
    pub accuracy: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
}

impl SummaryRow {
    pub fn from_reports(key: impl Into<String>, reports: &[&MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| Stat::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            key: key.into(),
            runs: reports.len(),
            accuracy: col(|r| r.accuracy),
            precision: col(|r| r.weighted_precision),
            recall: col(|r| r.weighted_recall),
            f1: col(|r| r.weighted_f1),
        }
    }

    fn csv_fields(&self) -> String {
        [self.accuracy, self.precision, self.recall, self.f1]
            .iter()
            .map(|s| format!("{},{}", format_f64(s.mean), format_f64(s.std)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

const SUMMARY_COLUMNS: &str = "accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std";

pub fn summarize_ablation(runs: &[AblationRun]) -> Vec<SummaryRow> {
    let mut variants: Vec<AblationVariant> = Vec::new();
    for r in runs {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let reports: Vec<&MetricsReport> = runs.iter().filter(|r| r.variant == v).map(|r| &r.report).collect();
            SummaryRow::from_reports(v.name(), &reports)
        })
        .collect()
}

pub fn ablation_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("variant,runs,{SUMMARY_COLUMNS}\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.key, r.runs, r.csv_fields()));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeaveOutSettings {
    pub ratios: Vec<f64>,
    pub modes: Vec<DropMode>,
    pub n_runs: usize,
}

impl Default for LeaveOutSettings {
    fn default() -> Self {
        Self {
            ratios: vec![0.1, 0.3, 0.5],
            modes: vec![DropMode::Fixed, DropMode::Random],
            n_runs: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaveOutCell {
    pub mode: DropMode,
    pub ratio: f64,
    pub run: usize,
    pub seed: u64,
    pub dropped: Vec<usize>,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaveOutGrid {
    pub cells: Vec<LeaveOutCell>,
}

impl LeaveOutGrid {
    pub fn reports(&self, mode: DropMode, ratio: f64) -> Vec<&MetricsReport> {
        self.cells
            .iter()
            .filter(|c| c.mode == mode && c.ratio == ratio)
            .map(|c| &c.report)
            .collect()
    }

    /// Mean weighted F1 of one (mode, ratio) cell group.
    pub fn mean_f1(&self, mode: DropMode, ratio: f64) -> f64 {
        let r = self.reports(mode, ratio);
        r.iter().map(|x| x.weighted_f1).sum::<f64>() / r.len() as f64
    }

    /// Long format: one line per (cell, metric).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,ratio,seed,metric,value\n");
        for c in &self.cells {
            let r = &c.report;
            let mut metrics = vec![
                ("accuracy", r.accuracy),
                ("weighted_precision", r.weighted_precision),
                ("weighted_recall", r.weighted_recall),
                ("weighted_f1", r.weighted_f1),
                ("macro_f1", r.macro_f1),
            ];
            if let Some(v) = r.auroc {
                metrics.push(("auroc", v));
            }
            if let Some(v) = r.auprc {
                metrics.push(("auprc", v));
            }
            for (name, v) in metrics {
                s.push_str(&format!("{},{},{},{name},{}\n", c.mode, format_f64(c.ratio), c.seed, format_f64(v)));
            }
        }
        s
    }

    /// Wide format: one line per (mode, ratio) with mean and std.
    pub fn summary_csv(&self) -> String {
        let mut s = format!("mode,ratio,runs,{SUMMARY_COLUMNS}\n");
        let mut keys: Vec<(DropMode, f64)> = Vec::new();
        for c in &self.cells {
            if !keys.contains(&(c.mode, c.ratio)) {
                keys.push((c.mode, c.ratio));
            }
        }
        for (mode, ratio) in keys {
            let row = SummaryRow::from_reports(mode.to_string(), &self.reports(mode, ratio));
            s.push_str(&format!("{mode},{},{},{}\n", format_f64(ratio), row.runs, row.csv_fields()));
        }
        s
    }
}

/// Trains on the full training split and evaluates under sensor dropout.
///
/// For every run seed the model is trained once; each (mode, ratio) cell
/// early-stops on its own dropped validation split and is scored on the
/// equally dropped test split. Random-mode drop sets use the run seed.
pub fn run_leave_sensors_experiment<F>(
    model_factory: F,
    split: &Split,
    train_cfg: &TrainConfig,
    settings: &LeaveOutSettings,
) -> Result<LeaveOutGrid>
where
    F: Fn(u64) -> Result<WaveGnn> + Sync,
{
    if settings.n_runs == 0 || settings.ratios.is_empty() || settings.modes.is_empty() {
        return Err(Error::Validation("leave-out grid needs runs, ratios and modes".into()));
    }
    let n = split.train.n_sensors;
    let ranking = split.train.informative_ranking.clone();
    let mut specs = Vec::new();
    for &mode in &settings.modes {
        for &ratio in &settings.ratios {
            specs.push((mode, ratio));
        }
    }
    let runs: Vec<Vec<LeaveOutCell>> = (0..settings.n_runs)
        .into_par_iter()
        .map(|run| {
            let seed = train_cfg.seed + run as u64;
            let mut drops = Vec::new();
            let mut vals = Vec::new();
            let mut tests = Vec::new();
            for &(mode, ratio) in &specs {
                let spec = match mode {
                    DropMode::Fixed => SensorDropSpec::fixed(
                        ratio,
                        ranking.clone().ok_or_else(|| {
                            Error::Contract("fixed-mode dropout needs an informative ranking in the dataset".into())
                        })?,
                    ),
                    DropMode::Random => SensorDropSpec::random(ratio, seed),
                };
                vals.push(leave_sensors_out(&split.val, &spec)?);
                tests.push(leave_sensors_out(&split.test, &spec)?);
                drops.push((spec.drop_set(n)?, spec));
            }
            let tc = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let monitors: Vec<_> = vals.iter().collect();
            let out = train_monitored(model_factory(seed)?, &split.train, &monitors, &tc)?;
            specs
                .iter()
                .zip(out.models.iter().zip(&out.histories))
                .zip(tests.iter().zip(drops))
                .map(|((&(mode, ratio), (model, hist)), (test, (dropped, spec)))| {
                    let mut report = evaluate(model, test)?;
                    report.meta.seed = Some(seed);
                    report.meta.drop = Some(spec);
                    report.meta.epochs = Some(hist.epochs.len());
                    Ok(LeaveOutCell {
                        mode,
                        ratio,
                        run,
                        seed,
                        dropped,
                        report,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut cells: Vec<LeaveOutCell> = runs.into_iter().flatten().collect();
    cells.sort_by(|a, b| {
        (a.mode as u8)
            .cmp(&(b.mode as u8))
            .then(a.ratio.total_cmp(&b.ratio))
            .then(a.run.cmp(&b.run))
    });
    Ok(LeaveOutGrid { cells })
}
