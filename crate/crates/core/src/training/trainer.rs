use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_value};
use super::metrics::{report_from_logits, MetricsReport};
use super::optim::{adam_step, AdamConfig, AdamState};
use crate::dataset::{Dataset, Label, TaskMode};
use crate::error::{Error, Result};
use crate::model::{SampleInputs, WaveGnn};
use crate::tensor::{ParamGrads, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Epochs without validation-loss improvement before stopping.
    pub early_stop_patience: usize,
    /// Seeds parameter init and batch shuffling.
    pub seed: u64,
    pub class_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            early_stop_patience: 10,
            seed: 0,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::Validation("epochs, batch_size and early_stop_patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return Err(Error::Validation("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(Error::Validation("class weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            betas: self.adam_betas,
            eps: self.adam_eps,
        }
    }
}

/// Model-ready inputs and labels of a dataset, computed once.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub inputs: Vec<SampleInputs>,
    pub labels: Vec<Label>,
    pub n_classes: usize,
    pub task_mode: TaskMode,
}

impl Prepared {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        Ok(Self {
            inputs: dataset.samples.iter().map(SampleInputs::from_sample).collect::<Result<_>>()?,
            labels: dataset.samples.iter().map(|s| s.label.clone()).collect(),
            n_classes: dataset.n_classes,
            task_mode: dataset.task_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn check_schema(model: &WaveGnn, dataset: &Dataset) -> Result<()> {
    let c = &model.config;
    if (c.n_sensors, c.n_classes, c.static_dim, c.task_mode)
        != (dataset.n_sensors, dataset.n_classes, dataset.static_dim, dataset.task_mode)
    {
        return Err(Error::Schema(format!(
            "dataset (n={}, C={}, static={}, {:?}) does not match model (n={}, C={}, static={}, {:?})",
            dataset.n_sensors,
            dataset.n_classes,
            dataset.static_dim,
            dataset.task_mode,
            c.n_sensors,
            c.n_classes,
            c.static_dim,
            c.task_mode
        )));
    }
    Ok(())
}

/// Loss and parameter gradients of a single sample.
pub fn sample_loss_and_grads(
    model: &WaveGnn,
    inputs: &SampleInputs,
    label: &Label,
    class_weights: Option<&[f64]>,
) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let bp = model.params.bind(&mut tape);
    let trace = model.forward(&mut tape, &bp, inputs)?;
    let l = loss(&mut tape, trace.logits, label, model.config.task_mode, class_weights)?;
    let grads = tape.reverse_sweep(l)?;
    Ok((tape.value(l).item()?, bp.gradients(&grads)))
}

/// Mean loss and mean gradient over `batch`.
///
/// Samples may be processed in parallel; their contributions are summed in
/// batch order so the result does not depend on the thread count.
pub fn batch_loss_and_grads(
    model: &WaveGnn,
    data: &Prepared,
    batch: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let parts: Vec<(f64, ParamGrads)> = batch
        .par_iter()
        .map(|&i| sample_loss_and_grads(model, &data.inputs[i], &data.labels[i], class_weights))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grads = ParamGrads::default();
    for (l, g) in &parts {
        total += l;
        grads.accumulate(g);
    }
    let k = 1.0 / batch.len() as f64;
    grads.scale(k);
    Ok((total * k, grads))
}

/// Raw logits for every prepared sample, in order.
pub fn predict(model: &WaveGnn, data: &Prepared) -> Result<Vec<Vec<f64>>> {
    data.inputs
        .par_iter()
        .map(|inp| {
            let mut tape = Tape::new();
            let bp = model.params.bind(&mut tape);
            let trace = model.forward(&mut tape, &bp, inp)?;
            Ok(tape.value(trace.logits).data().to_vec())
        })
        .collect()
}

fn mean_loss(logits: &[Vec<f64>], data: &Prepared, class_weights: Option<&[f64]>) -> Result<f64> {
    let mut total = 0.0;
    for (l, y) in logits.iter().zip(&data.labels) {
        total += loss_value(l, y, data.task_mode, class_weights)?;
    }
    Ok(total / logits.len() as f64)
}

/// Metrics plus mean unweighted loss on prepared data.
pub fn evaluate_prepared(model: &WaveGnn, data: &Prepared) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let logits = predict(model, data)?;
    let truth: Vec<Vec<u8>> = data
        .labels
        .iter()
        .map(|l| l.one_hot(data.n_classes).iter().map(|&x| x as u8).collect())
        .collect();
    let mut report = report_from_logits(&logits, &truth, data.task_mode)?;
    report.loss = Some(mean_loss(&logits, data, None)?);
    report.meta.variant = Some(model.config.variant);
    Ok(report)
}

pub fn evaluate(model: &WaveGnn, dataset: &Dataset) -> Result<MetricsReport> {
    check_schema(model, dataset)?;
    evaluate_prepared(model, &Prepared::new(dataset)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                crate::dataset::format_f64(r.train_loss),
                crate::dataset::format_f64(r.val_loss),
                crate::dataset::format_f64(r.val_accuracy)
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: WaveGnn,
    pub history: History,
}

/// Mini-batch Adam with early stopping on validation loss; returns the
/// parameters of the best validation epoch.
pub fn train(model: WaveGnn, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut out = train_monitored(model, train_set, &[val_set], cfg)?;
    Ok(TrainOutcome {
        model: out.models.remove(0),
        history: out.histories.remove(0),
    })
}

/// One training trajectory watched by several validation sets.
#[derive(Clone, Debug)]
pub struct MonitoredOutcome {
    /// Best parameters per monitor.
    pub models: Vec<WaveGnn>,
    pub histories: Vec<History>,
}

struct Monitor {
    data: Prepared,
    best_loss: f64,
    best: WaveGnn,
    stale: usize,
    done: bool,
    history: History,
}

/// Trains once while tracking early stopping separately for every monitor.
///
/// Each monitor keeps its own best parameters and patience counter and
/// stops observing once its patience runs out, so monitor `k` receives
/// exactly what a dedicated run validated on `monitors[k]` would. Training
/// ends when every monitor has stopped or the epoch budget is spent.
pub fn train_monitored(
    mut model: WaveGnn,
    train_set: &Dataset,
    monitors: &[&Dataset],
    cfg: &TrainConfig,
) -> Result<MonitoredOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    if monitors.is_empty() || monitors.iter().any(|m| m.is_empty()) {
        return Err(Error::Contract("validation split is empty".into()));
    }
    check_schema(&model, train_set)?;
    for m in monitors {
        check_schema(&model, m)?;
    }
    if let Some(w) = &cfg.class_weights {
        if w.len() != model.config.n_classes {
            return Err(Error::Validation(format!(
                "{} class weights for {} classes",
                w.len(),
                model.config.n_classes
            )));
        }
    }
    let weights = cfg.class_weights.as_deref();
    let train_data = Prepared::new(train_set)?;
    let mut mons: Vec<Monitor> = monitors
        .iter()
        .map(|m| {
            Ok(Monitor {
                data: Prepared::new(m)?,
                best_loss: f64::INFINITY,
                best: model.clone(),
                stale: 0,
                done: false,
                history: History::default(),
            })
        })
        .collect::<Result<_>>()?;

    let adam = cfg.adam();
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (l, g) = batch_loss_and_grads(&model, &train_data, batch, weights)?;
            adam_step(&mut model.params, &g, &mut state, &adam)?;
            total += l * batch.len() as f64;
        }
        let train_loss = total / train_data.len() as f64;
        for (k, mon) in mons.iter_mut().enumerate().filter(|(_, m)| !m.done) {
            let logits = predict(&model, &mon.data)?;
            let val_loss = mean_loss(&logits, &mon.data, weights)?;
            let correct = logits
                .iter()
                .zip(&mon.data.labels)
                .filter(|(l, y)| match y {
                    Label::Class(c) => super::metrics::argmax(l) == *c,
                    Label::Multi(v) => l.iter().zip(v).all(|(&x, &b)| u8::from(x >= 0.0) == b),
                })
                .count();
            mon.history.epochs.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
                val_accuracy: correct as f64 / logits.len() as f64,
            });
            if k == 0 {
                log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
            }
            if val_loss < mon.best_loss {
                mon.best_loss = val_loss;
                mon.best = model.clone();
                mon.history.best_epoch = epoch;
                mon.stale = 0;
            } else {
                mon.stale += 1;
                if mon.stale >= cfg.early_stop_patience {
                    mon.done = true;
                    mon.history.stopped_early = true;
                }
            }
        }
        if mons.iter().all(|m| m.done) {
            break;
        }
    }
    Ok(MonitoredOutcome {
        models: mons.iter().map(|m| m.best.clone()).collect(),
        histories: mons.into_iter().map(|m| m.history).collect(),
    })
}
