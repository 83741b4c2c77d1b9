//! WaveGNN: per-sensor encoding, sensor-graph message passing, readout.

mod checkpoint;
mod config;
pub mod encoder;
pub mod graph;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::IrregularSample;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamStore, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{AblationVariant, ModelConfig};
pub use encoder::SampleInputs;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum InitKind {
    Xavier,
    Zero,
    One,
    Uniform(i8),
    EtaRaw,
}

/// Every parameter name with its shape and initializer, in a fixed order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, InitKind)> {
    use InitKind::*;
    let (n, m, dt) = (cfg.n_sensors, cfg.embed_dim, cfg.time_dim);
    let mut out: Vec<(String, Vec<usize>, InitKind)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, kind| out.push((name, shape, kind));
    if cfg.static_dim > 0 {
        let h = cfg.hidden_static();
        add("init.static.w1".into(), vec![cfg.static_dim, h], Xavier);
        add("init.static.b1".into(), vec![h], Zero);
        add("init.static.w2".into(), vec![h, n * m], Xavier);
        add("init.static.b2".into(), vec![n * m], Zero);
    } else {
        add("init.fallback".into(), vec![n, m], Xavier);
    }
    add("enc.obs.w1".into(), vec![1, m], Xavier);
    add("enc.obs.b1".into(), vec![m], Zero);
    add("enc.obs.w2".into(), vec![m, m], Xavier);
    add("enc.obs.b2".into(), vec![m], Zero);
    add("enc.t2v.omega".into(), vec![dt], Uniform(1));
    add("enc.t2v.phi".into(), vec![dt], Uniform(1));
    add("enc.t2v.proj".into(), vec![dt, m], Xavier);
    let dh = cfg.enc_head_dim();
    for l in 0..cfg.enc_layers {
        for h in 0..cfg.enc_heads {
            for w in ["wq", "wk", "wv"] {
                add(format!("enc.layer{l}.head{h}.{w}"), vec![m, dh], Xavier);
            }
            add(format!("enc.layer{l}.head{h}.wo"), vec![dh, m], Xavier);
        }
        add(format!("enc.layer{l}.attn.bo"), vec![m], Zero);
        add(format!("enc.layer{l}.ff.w1"), vec![m, cfg.ff()], Xavier);
        add(format!("enc.layer{l}.ff.b1"), vec![cfg.ff()], Zero);
        add(format!("enc.layer{l}.ff.w2"), vec![cfg.ff(), m], Xavier);
        add(format!("enc.layer{l}.ff.b2"), vec![m], Zero);
        for ln in ["ln1", "ln2"] {
            add(format!("enc.layer{l}.{ln}.gain"), vec![m], One);
            add(format!("enc.layer{l}.{ln}.bias"), vec![m], Zero);
        }
    }
    add("enc.eta_raw".into(), vec![1], EtaRaw);
    let dha = cfg.adj_head_dim();
    for h in 0..cfg.adj_heads {
        add(format!("graph.adj.head{h}.wq"), vec![m, dha], Xavier);
        add(format!("graph.adj.head{h}.wk"), vec![m, dha], Xavier);
    }
    add("graph.global_emb".into(), vec![n, m], Xavier);
    add("graph.alpha_raw".into(), vec![1], Zero);
    for l in 0..cfg.gcn_layers {
        add(format!("graph.gcn{l}.w"), vec![m, m], Xavier);
    }
    let r = cfg.readout();
    add("readout.concat.w".into(), vec![n * m, r], Xavier);
    add("readout.concat.b".into(), vec![r], Zero);
    add("readout.fuse.w".into(), vec![m + r, r], Xavier);
    add("readout.fuse.b".into(), vec![r], Zero);
    add("head.w".into(), vec![r, cfg.n_classes], Xavier);
    add("head.b".into(), vec![cfg.n_classes], Zero);
    out
}

/// Parameter names and shapes implied by `cfg`.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// `softplus⁻¹(eta)`.
fn inverse_softplus(eta: f64) -> f64 {
    eta.exp_m1().ln()
}

fn init_tensor(shape: &[usize], kind: InitKind, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Tensor {
    match kind {
        InitKind::Zero => Tensor::zeros(shape),
        InitKind::One => Tensor::full(shape, 1.0),
        InitKind::EtaRaw => Tensor::full(shape, inverse_softplus(cfg.eta_init)),
        InitKind::Uniform(a) => {
            let a = f64::from(a);
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-a..a));
            t
        }
        InitKind::Xavier => {
            let (fan_in, fan_out) = (shape[0], shape[shape.len() - 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-a..a));
            t
        }
    }
}

/// Intermediate variables of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub node_init: Var,
    /// `[n, T, M]` encoder output, absent for the no-intra-series variant.
    pub encoded: Option<Var>,
    /// `[n, T]` aggregation weights.
    pub weights: Var,
    pub node_states: Var,
    pub a_short: Option<Var>,
    pub a_long: Option<Var>,
    pub alpha: Option<Var>,
    /// Blended and sparsified adjacency.
    pub adjacency: Option<Var>,
    pub gcn_out: Var,
    pub graph_embedding: Var,
    pub logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveGnn {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl WaveGnn {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, kind) in layout(&config) {
            params.insert(name, init_tensor(&shape, kind, &config, &mut rng))?;
        }
        Ok(Self { config, params })
    }

    /// Checks that `params` matches the layout implied by the config.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Schema(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let got = params.get(name).map_err(|_| Error::Schema(format!("missing parameter `{name}`")))?;
            if got.shape() != shape.as_slice() {
                return Err(Error::Schema(format!(
                    "parameter `{name}` has shape {:?}, config implies {shape:?}",
                    got.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn eta(&self) -> f64 {
        let raw = self.params.get("enc.eta_raw").map_or(0.0, |t| t.data()[0]);
        if raw > 30.0 {
            raw
        } else {
            raw.exp().ln_1p()
        }
    }

    pub fn alpha(&self) -> f64 {
        let raw = self.params.get("graph.alpha_raw").map_or(0.0, |t| t.data()[0]);
        1.0 / (1.0 + (-raw).exp())
    }

    /// Records the whole pipeline for one sample on `tape`.
    pub fn forward(&self, tape: &mut Tape, bp: &BoundParams, inputs: &SampleInputs) -> Result<ForwardTrace> {
        let cfg = &self.config;
        if inputs.n != cfg.n_sensors {
            return Err(Error::shape("forward", &[inputs.n], &[cfg.n_sensors]));
        }
        let (n, t, m) = (inputs.n, inputs.t, cfg.embed_dim);
        let variant = cfg.variant;

        let node_init = encoder::init_node_states(tape, bp, cfg, inputs.static_features.as_deref())?;

        let values = tape.constant(inputs.values.clone());
        let emb = encoder::embed_observations(tape, bp, values)?;
        let time = if variant == AblationVariant::NoTemporalEncoding {
            let pe = encoder::positional_encoding(t, m);
            let tiled: Vec<f64> = (0..n).flat_map(|_| pe.data().iter().copied()).collect();
            tape.constant(Tensor::new(vec![n * t, m], tiled)?)
        } else {
            let deltas = tape.constant(inputs.deltas.clone());
            encoder::time_encoding(tape, bp, deltas)?
        };
        let h = tape.add(emb, time)?;
        let observed = tape.constant(inputs.observed_mask(m));
        let h = tape.mul(h, observed)?;
        let h = tape.reshape(h, &[n, t, m])?;

        let (encoded, weights, dz) = if variant == AblationVariant::NoIntraSeries {
            // Every position carries the masked mean, so any normalized
            // weighting over observed positions returns that mean.
            let w = encoder::uniform_weights(tape, &inputs.mask)?;
            let dz = encoder::aggregate_sequence(tape, h, w)?;
            (None, w, dz)
        } else {
            let z_seq = encoder::encode_sequence(tape, bp, cfg, h, &inputs.mask)?;
            let w = if variant == AblationVariant::NoDecayRate {
                encoder::uniform_weights(tape, &inputs.mask)?
            } else {
                let eta = encoder::decay_rate(tape, bp)?;
                encoder::decay_weights(tape, &inputs.deltas_from_last, &inputs.mask, eta)?
            };
            let dz = encoder::aggregate_sequence(tape, z_seq, w)?;
            (Some(z_seq), w, dz)
        };
        let node_states = encoder::update_node_states(tape, node_init, dz)?;

        let (mut a_short, mut a_long, mut alpha, mut adjacency) = (None, None, None, None);
        let gcn_out = if variant == AblationVariant::NoInterSeries {
            node_states
        } else {
            let blended = match variant {
                AblationVariant::NoShortTerm => {
                    let al = graph::long_term_adjacency(tape, bp)?;
                    a_long = Some(al);
                    al
                }
                AblationVariant::NoLongTerm => {
                    let a_s = graph::short_term_adjacency(tape, bp, cfg, node_states)?;
                    a_short = Some(a_s);
                    a_s
                }
                _ => {
                    let a_s = graph::short_term_adjacency(tape, bp, cfg, node_states)?;
                    let al = graph::long_term_adjacency(tape, bp)?;
                    let al_w = graph::blend_weight(tape, bp)?;
                    a_short = Some(a_s);
                    a_long = Some(al);
                    alpha = Some(al_w);
                    graph::blend_adjacency(tape, a_s, al, al_w)?
                }
            };
            let a = graph::sparsify(tape, blended, cfg.sparsity_k)?;
            adjacency = Some(a);
            graph::gcn_forward(tape, bp, cfg, node_states, a)?
        };
        let graph_embedding = graph::readout(tape, bp, gcn_out)?;
        let logits = graph::predict_logits(tape, bp, graph_embedding)?;
        Ok(ForwardTrace {
            node_init,
            encoded,
            weights,
            node_states,
            a_short,
            a_long,
            alpha,
            adjacency,
            gcn_out,
            graph_embedding,
            logits,
        })
    }

    /// Raw logits for one sample.
    pub fn logits(&self, sample: &IrregularSample) -> Result<Vec<f64>> {
        let inputs = SampleInputs::from_sample(sample)?;
        let mut tape = Tape::new();
        let bp = self.params.bind(&mut tape);
        let trace = self.forward(&mut tape, &bp, &inputs)?;
        Ok(tape.value(trace.logits).data().to_vec())
    }
}

/// Logits of `sample` under `model`.
pub fn full_forward(sample: &IrregularSample, model: &WaveGnn) -> Result<Vec<f64>> {
    model.logits(sample)
}
