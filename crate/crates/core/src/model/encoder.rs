//! Per-sensor intra-series encoder.
//!
//! All sensors of a sample are processed together in sensor-major layout:
//! row `v * T + j` holds sensor `v` at grid position `j`.

use crate::dataset::IrregularSample;
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Tape, Tensor, Var};

use super::config::ModelConfig;

/// Time differences to each sensor's previous observation; 0 at the first
/// observation and at masked positions.
pub fn compute_deltas(timestamps: &[f64], mask_col: &[u8]) -> Vec<f64> {
    let mut prev: Option<f64> = None;
    timestamps
        .iter()
        .zip(mask_col)
        .map(|(&t, &m)| {
            if m == 0 {
                return 0.0;
            }
            let d = prev.map_or(0.0, |p| t - p);
            prev = Some(t);
            d
        })
        .collect()
}

/// Distance from each position to the sensor's last observed timestamp.
/// Masked positions and sensors without observations give 0.
pub fn deltas_from_last(timestamps: &[f64], mask_col: &[u8]) -> Vec<f64> {
    let last = timestamps
        .iter()
        .zip(mask_col)
        .filter(|(_, &m)| m == 1)
        .map(|(&t, _)| t)
        .last();
    timestamps
        .iter()
        .zip(mask_col)
        .map(|(&t, &m)| match last {
            Some(l) if m == 1 => l - t,
            _ => 0.0,
        })
        .collect()
}

/// Model-ready tensors for one sample.
#[derive(Clone, Debug)]
pub struct SampleInputs {
    pub n: usize,
    pub t: usize,
    /// `[n*T, 1]` observed values (zero where masked).
    pub values: Tensor,
    /// `[n, T]` 0/1 mask.
    pub mask: Tensor,
    /// `[n*T, 1]` consecutive-observation deltas.
    pub deltas: Tensor,
    /// `[n, T]` distances to the last observation.
    pub deltas_from_last: Tensor,
    /// `[n*T, M]`-broadcastable row mask: 1 where observed.
    pub observed_rows: Vec<f64>,
    /// Per sensor: 1 when it has at least one observation.
    pub has_obs: Vec<f64>,
    pub static_features: Option<Vec<f64>>,
}

impl SampleInputs {
    pub fn from_sample(sample: &IrregularSample) -> Result<Self> {
        let (t, n) = (sample.len(), sample.n_sensors());
        if t == 0 || n == 0 {
            return Err(Error::Contract(format!("sample `{}` is empty", sample.id)));
        }
        let mut values = Vec::with_capacity(n * t);
        let mut mask = Vec::with_capacity(n * t);
        let mut deltas = Vec::with_capacity(n * t);
        let mut last = Vec::with_capacity(n * t);
        let mut has_obs = Vec::with_capacity(n);
        for v in 0..n {
            let col = sample.mask_column(v);
            for (j, &m) in col.iter().enumerate() {
                values.push(if m == 1 { sample.values[j][v] } else { 0.0 });
                mask.push(f64::from(m));
            }
            deltas.extend(compute_deltas(&sample.timestamps, &col));
            last.extend(deltas_from_last(&sample.timestamps, &col));
            has_obs.push(f64::from(u8::from(col.contains(&1))));
        }
        Ok(Self {
            n,
            t,
            values: Tensor::new(vec![n * t, 1], values)?,
            observed_rows: mask.clone(),
            mask: Tensor::new(vec![n, t], mask)?,
            deltas: Tensor::new(vec![n * t, 1], deltas)?,
            deltas_from_last: Tensor::new(vec![n, t], last)?,
            has_obs,
            static_features: sample.static_features.clone(),
        })
    }

    /// `[rows, width]` constant with row `r` filled by `per_row[r]`.
    fn row_mask(per_row: &[f64], width: usize) -> Tensor {
        let data = per_row.iter().flat_map(|&m| std::iter::repeat_n(m, width)).collect();
        Tensor::new(vec![per_row.len(), width], data).expect("non-empty mask")
    }

    pub(crate) fn observed_mask(&self, width: usize) -> Tensor {
        Self::row_mask(&self.observed_rows, width)
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Initial node states `[n, M]` from static features, or the shared
/// trainable fallback when the model has no static input.
pub fn init_node_states(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    static_features: Option<&[f64]>,
) -> Result<Var> {
    let (n, m) = (cfg.n_sensors, cfg.embed_dim);
    if cfg.static_dim == 0 {
        if static_features.is_some_and(|p| !p.is_empty()) {
            return Err(Error::shape("init_node_states", &[static_features.map_or(0, <[f64]>::len)], &[0]));
        }
        return bp.var("init.fallback");
    }
    let p = static_features.ok_or_else(|| {
        Error::Contract(format!("model expects {} static features, sample has none", cfg.static_dim))
    })?;
    if p.len() != cfg.static_dim {
        return Err(Error::shape("init_node_states", &[p.len()], &[cfg.static_dim]));
    }
    let x = tape.constant(Tensor::new(vec![1, p.len()], p.to_vec())?);
    let h = affine(tape, x, bp.var("init.static.w1")?, bp.var("init.static.b1")?)?;
    let h = tape.relu(h)?;
    let z = affine(tape, h, bp.var("init.static.w2")?, bp.var("init.static.b2")?)?;
    tape.reshape(z, &[n, m])
}

/// Two-layer tanh MLP applied to every scalar in `values` (`[R, 1]` → `[R, M]`).
pub fn embed_observations(tape: &mut Tape, bp: &BoundParams, values: Var) -> Result<Var> {
    let h = affine(tape, values, bp.var("enc.obs.w1")?, bp.var("enc.obs.b1")?)?;
    let h = tape.tanh(h)?;
    let h = affine(tape, h, bp.var("enc.obs.w2")?, bp.var("enc.obs.b2")?)?;
    tape.tanh(h)
}

/// Time2Vec of every delta (`[R, 1]` → `[R, d_t]`): entry 0 linear, the rest
/// sinusoidal.
pub fn time2vec(tape: &mut Tape, bp: &BoundParams, deltas: Var) -> Result<Var> {
    let omega = bp.var("enc.t2v.omega")?;
    let phi = bp.var("enc.t2v.phi")?;
    let d_t = tape.value(omega).numel();
    let omega_row = tape.reshape(omega, &[1, d_t])?;
    let lin = tape.matmul(deltas, omega_row)?;
    let lin = tape.add_row(lin, phi)?;
    let per = tape.sin(lin)?;
    let mut keep = vec![0.0; d_t];
    keep[0] = 1.0;
    let keep_lin = tape.constant(Tensor::vector(keep.clone()));
    let keep_per = tape.constant(Tensor::vector(keep.iter().map(|k| 1.0 - k).collect()));
    let a = tape.mul_row(lin, keep_lin)?;
    let b = tape.mul_row(per, keep_per)?;
    tape.add(a, b)
}

/// Time2Vec projected to the embedding width.
pub fn time_encoding(tape: &mut Tape, bp: &BoundParams, deltas: Var) -> Result<Var> {
    let tv = time2vec(tape, bp, deltas)?;
    tape.matmul(tv, bp.var("enc.t2v.proj")?)
}

/// Fixed sinusoidal encoding of the grid index, `[T, M]`.
pub fn positional_encoding(t: usize, m: usize) -> Tensor {
    let mut data = Vec::with_capacity(t * m);
    for pos in 0..t {
        for i in 0..m {
            let rate = 10000f64.powf(-((2 * (i / 2)) as f64) / m as f64);
            let angle = pos as f64 * rate;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![t, m], data).expect("positive extents")
}

/// Post-norm transformer stack over every sensor sequence.
///
/// `h` is `[n, T, M]` and `mask` is `[n, T]`. Keys at masked positions are
/// excluded from attention. Sensors with no observation produce all-zero rows.
pub fn encode_sequence(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    h: Var,
    mask: &Tensor,
) -> Result<Var> {
    let s = tape.shape(h).to_vec();
    if s.len() != 3 || s[2] != cfg.embed_dim || mask.shape() != [s[0], s[1]] {
        return Err(Error::shape("encode_sequence", &s, mask.shape()));
    }
    let (n, t, m) = (s[0], s[1], s[2]);
    let dh = cfg.enc_head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let eps = cfg.layer_norm_eps;
    let mut x = tape.reshape(h, &[n * t, m])?;
    for l in 0..cfg.enc_layers {
        let mut attn: Option<Var> = None;
        for hd in 0..cfg.enc_heads {
            let pre = format!("enc.layer{l}.head{hd}");
            let q = tape.matmul(x, bp.var(&format!("{pre}.wq"))?)?;
            let k = tape.matmul(x, bp.var(&format!("{pre}.wk"))?)?;
            let v = tape.matmul(x, bp.var(&format!("{pre}.wv"))?)?;
            let q = tape.reshape(q, &[n, t, dh])?;
            let k = tape.reshape(k, &[n, t, dh])?;
            let v = tape.reshape(v, &[n, t, dh])?;
            let kt = tape.transpose(k)?;
            let scores = tape.bmm(q, kt)?;
            let scores = tape.scale(scores, inv_sqrt)?;
            let p = tape.masked_softmax(scores, mask)?;
            let o = tape.bmm(p, v)?;
            let o = tape.reshape(o, &[n * t, dh])?;
            let o = tape.matmul(o, bp.var(&format!("{pre}.wo"))?)?;
            attn = Some(match attn {
                None => o,
                Some(acc) => tape.add(acc, o)?,
            });
        }
        let pre = format!("enc.layer{l}");
        let attn = attn.expect("at least one head");
        let attn = tape.add_row(attn, bp.var(&format!("{pre}.attn.bo"))?)?;
        let y = tape.add(x, attn)?;
        let y = layer_norm_affine(tape, bp, y, &format!("{pre}.ln1"), eps)?;
        let f = affine(tape, y, bp.var(&format!("{pre}.ff.w1"))?, bp.var(&format!("{pre}.ff.b1"))?)?;
        let f = tape.relu(f)?;
        let f = affine(tape, f, bp.var(&format!("{pre}.ff.w2"))?, bp.var(&format!("{pre}.ff.b2"))?)?;
        let y2 = tape.add(y, f)?;
        x = layer_norm_affine(tape, bp, y2, &format!("{pre}.ln2"), eps)?;
    }
    let has_obs: Vec<f64> = (0..n)
        .flat_map(|v| {
            let any = mask.row(v).iter().any(|&mk| mk != 0.0);
            std::iter::repeat_n(f64::from(u8::from(any)), t)
        })
        .collect();
    let keep = tape.constant(SampleInputs::row_mask(&has_obs, m));
    let x = tape.mul(x, keep)?;
    tape.reshape(x, &[n, t, m])
}

fn layer_norm_affine(tape: &mut Tape, bp: &BoundParams, x: Var, prefix: &str, eps: f64) -> Result<Var> {
    let y = tape.layer_norm(x, eps)?;
    let y = tape.mul_row(y, bp.var(&format!("{prefix}.gain"))?)?;
    tape.add_row(y, bp.var(&format!("{prefix}.bias"))?)
}

/// Decay rate `η = softplus(eta_raw)` as a `[1]` variable.
pub fn decay_rate(tape: &mut Tape, bp: &BoundParams) -> Result<Var> {
    let raw = bp.var("enc.eta_raw")?;
    tape.softplus(raw)
}

/// `w_j ∝ m_j · exp(−η δt′_j)` per sensor row; all zero for empty sensors.
pub fn decay_weights(tape: &mut Tape, deltas_from_last: &Tensor, mask: &Tensor, eta: Var) -> Result<Var> {
    let neg = Tensor::new(
        deltas_from_last.shape().to_vec(),
        deltas_from_last.data().iter().map(|d| -d).collect(),
    )?;
    let neg = tape.constant(neg);
    let logits = tape.scale_by(neg, eta)?;
    tape.masked_softmax(logits, mask)
}

/// Uniform weights over each sensor's observed positions.
pub fn uniform_weights(tape: &mut Tape, mask: &Tensor) -> Result<Var> {
    let zeros = tape.constant(Tensor::zeros(mask.shape()));
    tape.masked_softmax(zeros, mask)
}

/// `Δz_v = Σ_j w_{v,j} z_{v,j}`: `[n, T, M]` and `[n, T]` → `[n, M]`.
pub fn aggregate_sequence(tape: &mut Tape, z: Var, weights: Var) -> Result<Var> {
    let s = tape.shape(z).to_vec();
    if s.len() != 3 || tape.shape(weights) != [s[0], s[1]] {
        return Err(Error::shape("aggregate_sequence", &s, tape.shape(weights)));
    }
    let w = tape.reshape(weights, &[s[0], 1, s[1]])?;
    let out = tape.bmm(w, z)?;
    tape.reshape(out, &[s[0], s[2]])
}

/// Residual node update `Z + ΔZ`.
pub fn update_node_states(tape: &mut Tape, z: Var, dz: Var) -> Result<Var> {
    tape.add(z, dz)
}
