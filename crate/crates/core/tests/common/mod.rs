//! Straight-line scalar reimplementation of the model and random fixtures.
//!
//! Nothing here goes through the tape: every quantity is computed with plain
//! nested loops over `Vec<f64>` so it can serve as an independent reference.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavegnn::dataset::{IrregularSample, Label};
use wavegnn::model::{AblationVariant, ModelConfig, WaveGnn};
use wavegnn::tensor::{ParamStore, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn param(p: &ParamStore, name: &str) -> Tensor {
    p.get(name).unwrap_or_else(|_| panic!("missing {name}")).clone()
}

fn vecp(p: &ParamStore, name: &str) -> Vec<f64> {
    param(p, name).data().to_vec()
}

fn matp(p: &ParamStore, name: &str) -> Mat {
    let t = param(p, name);
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

/// Row vector times matrix.
fn vm(x: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for c in 0..cols {
        let mut s = 0.0;
        for (k, xk) in x.iter().enumerate() {
            s += xk * w[k][c];
        }
        out[c] = s;
    }
    out
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter().map(|row| vm(row, b)).collect()
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn softmax_allowed(scores: &[f64], allowed: &[bool]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for (s, &a) in scores.iter().zip(allowed) {
        if a && *s > max {
            max = *s;
        }
    }
    if max == f64::NEG_INFINITY {
        return vec![0.0; scores.len()];
    }
    let e: Vec<f64> = scores
        .iter()
        .zip(allowed)
        .map(|(s, &a)| if a { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

fn softmax_rows(s: &Mat) -> Mat {
    s.iter().map(|r| softmax_allowed(r, &vec![true; r.len()])).collect()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let sd = (var + eps).sqrt();
    (0..x.len()).map(|i| (x[i] - mean) / sd * gain[i] + bias[i]).collect()
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// Post-norm transformer over one sensor sequence `[T][M]`. Keys where
/// `observed` is false are excluded. A sequence without observations yields
/// zeros.
pub fn transformer(p: &ParamStore, cfg: &ModelConfig, h: &Mat, observed: &[bool]) -> Mat {
    let t = h.len();
    let m = cfg.embed_dim;
    if !observed.iter().any(|&o| o) {
        return vec![vec![0.0; m]; t];
    }
    let dh = m / cfg.enc_heads;
    let mut x = h.clone();
    for l in 0..cfg.enc_layers {
        let mut attn = vec![vec![0.0; m]; t];
        for hd in 0..cfg.enc_heads {
            let pre = format!("enc.layer{l}.head{hd}");
            let q = mm(&x, &matp(p, &format!("{pre}.wq")));
            let k = mm(&x, &matp(p, &format!("{pre}.wk")));
            let v = mm(&x, &matp(p, &format!("{pre}.wv")));
            let wo = matp(p, &format!("{pre}.wo"));
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        let mut s = 0.0;
                        for d in 0..dh {
                            s += q[i][d] * k[j][d];
                        }
                        s / (dh as f64).sqrt()
                    })
                    .collect();
                let w = softmax_allowed(&scores, observed);
                let mut o = vec![0.0; dh];
                for j in 0..t {
                    for d in 0..dh {
                        o[d] += w[j] * v[j][d];
                    }
                }
                let proj = vm(&o, &wo);
                for c in 0..m {
                    attn[i][c] += proj[c];
                }
            }
        }
        let pre = format!("enc.layer{l}");
        let bo = vecp(p, &format!("{pre}.attn.bo"));
        let (g1, b1) = (vecp(p, &format!("{pre}.ln1.gain")), vecp(p, &format!("{pre}.ln1.bias")));
        let (g2, b2) = (vecp(p, &format!("{pre}.ln2.gain")), vecp(p, &format!("{pre}.ln2.bias")));
        let fw1 = matp(p, &format!("{pre}.ff.w1"));
        let fb1 = vecp(p, &format!("{pre}.ff.b1"));
        let fw2 = matp(p, &format!("{pre}.ff.w2"));
        let fb2 = vecp(p, &format!("{pre}.ff.b2"));
        for i in 0..t {
            let y = layer_norm(&plus(&x[i], &plus(&attn[i], &bo)), &g1, &b1, cfg.layer_norm_eps);
            let f: Vec<f64> = plus(&vm(&y, &fw1), &fb1).into_iter().map(|z| z.max(0.0)).collect();
            let f = plus(&vm(&f, &fw2), &fb2);
            x[i] = layer_norm(&plus(&y, &f), &g2, &b2, cfg.layer_norm_eps);
        }
    }
    x
}

/// Logits of `sample` computed without the tape.
pub fn oracle_logits(model: &WaveGnn, sample: &IrregularSample) -> Vec<f64> {
    let cfg = &model.config;
    let p = &model.params;
    let (n, t, m) = (cfg.n_sensors, sample.timestamps.len(), cfg.embed_dim);
    let variant = cfg.variant;

    // Initial node states.
    let mut z: Mat = if cfg.static_dim > 0 {
        let x = sample.static_features.clone().expect("static features");
        let h: Vec<f64> = plus(&vm(&x, &matp(p, "init.static.w1")), &vecp(p, "init.static.b1"))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let flat = plus(&vm(&h, &matp(p, "init.static.w2")), &vecp(p, "init.static.b2"));
        (0..n).map(|v| flat[v * m..(v + 1) * m].to_vec()).collect()
    } else {
        matp(p, "init.fallback")
    };

    let ow1 = matp(p, "enc.obs.w1");
    let ob1 = vecp(p, "enc.obs.b1");
    let ow2 = matp(p, "enc.obs.w2");
    let ob2 = vecp(p, "enc.obs.b2");
    let omega = vecp(p, "enc.t2v.omega");
    let phi = vecp(p, "enc.t2v.phi");
    let proj = matp(p, "enc.t2v.proj");
    let eta = softplus(vecp(p, "enc.eta_raw")[0]);

    for v in 0..n {
        let observed: Vec<bool> = (0..t).map(|j| sample.mask[j][v] == 1).collect();
        // Gap to the previous observation of this sensor.
        let mut delta = vec![0.0; t];
        let mut prev: Option<f64> = None;
        for j in 0..t {
            if observed[j] {
                if let Some(tp) = prev {
                    delta[j] = sample.timestamps[j] - tp;
                }
                prev = Some(sample.timestamps[j]);
            }
        }
        let mut h = vec![vec![0.0; m]; t];
        for j in 0..t {
            if !observed[j] {
                continue;
            }
            let s = sample.values[j][v];
            let a: Vec<f64> = (0..m).map(|c| (s * ow1[0][c] + ob1[c]).tanh()).collect();
            let e: Vec<f64> = plus(&vm(&a, &ow2), &ob2).into_iter().map(f64::tanh).collect();
            let te: Vec<f64> = if variant == AblationVariant::NoTemporalEncoding {
                (0..m)
                    .map(|i| {
                        let rate = 10000f64.powf(-((2 * (i / 2)) as f64) / m as f64);
                        let ang = j as f64 * rate;
                        if i % 2 == 0 { ang.sin() } else { ang.cos() }
                    })
                    .collect()
            } else {
                let tv: Vec<f64> = (0..omega.len())
                    .map(|k| {
                        let lin = omega[k] * delta[j] + phi[k];
                        if k == 0 { lin } else { lin.sin() }
                    })
                    .collect();
                vm(&tv, &proj)
            };
            h[j] = plus(&e, &te);
        }

        let (seq, weights) = if variant == AblationVariant::NoIntraSeries {
            (h, uniform(&observed))
        } else {
            let seq = transformer(p, cfg, &h, &observed);
            let w = if variant == AblationVariant::NoDecayRate {
                uniform(&observed)
            } else {
                let last = (0..t).filter(|&j| observed[j]).map(|j| sample.timestamps[j]).last();
                let raw: Vec<f64> = (0..t)
                    .map(|j| match last {
                        Some(l) if observed[j] => (-eta * (l - sample.timestamps[j])).exp(),
                        _ => 0.0,
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                if total > 0.0 {
                    raw.iter().map(|r| r / total).collect()
                } else {
                    raw
                }
            };
            (seq, w)
        };
        for c in 0..m {
            let mut acc = 0.0;
            for j in 0..t {
                acc += weights[j] * seq[j][c];
            }
            z[v][c] += acc;
        }
    }

    let mut vstate = z.clone();
    if variant != AblationVariant::NoInterSeries {
        let a_s = || {
            let dh = m / cfg.adj_heads;
            let mut acc = vec![vec![0.0; n]; n];
            for hd in 0..cfg.adj_heads {
                let q = mm(&z, &matp(p, &format!("graph.adj.head{hd}.wq")));
                let k = mm(&z, &matp(p, &format!("graph.adj.head{hd}.wk")));
                let s: Mat = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| (0..dh).map(|d| q[i][d] * k[j][d]).sum::<f64>() / (dh as f64).sqrt())
                            .collect()
                    })
                    .collect();
                let pr = softmax_rows(&s);
                for i in 0..n {
                    for j in 0..n {
                        acc[i][j] += pr[i][j] / cfg.adj_heads as f64;
                    }
                }
            }
            acc
        };
        let a_l = || {
            let e = matp(p, "graph.global_emb");
            let s: Mat = (0..n)
                .map(|i| (0..n).map(|j| (0..m).map(|c| e[i][c] * e[j][c]).sum()).collect())
                .collect();
            softmax_rows(&s)
        };
        let mut a = match variant {
            AblationVariant::NoShortTerm => a_l(),
            AblationVariant::NoLongTerm => a_s(),
            _ => {
                let alpha = 1.0 / (1.0 + (-vecp(p, "graph.alpha_raw")[0]).exp());
                let (s, l) = (a_s(), a_l());
                (0..n)
                    .map(|i| (0..n).map(|j| alpha * s[i][j] + (1.0 - alpha) * l[i][j]).collect())
                    .collect()
            }
        };
        // Global sparsification with row-major tie-break.
        let count = (cfg.sparsity_k * (n * n) as f64 / 100.0).floor() as usize;
        let mut idx: Vec<usize> = (0..n * n).collect();
        idx.sort_by(|&x, &y| {
            a[x / n][x % n]
                .partial_cmp(&a[y / n][y % n])
                .unwrap()
                .then(x.cmp(&y))
        });
        for &i in &idx[..count] {
            a[i / n][i % n] = 0.0;
        }
        for l in 0..cfg.gcn_layers {
            let msg = mm(&mm(&a, &vstate), &matp(p, &format!("graph.gcn{l}.w")));
            for i in 0..n {
                for c in 0..m {
                    vstate[i][c] += msg[i][c].max(0.0);
                }
            }
        }
    }

    let pool: Vec<f64> = (0..m)
        .map(|c| (0..n).map(|i| vstate[i][c]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let flat: Vec<f64> = vstate.iter().flatten().copied().collect();
    let q = plus(&vm(&flat, &matp(p, "readout.concat.w")), &vecp(p, "readout.concat.b"));
    let pq: Vec<f64> = pool.into_iter().chain(q).collect();
    let g = plus(&vm(&pq, &matp(p, "readout.fuse.w")), &vecp(p, "readout.fuse.b"));
    plus(&vm(&g, &matp(p, "head.w")), &vecp(p, "head.b"))
}

fn uniform(observed: &[bool]) -> Vec<f64> {
    let k = observed.iter().filter(|&&o| o).count();
    observed
        .iter()
        .map(|&o| if o { 1.0 / k as f64 } else { 0.0 })
        .collect()
}

/// Random sample on an irregular grid with roughly `density` observed cells.
pub fn random_sample<R: Rng>(
    rng: &mut R,
    n: usize,
    t: usize,
    static_dim: usize,
    n_classes: usize,
    density: f64,
) -> IrregularSample {
    let mut ts = Vec::with_capacity(t);
    let mut now = 0.0;
    for _ in 0..t {
        now += rng.random_range(0.1..2.0);
        ts.push(now);
    }
    let mask: Vec<Vec<u8>> = (0..t)
        .map(|_| (0..n).map(|_| u8::from(rng.random_bool(density))).collect())
        .collect();
    let values: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let stat = (static_dim > 0).then(|| (0..static_dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let label = Label::Class(rng.random_range(0..n_classes));
    IrregularSample::new("s", ts, values, mask, stat, label).expect("valid sample")
}

/// Model with every parameter (biases, gains, η, α included) redrawn from
/// `U(-scale, scale)` so that no term is trivially zero or one.
pub fn randomized_model<R: Rng>(rng: &mut R, cfg: ModelConfig, scale: f64) -> WaveGnn {
    let mut model = WaveGnn::new(cfg, rng.random()).expect("valid config");
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let shape = model.params.get(&name).unwrap().shape().to_vec();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(-scale..scale)).collect();
        model.params.set(&name, Tensor::new(shape, data).unwrap()).unwrap();
    }
    model
}

/// Small random architecture with `n ≤ 3`, `M ≤ 4`.
pub fn tiny_config<R: Rng>(rng: &mut R, variant: AblationVariant) -> ModelConfig {
    let m = [2, 4][rng.random_range(0..2)];
    let heads = |rng: &mut R| if m == 4 && rng.random_bool(0.5) { 2 } else { 1 };
    ModelConfig {
        n_sensors: rng.random_range(1..=3),
        n_classes: rng.random_range(2..=3),
        static_dim: if rng.random_bool(0.5) { rng.random_range(1..=2) } else { 0 },
        embed_dim: m,
        time_dim: rng.random_range(1..=3),
        enc_heads: heads(rng),
        enc_layers: rng.random_range(1..=2),
        ff_dim: rng.random_range(1..=5),
        adj_heads: heads(rng),
        gcn_layers: rng.random_range(0..=2),
        readout_dim: rng.random_range(1..=3),
        static_hidden: rng.random_range(1..=3),
        sparsity_k: [0.0, 25.0, 50.0, 75.0][rng.random_range(0..4)],
        variant,
        ..ModelConfig::default()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
