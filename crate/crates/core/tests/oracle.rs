//! Tape implementation against the scalar-loop reference.

mod common;

use common::{max_abs_diff, oracle_logits, random_sample, randomized_model, rng, tiny_config, transformer, Mat};
use rand::Rng;
use wavegnn::model::encoder::encode_sequence;
use wavegnn::model::{full_forward, AblationVariant, ModelConfig};
use wavegnn::tensor::{Tape, Tensor};

fn tape_encode(model: &wavegnn::model::WaveGnn, h: &[Mat], mask: &[Vec<bool>]) -> Vec<f64> {
    let (n, t, m) = (h.len(), h[0].len(), h[0][0].len());
    let mut tape = Tape::new();
    let bp = model.params.bind(&mut tape);
    let flat: Vec<f64> = h.iter().flatten().flatten().copied().collect();
    let hv = tape.constant(Tensor::new(vec![n, t, m], flat).unwrap());
    let mk: Vec<f64> = mask.iter().flatten().map(|&b| f64::from(u8::from(b))).collect();
    let mk = Tensor::new(vec![n, t], mk).unwrap();
    let out = encode_sequence(&mut tape, &bp, &model.config, hv, &mk).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn transformer_fixture_t3_m2() {
    let cfg = ModelConfig {
        n_sensors: 1,
        embed_dim: 2,
        enc_heads: 1,
        ff_dim: 2,
        ..ModelConfig::default()
    };
    let mut model = wavegnn::model::WaveGnn::new(cfg, 0).unwrap();
    let set = |model: &mut wavegnn::model::WaveGnn, name: &str, shape: Vec<usize>, data: Vec<f64>| {
        model.params.set(name, Tensor::new(shape, data).unwrap()).unwrap();
    };
    set(&mut model, "enc.layer0.head0.wq", vec![2, 2], vec![1.0, 0.5, -0.5, 1.0]);
    set(&mut model, "enc.layer0.head0.wk", vec![2, 2], vec![0.3, -0.2, 0.8, 0.1]);
    set(&mut model, "enc.layer0.head0.wv", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    set(&mut model, "enc.layer0.head0.wo", vec![2, 2], vec![0.7, 0.2, -0.1, 0.9]);
    set(&mut model, "enc.layer0.attn.bo", vec![2], vec![0.05, -0.05]);
    set(&mut model, "enc.layer0.ff.w1", vec![2, 2], vec![0.4, -0.6, 0.2, 0.3]);
    set(&mut model, "enc.layer0.ff.b1", vec![2], vec![0.1, 0.0]);
    set(&mut model, "enc.layer0.ff.w2", vec![2, 2], vec![0.5, 0.1, -0.3, 0.2]);
    set(&mut model, "enc.layer0.ff.b2", vec![2], vec![0.0, 0.2]);
    let h: Mat = vec![vec![0.3, -1.2], vec![0.0, 0.0], vec![1.5, 0.4]];
    let mask = vec![true, false, true];
    let got = tape_encode(&model, std::slice::from_ref(&h), std::slice::from_ref(&mask));
    let want: Vec<f64> = transformer(&model.params, &model.config, &h, &mask).concat();
    assert!(max_abs_diff(&got, &want) <= 1e-9, "{got:?} vs {want:?}");
}

#[test]
fn encode_sequence_matches_scalar_transformer() {
    let mut r = rng(11);
    for _ in 0..50 {
        let m = [2, 4, 6, 8][r.random_range(0..4)];
        let heads = if m % 2 == 0 && r.random_bool(0.5) { 2 } else { 1 };
        let cfg = ModelConfig {
            n_sensors: r.random_range(1..=3),
            embed_dim: m,
            enc_heads: heads,
            enc_layers: r.random_range(1..=2),
            ff_dim: r.random_range(1..=6),
            ..ModelConfig::default()
        };
        let model = randomized_model(&mut r, cfg, 1.0);
        let (n, t) = (model.config.n_sensors, r.random_range(1..=6));
        let h: Vec<Mat> = (0..n)
            .map(|_| (0..t).map(|_| (0..m).map(|_| r.random_range(-2.0..2.0)).collect()).collect())
            .collect();
        let mask: Vec<Vec<bool>> = (0..n).map(|_| (0..t).map(|_| r.random_bool(0.6)).collect()).collect();
        let got = tape_encode(&model, &h, &mask);
        let want: Vec<f64> = h
            .iter()
            .zip(&mask)
            .flat_map(|(hv, mv)| transformer(&model.params, &model.config, hv, mv).concat())
            .collect();
        let d = max_abs_diff(&got, &want);
        assert!(d <= 1e-9, "max abs diff {d:e}");
    }
}

#[test]
fn full_forward_matches_pipeline_oracle_every_variant() {
    let mut r = rng(5);
    for variant in AblationVariant::ALL {
        for _ in 0..50 {
            let cfg = tiny_config(&mut r, variant);
            let model = randomized_model(&mut r, cfg, 1.0);
            let c = &model.config;
            let t = r.random_range(1..=4);
            let sample = random_sample(&mut r, c.n_sensors, t, c.static_dim, c.n_classes, 0.6);
            let got = full_forward(&sample, &model).unwrap();
            let want = oracle_logits(&model, &sample);
            let d = max_abs_diff(&got, &want);
            assert!(d <= 1e-8, "{variant}: max abs diff {d:e}");
        }
    }
}
