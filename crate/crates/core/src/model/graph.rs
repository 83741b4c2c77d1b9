//! Sensor-graph inference, message passing and readout.

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Tape, Tensor, Var};

use super::config::ModelConfig;

/// Mean over heads of `softmax((Z Q_h)(Z K_h)ᵀ / √d_h)`.
pub fn short_term_adjacency(tape: &mut Tape, bp: &BoundParams, cfg: &ModelConfig, z: Var) -> Result<Var> {
    let dh = cfg.adj_head_dim();
    let mut acc: Option<Var> = None;
    for h in 0..cfg.adj_heads {
        let q = tape.matmul(z, bp.var(&format!("graph.adj.head{h}.wq"))?)?;
        let k = tape.matmul(z, bp.var(&format!("graph.adj.head{h}.wk"))?)?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
        let p = tape.softmax(s)?;
        acc = Some(match acc {
            None => p,
            Some(a) => tape.add(a, p)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::Contract("adj_heads must be positive".into()))?;
    tape.scale(acc, 1.0 / cfg.adj_heads as f64)
}

/// `softmax(Z̃ Z̃ᵀ)` row by row.
pub fn long_term_adjacency(tape: &mut Tape, bp: &BoundParams) -> Result<Var> {
    let e = bp.var("graph.global_emb")?;
    let et = tape.transpose(e)?;
    let s = tape.matmul(e, et)?;
    tape.softmax(s)
}

/// Mixing weight `α = logistic(alpha_raw)`.
pub fn blend_weight(tape: &mut Tape, bp: &BoundParams) -> Result<Var> {
    let raw = bp.var("graph.alpha_raw")?;
    tape.sigmoid(raw)
}

/// `α A_S + (1 − α) A_L`.
pub fn blend_adjacency(tape: &mut Tape, a_s: Var, a_l: Var, alpha: Var) -> Result<Var> {
    // α A_S + A_L − α A_L
    let d = tape.sub(a_s, a_l)?;
    let d = tape.scale_by(d, alpha)?;
    tape.add(a_l, d)
}

/// 0/1 keep-mask zeroing the `⌊K n² / 100⌋` smallest entries of a square
/// matrix; ties resolve to the earlier row-major index.
pub fn sparsify_mask(values: &[f64], k_percent: f64) -> Result<Vec<f64>> {
    if !(0.0..100.0).contains(&k_percent) {
        return Err(Error::Validation(format!("K must lie in [0, 100), got {k_percent}")));
    }
    let count = (k_percent * values.len() as f64 / 100.0).floor() as usize;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut keep = vec![1.0; values.len()];
    for &i in &order[..count] {
        keep[i] = 0.0;
    }
    Ok(keep)
}

/// Zeroes the smallest `K` percent of entries; gradients flow only through
/// survivors.
pub fn sparsify(tape: &mut Tape, a: Var, k_percent: f64) -> Result<Var> {
    let keep = sparsify_mask(tape.value(a).data(), k_percent)?;
    let keep = tape.constant(Tensor::new(tape.shape(a).to_vec(), keep)?);
    tape.mul(a, keep)
}

/// `Vˡ = ReLU(A Vˡ⁻¹ Wˡ) + Vˡ⁻¹` for every layer.
pub fn gcn_forward(tape: &mut Tape, bp: &BoundParams, cfg: &ModelConfig, z: Var, a: Var) -> Result<Var> {
    let mut v = z;
    for l in 0..cfg.gcn_layers {
        let msg = tape.matmul(a, v)?;
        let msg = tape.matmul(msg, bp.var(&format!("graph.gcn{l}.w"))?)?;
        let msg = tape.relu(msg)?;
        v = tape.add(msg, v)?;
    }
    Ok(v)
}

/// Graph embedding `g = W_f [max_rows(V); W_c vec(V) + b_c] + b_f`.
pub fn readout(tape: &mut Tape, bp: &BoundParams, v: Var) -> Result<Var> {
    let s = tape.shape(v).to_vec();
    if s.len() != 2 {
        return Err(Error::shape("readout", &s, &[]));
    }
    let p = tape.max_rows(v)?;
    let p = tape.reshape(p, &[1, s[1]])?;
    let flat = tape.reshape(v, &[1, s[0] * s[1]])?;
    let q = tape.matmul(flat, bp.var("readout.concat.w")?)?;
    let q = tape.add_row(q, bp.var("readout.concat.b")?)?;
    let pq = tape.concat(&[p, q])?;
    let g = tape.matmul(pq, bp.var("readout.fuse.w")?)?;
    let g = tape.add_row(g, bp.var("readout.fuse.b")?)?;
    let l = tape.value(g).numel();
    tape.reshape(g, &[l])
}

/// Raw class logits `[C]` from the graph embedding.
pub fn predict_logits(tape: &mut Tape, bp: &BoundParams, g: Var) -> Result<Var> {
    let l = tape.value(g).numel();
    let g = tape.reshape(g, &[1, l])?;
    let y = tape.matmul(g, bp.var("head.w")?)?;
    let y = tape.add_row(y, bp.var("head.b")?)?;
    let c = tape.value(y).numel();
    tape.reshape(y, &[c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sparsify_examples() {
        assert_eq!(sparsify_mask(&[0.4, 0.6, 0.7, 0.3], 50.0).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(sparsify_mask(&[0.5; 4], 50.0).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(sparsify_mask(&[0.1, 0.2, 0.3, 0.4], 0.0).unwrap(), vec![1.0; 4]);
        // ⌊33·9/100⌋ = 2
        let keep = sparsify_mask(&[0.0; 9], 33.0).unwrap();
        assert_eq!(keep.iter().filter(|&&k| k == 0.0).count(), 2);
        assert!(sparsify_mask(&[1.0], 100.0).is_err());
    }

    #[test]
    fn blend_example() {
        let mut tape = Tape::new();
        let a_s = tape.constant(Tensor::eye(2));
        let a_l = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let alpha = tape.constant(Tensor::scalar(0.25));
        let a = blend_adjacency(&mut tape, a_s, a_l, alpha).unwrap();
        assert!(close(tape.value(a).data(), &[0.25, 0.75, 0.75, 0.25], 1e-15));
    }

    #[test]
    fn long_term_orthonormal_closed_form() {
        let s: f64 = 1.5;
        let n = 3;
        let mut e = Tensor::eye(n);
        e.data_mut().iter_mut().for_each(|x| *x *= s);
        let mut ps = ParamStore::new();
        ps.insert("graph.global_emb", e).unwrap();
        let mut tape = Tape::new();
        let bp = ps.bind(&mut tape);
        let a = long_term_adjacency(&mut tape, &bp).unwrap();
        let diag = (s * s).exp() / ((s * s).exp() + (n - 1) as f64);
        for i in 0..n {
            assert!((tape.value(a).at2(i, i) - diag).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_identity_doubles_nonnegative_states() {
        let cfg = ModelConfig {
            embed_dim: 2,
            gcn_layers: 1,
            ..ModelConfig::default()
        };
        let mut ps = ParamStore::new();
        ps.insert("graph.gcn0.w", Tensor::eye(2)).unwrap();
        let mut tape = Tape::new();
        let bp = ps.bind(&mut tape);
        let z = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 0.0, 3.0]).unwrap());
        let a = tape.constant(Tensor::eye(2));
        let v = gcn_forward(&mut tape, &bp, &cfg, z, a).unwrap();
        assert_eq!(tape.value(v).data(), &[2.0, 4.0, 0.0, 6.0]);
        let a0 = tape.constant(Tensor::zeros(&[2, 2]));
        let v = gcn_forward(&mut tape, &bp, &cfg, z, a0).unwrap();
        assert_eq!(tape.value(v).data(), &[1.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn gcn_clamps_negative_messages() {
        let cfg = ModelConfig {
            embed_dim: 2,
            gcn_layers: 1,
            ..ModelConfig::default()
        };
        let mut ps = ParamStore::new();
        ps.insert("graph.gcn0.w", Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.0, 1.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let bp = ps.bind(&mut tape);
        let z = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = tape.constant(Tensor::new(vec![2, 2], vec![0.5, 0.5, 1.0, 0.0]).unwrap());
        let v = gcn_forward(&mut tape, &bp, &cfg, z, a).unwrap();
        // A Z = [[.5,.5],[1,0]]; (A Z) W = [[.5,0],[1,-1]] → relu → [[.5,0],[1,0]]
        assert_eq!(tape.value(v).data(), &[1.5, 0.0, 1.0, 1.0]);
    }
}
