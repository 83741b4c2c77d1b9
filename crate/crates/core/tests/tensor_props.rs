//! Properties of the tape primitives.

mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use wavegnn::tensor::{finite_diff_check, ParamGrads, ParamStore, Tape, Tensor, Var};
use wavegnn::Result;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central-difference check of `op` at random inputs, through a random linear
/// functional of its output.
fn check_op<F>(seed: u64, inputs: &[Vec<usize>], op: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = common::rng(seed);
    let mut params = ParamStore::new();
    for (i, s) in inputs.iter().enumerate() {
        params.insert(format!("x{i}"), rand_tensor(&mut rng, s, -2.0, 2.0)).unwrap();
    }
    let out_shape = {
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let xs: Vec<Var> = (0..inputs.len()).map(|i| bp.var(&format!("x{i}")).unwrap()).collect();
        let y = op(&mut tape, &xs).unwrap();
        tape.shape(y).to_vec()
    };
    let probe = rand_tensor(&mut rng, &out_shape, -1.0, 1.0);
    let objective = |p: &ParamStore| -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::new();
        let bp = p.bind(&mut tape);
        let xs: Vec<Var> = (0..inputs.len()).map(|i| bp.var(&format!("x{i}")).unwrap()).collect();
        let y = op(&mut tape, &xs)?;
        let w = tape.constant(probe.clone());
        let yw = tape.mul(y, w)?;
        let loss = tape.sum(yw)?;
        let g = tape.reverse_sweep(loss)?;
        Ok((tape.value(loss).data()[0], bp.gradients(&g)))
    };
    let report = finite_diff_check(objective, &params, 1e-6, 1e-6).unwrap();
    let worst = report.worst().unwrap();
    assert!(report.passed(), "{} rel err {:e}", worst.name, worst.max_rel_err);
}

fn mask(rng: &mut ChaCha8Rng, rows: usize, t: usize) -> Tensor {
    let data = (0..rows * t).map(|_| f64::from(u8::from(rng.random_bool(0.6)))).collect();
    Tensor::new(vec![rows, t], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_of_binary_ops(seed in any::<u64>(), r in 1usize..4, c in 1usize..4, k in 1usize..4) {
        check_op(seed, &[vec![r, k], vec![k, c]], |t, x| t.matmul(x[0], x[1]));
        check_op(seed, &[vec![2, r, k], vec![2, k, c]], |t, x| t.bmm(x[0], x[1]));
        check_op(seed, &[vec![r, c], vec![r, c]], |t, x| t.add(x[0], x[1]));
        check_op(seed, &[vec![r, c], vec![r, c]], |t, x| t.sub(x[0], x[1]));
        check_op(seed, &[vec![r, c], vec![r, c]], |t, x| t.mul(x[0], x[1]));
        check_op(seed, &[vec![r, c], vec![c]], |t, x| t.add_row(x[0], x[1]));
        check_op(seed, &[vec![r, c], vec![c]], |t, x| t.mul_row(x[0], x[1]));
        check_op(seed, &[vec![r, c], vec![1]], |t, x| t.scale_by(x[0], x[1]));
        check_op(seed, &[vec![r, c], vec![r, k]], |t, x| t.concat(&[x[0], x[1]]));
    }

    #[test]
    fn gradients_of_unary_ops(seed in any::<u64>(), r in 1usize..4, c in 1usize..5) {
        check_op(seed, &[vec![r, c]], |t, x| t.transpose(x[0]));
        check_op(seed, &[vec![2, r, c]], |t, x| t.transpose(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.reshape(x[0], &[c, r]));
        check_op(seed, &[vec![r, c]], |t, x| t.scale(x[0], -1.7));
        check_op(seed, &[vec![r, c]], |t, x| t.add_const(x[0], 0.3));
        check_op(seed, &[vec![r, c]], |t, x| t.tanh(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.relu(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.sin(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.exp(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.softplus(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.sigmoid(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.softmax(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.log_softmax(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.sum(x[0]));
        check_op(seed, &[vec![r, c]], |t, x| t.max_rows(x[0]));
    }

    #[test]
    fn gradients_of_normalizing_ops(seed in any::<u64>(), r in 1usize..4, c in 2usize..5) {
        check_op(seed, &[vec![r, c]], |t, x| t.layer_norm(x[0], 1e-5));
        let mut rng = common::rng(seed ^ 0x5eed);
        let m = mask(&mut rng, 2, c);
        check_op(seed, &[vec![2, r, c]], |t, x| t.masked_softmax(x[0], &m));
        let targets: Vec<f64> = (0..r * c).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        check_op(seed, &[vec![r * c]], |t, x| t.bce_with_logits(x[0], &targets));
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), d in proptest::collection::vec(1usize..6, 4)) {
        let mut rng = common::rng(seed);
        let a = rand_tensor(&mut rng, &[d[0], d[1]], -3.0, 3.0);
        let b = rand_tensor(&mut rng, &[d[1], d[2]], -3.0, 3.0);
        let c = rand_tensor(&mut rng, &[d[2], d[3]], -3.0, 3.0);
        let mut t = Tape::new();
        let (a, b, c) = (t.constant(a), t.constant(b), t.constant(c));
        let ab = t.matmul(a, b).unwrap();
        let left = t.matmul(ab, c).unwrap();
        let bc = t.matmul(b, c).unwrap();
        let right = t.matmul(a, bc).unwrap();
        let (l, r) = (t.value(left).data(), t.value(right).data());
        let diff: f64 = l.iter().zip(r).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = l.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-9 * norm.max(1e-300));
    }

    #[test]
    fn masked_scores_never_matter(
        seed in any::<u64>(),
        rows in 1usize..5,
        t in 1usize..7,
        junk in proptest::collection::vec(-1e6f64..1e6, 36),
    ) {
        let mut rng = common::rng(seed);
        let scores = rand_tensor(&mut rng, &[rows, t], -5.0, 5.0);
        let m = mask(&mut rng, rows, t);
        let mut other = scores.clone();
        for (i, (x, &mk)) in other.data_mut().iter_mut().zip(m.data()).enumerate() {
            if mk == 0.0 {
                *x = junk[i % junk.len()];
            }
        }
        let mut tape = Tape::new();
        let a = tape.constant(scores);
        let b = tape.constant(other);
        let pa = tape.masked_softmax(a, &m).unwrap();
        let pb = tape.masked_softmax(b, &m).unwrap();
        prop_assert_eq!(tape.value(pa).data(), tape.value(pb).data());
        for (row, mrow) in tape.value(pa).data().chunks(t).zip(m.data().chunks(t)) {
            let s: f64 = row.iter().sum();
            if mrow.iter().any(|&x| x != 0.0) {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            } else {
                prop_assert_eq!(s, 0.0);
            }
            for (&p, &mk) in row.iter().zip(mrow) {
                if mk == 0.0 {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }
}
