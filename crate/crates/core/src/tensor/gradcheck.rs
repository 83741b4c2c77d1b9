//! Central-difference verification of tape gradients.

use serde::Serialize;

use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

/// Gradients whose magnitude and discrepancy both fall under this value are
/// treated as matching regardless of relative error.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tol_rel: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> (f64, bool, f64) {
    let abs = (analytic - numeric).abs();
    let denom = analytic.abs().max(numeric.abs());
    let rel = if denom == 0.0 { 0.0 } else { abs / denom };
    (rel, abs <= ABSOLUTE_FLOOR, abs)
}

/// Compares the tape gradient of `objective` with central differences for
/// every trainable scalar parameter.
///
/// `objective` returns the loss together with its tape gradients. It must be
/// deterministic: it is evaluated twice at the unperturbed parameters and the
/// two losses must agree bitwise.
pub fn finite_diff_check<F>(
    objective: F,
    params: &ParamStore,
    epsilon: f64,
    tol_rel: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamGrads)>,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::Validation(format!(
            "epsilon must lie in [1e-7, 1e-4], got {epsilon}"
        )));
    }
    let (first, grads) = objective(params)?;
    let (second, _) = objective(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let mut work = params.clone();
    let mut report = Vec::new();
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let analytic = grads
            .get(&name)
            .cloned()
            .ok_or_else(|| Error::UnknownParam(name.clone()))?;
        let numel = analytic.numel();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut passed = true;
        for k in 0..numel {
            let original = work.get(&name)?.data()[k];
            work.value_mut(&name).expect("known name").data_mut()[k] = original + epsilon;
            let (plus, _) = objective(&work)?;
            work.value_mut(&name).expect("known name").data_mut()[k] = original - epsilon;
            let (minus, _) = objective(&work)?;
            work.value_mut(&name).expect("known name").data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let (rel, floored, abs) = relative_error(analytic.data()[k], numeric);
            max_abs = max_abs.max(abs);
            if !floored {
                max_rel = max_rel.max(rel);
                if rel > tol_rel {
                    passed = false;
                }
            }
        }
        report.push(ParamCheck {
            name,
            numel,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            passed,
        });
    }
    Ok(GradCheckReport {
        epsilon,
        tol_rel,
        params: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use std::cell::Cell;

    fn quadratic(params: &ParamStore) -> Result<(f64, ParamGrads)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let theta = bound.var("theta")?;
        let sq = tape.mul(theta, theta)?;
        let loss = tape.sum(sq)?;
        let g = tape.reverse_sweep(loss)?;
        Ok((tape.value(loss).item()?, bound.gradients(&g)))
    }

    #[test]
    fn quadratic_is_exact() {
        let mut params = ParamStore::new();
        params.insert("theta", Tensor::scalar(3.0)).unwrap();
        let (_, g) = quadratic(&params).unwrap();
        assert_eq!(g.get("theta").unwrap().data(), &[6.0]);
        let report = finite_diff_check(quadratic, &params, 1e-5, 1e-9).unwrap();
        assert!(report.passed());
        assert!(report.params[0].max_rel_err < 1e-9);
    }

    #[test]
    fn constant_function_passes_by_floor() {
        let mut params = ParamStore::new();
        params.insert("c", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let f = |p: &ParamStore| -> Result<(f64, ParamGrads)> {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape);
            let k = tape.constant(Tensor::scalar(4.0));
            let g = tape.reverse_sweep(k)?;
            Ok((4.0, bound.gradients(&g)))
        };
        let report = finite_diff_check(f, &params, 1e-6, 1e-6).unwrap();
        assert!(report.passed());
        assert_eq!(report.params[0].max_abs_err, 0.0);
    }

    #[test]
    fn nondeterministic_objective_is_rejected() {
        let mut params = ParamStore::new();
        params.insert("x", Tensor::scalar(1.0)).unwrap();
        let calls = Cell::new(0.0);
        let f = |_: &ParamStore| -> Result<(f64, ParamGrads)> {
            calls.set(calls.get() + 1.0);
            Ok((calls.get(), ParamGrads::default()))
        };
        assert!(matches!(
            finite_diff_check(f, &params, 1e-6, 1e-4),
            Err(Error::Determinism { .. })
        ));
    }

    #[test]
    fn epsilon_out_of_range() {
        let params = ParamStore::new();
        assert!(finite_diff_check(quadratic, &params, 1e-2, 1e-4).is_err());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut params = ParamStore::new();
        params.insert("theta", Tensor::scalar(3.0)).unwrap();
        let f = |p: &ParamStore| -> Result<(f64, ParamGrads)> {
            let (l, mut g) = quadratic(p)?;
            g.scale(1.01);
            Ok((l, g))
        };
        let report = finite_diff_check(f, &params, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut params = ParamStore::new();
        params.insert("theta", Tensor::scalar(3.0)).unwrap();
        params.set_trainable("theta", false).unwrap();
        let report = finite_diff_check(quadratic, &params, 1e-5, 1e-4).unwrap();
        assert!(report.params.is_empty());
    }
}
