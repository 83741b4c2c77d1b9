use crate::dataset::{Label, TaskMode};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

fn check_label(label: &Label, n_classes: usize, mode: TaskMode) -> Result<()> {
    match (label, mode) {
        (Label::Class(c), TaskMode::Multiclass) if *c < n_classes => Ok(()),
        (Label::Class(c), TaskMode::Multiclass) => {
            Err(Error::Contract(format!("label {c} out of range for {n_classes} classes")))
        }
        (Label::Multi(v), TaskMode::Multilabel) if v.len() == n_classes => Ok(()),
        _ => Err(Error::Contract(format!("label {label:?} does not fit {mode:?} over {n_classes} classes"))),
    }
}

/// Records the training loss of one sample.
///
/// Multiclass: cross-entropy, multiplied by the class weight of the true
/// class when weights are given. Multilabel: mean binary cross-entropy.
pub fn loss(
    tape: &mut Tape,
    logits: Var,
    label: &Label,
    task_mode: TaskMode,
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    let c = tape.value(logits).numel();
    check_label(label, c, task_mode)?;
    match (label, task_mode) {
        (Label::Class(k), TaskMode::Multiclass) => {
            let ls = tape.log_softmax(logits)?;
            let w = class_weights.map_or(1.0, |w| w[*k]);
            let mut pick = vec![0.0; c];
            pick[*k] = -w;
            let pick = tape.constant(Tensor::vector(pick));
            let picked = tape.mul(ls, pick)?;
            tape.sum(picked)
        }
        _ => tape.bce_with_logits(logits, &label.one_hot(c)),
    }
}

/// Loss value without recording gradients.
pub fn loss_value(logits: &[f64], label: &Label, task_mode: TaskMode, class_weights: Option<&[f64]>) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(logits.to_vec()));
    let l = loss(&mut tape, x, label, task_mode, class_weights)?;
    tape.value(l).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let mc = TaskMode::Multiclass;
        let u = loss_value(&[0.3; 8], &Label::Class(5), mc, None).unwrap();
        assert!((u - 8f64.ln()).abs() < 1e-15);
        let mut big = vec![0.0; 4];
        big[2] = 1000.0;
        assert!(loss_value(&big, &Label::Class(2), mc, None).unwrap() < 1e-9);
        let v = loss_value(&[1.0, 2.0], &Label::Class(1), mc, None).unwrap();
        assert!((v - (-1f64).exp().ln_1p()).abs() < 1e-15);
        assert!((v - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn class_weights_scale_the_loss() {
        let mc = TaskMode::Multiclass;
        let a = loss_value(&[1.0, 2.0], &Label::Class(1), mc, None).unwrap();
        let b = loss_value(&[1.0, 2.0], &Label::Class(1), mc, Some(&[1.0, 3.0])).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range_is_contract_error() {
        let r = loss_value(&[0.0, 0.0], &Label::Class(2), TaskMode::Multiclass, None);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn multilabel_uses_mean_bce() {
        let v = loss_value(&[0.0], &Label::Multi(vec![1]), TaskMode::Multilabel, None).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }
}
