//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Anything exposing a flat, stably ordered view of its trainable parameters.
pub trait Parameterized {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
}

/// Whether a loss evaluation should also populate parameter gradients.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum EvalMode {
    ValueOnly,
    WithGradients,
}

/// Compares the analytic gradient of every scalar parameter against the
/// central difference (f(p+eps) - f(p-eps)) / 2 eps and returns the worst
/// relative error, with denominator max(|analytic|, |numeric|, 1e-8).
///
/// The loss must be a deterministic function of the parameters; two
/// evaluations at the same point that disagree bitwise are rejected.
pub fn grad_check<M, F>(model: &mut M, mut loss_fn: F, epsilon: f64) -> Result<f64>
where
    M: Parameterized,
    F: FnMut(&mut M, EvalMode) -> Result<f64>,
{
    let first = loss_fn(model, EvalMode::ValueOnly)?;
    let second = loss_fn(model, EvalMode::ValueOnly)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicLoss { first, second });
    }

    for p in model.parameters_mut() {
        p.tensor.grad_mut().fill(0.0);
    }
    loss_fn(model, EvalMode::WithGradients)?;
    let analytic: Vec<Vec<f64>> = model
        .parameters_mut()
        .iter()
        .map(|p| p.tensor.grad().map(|g| g.to_vec()).unwrap_or_default())
        .collect();

    let mut worst = 0.0f64;
    let num_params = analytic.len();
    for p_idx in 0..num_params {
        let len = model.parameters_mut()[p_idx].tensor.len();
        for j in 0..len {
            let original = model.parameters_mut()[p_idx].tensor.values()[j];

            model.parameters_mut()[p_idx].tensor.values_mut()[j] = original + epsilon;
            let plus = loss_fn(model, EvalMode::ValueOnly)?;
            model.parameters_mut()[p_idx].tensor.values_mut()[j] = original - epsilon;
            let minus = loss_fn(model, EvalMode::ValueOnly)?;
            model.parameters_mut()[p_idx].tensor.values_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[p_idx][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor2D;

    struct LinearSoftmax {
        weight: Parameter,
        inputs: Tensor2D,
        targets: Vec<usize>,
    }

    impl Parameterized for LinearSoftmax {
        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            vec![&mut self.weight]
        }
    }

    fn linear_ce(model: &mut LinearSoftmax, mode: EvalMode) -> crate::Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(model.inputs.clone());
        let w = tape.param(&model.weight);
        let logits = tape.matmul(x, w)?;
        let mask = vec![true; model.targets.len()];
        let loss = tape.softmax_cross_entropy(logits, &model.targets, &mask)?;
        if mode == EvalMode::WithGradients {
            tape.backward(loss)?;
            tape.export_grads(&[(w, 0)], &mut model.parameters_mut());
        }
        Ok(tape.scalar(loss))
    }

    #[test]
    fn linear_softmax_gradients_match_finite_differences() {
        let mut model = LinearSoftmax {
            weight: Parameter::new(
                Tensor2D::from_values(3, 4, vec![0.2, -0.4, 0.1, 0.9, 0.5, -0.3, 0.7, -0.8, 0.05, 0.6, -0.9, 0.3])
                    .unwrap(),
            ),
            inputs: Tensor2D::from_values(
                5,
                3,
                vec![
                    0.3, 1.2, -0.7, 0.9, -1.1, 0.4, 0.0, 0.8, -0.2, 1.5, 0.1, 0.6, -0.4, 0.7, 1.1,
                ],
            )
            .unwrap(),
            targets: vec![0, 2, 1, 3, 2],
        };
        let err = grad_check(&mut model, linear_ce, 1e-4).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        struct Constant {
            p: Parameter,
        }
        impl Parameterized for Constant {
            fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
                vec![&mut self.p]
            }
        }
        let mut model = Constant {
            p: Parameter::new(Tensor2D::zeros(2, 2)),
        };
        let err = grad_check(&mut model, |_, _| Ok(3.25), 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_deterministic_loss_is_rejected() {
        struct Constant {
            p: Parameter,
        }
        impl Parameterized for Constant {
            fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
                vec![&mut self.p]
            }
        }
        let mut model = Constant {
            p: Parameter::new(Tensor2D::zeros(1, 1)),
        };
        let mut calls = 0u32;
        let result = grad_check(
            &mut model,
            move |_, _| {
                calls += 1;
                Ok(f64::from(calls))
            },
            1e-4,
        );
        assert!(matches!(result, Err(Error::NonDeterministicLoss { .. })));
    }
}
