//! Deterministic reverse-mode differentiation over model graphs, plus the
//! SGD and Adam optimizers.

mod executor;
pub mod kernels;
mod optim;
mod params;

pub use executor::{argmax_rows, class_labels, Criterion, Executor};
pub use optim::{LrSchedule, OptimizerKind, OptimizerMeta, OptimizerState};
pub use params::{Gradients, ParamStore};

use crate::error::Result;
use crate::tensor::Tensor;

/// Result of one optimizer step on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f32,
    pub correct: usize,
    pub samples: usize,
}

/// forward, loss, backward, update. If the loss is not finite the update is
/// skipped and the outcome is returned unchanged so the caller can abort.
pub fn train_step(
    executor: &mut Executor,
    params: &mut ParamStore,
    optimizer: &mut OptimizerState,
    criterion: Criterion,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<StepOutcome> {
    executor.forward(params, inputs)?;
    let loss = executor.loss(criterion, targets)?;
    let out = executor.output().expect("forward ran");
    let classes = out.shape()[1];
    let labels = class_labels(targets, classes)?;
    let correct = argmax_rows(out).iter().zip(&labels).filter(|(p, t)| p == t).count();
    let outcome = StepOutcome {
        loss,
        correct,
        samples: labels.len(),
    };
    if !loss.is_finite() {
        return Ok(outcome);
    }
    let grads = executor.backward(params)?;
    optimizer.apply_update(params, &grads)?;
    Ok(outcome)
}

/// Loss and correct-prediction count without updating anything.
pub fn evaluate(
    executor: &mut Executor,
    params: &ParamStore,
    criterion: Criterion,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<StepOutcome> {
    executor.forward(params, inputs)?;
    let loss = executor.loss(criterion, targets)?;
    let out = executor.output().expect("forward ran");
    let labels = class_labels(targets, out.shape()[1])?;
    let correct = argmax_rows(out).iter().zip(&labels).filter(|(p, t)| p == t).count();
    Ok(StepOutcome {
        loss,
        correct,
        samples: labels.len(),
    })
}
