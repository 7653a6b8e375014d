//! Desk-scale training: L1 loss between the synthesized frame and ground
//! truth, reverse-mode gradients through the whole graph, one Adam step.

use crossres_tensor::{adam_step, AdamState, Tape, Tensor, Val};

use crate::blocks::Binder;
use crate::error::ModelError;
use crate::fusion::SynthModel;

/// One training sample: the low-resolution window, the decoded intra
/// reference(s), and the ground-truth high-resolution luma of the center
/// frame. All tensors are unit-scaled ([0,1]).
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub window: Vec<Tensor>,
    pub intra_refs: Vec<Tensor>,
    pub ground_truth: Tensor,
}

/// Owns the optimizer state across steps.
pub struct Trainer {
    pub state: AdamState,
    pub lr: f32,
    names: Vec<String>,
}

impl Trainer {
    pub fn new(model: &SynthModel, lr: f32) -> Self {
        let params = model.params();
        Trainer {
            state: AdamState::new(&params.iter().map(|(_, t)| t.len()).collect::<Vec<_>>()),
            lr,
            names: params.into_iter().map(|(n, _)| n).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.state.step_count()
    }
}

/// Forward the batch, average the per-sample L1 losses, backprop, and apply
/// one Adam update to the model parameters. Returns the batch loss.
pub fn train_step(
    model: &mut SynthModel,
    batch: &[TrainSample],
    trainer: &mut Trainer,
) -> Result<f32, ModelError> {
    assert!(!batch.is_empty());
    let mut tape = Tape::<f32>::new();
    tape.set_region_tracking(false);
    let mut binder = Binder::new(&mut tape, true);
    let vals = model.bind(&mut binder);
    let entries = std::mem::take(&mut binder.entries);

    let mut losses: Vec<Val> = Vec::with_capacity(batch.len());
    for sample in batch {
        let window: Vec<Val> = sample.window.iter().map(|t| tape.leaf(t.clone())).collect();
        let refs: Vec<Val> = sample.intra_refs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = vals.synthesize(&mut tape, &window, &refs)?;
        let gt = tape.leaf(sample.ground_truth.clone());
        losses.push(tape.l1_loss(out, gt)?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let loss_val = tape.scale(total, 1.0 / batch.len() as f32);
    let loss = tape.value(loss_val).data()[0];
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { step: trainer.state.step_count() + 1 });
    }

    let grads = tape.backward(loss_val)?;
    let grad_tensors: Vec<Tensor> = entries
        .iter()
        .map(|(_, val)| grads.get_or_zeros(*val, tape.shape(*val)))
        .collect();

    debug_assert_eq!(
        entries.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        trainer.names.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let mut params = model.params_mut();
    let mut param_refs: Vec<&mut Tensor> = params.iter_mut().map(|(_, t)| &mut **t).collect();
    let grad_refs: Vec<&Tensor> = grad_tensors.iter().collect();
    adam_step(&mut param_refs, &grad_refs, &mut trainer.state, trainer.lr)?;
    Ok(loss)
}
