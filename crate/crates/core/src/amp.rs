//! Adversarial mixing policy.
//!
//! One training step runs three stages on a single tape:
//!
//! 1. *Rand*: ordinary Mixup at layer `k` with `λ ~ Beta(α, α)`, giving
//!    per-sample losses `L`.
//! 2. *Max*: `∇λ = ∂ΣL/∂λ` from one backward pass, clipped to `[-1, 1]`,
//!    then `λ' = clamp(λ + ε ∇λ, 0, 1)`. The hidden states are re-mixed
//!    with `λ'` while the label weights stay at `λ`, giving `L'`.
//! 3. *Min*: `mask_s = [L'_s - L_s > 0]` and
//!    `L_final = L (1 - mask) + L' mask`. The parameters descend on
//!    `mean(L_final)`.
//!
//! `λ'` is a constant during the parameter backward pass.

use rand::Rng;

use crate::autodiff::{OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::mixup::{mixup_loss, rand_op, MinMode, MixBatch, MixConfig, Policy};
use crate::models::{Batch, Hidden, Model};
use crate::tensor::Tensor;

/// Per-sample record of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBundle {
    /// Loss under λ.
    pub loss: Vec<f64>,
    /// Loss with features mixed under λ' and labels under λ.
    pub loss_prime: Vec<f64>,
    /// `loss_prime - loss`.
    pub delta: Vec<f64>,
    pub mask: Vec<bool>,
    pub final_loss: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Clipped gradient of the loss w.r.t. λ.
    pub grad_lambda: Vec<f64>,
    pub lambda_prime: Vec<f64>,
}

impl LossBundle {
    /// Bundle for a step without adversarial perturbation.
    pub fn unperturbed(loss: Vec<f64>, lambda: Vec<f64>) -> Self {
        let n = loss.len();
        Self {
            loss_prime: loss.clone(),
            delta: vec![0.0; n],
            mask: vec![false; n],
            final_loss: loss.clone(),
            grad_lambda: vec![0.0; n],
            lambda_prime: lambda.clone(),
            lambda,
            loss,
        }
    }

    pub fn mask_rate(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Result of one training step: the minimized scalar, the per-sample
/// record and the parameter gradients.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub bundle: LossBundle,
    pub grads: Vec<Option<Tensor>>,
}

/// `∂(ΣL)/∂λ_s` for every sample, via one backward pass from `loss_sum`.
///
/// The caller is responsible for zeroing the tape's gradients afterwards.
pub fn grad_lambda(tape: &mut Tape, loss_sum: Var, lambda: Var) -> Result<Vec<f64>> {
    if tape.kind(lambda) != OpKind::Leaf || !tape.requires_grad(lambda) {
        return Err(Error::Contract("lambda is not a differentiable leaf".into()));
    }
    tape.backward(loss_sum)?;
    tape.grad(lambda)
        .map(|g| g.data().to_vec())
        .ok_or_else(|| Error::Contract("lambda does not reach the loss".into()))
}

/// Clamps every component to `[-1, 1]`. NaN signals upstream divergence.
pub fn clip_grad(grad: &[f64]) -> Result<Vec<f64>> {
    grad.iter()
        .map(|&g| {
            if g.is_nan() {
                Err(Error::Divergence("NaN gradient of lambda".into()))
            } else {
                Ok(g.clamp(-1.0, 1.0))
            }
        })
        .collect()
}

/// `λ'_s = clamp(λ_s + ε ∇λ_s, 0, 1)`, a step in the ascent direction.
pub fn perturb_lambda(lambda: &[f64], grad_clipped: &[f64], epsilon: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(grad_clipped)
        .map(|(l, g)| (l + epsilon * g).clamp(0.0, 1.0))
        .collect()
}

/// Re-mixes the recorded hidden states with `lambda_prime` and returns the
/// per-sample loss whose label weights are still `mix.lambda`.
pub fn recompute_loss(
    model: &Model,
    tape: &mut Tape,
    bound: &crate::models::Bound,
    mix: &MixBatch,
    lambda_prime: &[f64],
    dropout: Option<&Tensor>,
) -> Result<Var> {
    if lambda_prime.len() != mix.lambda.len() {
        return Err(Error::Dimension {
            op: "recompute_loss",
            lhs: vec![mix.lambda.len()],
            rhs: vec![lambda_prime.len()],
        });
    }
    let feature_weight = tape.constant(Tensor::vector(lambda_prime.to_vec()));
    let mixed = tape.lerp(mix.hidden_i.var, mix.hidden_j, feature_weight)?;
    let hidden = Hidden {
        var: mixed,
        valid_lens: mix.mixed_hidden.valid_lens.clone(),
    };
    let logits = model.forward_from_layer(tape, bound, &hidden, mix.layer, dropout)?;
    let label_weight = tape.constant(Tensor::vector(mix.lambda.clone()));
    mixup_loss(tape, logits, &mix.labels_i, &mix.labels_j, label_weight)
}

/// `mask_s = 1` iff `L'_s - L_s > 0`.
pub fn compute_mask(loss: &[f64], loss_prime: &[f64]) -> Vec<bool> {
    loss.iter()
        .zip(loss_prime)
        .map(|(l, lp)| lp - l > 0.0)
        .collect()
}

/// `L (1 - mask) + L' mask` on the tape; gradients follow the selected
/// branch only.
pub fn final_loss(tape: &mut Tape, loss: Var, loss_prime: Var, mask: &[bool]) -> Result<Var> {
    tape.select(loss, loss_prime, mask)
}

/// One full adversarial mixing step.
///
/// Runs exactly two forward passes of the suffix network and two backward
/// passes (one for `∇λ`, one for the parameters).
pub fn amp_step<R: Rng + ?Sized>(
    model: &Model,
    batch: &Batch,
    config: &MixConfig,
    rng: &mut R,
    dropout: Option<&Tensor>,
) -> Result<StepOutput> {
    if config.policy != Policy::Amp {
        return Err(Error::config(format!(
            "amp_step called with policy {}",
            config.policy
        )));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let rand = rand_op(model, &mut tape, &bound, batch, config, rng, dropout)?;
    let loss_sum = tape.sum(rand.loss);
    let raw = grad_lambda(&mut tape, loss_sum, rand.mix.lambda_var)?;
    tape.zero_grad();

    let clipped = clip_grad(&raw)?;
    let lambda_prime = perturb_lambda(&rand.mix.lambda, &clipped, config.epsilon);
    let loss_prime = recompute_loss(model, &mut tape, &bound, &rand.mix, &lambda_prime, dropout)?;

    let l = tape.value(rand.loss).data().to_vec();
    let lp = tape.value(loss_prime).data().to_vec();
    let mask = match config.min_mode {
        MinMode::Compare => compute_mask(&l, &lp),
        MinMode::AlwaysPerturbed => vec![true; l.len()],
    };
    let fin = final_loss(&mut tape, rand.loss, loss_prime, &mask)?;
    let root = tape.mean(fin)?;
    tape.backward(root)?;

    let bundle = LossBundle {
        delta: l.iter().zip(&lp).map(|(a, b)| b - a).collect(),
        final_loss: tape.value(fin).data().to_vec(),
        loss: l,
        loss_prime: lp,
        mask,
        lambda: rand.mix.lambda.clone(),
        grad_lambda: clipped,
        lambda_prime,
    };
    Ok(StepOutput {
        loss: tape.value(root).data()[0],
        bundle,
        grads: bound.grads(&tape),
    })
}

/// One Mixup step: `mean(L)` with the same random draws as [`amp_step`].
pub fn mixup_step<R: Rng + ?Sized>(
    model: &Model,
    batch: &Batch,
    config: &MixConfig,
    rng: &mut R,
    dropout: Option<&Tensor>,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let rand = rand_op(model, &mut tape, &bound, batch, config, rng, dropout)?;
    let root = tape.mean(rand.loss)?;
    tape.backward(root)?;
    let bundle = LossBundle::unperturbed(tape.value(rand.loss).data().to_vec(), rand.mix.lambda);
    Ok(StepOutput {
        loss: tape.value(root).data()[0],
        bundle,
        grads: bound.grads(&tape),
    })
}

/// One plain cross-entropy step.
pub fn plain_step(model: &Model, batch: &Batch, dropout: Option<&Tensor>) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let logits = model.forward(&mut tape, &bound, batch, dropout)?;
    let ce = tape.softmax_cross_entropy(logits, batch.labels())?;
    let root = tape.mean(ce)?;
    tape.backward(root)?;
    let bundle = LossBundle::unperturbed(tape.value(ce).data().to_vec(), vec![1.0; batch.len()]);
    Ok(StepOutput {
        loss: tape.value(root).data()[0],
        bundle,
        grads: bound.grads(&tape),
    })
}

/// Dispatches on `config.policy`.
pub fn train_step<R: Rng + ?Sized>(
    model: &Model,
    batch: &Batch,
    config: &MixConfig,
    rng: &mut R,
    dropout: Option<&Tensor>,
) -> Result<StepOutput> {
    match config.policy {
        Policy::None => plain_step(model, batch, dropout),
        Policy::Mixup => mixup_step(model, batch, config, rng, dropout),
        Policy::Amp => amp_step(model, batch, config, rng, dropout),
    }
}
