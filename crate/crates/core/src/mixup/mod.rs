//! Random interpolation of paired examples (Mixup) at a chosen layer.
//!
//! For a pair `(i, j)` and `λ ~ Beta(α, α)`:
//!
//! ```text
//! ĝ = g(x_i) * λ + g(x_j) * (1 - λ)
//! ŷ = y_i * λ + y_j * (1 - λ)
//! L = λ * ce(f(ĝ), y_i) + (1 - λ) * ce(f(ĝ), y_j)
//! ```
//!
//! `λ` is recorded on the tape as a leaf vector so that one backward pass
//! yields `∂L_s/∂λ_s` for every pair.

mod beta;

pub use beta::{sample_beta, sample_gamma, sample_lambda};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::{Batch, Bound, Hidden, Layer, Model};
use crate::tensor::Tensor;

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Plain cross-entropy.
    None,
    /// Random interpolation only.
    Mixup,
    /// Adversarial mixing policy.
    Amp,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::None => "none",
            Policy::Mixup => "mixup",
            Policy::Amp => "amp",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Policy::None),
            "mixup" => Ok(Policy::Mixup),
            "amp" => Ok(Policy::Amp),
            other => Err(Error::config(format!(
                "unknown policy `{other}` (expected none, mixup or amp)"
            ))),
        }
    }
}

/// How the final per-sample loss is chosen under [`Policy::Amp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MinMode {
    /// Keep the larger of `L` and `L'` per sample.
    Compare,
    /// Always take `L'` (the "+MaxOp" ablation).
    AlwaysPerturbed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixConfig {
    pub policy: Policy,
    pub alpha: f64,
    pub epsilon: f64,
    pub layer: Layer,
    pub per_pair_lambda: bool,
    pub min_mode: MinMode,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Amp,
            alpha: 1.0,
            epsilon: 0.002,
            layer: Layer::Sent,
            per_pair_lambda: true,
            min_mode: MinMode::Compare,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A mixed mini-batch recorded on a tape.
#[derive(Clone, Debug)]
pub struct MixBatch {
    /// Partner index for every sample.
    pub j_index: Vec<usize>,
    /// Mixing coefficients, also the label weights.
    pub lambda: Vec<f64>,
    /// Leaf holding `lambda` on the tape.
    pub lambda_var: Var,
    /// Unmixed hidden state `g_k(x_i)`.
    pub hidden_i: Hidden,
    /// Partner hidden state `g_k(x_j)`.
    pub hidden_j: Var,
    pub mixed_hidden: Hidden,
    pub mixed_labels: Tensor,
    pub labels_i: Tensor,
    pub labels_j: Tensor,
    pub layer: Layer,
}

/// Uniform random permutation of `0..n`; self-pairs are allowed.
pub fn pair_batch<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// `g_i * λ + g_j * (1 - λ)` with one λ per leading-axis slice.
pub fn mix_hidden(tape: &mut Tape, g_i: Var, g_j: Var, lambda: Var) -> Result<Var> {
    tape.lerp(g_i, g_j, lambda)
}

/// Soft labels `y_i * λ + y_j * (1 - λ)`. Never differentiated.
pub fn mix_labels(y_i: &Tensor, y_j: &Tensor, lambda: &[f64]) -> Result<Tensor> {
    if y_i.shape() != y_j.shape() || y_i.rows() != lambda.len() {
        return Err(Error::Dimension {
            op: "mix_labels",
            lhs: y_i.shape().to_vec(),
            rhs: y_j.shape().to_vec(),
        });
    }
    let c = y_i.row_width();
    let data = y_i
        .data()
        .iter()
        .zip(y_j.data())
        .enumerate()
        .map(|(idx, (a, b))| {
            let lam = lambda[idx / c];
            a * lam + b * (1.0 - lam)
        })
        .collect();
    Tensor::new(y_i.shape().to_vec(), data)
}

/// Per-sample interpolated loss `λ ce(z, y_i) + (1 - λ) ce(z, y_j)`.
pub fn mixup_loss(
    tape: &mut Tape,
    logits: Var,
    y_i: &Tensor,
    y_j: &Tensor,
    lambda: Var,
) -> Result<Var> {
    let ce_i = tape.softmax_cross_entropy(logits, y_i)?;
    let ce_j = tape.softmax_cross_entropy(logits, y_j)?;
    tape.lerp(ce_i, ce_j, lambda)
}

/// Draws one λ per pair, or a single λ shared by the batch.
pub fn draw_lambdas<R: Rng + ?Sized>(config: &MixConfig, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if config.per_pair_lambda {
        sample_lambda(config.alpha, n, rng)
    } else {
        let lam = sample_lambda(config.alpha, 1, rng)?[0];
        Ok(vec![lam; n])
    }
}

/// Output of [`rand_op`].
#[derive(Clone, Debug)]
pub struct RandOut {
    pub mix: MixBatch,
    pub logits: Var,
    /// Per-sample loss `[n]`.
    pub loss: Var,
}

/// Pairs the batch, samples λ, mixes at `config.layer` and computes the
/// interpolated loss.
///
/// The pairing permutation is drawn before λ. `dropout` is the training
/// mask for the `sent` layer, if the backbone uses one.
pub fn rand_op<R: Rng + ?Sized>(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    batch: &Batch,
    config: &MixConfig,
    rng: &mut R,
    dropout: Option<&Tensor>,
) -> Result<RandOut> {
    config.validate()?;
    let n = batch.len();
    let perm = pair_batch(n, rng);
    let lambda = draw_lambdas(config, n, rng)?;
    rand_op_with(model, tape, bound, batch, config.layer, perm, lambda, dropout)
}

/// [`rand_op`] with a fixed pairing and fixed coefficients.
#[allow(clippy::too_many_arguments)]
pub fn rand_op_with(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    batch: &Batch,
    layer: Layer,
    perm: Vec<usize>,
    lambda: Vec<f64>,
    dropout: Option<&Tensor>,
) -> Result<RandOut> {
    let n = batch.len();
    if perm.len() != n || lambda.len() != n {
        return Err(Error::Dimension {
            op: "rand_op",
            lhs: vec![n],
            rhs: vec![perm.len(), lambda.len()],
        });
    }
    if let Some(bad) = lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Precondition(format!("lambda {bad} outside [0, 1]")));
    }
    let hidden_i = model.forward_to_layer(tape, bound, batch, layer)?;
    let hidden_j = tape.gather_rows(hidden_i.var, &perm)?;
    let lambda_var = tape.leaf(Tensor::vector(lambda.clone()));
    let mixed = mix_hidden(tape, hidden_i.var, hidden_j, lambda_var)?;
    let mixed_hidden = Hidden {
        var: mixed,
        valid_lens: mixed_valid_lens(&hidden_i.valid_lens, &perm),
    };
    let logits = model.forward_from_layer(tape, bound, &mixed_hidden, layer, dropout)?;

    let labels_i = batch.labels().clone();
    let labels_j = gather_label_rows(&labels_i, &perm);
    let loss = mixup_loss(tape, logits, &labels_i, &labels_j, lambda_var)?;
    let mixed_labels = mix_labels(&labels_i, &labels_j, &lambda)?;
    Ok(RandOut {
        mix: MixBatch {
            j_index: perm,
            lambda,
            lambda_var,
            hidden_i,
            hidden_j,
            mixed_hidden,
            mixed_labels,
            labels_i,
            labels_j,
            layer,
        },
        logits,
        loss,
    })
}

/// Mixed sequences keep the longer of the two valid lengths.
pub(crate) fn mixed_valid_lens(lens: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| lens[i].max(lens[j]))
        .collect()
}

pub(crate) fn gather_label_rows(labels: &Tensor, perm: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(labels.len());
    for &j in perm {
        data.extend_from_slice(labels.row(j));
    }
    Tensor::new(labels.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests;
