//! Text classifiers split as `f(x) = f_k(g_k(x))` at a mixable layer `k`.
//!
//! Two backbones are provided:
//!
//! * `embed-mlp`: embedding, masked mean pool, dense + tanh (the `sent`
//!   layer), dense logits.
//! * `text-cnn`: embedding, one conv/relu/max-over-time block per filter
//!   width, concatenation (the `sent` layer), dropout, dense logits.
//!
//! Mixing at `word` interpolates the padded embedding grid; mixing at `sent`
//! interpolates the final hidden state.

mod embeddings;

pub use embeddings::{load_pretrained_embeddings, parse_embeddings, EmbeddingLoad};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const INIT_BOUND: f64 = 0.1;

/// A mixable layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Output of the embedding lookup, `[n x max_len x embed_dim]`.
    Word,
    /// Final hidden state before the classifier, `[n x sent_dim]`.
    Sent,
}

impl Layer {
    pub const ALL: [Layer; 2] = [Layer::Word, Layer::Sent];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Word => "word",
            Layer::Sent => "sent",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Layer::Word),
            "sent" => Ok(Layer::Sent),
            other => Err(Error::config(format!(
                "unknown layer `{other}` (expected word or sent)"
            ))),
        }
    }
}

/// Padded token ids with one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    token_ids: Vec<usize>,
    max_len: usize,
    valid_lens: Vec<usize>,
    labels: Tensor,
}

impl Batch {
    pub fn new(
        token_ids: Vec<usize>,
        max_len: usize,
        valid_lens: Vec<usize>,
        labels: Tensor,
    ) -> Result<Self> {
        let n = valid_lens.len();
        if token_ids.len() != n * max_len || labels.shape().len() != 2 || labels.rows() != n {
            return Err(Error::Dimension {
                op: "batch",
                lhs: vec![n, max_len],
                rhs: labels.shape().to_vec(),
            });
        }
        if let Some(&bad) = valid_lens.iter().find(|&&v| v == 0 || v > max_len) {
            return Err(Error::Precondition(format!(
                "valid length {bad} outside 1..={max_len}"
            )));
        }
        for r in 0..n {
            let row = labels.row(r);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::Precondition(format!("label row {r} is not one-hot")));
            }
        }
        Ok(Self {
            token_ids,
            max_len,
            valid_lens,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.valid_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_lens.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn row_ids(&self, r: usize) -> &[usize] {
        &self.token_ids[r * self.max_len..(r + 1) * self.max_len]
    }

    pub fn valid_lens(&self) -> &[usize] {
        &self.valid_lens
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.row_width()
    }

    pub fn label_ids(&self) -> Vec<usize> {
        (0..self.len())
            .map(|r| {
                self.labels
                    .row(r)
                    .iter()
                    .position(|&v| v == 1.0)
                    .expect("one-hot")
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    EmbedMlp {
        hidden_dim: usize,
    },
    TextCnn {
        filter_widths: Vec<usize>,
        feature_maps: usize,
        dropout: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Param {
    fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
        }
    }
}

/// Parameters copied onto a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every parameter, `None` when untouched or frozen.
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| tape.grad(v).cloned()).collect()
    }
}

/// Hidden state at a mixable layer.
#[derive(Clone, Debug)]
pub struct Hidden {
    pub var: Var,
    /// Per-sequence valid lengths; only the word layer of `embed-mlp`
    /// consumes them.
    pub valid_lens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: Vec<Param>,
    vocab_size: usize,
    embed_dim: usize,
    num_classes: usize,
}

const EMBED: usize = 0;

impl Model {
    pub fn init_embed_mlp<R: Rng + ?Sized>(
        vocab_size: usize,
        embed_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(&[vocab_size, embed_dim, hidden_dim, num_classes])?;
        let params = vec![
            Param::new("embedding", Tensor::uniform(&[vocab_size, embed_dim], INIT_BOUND, rng)),
            Param::new("hidden.weight", Tensor::uniform(&[embed_dim, hidden_dim], INIT_BOUND, rng)),
            Param::new("hidden.bias", Tensor::zeros(&[hidden_dim])),
            Param::new("out.weight", Tensor::uniform(&[hidden_dim, num_classes], INIT_BOUND, rng)),
            Param::new("out.bias", Tensor::zeros(&[num_classes])),
        ];
        Ok(Self {
            arch: Architecture::EmbedMlp { hidden_dim },
            params,
            vocab_size,
            embed_dim,
            num_classes,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn init_text_cnn<R: Rng + ?Sized>(
        vocab_size: usize,
        embed_dim: usize,
        filter_widths: &[usize],
        feature_maps: usize,
        num_classes: usize,
        dropout: f64,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(&[vocab_size, embed_dim, feature_maps, num_classes])?;
        if filter_widths.is_empty() || filter_widths.contains(&0) {
            return Err(Error::config("filter widths must be nonempty and positive"));
        }
        if let Some(&w) = filter_widths.iter().find(|&&w| w > max_len) {
            return Err(Error::config(format!(
                "filter width {w} exceeds max_len {max_len}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout {dropout} not in [0, 1)")));
        }
        let mut params = vec![Param::new(
            "embedding",
            Tensor::uniform(&[vocab_size, embed_dim], INIT_BOUND, rng),
        )];
        for &w in filter_widths {
            params.push(Param::new(
                format!("conv{w}.weight"),
                Tensor::uniform(&[w, embed_dim, feature_maps], INIT_BOUND, rng),
            ));
            params.push(Param::new(format!("conv{w}.bias"), Tensor::zeros(&[feature_maps])));
        }
        let sent = feature_maps * filter_widths.len();
        params.push(Param::new(
            "out.weight",
            Tensor::uniform(&[sent, num_classes], INIT_BOUND, rng),
        ));
        params.push(Param::new("out.bias", Tensor::zeros(&[num_classes])));
        Ok(Self {
            arch: Architecture::TextCnn {
                filter_widths: filter_widths.to_vec(),
                feature_maps,
                dropout,
            },
            params,
            vocab_size,
            embed_dim,
            num_classes,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind_name(&self) -> &'static str {
        match self.arch {
            Architecture::EmbedMlp { .. } => "embed-mlp",
            Architecture::TextCnn { .. } => "text-cnn",
        }
    }

    /// Mixable layers, from the embedding output to the last hidden state.
    pub fn layer_names(&self) -> [&'static str; 2] {
        [Layer::Word.name(), Layer::Sent.name()]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Width of the `sent` layer.
    pub fn sent_dim(&self) -> usize {
        match &self.arch {
            Architecture::EmbedMlp { hidden_dim } => *hidden_dim,
            Architecture::TextCnn {
                filter_widths,
                feature_maps,
                ..
            } => filter_widths.len() * feature_maps,
        }
    }

    /// Smallest sequence width the backbone accepts.
    pub fn min_len(&self) -> usize {
        match &self.arch {
            Architecture::EmbedMlp { .. } => 1,
            Architecture::TextCnn { filter_widths, .. } => {
                filter_widths.iter().copied().max().unwrap_or(1)
            }
        }
    }

    pub fn dropout_rate(&self) -> f64 {
        match self.arch {
            Architecture::EmbedMlp { .. } => 0.0,
            Architecture::TextCnn { dropout, .. } => dropout,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn embed_frozen(&self) -> bool {
        !self.params[EMBED].trainable
    }

    pub fn set_embed_frozen(&mut self, frozen: bool) {
        self.params[EMBED].trainable = !frozen;
    }

    /// Replaces the embedding table, e.g. with pretrained vectors.
    pub fn set_embeddings(&mut self, table: Tensor) -> Result<()> {
        let expected = [self.vocab_size, self.embed_dim];
        if table.shape() != expected {
            return Err(Error::Dimension {
                op: "set_embeddings",
                lhs: expected.to_vec(),
                rhs: table.shape().to_vec(),
            });
        }
        self.params[EMBED].value = table;
        Ok(())
    }

    /// Copies parameters onto `tape`; frozen ones become constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Draws an inverted-dropout mask for the `sent` layer of a batch of
    /// `n`, or `None` when the backbone has no dropout.
    pub fn sample_dropout_mask<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Tensor> {
        let rate = self.dropout_rate();
        if rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - rate;
        let d = self.sent_dim();
        let data = (0..n * d)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Some(Tensor::new(vec![n, d], data).expect("mask shape"))
    }

    /// Runs the prefix `g_k`.
    pub fn forward_to_layer(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        layer: Layer,
    ) -> Result<Hidden> {
        if batch.max_len() < self.min_len() {
            return Err(Error::InputTooShort {
                len: batch.max_len(),
                width: self.min_len(),
            });
        }
        let n = batch.len();
        let flat = tape.embedding_lookup(bound.vars[EMBED], batch.token_ids())?;
        let word = tape.reshape(flat, vec![n, batch.max_len(), self.embed_dim])?;
        let hidden = Hidden {
            var: word,
            valid_lens: batch.valid_lens().to_vec(),
        };
        match layer {
            Layer::Word => Ok(hidden),
            Layer::Sent => Ok(Hidden {
                var: self.sent_from_word(tape, bound, &hidden)?,
                valid_lens: hidden.valid_lens,
            }),
        }
    }

    /// Runs the suffix `f_k`, returning `[n x C]` logits. `dropout` is the
    /// training-mode mask for the `sent` layer; pass `None` to evaluate.
    pub fn forward_from_layer(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        hidden: &Hidden,
        layer: Layer,
        dropout: Option<&Tensor>,
    ) -> Result<Var> {
        let shape = tape.value(hidden.var).shape().to_vec();
        let sent = match layer {
            Layer::Word => {
                if shape.len() != 3 || shape[2] != self.embed_dim || shape[0] != hidden.valid_lens.len()
                {
                    return Err(Error::Dimension {
                        op: "forward_from_layer(word)",
                        lhs: vec![hidden.valid_lens.len(), 0, self.embed_dim],
                        rhs: shape,
                    });
                }
                self.sent_from_word(tape, bound, hidden)?
            }
            Layer::Sent => {
                if shape.len() != 2 || shape[1] != self.sent_dim() {
                    return Err(Error::Dimension {
                        op: "forward_from_layer(sent)",
                        lhs: vec![shape.first().copied().unwrap_or(0), self.sent_dim()],
                        rhs: shape,
                    });
                }
                hidden.var
            }
        };
        self.logits_from_sent(tape, bound, sent, dropout)
    }

    /// Plain forward pass `f(x)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        dropout: Option<&Tensor>,
    ) -> Result<Var> {
        let hidden = self.forward_to_layer(tape, bound, batch, Layer::Word)?;
        self.forward_from_layer(tape, bound, &hidden, Layer::Word, dropout)
    }

    /// Evaluation-mode logits on a fresh tape.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, batch, None)?;
        Ok(tape.value(out).clone())
    }

    fn sent_from_word(&self, tape: &mut Tape, bound: &Bound, word: &Hidden) -> Result<Var> {
        let v = &bound.vars;
        match &self.arch {
            Architecture::EmbedMlp { .. } => {
                let pooled = tape.mean_pool_batch(word.var, &word.valid_lens)?;
                let pre = tape.matmul(pooled, v[1])?;
                let pre = tape.add_row(pre, v[2])?;
                Ok(tape.tanh(pre))
            }
            Architecture::TextCnn { filter_widths, .. } => {
                let mut parts = Vec::with_capacity(filter_widths.len());
                for i in 0..filter_widths.len() {
                    let (f, b) = (v[1 + 2 * i], v[2 + 2 * i]);
                    parts.push(tape.conv1d_maxpool_batch(word.var, f, b)?);
                }
                tape.concat(&parts)
            }
        }
    }

    fn logits_from_sent(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        sent: Var,
        dropout: Option<&Tensor>,
    ) -> Result<Var> {
        let k = bound.vars.len();
        let sent = match dropout {
            Some(mask) => {
                let m = tape.constant(mask.clone());
                tape.mul(sent, m)?
            }
            None => sent,
        };
        let logits = tape.matmul(sent, bound.vars[k - 2])?;
        tape.add_row(logits, bound.vars[k - 1])
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::config(format!("model dimensions must be positive: {dims:?}")));
    }
    Ok(())
}
