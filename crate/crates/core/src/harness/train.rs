use std::time::{Duration, Instant};

use rand::seq::SliceRandom;

use super::config::{Backbone, DataSource, ExperimentConfig};
use super::optim::Adam;
use crate::amp::{train_step, LossBundle};
use crate::data::{
    build_vocab, encode_batch, generate_synthetic_corpus, load_corpus, split_dev,
    subsample_per_class, Dataset, Example, Vocab,
};
use crate::error::{Error, Result};
use crate::models::{load_pretrained_embeddings, Model};
use crate::rng::{stream, Stream};

const EVAL_BATCH: usize = 256;

/// Train, dev and test splits with the training vocabulary.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub vocab: Vocab,
    /// The training pool before subsampling and the dev split.
    pub source_hash: String,
}

/// Loads or generates the corpus, then subsamples and splits it for `seed`.
///
/// The synthetic corpus depends on `data_seed` only, so every run seed sees
/// the same task; the subsample and the dev split depend on `seed`.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (pool, test) = match &config.data {
        DataSource::Files { train, test } => (load_corpus(train)?, load_corpus(test)?),
        DataSource::Synthetic {
            spec,
            test_per_class,
            data_seed,
        } => {
            let mut rng = stream(*data_seed, Stream::Synthetic);
            let mut train = generate_synthetic_corpus(spec, &mut rng)?;
            let test_spec = crate::data::SyntheticSpec {
                per_class: *test_per_class,
                ..*spec
            };
            let mut test = generate_synthetic_corpus(&test_spec, &mut rng)?;
            train.name = "synthetic-train".into();
            test.name = "synthetic-test".into();
            (train, test)
        }
    };
    if pool.num_classes != test.num_classes {
        return Err(Error::config(format!(
            "train has {} classes but test has {}",
            pool.num_classes, test.num_classes
        )));
    }
    let source_hash = pool.content_hash();
    let reduced = if config.subsample_ratio < 1.0 {
        subsample_per_class(&pool, config.subsample_ratio, &mut stream(seed, Stream::Subsample))?
    } else {
        pool
    };
    let (train, dev) = split_dev(&reduced, config.dev_fraction, &mut stream(seed, Stream::Split))?;
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let vocab = build_vocab(&train, config.min_freq)?;
    Ok(Prepared {
        train,
        dev,
        test,
        vocab,
        source_hash,
    })
}

/// Fresh model for `config`, initialized from the `Init` stream.
pub fn build_model(config: &ExperimentConfig, vocab: &Vocab, num_classes: usize, seed: u64) -> Result<Model> {
    let mut rng = stream(seed, Stream::Init);
    let v = vocab.len();
    let mut model = match &config.backbone {
        Backbone::EmbedMlp { hidden_dim } => {
            Model::init_embed_mlp(v, config.embed_dim, *hidden_dim, num_classes, &mut rng)?
        }
        Backbone::TextCnn {
            filter_widths,
            feature_maps,
            dropout,
        } => Model::init_text_cnn(
            v,
            config.embed_dim,
            filter_widths,
            *feature_maps,
            num_classes,
            *dropout,
            config.max_len,
            &mut rng,
        )?,
    };
    if let Some(path) = &config.embeddings_path {
        let load = load_pretrained_embeddings(path, vocab, config.embed_dim, &mut rng)?;
        log::info!("embeddings: {} of {} words found", load.found, v);
        model.set_embeddings(load.table)?;
    }
    model.set_embed_frozen(config.freeze_embeddings);
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Minimized objective.
    pub objective: f64,
    pub mean_loss: f64,
    pub mean_loss_prime: f64,
    pub mask_rate: f64,
    pub mean_abs_grad_lambda: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// `(step, dev error)` at every epoch boundary and after the last step.
    pub dev_errors: Vec<(usize, f64)>,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub test_error: f64,
    pub wall_time: Duration,
}

// Wall time is not part of a run's identity.
impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.steps == other.steps
            && self.dev_errors == other.dev_errors
            && self.best_step == other.best_step
            && self.test_error.to_bits() == other.test_error.to_bits()
    }
}

/// Trains on freshly prepared data and evaluates the selected model on test.
pub fn train(config: &ExperimentConfig, seed: u64) -> Result<(Model, TrainReport)> {
    let data = prepare(config, seed)?;
    train_on(config, &data, seed)
}

pub fn train_on(config: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<(Model, TrainReport)> {
    train_observed(config, data, seed, |_, _| {})
}

/// [`train_on`] that hands every step's per-sample record to `observe`.
pub fn train_observed<F>(
    config: &ExperimentConfig,
    data: &Prepared,
    seed: u64,
    mut observe: F,
) -> Result<(Model, TrainReport)>
where
    F: FnMut(usize, &LossBundle),
{
    config.validate()?;
    let start = Instant::now();
    let num_classes = data.train.num_classes;
    let mut model = build_model(config, &data.vocab, num_classes, seed)?;
    let mut opt = Adam::new(model.params(), config.lr);
    let mut shuffle_rng = stream(seed, Stream::Shuffle);
    let mut mix_rng = stream(seed, Stream::Mix);
    let mut dropout_rng = stream(seed, Stream::Dropout);

    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut steps = Vec::with_capacity(config.max_steps);
    let mut dev_errors = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;

    for step in 1..=config.max_steps {
        if cursor >= n {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(n);
        let picked: Vec<&Example> = order[cursor..end].iter().map(|&i| &data.train.examples[i]).collect();
        cursor = end;
        let batch = encode_batch(&picked, &data.vocab, config.max_len, num_classes)?;
        let mask = model.sample_dropout_mask(batch.len(), &mut dropout_rng);
        let out = train_step(&model, &batch, &config.mix, &mut mix_rng, mask.as_ref())?;
        if !out.loss.is_finite() {
            return Err(Error::Divergence(format!(
                "loss {} at step {step} (seed {seed})",
                out.loss
            )));
        }
        opt.update(model.params_mut(), &out.grads)?;
        let b = &out.bundle;
        observe(step, b);
        let k = b.loss.len() as f64;
        steps.push(StepRecord {
            objective: out.loss,
            mean_loss: b.loss.iter().sum::<f64>() / k,
            mean_loss_prime: b.loss_prime.iter().sum::<f64>() / k,
            mask_rate: b.mask_rate(),
            mean_abs_grad_lambda: b.grad_lambda.iter().map(|g| g.abs()).sum::<f64>() / k,
        });

        if cursor >= n || step == config.max_steps {
            let err = if data.dev.is_empty() {
                0.0
            } else {
                evaluate(&model, &data.dev, &data.vocab, config.max_len)?
            };
            dev_errors.push((step, err));
            if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
                best = Some((err, step, model.clone()));
            }
        }
    }

    let (_, best_step, model) = best.expect("at least one evaluation");
    let test_error = evaluate(&model, &data.test, &data.vocab, config.max_len)?;
    Ok((
        model,
        TrainReport {
            seed,
            steps,
            dev_errors,
            best_step,
            test_error,
            wall_time: start.elapsed(),
        },
    ))
}

/// Fraction of examples whose arg-max logit differs from the label.
/// Ties go to the lowest class id. Dropout is off.
pub fn evaluate(model: &Model, dataset: &Dataset, vocab: &Vocab, max_len: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Precondition(format!("cannot evaluate on empty dataset {}", dataset.name)));
    }
    let mut wrong = 0usize;
    for chunk in dataset.examples.chunks(EVAL_BATCH) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = encode_batch(&refs, vocab, max_len, model.num_classes())?;
        let logits = model.logits(&batch)?;
        for (r, ex) in chunk.iter().enumerate() {
            if argmax(logits.row(r)) != ex.label {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Mean plain cross-entropy over `dataset`.
pub fn mean_loss(model: &Model, dataset: &Dataset, vocab: &Vocab, max_len: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Precondition(format!("cannot evaluate on empty dataset {}", dataset.name)));
    }
    let mut total = 0.0;
    for chunk in dataset.examples.chunks(EVAL_BATCH) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = encode_batch(&refs, vocab, max_len, model.num_classes())?;
        let mut tape = crate::autodiff::Tape::new();
        let bound = model.bind(&mut tape);
        let logits = model.forward(&mut tape, &bound, &batch, None)?;
        let ce = tape.softmax_cross_entropy(logits, batch.labels())?;
        total += tape.value(ce).data().iter().sum::<f64>();
    }
    Ok(total / dataset.len() as f64)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
