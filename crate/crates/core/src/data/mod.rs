//! Corpus ingestion, vocabulary, batching and per-class sampling.

mod synthetic;
mod vocab;

pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};
pub use vocab::{build_vocab, tokenize, Vocab, PAD, UNK};

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: usize,
}

impl Example {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        Self {
            text: text.into(),
            label,
        }
    }
}

/// A labelled text collection. `label_names[c]` is the original label
/// string for class id `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    pub num_classes: usize,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Example indices grouped by class id.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, ex) in self.examples.iter().enumerate() {
            by_class[ex.label].push(i);
        }
        by_class
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.indices_by_class().iter().map(Vec::len).collect()
    }

    fn with_examples(&self, name: String, examples: Vec<Example>) -> Dataset {
        Dataset {
            name,
            examples,
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
        }
    }

    fn pick(&self, name: String, mut idx: Vec<usize>) -> Dataset {
        idx.sort_unstable();
        let examples = idx.iter().map(|&i| self.examples[i].clone()).collect();
        self.with_examples(name, examples)
    }

    /// Hex SHA-256 over labels and texts, used in run manifests.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for ex in &self.examples {
            h.update(ex.label.to_le_bytes());
            h.update(ex.text.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_corpus(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_corpus(&text, &name)
}

/// Parses `<label>\t<text>` lines.
///
/// When every label is a nonnegative integer, ids follow ascending numeric
/// order (so `0..C` maps to itself). Otherwise labels are names and ids are
/// assigned in first-seen order. Blank lines are skipped; duplicates kept.
pub fn parse_corpus(text: &str, name: &str) -> Result<Dataset> {
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, body)) = line.split_once('\t') else {
            return Err(Error::format(lineno + 1, "expected `<label>\\t<text>`"));
        };
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::format(lineno + 1, "empty label"));
        }
        raw.push((label.to_string(), body.to_string()));
    }
    if raw.is_empty() {
        return Err(Error::format(0, "corpus contains no examples"));
    }

    let numeric: Option<Vec<u64>> = raw.iter().map(|(l, _)| l.parse::<u64>().ok()).collect();
    let label_names: Vec<String> = match &numeric {
        Some(values) => values
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|v| v.to_string())
            .collect(),
        None => {
            let mut names: Vec<String> = Vec::new();
            for (l, _) in &raw {
                if !names.contains(l) {
                    names.push(l.clone());
                }
            }
            names
        }
    };
    let id_of = |label: &str| -> usize {
        match &numeric {
            Some(_) => {
                let v: u64 = label.parse().expect("checked numeric");
                label_names
                    .iter()
                    .position(|n| n.parse::<u64>().ok() == Some(v))
                    .expect("label present")
            }
            None => label_names.iter().position(|n| n == label).expect("label present"),
        }
    };
    let examples = raw
        .iter()
        .map(|(l, body)| Example::new(body.clone(), id_of(l)))
        .collect();
    Ok(Dataset {
        name: name.to_string(),
        examples,
        num_classes: label_names.len(),
        label_names,
    })
}

/// Encodes examples into a padded batch of width `max_len`.
///
/// Text is truncated to `max_len` tokens; empty text becomes a single UNK.
pub fn encode_batch(
    examples: &[&Example],
    vocab: &Vocab,
    max_len: usize,
    num_classes: usize,
) -> Result<Batch> {
    if max_len == 0 {
        return Err(Error::config("max_len must be at least 1"));
    }
    let n = examples.len();
    let mut ids = vec![PAD; n * max_len];
    let mut valid_lens = Vec::with_capacity(n);
    let mut labels = Tensor::zeros(&[n, num_classes]);
    for (r, ex) in examples.iter().enumerate() {
        if ex.label >= num_classes {
            return Err(Error::Index {
                what: "label",
                index: ex.label,
                len: num_classes,
            });
        }
        let row = &mut ids[r * max_len..(r + 1) * max_len];
        let mut len = 0;
        for (slot, tok) in row.iter_mut().zip(tokenize(&ex.text)) {
            *slot = vocab.id(&tok);
            len += 1;
        }
        if len == 0 {
            row[0] = UNK;
            len = 1;
        }
        valid_lens.push(len);
        labels.data_mut()[r * num_classes + ex.label] = 1.0;
    }
    Batch::new(ids, max_len, valid_lens, labels)
}

/// Keeps `max(1, floor(ratio * n_c))` examples of every class `c`, chosen
/// uniformly without replacement. Original order is preserved.
pub fn subsample_per_class<R: Rng + ?Sized>(
    dataset: &Dataset,
    ratio: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("subsample ratio {ratio} not in (0, 1]")));
    }
    let mut keep = Vec::new();
    for mut idx in dataset.indices_by_class() {
        if idx.is_empty() {
            continue;
        }
        let k = per_class_quota(ratio, idx.len());
        idx.shuffle(rng);
        keep.extend_from_slice(&idx[..k]);
    }
    Ok(dataset.pick(format!("{}@{ratio}", dataset.name), keep))
}

pub(crate) fn per_class_quota(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).floor() as usize).clamp(1, n)
}

/// Stratified random split into `(train, dev)`.
///
/// A class with `n_c >= 2` sends `ceil(fraction * n_c)` examples to dev
/// (at least 1, at most `n_c - 1`). Singleton classes stay in train.
pub fn split_dev<R: Rng + ?Sized>(
    dataset: &Dataset,
    fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("dev fraction {fraction} not in (0, 1)")));
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (class, mut idx) in dataset.indices_by_class().into_iter().enumerate() {
        match idx.len() {
            0 => {}
            1 => {
                log::warn!(
                    "class {class} of {} has a single example; kept in train only",
                    dataset.name
                );
                train.push(idx[0]);
            }
            n => {
                let k = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
                idx.shuffle(rng);
                dev.extend_from_slice(&idx[..k]);
                train.extend_from_slice(&idx[k..]);
            }
        }
    }
    Ok((
        dataset.pick(format!("{}-train", dataset.name), train),
        dataset.pick(format!("{}-dev", dataset.name), dev),
    ))
}
