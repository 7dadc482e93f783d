use rand::Rng;

use super::{Dataset, Example};
use crate::error::{Error, Result};

/// Parameters of the synthetic keyword-classification task.
///
/// Every class owns `signal_tokens_per_class` private tokens. An example
/// holds 2 to 4 signal tokens of its class (drawn with replacement) scattered
/// among `noise_len` tokens from the shared noise pool. One example in ten
/// has one signal token swapped for a signal token of another class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub vocab_size: usize,
    pub signal_tokens_per_class: usize,
    pub noise_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            per_class: 100,
            vocab_size: 500,
            signal_tokens_per_class: 5,
            noise_len: 20,
        }
    }
}

const CORRUPTION_RATE: f64 = 0.1;

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic corpus needs at least 2 classes"));
        }
        if self.signal_tokens_per_class == 0 {
            return Err(Error::config("signal_tokens_per_class must be positive"));
        }
        if self.vocab_size <= self.num_classes * self.signal_tokens_per_class {
            return Err(Error::config(format!(
                "vocab_size {} must exceed num_classes * signal_tokens_per_class = {}",
                self.vocab_size,
                self.num_classes * self.signal_tokens_per_class
            )));
        }
        Ok(())
    }

    fn noise_pool(&self) -> usize {
        self.vocab_size - self.num_classes * self.signal_tokens_per_class
    }
}

fn signal_token(class: usize, k: usize) -> String {
    format!("c{class}s{k}")
}

pub fn generate_synthetic_corpus<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<Dataset> {
    spec.validate()?;
    let s = spec.signal_tokens_per_class;
    let mut examples = Vec::with_capacity(spec.num_classes * spec.per_class);
    for class in 0..spec.num_classes {
        for _ in 0..spec.per_class {
            let count = rng.random_range(2..=4);
            let mut signal: Vec<String> = (0..count)
                .map(|_| signal_token(class, rng.random_range(0..s)))
                .collect();
            if rng.random_bool(CORRUPTION_RATE) {
                let mut other = rng.random_range(0..spec.num_classes - 1);
                if other >= class {
                    other += 1;
                }
                let slot = rng.random_range(0..count);
                signal[slot] = signal_token(other, rng.random_range(0..s));
            }
            let mut tokens: Vec<String> = (0..spec.noise_len)
                .map(|_| format!("n{}", rng.random_range(0..spec.noise_pool())))
                .collect();
            for tok in signal {
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, tok);
            }
            examples.push(Example::new(tokens.join(" "), class));
        }
    }
    Ok(Dataset {
        name: "synthetic".into(),
        examples,
        num_classes: spec.num_classes,
        label_names: (0..spec.num_classes).map(|c| c.to_string()).collect(),
    })
}
