//! Mixed-loss landscape along the mixing coefficient.
//!
//! For every λ on a uniform grid over `[0, 1]` the sweep mixes fixed pairs
//! with that λ and records the mean interpolated loss under two models.
//! The full-set sweep pairs position `p` of a frozen shuffle with position
//! `n - 1 - p`; that pairing is its own inverse, which makes the curve
//! symmetric about λ = 0.5.

use std::io::{Read, Write};

use rand::seq::SliceRandom;

use super::experiments::csv_err;
use crate::autodiff::Tape;
use crate::data::{encode_batch, Dataset, Example, Vocab};
use crate::error::{Error, Result};
use crate::mixup::rand_op_with;
use crate::models::{Layer, Model};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub loss_model_a: f64,
    pub loss_model_b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepPairs {
    /// Whole dataset under the frozen reverse pairing.
    Full { seed: u64 },
    /// Example `i` mixed with example `j`; λ weights `i`.
    Single { i: usize, j: usize },
}

pub fn grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::config(format!("sweep grid needs at least 2 points, got {points}")));
    }
    Ok((0..points).map(|k| k as f64 / (points - 1) as f64).collect())
}

fn check_models(a: &Model, b: &Model, vocab: &Vocab) -> Result<()> {
    if a.vocab_size() != vocab.len() || b.vocab_size() != vocab.len() {
        return Err(Error::config(format!(
            "models have vocabularies of {} and {} words, expected {}",
            a.vocab_size(),
            b.vocab_size(),
            vocab.len()
        )));
    }
    if a.num_classes() != b.num_classes() {
        return Err(Error::config("models disagree on the number of classes"));
    }
    Ok(())
}

/// Mean interpolated loss of `model` on `examples` paired by `perm`, with
/// every pair mixed at `lambda`.
pub fn mixed_loss(
    model: &Model,
    examples: &[&Example],
    perm: &[usize],
    lambda: f64,
    vocab: &Vocab,
    max_len: usize,
    layer: Layer,
) -> Result<Vec<f64>> {
    let batch = encode_batch(examples, vocab, max_len, model.num_classes())?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = rand_op_with(
        model,
        &mut tape,
        &bound,
        &batch,
        layer,
        perm.to_vec(),
        vec![lambda; examples.len()],
        None,
    )?;
    Ok(tape.value(out.loss).data().to_vec())
}

#[allow(clippy::too_many_arguments)]
pub fn lambda_sweep(
    model_a: &Model,
    model_b: &Model,
    dataset: &Dataset,
    vocab: &Vocab,
    max_len: usize,
    layer: Layer,
    grid_points: usize,
    pairs: SweepPairs,
) -> Result<Vec<SweepRow>> {
    check_models(model_a, model_b, vocab)?;
    let lambdas = grid(grid_points)?;
    let (examples, perm, keep): (Vec<&Example>, Vec<usize>, usize) = match pairs {
        SweepPairs::Full { seed } => {
            if dataset.is_empty() {
                return Err(Error::Precondition("sweep over an empty dataset".into()));
            }
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut stream(seed, Stream::Sweep));
            let ex = order.iter().map(|&k| &dataset.examples[k]).collect();
            let n = dataset.len();
            (ex, (0..n).rev().collect(), n)
        }
        SweepPairs::Single { i, j } => {
            for idx in [i, j] {
                if idx >= dataset.len() {
                    return Err(Error::Index {
                        what: "sweep example",
                        index: idx,
                        len: dataset.len(),
                    });
                }
            }
            (vec![&dataset.examples[i], &dataset.examples[j]], vec![1, 0], 1)
        }
    };
    let mean = |m: &Model, lam: f64| -> Result<f64> {
        let losses = mixed_loss(m, &examples, &perm, lam, vocab, max_len, layer)?;
        Ok(losses[..keep].iter().sum::<f64>() / keep as f64)
    };
    lambdas
        .iter()
        .map(|&lam| {
            Ok(SweepRow {
                lambda: lam,
                loss_model_a: mean(model_a, lam)?,
                loss_model_b: mean(model_b, lam)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "loss_model_a", "loss_model_b"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.lambda.to_string(),
            r.loss_model_a.to_string(),
            r.loss_model_b.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Contract(e.to_string()))
}

/// Reads a sweep CSV; the header must match the one written by
/// [`write_sweep_csv`].
pub fn parse_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers().map_err(|e| Error::format(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["lambda", "loss_model_a", "loss_model_b"] {
        return Err(Error::format(1, "expected header `lambda,loss_model_a,loss_model_b`"));
    }
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::format(line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::format(line, format!("expected 3 fields, got {}", rec.len())));
        }
        let field = |c: usize| -> Result<f64> {
            rec[c]
                .trim()
                .parse()
                .map_err(|_| Error::format(line, format!("invalid number `{}`", &rec[c])))
        };
        let row = SweepRow {
            lambda: field(0)?,
            loss_model_a: field(1)?,
            loss_model_b: field(2)?,
        };
        if !(0.0..=1.0).contains(&row.lambda) {
            return Err(Error::format(line, format!("lambda {} outside [0, 1]", row.lambda)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Mean of a column over all rows.
pub fn mean_losses(rows: &[SweepRow]) -> (f64, f64) {
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.loss_model_a).sum::<f64>() / n,
        rows.iter().map(|r| r.loss_model_b).sum::<f64>() / n,
    )
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{build_vocab, generate_synthetic_corpus, SyntheticSpec};
    use crate::harness::train::mean_loss;

    fn setup() -> (Dataset, Vocab, Model, Model) {
        let spec = SyntheticSpec {
            per_class: 5,
            vocab_size: 60,
            noise_len: 5,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic_corpus(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let vocab = build_vocab(&ds, 1).unwrap();
        let a = Model::init_embed_mlp(vocab.len(), 5, 7, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = Model::init_text_cnn(vocab.len(), 5, &[2, 3], 4, 6, 0.5, 10, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        (ds, vocab, a, b)
    }

    #[test]
    fn full_sweep_is_symmetric_with_plain_endpoints() {
        let (ds, vocab, a, b) = setup();
        let rows = lambda_sweep(&a, &b, &ds, &vocab, 10, Layer::Sent, 11, SweepPairs::Full { seed: 0 }).unwrap();
        assert_eq!(rows.len(), 11);
        for k in 0..11 {
            let (r, s) = (rows[k], rows[10 - k]);
            assert!((r.loss_model_a - s.loss_model_a).abs() < 1e-9);
            assert!((r.loss_model_b - s.loss_model_b).abs() < 1e-9);
        }
        let plain = mean_loss(&a, &ds, &vocab, 10).unwrap();
        assert!((rows[0].loss_model_a - plain).abs() < 1e-12);
        assert!((rows[10].loss_model_a - plain).abs() < 1e-12);
    }

    #[test]
    fn single_pair_endpoint_is_plain_loss() {
        let (ds, vocab, a, b) = setup();
        let rows = lambda_sweep(&a, &b, &ds, &vocab, 10, Layer::Sent, 5, SweepPairs::Single { i: 3, j: 17 }).unwrap();
        let one = Dataset {
            examples: vec![ds.examples[3].clone()],
            ..ds.clone()
        };
        let plain = mean_loss(&b, &one, &vocab, 10).unwrap();
        assert!((rows[4].loss_model_b - plain).abs() < 1e-12);
        assert!(lambda_sweep(&a, &b, &ds, &vocab, 10, Layer::Sent, 5, SweepPairs::Single { i: 0, j: 99 }).is_err());
    }

    #[test]
    fn vocab_mismatch_and_short_grid_rejected() {
        let (ds, vocab, a, _) = setup();
        let other = Model::init_embed_mlp(vocab.len() + 1, 5, 7, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let full = SweepPairs::Full { seed: 0 };
        assert!(matches!(
            lambda_sweep(&a, &other, &ds, &vocab, 10, Layer::Sent, 3, full),
            Err(Error::Config(_))
        ));
        assert!(lambda_sweep(&a, &a, &ds, &vocab, 10, Layer::Sent, 1, full).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            SweepRow { lambda: 0.0, loss_model_a: 1.25, loss_model_b: 0.5 },
            SweepRow { lambda: 1.0, loss_model_a: 0.1, loss_model_b: 1e-9 },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"lambda,loss_model_a,loss_model_b\n"));
        assert_eq!(parse_sweep_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn csv_errors_name_the_line() {
        assert!(matches!(parse_sweep_csv(&b"a,b,c\n"[..]), Err(Error::Format { line: 1, .. })));
        let bad = b"lambda,loss_model_a,loss_model_b\n0,1,2\n0.5,x,1\n";
        assert!(matches!(parse_sweep_csv(&bad[..]), Err(Error::Format { line: 3, .. })));
        let out = b"lambda,loss_model_a,loss_model_b\n1.5,1,2\n";
        assert!(parse_sweep_csv(&out[..]).is_err());
    }
}
