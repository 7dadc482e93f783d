//! Word-vector text files: one `word v1 v2 ... vd` entry per line.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingLoad {
    /// `[vocab.len() x dim]` table.
    pub table: Tensor,
    /// Vocabulary rows filled from the file.
    pub found: usize,
}

pub fn load_pretrained_embeddings<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocab,
    default_dim: usize,
    rng: &mut R,
) -> Result<EmbeddingLoad> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab, default_dim, rng)
}

/// Parses word vectors and builds a table for `vocab`.
///
/// The dimension comes from the first entry; `default_dim` is used only when
/// the file has no entries. Rows for words missing from the file are drawn
/// from uniform(-0.1, 0.1). Words are lowercased before lookup and the first
/// entry for a word wins.
pub fn parse_embeddings<R: Rng + ?Sized>(
    text: &str,
    vocab: &Vocab,
    default_dim: usize,
    rng: &mut R,
) -> Result<EmbeddingLoad> {
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(line_no, format!("bad number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(Error::format(line_no, "entry has no vector components"));
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::format(
                    line_no,
                    format!("expected {d} components, found {}", values.len()),
                ));
            }
            Some(_) => {}
        }
        if let Some(id) = vocab.get(&word.to_lowercase()) {
            if rows[id].is_none() {
                rows[id] = Some(values);
            }
        }
    }
    let dim = match dim {
        Some(d) => d,
        None => {
            log::warn!("embedding file has no entries; all rows randomly initialized");
            default_dim
        }
    };
    if dim == 0 {
        return Err(Error::config("embedding dimension must be positive"));
    }
    let mut found = 0;
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for row in rows {
        match row {
            Some(v) => {
                found += 1;
                data.extend(v);
            }
            None => data.extend((0..dim).map(|_| rng.random_range(-0.1..0.1))),
        }
    }
    Ok(EmbeddingLoad {
        table: Tensor::new(vec![vocab.len(), dim], data)?,
        found,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn copies_in_vocab_rows() {
        let vocab = Vocab::from_tokens(["a", "b"]);
        let a = vocab.id("a");
        let load = parse_embeddings("a 1.0 2.0\nzzz 3 4\n", &vocab, 7, &mut rng()).unwrap();
        assert_eq!(load.table.shape(), &[4, 2]);
        assert_eq!(load.table.row(a), &[1.0, 2.0]);
        assert_eq!(load.found, 1);
        let b = load.table.row(vocab.id("b"));
        assert!(b.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn empty_file_falls_back_to_random() {
        let vocab = Vocab::from_tokens(["a"]);
        let load = parse_embeddings("", &vocab, 5, &mut rng()).unwrap();
        assert_eq!(load.table.shape(), &[3, 5]);
        assert_eq!(load.found, 0);
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let vocab = Vocab::from_tokens(["a"]);
        let err = parse_embeddings("a 1 2\nb 1 2 3\n", &vocab, 2, &mut rng()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
        let err = parse_embeddings("a 1 x\n", &vocab, 2, &mut rng()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let vocab = Vocab::from_tokens(["a"]);
        let err = load_pretrained_embeddings(Path::new("/nonexistent/vectors.txt"), &vocab, 2, &mut rng())
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
