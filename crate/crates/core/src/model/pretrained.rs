use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::{Array, Scalar};

/// How many vocabulary words received a pre-trained vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub matched: usize,
    pub vocab_size: usize,
}

impl Coverage {
    pub fn ratio(&self) -> f64 {
        if self.vocab_size == 0 {
            0.0
        } else {
            self.matched as f64 / self.vocab_size as f64
        }
    }
}

/// Overwrites rows of `table` (`[vocab.table_size(), dim]`) for vocabulary
/// words found in a text vector file. Lines are `word v1 ... v_dim`; an
/// optional first line `count dim` is checked against `dim`. Row 0 and
/// words absent from the file are left untouched; the first vector listed
/// for a word wins.
pub fn load_pretrained_embeddings<F: Scalar>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    table: &mut Array<F>,
) -> Result<Coverage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pretrained(BufReader::new(file), vocab, table).map_err(|e| match e {
        Error::Parse { location, message } => Error::parse(format!("{}:{location}", path.display()), message),
        other => other,
    })
}

pub(crate) fn read_pretrained<F: Scalar>(
    reader: impl BufRead,
    vocab: &Vocabulary,
    table: &mut Array<F>,
) -> Result<Coverage> {
    assert_eq!(table.rows(), vocab.table_size(), "table rows must match the vocabulary");
    let dim = table.cols();
    let rows: HashMap<&str, usize> = vocab.words().iter().enumerate().map(|(i, w)| (w.as_str(), i + 2)).collect();
    let mut filled = vec![false; table.rows()];
    let mut matched = 0;
    for (i, line) in reader.lines().enumerate() {
        let location = format!("line {}", i + 1);
        let line = line.map_err(|e| Error::parse(location.clone(), e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 {
            if let (Ok(_), Ok(file_dim)) = (word.parse::<usize>(), values[0].parse::<usize>()) {
                if file_dim != dim {
                    return Err(Error::Validation(format!(
                        "vector file has dimension {file_dim}, embedding table has {dim}"
                    )));
                }
                continue;
            }
        }
        if values.len() != dim {
            return Err(Error::Validation(format!(
                "{location}: vector for {word:?} has {} values, expected {dim}",
                values.len()
            )));
        }
        let Some(&row) = rows.get(word) else { continue };
        if filled[row] {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f64>().map(F::from_f64_lossy))
            .collect::<std::result::Result<Vec<F>, _>>()
            .map_err(|e| Error::parse(location.clone(), format!("bad value for {word:?}: {e}")))?;
        table.row_mut(row).copy_from_slice(&parsed);
        filled[row] = true;
        matched += 1;
    }
    Ok(Coverage { matched, vocab_size: vocab.len() })
}
