//! Token embeddings from a GloVe-style text table, with hashed vectors for
//! tokens the table does not cover.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::hash_embeddings;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Default)]
pub struct TokenEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl TokenEmbedder {
    /// Hash-only embedder.
    pub fn hashed(dim: usize) -> Self {
        TokenEmbedder {
            dim,
            table: HashMap::new(),
        }
    }

    /// Parses `token v1 v2 ... vd` lines; every line must have the same width.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let width = *dim.get_or_insert(values.len());
            if values.is_empty() || values.len() != width {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    message: format!("expected {width} values, found {}", values.len()),
                });
            }
            table.insert(token.to_lowercase(), values);
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 0,
            message: "embedding table is empty".into(),
        })?;
        Ok(TokenEmbedder { dim, table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, tokens: &[String]) -> Matrix {
        let mut out = hash_embeddings(tokens, self.dim);
        for (r, t) in tokens.iter().enumerate() {
            if let Some(v) = self.table.get(&t.to_lowercase()) {
                out.row_mut(r).copy_from_slice(v);
            }
        }
        out
    }
}
