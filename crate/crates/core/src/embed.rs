//! Word embeddings in the plain-text `token v1 v2 ... ve` format, phrase
//! pooling by mean, and cosine similarity.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

/// Pooled phrase vector. `oov` is set when no token was found (lenient mode
/// then returns the zero vector).
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseVector {
    pub vector: Vec<f64>,
    pub oov: bool,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Insert or replace a token vector.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {token:?} has {} entries, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: format!("embedding {token:?}"),
            });
        }
        match self.index.get(token) {
            Some(&i) => self.vectors[i] = vector,
            None => {
                self.index.insert(token.to_string(), self.tokens.len());
                self.tokens.push(token.to_string());
                self.vectors.push(vector);
            }
        }
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| err(format!("non-numeric entry {f:?}")))
                })
                .collect::<Result<_>>()?;
            // word2vec-style "count dim" header
            if i == 0 && values.len() == 1 && token.parse::<u64>().is_ok() && values[0].fract() == 0.0 {
                continue;
            }
            if values.is_empty() {
                return Err(err(format!("token {token:?} has no vector")));
            }
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            if values.len() != t.dim {
                return Err(err(format!(
                    "expected {} values, found {}",
                    t.dim,
                    values.len()
                )));
            }
            t.insert(token, values).map_err(|e| err(e.to_string()))?;
        }
        Ok(table.unwrap_or_default())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, v) in self.tokens.iter().zip(&self.vectors) {
            out.push_str(t);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Mean of the vectors of the phrase's in-vocabulary tokens.
    pub fn embed_phrase(&self, phrase: &str, strict: bool) -> Result<PhraseVector> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        // canonical summation order: reorderings give bit-identical means
        let mut toks: Vec<&str> = phrase.split_whitespace().collect();
        toks.sort_unstable();
        for tok in toks {
            if let Some(v) = self.get(tok) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                n += 1;
            }
        }
        if n == 0 {
            if strict {
                return Err(Error::OutOfVocabulary(phrase.to_string()));
            }
            return Ok(PhraseVector {
                vector: acc,
                oov: true,
            });
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(PhraseVector {
            vector: acc,
            oov: false,
        })
    }
}

pub fn embed_phrase(table: &EmbeddingTable, phrase: &str) -> Result<Vec<f64>> {
    table.embed_phrase(phrase, true).map(|p| p.vector)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cosine_loss(u: &[f64], v: &[f64]) -> Result<f64> {
    cosine(u, v).map(|c| 1.0 - c)
}
