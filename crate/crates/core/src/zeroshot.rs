//! Cosine-similarity classification of relationship embeddings against an
//! arbitrary label set, including labels never used as training targets.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::relhead::softmax;

/// One row per label: the pooled phrase embedding of that label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddingMatrix {
    labels: Vec<String>,
    matrix: Array2<f64>,
}

impl LabelEmbeddingMatrix {
    pub fn new(labels: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        if labels.len() != matrix.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} embedding rows",
                labels.len(),
                matrix.nrows()
            )));
        }
        for (label, row) in labels.iter().zip(matrix.rows()) {
            if row.iter().all(|&x| x == 0.0) {
                log::debug!("label {label:?} has a zero embedding");
                return Err(Error::ZeroVector);
            }
        }
        Ok(LabelEmbeddingMatrix { labels, matrix })
    }

    /// Embed every label phrase; unknown labels are an error.
    pub fn from_labels(labels: &[String], table: &EmbeddingTable) -> Result<Self> {
        let mut matrix = Array2::zeros((labels.len(), table.dim()));
        for (i, l) in labels.iter().enumerate() {
            let v = table.embed_phrase(l, true)?;
            matrix.row_mut(i).assign(&Array1::from(v.vector));
        }
        Self::new(labels.to_vec(), matrix)
    }

    /// Label list file: one label per line, optional `\tcount` suffix.
    pub fn load(labels: &Path, table: &EmbeddingTable) -> Result<Self> {
        let vocab = crate::sg::Vocabulary::load(labels)?;
        Self::from_labels(vocab.labels(), table)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Cosine similarity of `v_hat` with every label row.
pub fn label_similarities(v_hat: ArrayView1<'_, f64>, labels: &LabelEmbeddingMatrix) -> Result<Array1<f64>> {
    if v_hat.len() != labels.dim() {
        return Err(Error::Shape(format!(
            "embedding of length {} against labels of dimension {}",
            v_hat.len(),
            labels.dim()
        )));
    }
    let nv = v_hat.dot(&v_hat).sqrt();
    if nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(labels.matrix.rows().into_iter().map(|row| row.dot(&v_hat) / (row.dot(&row).sqrt() * nv)).collect())
}

/// Softmax over cosine similarities divided by `temperature`.
pub fn predict_unseen_with_temperature(
    v_hat: ArrayView1<'_, f64>,
    labels: &LabelEmbeddingMatrix,
    temperature: f64,
) -> Result<Array1<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    let cos = label_similarities(v_hat, labels)?;
    Ok(softmax((cos / temperature).view()))
}

pub fn predict_unseen(v_hat: ArrayView1<'_, f64>, labels: &LabelEmbeddingMatrix) -> Result<Array1<f64>> {
    predict_unseen_with_temperature(v_hat, labels, 1.0)
}

/// Indices of the `k` most probable labels, descending, ties by label string.
pub fn topk_indices(probs: ArrayView1<'_, f64>, labels: &[String], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then_with(|| labels[a].cmp(&labels[b])));
    idx.truncate(k);
    idx
}

/// The `k` most probable labels; `k` beyond the label count returns all.
pub fn topk(probs: ArrayView1<'_, f64>, labels: &LabelEmbeddingMatrix, k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    Ok(topk_indices(probs, &labels.labels, k)
        .into_iter()
        .map(|i| labels.labels[i].clone())
        .collect())
}
