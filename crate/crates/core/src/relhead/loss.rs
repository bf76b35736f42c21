//! Composite objective: weighted object cross-entropy, predicate
//! cross-entropy and cosine embedding loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::params::LossWeights;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities inside the logarithm.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// mean object cross-entropy (unweighted)
    pub object: f64,
    /// mean predicate cross-entropy (unweighted)
    pub relationship: f64,
    /// mean `1 - cos` between predicted and target embeddings (unweighted)
    pub embedding: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn combine(object: f64, relationship: f64, embedding: f64, lambda: &LossWeights) -> Self {
        LossBreakdown {
            object,
            relationship,
            embedding,
            total: lambda.object * object + lambda.relationship * relationship + lambda.embedding * embedding,
        }
    }

    /// Mean of several breakdowns, term by term.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let mut acc = LossBreakdown::default();
        for l in items {
            acc.object += l.object;
            acc.relationship += l.relationship;
            acc.embedding += l.embedding;
            acc.total += l.total;
        }
        acc.object /= n;
        acc.relationship /= n;
        acc.embedding /= n;
        acc.total /= n;
        acc
    }
}

/// `-log(max(p[label], ε))`.
pub fn cross_entropy(probs: ArrayView1<'_, f64>, label: usize) -> f64 {
    -probs[label].max(CE_EPSILON).ln()
}

/// Gradient of [`cross_entropy`] with respect to the softmax logits. Zero
/// once the clamp is active, since the clamped loss is flat there.
pub fn cross_entropy_logit_grad(probs: ArrayView1<'_, f64>, label: usize) -> Array1<f64> {
    if probs[label] < CE_EPSILON {
        return Array1::zeros(probs.len());
    }
    let mut g = probs.to_owned();
    g[label] -= 1.0;
    g
}

/// `1 - cos(target, pred)`, unclamped. A zero prediction scores 1 (no
/// similarity information) rather than failing, so training stays total.
pub fn cosine_term(target: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>) -> f64 {
    let nu = target.dot(&target).sqrt();
    let nv = pred.dot(&pred).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    1.0 - target.dot(&pred) / (nu * nv)
}

/// Gradient of [`cosine_term`] with respect to `pred`; orthogonal to `pred`.
pub fn cosine_term_grad(target: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>) -> Array1<f64> {
    let nu = target.dot(&target).sqrt();
    let nv2 = pred.dot(&pred);
    let nv = nv2.sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Array1::zeros(pred.len());
    }
    let uv = target.dot(&pred);
    (&pred * (uv / (nu * nv * nv2))) - &(&target / (nu * nv))
}

/// Loss of one scene from its probabilities and targets. Object rows of
/// `object_probs` pair with `object_labels`; relationship rows pair with
/// `predicate_labels` and the target embedding rows.
pub fn composite_loss(
    object_labels: &[usize],
    predicate_labels: &[usize],
    target_embeddings: ArrayView2<'_, f64>,
    object_probs: ArrayView2<'_, f64>,
    predicate_probs: ArrayView2<'_, f64>,
    predicted_embeddings: ArrayView2<'_, f64>,
    lambda: &LossWeights,
) -> Result<LossBreakdown> {
    lambda.validate()?;
    let n = object_labels.len();
    let p = predicate_labels.len();
    if object_probs.nrows() != n
        || predicate_probs.nrows() != p
        || target_embeddings.nrows() != p
        || predicted_embeddings.nrows() != p
        || target_embeddings.ncols() != predicted_embeddings.ncols()
    {
        return Err(Error::Shape("loss inputs disagree in row count or width".into()));
    }
    if object_labels.iter().any(|&l| l >= object_probs.ncols())
        || predicate_labels.iter().any(|&l| l >= predicate_probs.ncols())
    {
        return Err(Error::Shape("label id outside the probability vector".into()));
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    let obj: f64 = (0..n).map(|i| cross_entropy(object_probs.row(i), object_labels[i])).sum();
    let rel: f64 = (0..p).map(|i| cross_entropy(predicate_probs.row(i), predicate_labels[i])).sum();
    let emb: f64 = (0..p)
        .map(|i| cosine_term(target_embeddings.row(i), predicted_embeddings.row(i)))
        .sum();
    Ok(LossBreakdown::combine(mean(obj, n), mean(rel, p), mean(emb, p), lambda))
}

/// Mean of [`composite_loss`] over a batch of scenes given as owned parts.
pub fn batch_loss(scenes: &[SceneLossInput], lambda: &LossWeights) -> Result<LossBreakdown> {
    let parts = scenes
        .iter()
        .map(|s| {
            composite_loss(
                &s.object_labels,
                &s.predicate_labels,
                s.target_embeddings.view(),
                s.object_probs.view(),
                s.predicate_probs.view(),
                s.predicted_embeddings.view(),
                lambda,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&parts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLossInput {
    pub object_labels: Vec<usize>,
    pub predicate_labels: Vec<usize>,
    pub target_embeddings: Array2<f64>,
    pub object_probs: Array2<f64>,
    pub predicate_probs: Array2<f64>,
    pub predicted_embeddings: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_case() {
        let o = array![[0.7, 0.2, 0.1], [0.25, 0.25, 0.5]];
        let r = array![[0.1, 0.9]];
        let u = array![[1.0, 0.0]];
        let v = array![[1.0, 1.0]];
        let l = composite_loss(&[0, 2], &[1], u.view(), o.view(), r.view(), v.view(), &LossWeights::default())
            .unwrap();
        let obj = (-(0.7f64).ln() - (0.5f64).ln()) / 2.0;
        let rel = -(0.9f64).ln();
        let emb = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        assert!((l.object - obj).abs() < 1e-15);
        assert!((l.relationship - rel).abs() < 1e-15);
        assert!((l.embedding - emb).abs() < 1e-15);
        assert!((l.total - (obj + rel + emb)).abs() < 1e-15);
        // term isolation
        let l = composite_loss(&[0, 2], &[1], u.view(), o.view(), r.view(), v.view(), &LossWeights::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!(l.total, l.object);
    }

    #[test]
    fn perfect_prediction_bound() {
        let eps = CE_EPSILON;
        let o = array![[1.0 - 2.0 * eps, eps, eps]];
        let r = array![[eps, 1.0 - eps]];
        let u = array![[0.3, -0.4]];
        let l = composite_loss(&[0], &[1], u.view(), o.view(), r.view(), u.view(), &LossWeights::default()).unwrap();
        let bound = |c: f64| -(1.0 - (c - 1.0) * eps).ln();
        assert!(l.total <= bound(3.0) + bound(2.0) + 1e-15);
        assert!(l.embedding.abs() < 1e-15);
        // exact zero probability is clamped, not infinite
        let z = array![[0.0, 1.0]];
        assert!((cross_entropy(z.row(0), 0) + eps.ln()).abs() < 1e-9);
    }

    #[test]
    fn cosine_gradient_matches_differences() {
        let u = array![0.3, -1.2, 0.5];
        let v = array![1.0, 0.4, -0.7];
        let g = cosine_term_grad(u.view(), v.view());
        let h = 1e-6;
        for i in 0..3 {
            let (mut vp, mut vm) = (v.clone(), v.clone());
            vp[i] += h;
            vm[i] -= h;
            let fd = (cosine_term(u.view(), vp.view()) - cosine_term(u.view(), vm.view())) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_isolated(
            logits in prop::collection::vec(-5.0..5.0f64, 6),
            u in prop::collection::vec(-1.0..1.0f64, 3),
            v in prop::collection::vec(-1.0..1.0f64, 3),
            a in 0usize..3, b in 0usize..3,
        ) {
            let sm = |xs: &[f64]| {
                let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| x / z).collect::<Vec<_>>()
            };
            let o = Array2::from_shape_vec((1, 3), sm(&logits[..3])).unwrap();
            let r = Array2::from_shape_vec((1, 3), sm(&logits[3..])).unwrap();
            let u = Array2::from_shape_vec((1, 3), u).unwrap();
            let v = Array2::from_shape_vec((1, 3), v).unwrap();
            let full = composite_loss(&[a], &[b], u.view(), o.view(), r.view(), v.view(), &LossWeights::default()).unwrap();
            prop_assert!(full.total >= 0.0);
            let only = composite_loss(&[a], &[b], u.view(), o.view(), r.view(), v.view(), &LossWeights::new(0.0, 0.0, 2.0)).unwrap();
            prop_assert_eq!(only.total, 2.0 * only.embedding);
        }

        #[test]
        fn cosine_gradient_orthogonal(
            u in prop::collection::vec(-3.0..3.0f64, 5),
            v in prop::collection::vec(-3.0..3.0f64, 5),
        ) {
            let (u, v) = (Array1::from(u), Array1::from(v));
            prop_assume!(u.dot(&u) > 1e-4 && v.dot(&v) > 1e-4);
            let g = cosine_term_grad(u.view(), v.view());
            prop_assert!(g.dot(&v).abs() <= 1e-8);
        }
    }
}
