//! Central finite-difference check of the analytic gradients.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::backward::{batch_loss, gradients, SceneTarget};
use super::forward::{HeadConfig, PairInput, RelationHead, SceneInput};
use super::params::{Dims, ModelParams};
use crate::error::Result;
use crate::sg::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    /// `|a - n| / max(|a|, |n|, floor)` with Euclidean norms over the tensor
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// Compare analytic and numeric gradients for every tensor. `floor` keeps
/// the relative error meaningful for tensors whose gradient is ~0.
pub fn check_gradients(
    params: &ModelParams,
    config: HeadConfig,
    batch: &[(SceneInput, SceneTarget)],
    step: f64,
    floor: f64,
) -> Result<Vec<TensorCheck>> {
    let head = RelationHead::new(params, config);
    let (_, analytic) = gradients(&head, batch)?;
    let mut probe = params.clone();
    let mut numeric = ModelParams::zeros(params.dims);
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let orig = probe.tensors()[ti].data[k];
            let eval = |value: f64, probe: &mut ModelParams| -> Result<f64> {
                probe.tensors_mut()[ti].1.data[k] = value;
                let l = batch_loss(&RelationHead::new(probe, config), batch)?;
                Ok(l.total)
            };
            let plus = eval(orig + step, &mut probe)?;
            let minus = eval(orig - step, &mut probe)?;
            probe.tensors_mut()[ti].1.data[k] = orig;
            numeric.tensors_mut()[ti].1.data[k] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(analytic
        .tensors()
        .iter()
        .zip(numeric.tensors())
        .map(|(a, n)| {
            let diff: f64 = a.data.iter().zip(n.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let na = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.data.iter().map(|x| x * x).sum::<f64>().sqrt();
            TensorCheck {
                name: a.name,
                relative_error: diff / na.max(nn).max(floor),
                analytic_norm: na,
            }
        })
        .collect())
}

/// Random scene with every ordered pair annotated, for gradient checks.
/// Boxes lie in the unit square; candidate counts cycle through 0..=3 so the
/// empty-candidate passthrough is exercised too.
pub fn random_problem(dims: Dims, objects: usize, seed: u64) -> (SceneInput, SceneTarget) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let features = Array2::from_shape_fn((objects, dims.d), |_| normal(&mut rng));
    let boxes: Vec<BoundingBox> = (0..objects)
        .map(|_| {
            BoundingBox::new(
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.5),
                rng.random_range(0.1..0.5),
            )
            .expect("valid box")
        })
        .collect();
    let mut pairs = Vec::new();
    let mut predicate_labels = Vec::new();
    for s in 0..objects {
        for o in 0..objects {
            if s == o {
                continue;
            }
            let k = pairs.len() % 4;
            pairs.push(PairInput {
                subject: s,
                object: o,
                feature: Array1::from_shape_fn(dims.d, |_| normal(&mut rng)),
                candidates: Array2::from_shape_fn((k, dims.e), |_| normal(&mut rng)),
            });
            predicate_labels.push(rng.random_range(0..dims.predicates));
        }
    }
    let predicate_embeddings = Array2::from_shape_fn((pairs.len(), dims.e), |_| normal(&mut rng));
    let object_labels = (0..objects).map(|_| rng.random_range(0..dims.objects)).collect();
    (
        SceneInput { features, boxes, pairs },
        SceneTarget {
            object_labels,
            predicate_labels,
            predicate_embeddings,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relhead::forward::Ablation;
    use crate::relhead::params::LossWeights;

    fn dims() -> Dims {
        Dims { d: 4, r: 3, e: 3, objects: 3, predicates: 4 }
    }

    #[test]
    fn gradients_match_differences() {
        for (i, ablation) in Ablation::cumulative_rows().into_iter().enumerate() {
            let params = ModelParams::init(dims(), LossWeights::default(), 1.0, i as u64).unwrap();
            let batch = vec![random_problem(dims(), 3, 10 + i as u64), random_problem(dims(), 2, 20 + i as u64)];
            let config = HeadConfig { attention_mean: i % 2 == 0, ablation };
            for c in check_gradients(&params, config, &batch, 1e-5, 1e-7).unwrap() {
                assert!(c.relative_error <= 1e-5, "{ablation:?} {}: {}", c.name, c.relative_error);
            }
        }
    }

    #[test]
    fn zero_lambda_zero_gradient() {
        let params = ModelParams::init(dims(), LossWeights::new(0.0, 0.0, 0.0), 1.0, 3).unwrap();
        let batch = vec![random_problem(dims(), 3, 4)];
        let head = RelationHead::new(&params, HeadConfig::default());
        let (_, g) = gradients(&head, &batch).unwrap();
        assert!(g.tensors().iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
    }
}
