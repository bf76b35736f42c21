//! Plain gradient-descent trainer.
//!
//! Per-scene gradients are computed in parallel and summed in scene order,
//! so the result does not depend on the worker count.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{accumulate_gradients, trace_loss, SceneTarget};
use super::forward::{candidate_matrix, HeadConfig, PairInput, RelationHead, SceneInput};
use super::loss::LossBreakdown;
use super::params::{Dims, LossWeights, ModelParams};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::orm::{sample_with, top_candidates, CandidatePolicy, OrmTable};
use crate::sg::{BoundingBox, SceneInstance, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub r: usize,
    pub lambda: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    /// scenes per update; 0 means the whole dataset
    pub batch_size: usize,
    pub seed: u64,
    /// worker threads for per-scene gradients; 0 uses the rayon default
    pub threads: usize,
    pub init_scale: f64,
    pub policy: CandidatePolicy,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            r: 8,
            lambda: LossWeights::default(),
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 8,
            seed: 0,
            threads: 0,
            init_scale: 1.0,
            policy: CandidatePolicy::default(),
            head: HeadConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        self.policy.validate()?;
        if self.r == 0 {
            return Err(Error::Config("r must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finaliser folded over `parts`; gives independent per-item
/// streams from one seed.
pub fn stream_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub subject: usize,
    pub object: usize,
    pub feature: Array1<f64>,
    /// ground-truth predicate id, if the pair is an annotated edge
    pub predicate: Option<usize>,
}

/// A scene with features as matrices and labels resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene {
    pub features: Array2<f64>,
    pub boxes: Vec<BoundingBox>,
    pub object_labels: Vec<usize>,
    pub pairs: Vec<PreparedPair>,
}

impl PreparedScene {
    /// `all_pairs` keeps every ordered pair that has a feature; otherwise
    /// only annotated edges are kept.
    pub fn from_instance(instance: &SceneInstance, all_pairs: bool) -> Result<Self> {
        let n = instance.num_objects();
        if n == 0 {
            return Err(Error::EmptyScene);
        }
        if instance.object_features.len() != n {
            return Err(Error::Shape(format!(
                "scene has {n} objects but {} feature rows",
                instance.object_features.len()
            )));
        }
        let d = instance.object_features[0].len();
        if instance.object_features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("object feature rows differ in width".into()));
        }
        let features = Array2::from_shape_fn((n, d), |(i, j)| instance.object_features[i][j]);
        let mut pairs = Vec::new();
        for (&(s, o), f) in &instance.pair_features {
            if f.len() != d {
                return Err(Error::Shape(format!("pair ({s}, {o}) feature has width {}, expected {d}", f.len())));
            }
            let predicate = instance.graph.edge_for(s, o).map(|e| e.predicate);
            if predicate.is_some() || all_pairs {
                pairs.push(PreparedPair {
                    subject: s,
                    object: o,
                    feature: Array1::from(f.clone()),
                    predicate,
                });
            }
        }
        for e in &instance.graph.edges {
            if !instance.pair_features.contains_key(&(e.subject, e.object)) {
                return Err(Error::Shape(format!("edge ({}, {}) has no pair feature", e.subject, e.object)));
            }
        }
        Ok(PreparedScene {
            features,
            boxes: instance.boxes(),
            object_labels: instance.graph.objects.iter().map(|o| o.label).collect(),
            pairs,
        })
    }
}

/// Everything training needs besides hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub scenes: &'a [SceneInstance],
    pub objects: &'a Vocabulary,
    pub predicates: &'a Vocabulary,
    pub orm: &'a OrmTable,
    pub table: &'a EmbeddingTable,
}

/// How candidate phrases are chosen for a pair.
#[derive(Debug, Clone, Copy)]
pub enum CandidateMode {
    /// seeded draw of K from the top M (training)
    Sampled { seed: u64, epoch: u64 },
    /// first K of the top M (evaluation)
    Top,
}

/// Candidate embedding matrix for one ordered label pair.
pub fn pair_candidates(
    orm: &OrmTable,
    table: &EmbeddingTable,
    policy: &CandidatePolicy,
    subject: &str,
    object: &str,
    mode: CandidateMode,
    stream: &[u64],
) -> Result<Array2<f64>> {
    let phrases = match mode {
        CandidateMode::Top => top_candidates(orm, subject, object, policy),
        CandidateMode::Sampled { seed, epoch } => {
            let mut parts = vec![seed, epoch];
            parts.extend_from_slice(stream);
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&parts));
            sample_with(orm, subject, object, policy, &mut rng)?
        }
    };
    candidate_matrix(&phrases, table, false)
}

fn label<'v>(vocab: &'v Vocabulary, id: usize) -> Result<&'v str> {
    vocab
        .label(id)
        .ok_or_else(|| Error::Shape(format!("label id {id} outside a vocabulary of {}", vocab.len())))
}

/// Model input for a prepared scene. `labels` supplies the object labels used
/// for the prior lookup (ground truth or predicted).
pub fn scene_input(
    scene: &PreparedScene,
    labels: &[usize],
    objects: &Vocabulary,
    orm: &OrmTable,
    table: &EmbeddingTable,
    policy: &CandidatePolicy,
    mode: CandidateMode,
    scene_index: usize,
) -> Result<SceneInput> {
    let pairs = scene
        .pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let s = label(objects, labels[p.subject])?;
            let o = label(objects, labels[p.object])?;
            let candidates = pair_candidates(orm, table, policy, s, o, mode, &[scene_index as u64, k as u64])?;
            Ok(PairInput {
                subject: p.subject,
                object: p.object,
                feature: p.feature.clone(),
                candidates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneInput {
        features: scene.features.clone(),
        boxes: scene.boxes.clone(),
        pairs,
    })
}

/// Training target: annotated pairs only, in order.
pub fn scene_target(scene: &PreparedScene, predicates: &Vocabulary, table: &EmbeddingTable) -> Result<SceneTarget> {
    let labels: Vec<usize> = scene.pairs.iter().filter_map(|p| p.predicate).collect();
    let mut emb = Array2::zeros((labels.len(), table.dim()));
    for (i, &l) in labels.iter().enumerate() {
        let v = table.embed_phrase(label(predicates, l)?, true)?;
        emb.row_mut(i).assign(&Array1::from(v.vector));
    }
    Ok(SceneTarget {
        object_labels: scene.object_labels.clone(),
        predicate_labels: labels,
        predicate_embeddings: emb,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// mean scene loss per epoch, measured before each update
    pub epoch_losses: Vec<LossBreakdown>,
}

pub fn dims_for(data: &TrainData<'_>, r: usize) -> Result<Dims> {
    let d = data
        .scenes
        .iter()
        .find_map(|s| s.object_features.first().map(|f| f.len()))
        .ok_or_else(|| Error::Config("training scenes carry no features".into()))?;
    let dims = Dims {
        d,
        r,
        e: data.table.dim(),
        objects: data.objects.len(),
        predicates: data.predicates.len(),
    };
    dims.validate()?;
    Ok(dims)
}

pub fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Train from a seeded initialisation.
pub fn train(config: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = dims_for(data, config.r)?;
    let init = ModelParams::init(dims, config.lambda, config.init_scale, stream_seed(&[config.seed, 0x1417]))?;
    train_from(config, data, init)
}

/// Continue training from given parameters.
pub fn train_from(config: &TrainConfig, data: &TrainData<'_>, mut params: ModelParams) -> Result<TrainOutcome> {
    config.validate()?;
    if data.scenes.is_empty() {
        return Err(Error::EmptyScene);
    }
    params.lambda = config.lambda;
    let prepared = data
        .scenes
        .iter()
        .map(|s| PreparedScene::from_instance(s, false))
        .collect::<Result<Vec<_>>>()?;
    let targets = prepared
        .iter()
        .map(|s| scene_target(s, data.predicates, data.table))
        .collect::<Result<Vec<_>>>()?;
    let pool = build_pool(config.threads)?;
    let n = prepared.len();
    let batch = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[config.seed, 0x5eed]));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mode = CandidateMode::Sampled {
            seed: config.seed,
            epoch: epoch as u64,
        };
        let mut losses = vec![LossBreakdown::default(); n];
        for chunk in order.chunks(batch) {
            let head = RelationHead::new(&params, config.head);
            let weight = 1.0 / chunk.len() as f64;
            let results: Vec<Result<(LossBreakdown, ModelParams)>> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&i| {
                        let scene = &prepared[i];
                        let input = scene_input(
                            scene,
                            &scene.object_labels,
                            data.objects,
                            data.orm,
                            data.table,
                            &config.policy,
                            mode,
                            i,
                        )?;
                        let trace = head.forward(&input)?;
                        let loss = trace_loss(&trace, &targets[i], head.params)?;
                        let mut g = ModelParams::zeros(head.params.dims);
                        accumulate_gradients(&head, &trace, &targets[i], weight, &mut g)?;
                        Ok((loss, g))
                    })
                    .collect()
            });
            let mut total = ModelParams::zeros(params.dims);
            for (&i, r) in chunk.iter().zip(results) {
                let (loss, g) = r.map_err(|e| match e {
                    Error::NonFinite { tensor } => {
                        log::warn!("non-finite {tensor} in epoch {epoch}");
                        Error::Diverged { epoch }
                    }
                    other => other,
                })?;
                if !loss.total.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                losses[i] = loss;
                total.axpy(1.0, &g);
            }
            params.axpy(-config.learning_rate, &total);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
        let mean = LossBreakdown::mean(&losses);
        log::info!(
            "epoch {epoch}: loss {:.6} (object {:.4}, relationship {:.4}, embedding {:.4})",
            mean.total,
            mean.object,
            mean.relationship,
            mean.embedding
        );
        if !mean.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { params, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_seed_separates_streams() {
        let a = stream_seed(&[1, 2, 3]);
        assert_eq!(a, stream_seed(&[1, 2, 3]));
        assert_ne!(a, stream_seed(&[1, 3, 2]));
        assert_ne!(a, stream_seed(&[1, 2, 4]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
