//! Scoring scenes with a trained head under the Pred-Cls and SG-Cls
//! protocols, and zero-shot classification of annotated pairs.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evalkit::{PairScores, SceneScores, TripletPrediction};
use crate::orm::{CandidatePolicy, OrmTable};
use crate::relhead::train::{build_pool, scene_input, CandidateMode, PreparedScene};
use crate::relhead::{HeadConfig, ModelParams, RelationHead, SceneInput};
use crate::sg::{SceneInstance, Vocabulary};
use crate::zeroshot::{predict_unseen_with_temperature, topk_indices, LabelEmbeddingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// ground-truth object labels drive the text prior
    PredCls,
    /// predicted object labels drive the text prior
    SgCls,
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predcls" => Ok(Protocol::PredCls),
            "sgcls" => Ok(Protocol::SgCls),
            other => Err(Error::InvalidArgument(format!("unknown protocol {other:?} (predcls|sgcls)"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    pub params: &'a ModelParams,
    pub head: HeadConfig,
    pub policy: CandidatePolicy,
    pub objects: &'a Vocabulary,
    pub orm: &'a OrmTable,
    pub table: &'a EmbeddingTable,
}

impl<'a> Predictor<'a> {
    fn relation_head(&self) -> RelationHead<'a> {
        RelationHead::new(self.params, self.head)
    }

    /// Score every ordered pair that carries a feature.
    pub fn score_scene(&self, instance: &SceneInstance, protocol: Protocol) -> Result<SceneScores> {
        let scene = PreparedScene::from_instance(instance, true)?;
        let head = self.relation_head();
        let labels = match protocol {
            Protocol::PredCls => scene.object_labels.clone(),
            Protocol::SgCls => {
                let objects_only = SceneInput {
                    features: scene.features.clone(),
                    boxes: scene.boxes.clone(),
                    pairs: Vec::new(),
                };
                let probs = head.forward(&objects_only)?.objects.probs;
                argmax_rows(&probs)
            }
        };
        let input = scene_input(
            &scene,
            &labels,
            self.objects,
            self.orm,
            self.table,
            &self.policy,
            CandidateMode::Top,
            0,
        )?;
        let trace = head.forward(&input)?;
        Ok(SceneScores {
            object_probs: trace.objects.probs,
            pairs: trace
                .pairs
                .into_iter()
                .map(|p| PairScores {
                    subject: p.subject,
                    object: p.object,
                    predicate_probs: p.probs,
                    embedding: p.embedding,
                })
                .collect(),
        })
    }

    /// Score scenes on `threads` workers; output order follows input order.
    pub fn score_all(&self, scenes: &[SceneInstance], protocol: Protocol, threads: usize) -> Result<Vec<SceneScores>> {
        let pool = build_pool(threads)?;
        pool.install(|| scenes.par_iter().map(|s| self.score_scene(s, protocol)).collect())
    }
}

fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &x) in r.iter().enumerate() {
                if x > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Triplets for the predictions file: the argmax predicate per pair.
pub fn argmax_triplets(scores: &SceneScores) -> Vec<TripletPrediction> {
    crate::evalkit::predcls_triplets(scores, true)
}

/// Zero-shot result for one annotated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotInstance {
    pub scene: usize,
    pub subject: usize,
    pub object: usize,
    pub truth: String,
    pub ranked: Vec<String>,
}

/// Rank all labels for every annotated edge by cosine softmax. `truth_labels`
/// resolves the scenes' predicate ids.
pub fn zeroshot_rank(
    scores: &[SceneScores],
    scenes: &[SceneInstance],
    truth_labels: &Vocabulary,
    labels: &LabelEmbeddingMatrix,
    temperature: f64,
    keep: usize,
) -> Result<Vec<ZeroShotInstance>> {
    let mut out = Vec::new();
    for (si, (sc, inst)) in scores.iter().zip(scenes).enumerate() {
        for e in &inst.graph.edges {
            let pair = sc
                .pairs
                .iter()
                .find(|p| p.subject == e.subject && p.object == e.object)
                .ok_or_else(|| Error::Shape(format!("scene {si}: edge ({}, {}) was not scored", e.subject, e.object)))?;
            let probs = predict_unseen_with_temperature(pair.embedding.view(), labels, temperature)?;
            let ranked = topk_indices(probs.view(), labels.labels(), keep)
                .into_iter()
                .map(|i| labels.labels()[i].clone())
                .collect();
            let truth = truth_labels
                .label(e.predicate)
                .ok_or_else(|| Error::Shape(format!("predicate id {} outside the label list", e.predicate)))?;
            out.push(ZeroShotInstance {
                scene: si,
                subject: e.subject,
                object: e.object,
                truth: truth.to_string(),
                ranked,
            });
        }
    }
    Ok(out)
}

/// Top-k accuracy over zero-shot instances.
pub fn zeroshot_accuracy(instances: &[ZeroShotInstance], k: usize) -> f64 {
    let ranked: Vec<Vec<String>> = instances.iter().map(|i| i.ranked.clone()).collect();
    let truth: Vec<String> = instances.iter().map(|i| i.truth.clone()).collect();
    crate::evalkit::topk_accuracy(&ranked, &truth, k)
}
