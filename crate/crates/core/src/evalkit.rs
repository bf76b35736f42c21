//! Metrics: recall@K, top-k accuracy, Pred-Cls / SG-Cls drivers, long-tail
//! split, synonym report, and report rendering.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingTable};
use crate::error::{Error, Result};
use crate::sg::{SceneGraph, Vocabulary};

/// A scored (subject, predicate, object) prediction. Subject and object are
/// object indices within the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletPrediction {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
    pub confidence: f64,
}

/// Descending confidence, then ascending (subject, object, predicate).
pub fn rank_predictions(predictions: &[TripletPrediction]) -> Vec<TripletPrediction> {
    let mut out = predictions.to_vec();
    out.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| (a.subject, a.object, a.predicate).cmp(&(b.subject, b.object, b.predicate)))
    });
    out
}

/// Matched and total ground-truth edges among the top `k` predictions.
pub fn recall_counts(predictions: &[TripletPrediction], ground_truth: &SceneGraph, k: usize) -> Result<(usize, usize)> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if ground_truth.edges.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let top: HashSet<(usize, usize, usize)> = rank_predictions(predictions)
        .into_iter()
        .take(k)
        .map(|p| (p.subject, p.object, p.predicate))
        .collect();
    let gt: BTreeSet<(usize, usize, usize)> = ground_truth
        .edges
        .iter()
        .map(|e| (e.subject, e.object, e.predicate))
        .collect();
    let hit = gt.iter().filter(|t| top.contains(t)).count();
    Ok((hit, gt.len()))
}

pub fn recall_at_k(predictions: &[TripletPrediction], ground_truth: &SceneGraph, k: usize) -> Result<f64> {
    let (hit, total) = recall_counts(predictions, ground_truth, k)?;
    Ok(hit as f64 / total as f64)
}

/// Keep only the highest-ranked prediction per ordered pair.
pub fn apply_graph_constraint(predictions: &[TripletPrediction]) -> Vec<TripletPrediction> {
    let mut seen = HashSet::new();
    rank_predictions(predictions)
        .into_iter()
        .filter(|p| seen.insert((p.subject, p.object)))
        .collect()
}

/// Fraction of instances whose ground truth appears in the first `k` entries
/// of its ranked list. No instances gives 0.
pub fn topk_accuracy<T: PartialEq>(ranked: &[Vec<T>], ground_truth: &[T], k: usize) -> f64 {
    if ranked.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .zip(ground_truth)
        .filter(|(list, gt)| list.iter().take(k).any(|x| x == *gt))
        .count();
    hits as f64 / ranked.len() as f64
}

/// Model output for one scene, as consumed by the protocol drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScores {
    /// n × |objects|
    pub object_probs: Array2<f64>,
    pub pairs: Vec<PairScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub subject: usize,
    pub object: usize,
    pub predicate_probs: Array1<f64>,
    pub embedding: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub recall_k: Vec<usize>,
    pub topk: Vec<usize>,
    /// pool matches over all scenes instead of averaging per scene
    pub micro: bool,
    pub graph_constraint: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            recall_k: vec![50, 100],
            topk: vec![5, 10],
            micro: false,
            graph_constraint: true,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.recall_k.iter().chain(&self.topk).any(|&k| k == 0) {
            return Err(Error::Config("every K must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: BTreeMap<usize, f64>,
    pub topk: BTreeMap<usize, f64>,
    /// scenes contributing to recall
    pub scenes: usize,
    /// annotated edges
    pub instances: usize,
}

impl Metrics {
    pub fn report(&self, title: &str) -> Report {
        let mut rows = Vec::new();
        for (k, v) in &self.recall {
            rows.push(vec![format!("R@{k}"), fmt_metric(*v)]);
        }
        for (k, v) in &self.topk {
            rows.push(vec![format!("top-{k}"), fmt_metric(*v)]);
        }
        rows.push(vec!["scenes".into(), self.scenes.to_string()]);
        rows.push(vec!["instances".into(), self.instances.to_string()]);
        Report {
            title: title.to_string(),
            columns: vec!["metric".into(), "value".into()],
            rows,
        }
    }
}

pub fn fmt_metric(v: f64) -> String {
    format!("{v:.4}")
}

/// Predicate ids ordered by descending probability, ties by id.
pub fn ranked_predicates(probs: &Array1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Pred-Cls triplets: every predicate per pair, or the argmax only under the
/// graph constraint, scored by predicate probability.
pub fn predcls_triplets(scores: &SceneScores, graph_constraint: bool) -> Vec<TripletPrediction> {
    let mut out = Vec::new();
    for p in &scores.pairs {
        let all: Vec<TripletPrediction> = p
            .predicate_probs
            .iter()
            .enumerate()
            .map(|(r, &c)| TripletPrediction {
                subject: p.subject,
                object: p.object,
                predicate: r,
                confidence: c,
            })
            .collect();
        if graph_constraint {
            out.extend(apply_graph_constraint(&all).into_iter().take(1));
        } else {
            out.extend(all);
        }
    }
    out
}

/// A triplet together with the object labels it asserts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledTriplet {
    pub triplet: TripletPrediction,
    pub subject_label: usize,
    pub object_label: usize,
}

/// SG-Cls triplets: predicted labels are the object argmaxes and the
/// confidence is `p(subject) · p(object) · p(predicate)`.
pub fn sgcls_triplets(scores: &SceneScores, graph_constraint: bool) -> Vec<LabeledTriplet> {
    let labels: Vec<usize> = scores.object_probs.rows().into_iter().map(argmax).collect();
    let conf: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| scores.object_probs[[i, l]])
        .collect();
    predcls_triplets(scores, graph_constraint)
        .into_iter()
        .map(|t| LabeledTriplet {
            triplet: TripletPrediction {
                confidence: conf[t.subject] * conf[t.object] * t.confidence,
                ..t
            },
            subject_label: labels[t.subject],
            object_label: labels[t.object],
        })
        .collect()
}

/// Recall counts where a triplet also needs both endpoint labels right.
pub fn sgcls_recall_counts(predictions: &[LabeledTriplet], ground_truth: &SceneGraph, k: usize) -> Result<(usize, usize)> {
    let gt_label = |i: usize| ground_truth.objects.get(i).map(|o| o.label);
    let correct: Vec<TripletPrediction> = predictions
        .iter()
        .map(|p| {
            let ok = Some(p.subject_label) == gt_label(p.triplet.subject)
                && Some(p.object_label) == gt_label(p.triplet.object);
            // wrong labels keep their rank slot but can never match
            TripletPrediction {
                predicate: if ok { p.triplet.predicate } else { usize::MAX },
                ..p.triplet
            }
        })
        .collect();
    recall_counts(&correct, ground_truth, k)
}

fn aggregate(per_scene: &[(usize, usize)], micro: bool) -> f64 {
    if per_scene.is_empty() {
        return 0.0;
    }
    if micro {
        let hit: usize = per_scene.iter().map(|c| c.0).sum();
        let total: usize = per_scene.iter().map(|c| c.1).sum();
        hit as f64 / total as f64
    } else {
        per_scene.iter().map(|&(h, t)| h as f64 / t as f64).sum::<f64>() / per_scene.len() as f64
    }
}

fn check_lengths(scores: &[SceneScores], scenes: &[SceneGraph]) -> Result<()> {
    if scores.len() != scenes.len() {
        return Err(Error::Shape(format!("{} score sets for {} scenes", scores.len(), scenes.len())));
    }
    Ok(())
}

/// Top-k accuracy over annotated edges: ranked predicates of the matching
/// scored pair, or an empty list when the pair was not scored.
fn edge_topk(scores: &[SceneScores], scenes: &[SceneGraph], ks: &[usize]) -> (BTreeMap<usize, f64>, usize) {
    let mut ranked = Vec::new();
    let mut gt = Vec::new();
    for (s, g) in scores.iter().zip(scenes) {
        for e in &g.edges {
            let list = s
                .pairs
                .iter()
                .find(|p| p.subject == e.subject && p.object == e.object)
                .map(|p| ranked_predicates(&p.predicate_probs))
                .unwrap_or_default();
            ranked.push(list);
            gt.push(e.predicate);
        }
    }
    (ks.iter().map(|&k| (k, topk_accuracy(&ranked, &gt, k))).collect(), gt.len())
}

pub fn predcls_eval(scores: &[SceneScores], scenes: &[SceneGraph], options: &EvalOptions) -> Result<Metrics> {
    options.validate()?;
    check_lengths(scores, scenes)?;
    let mut recall = BTreeMap::new();
    let mut counted = 0;
    for &k in &options.recall_k {
        let mut per_scene = Vec::new();
        for (s, g) in scores.iter().zip(scenes) {
            if g.edges.is_empty() {
                continue;
            }
            per_scene.push(recall_counts(&predcls_triplets(s, options.graph_constraint), g, k)?);
        }
        counted = per_scene.len();
        recall.insert(k, aggregate(&per_scene, options.micro));
    }
    let (topk, instances) = edge_topk(scores, scenes, &options.topk);
    Ok(Metrics {
        recall,
        topk,
        scenes: counted,
        instances,
    })
}

pub fn sgcls_eval(scores: &[SceneScores], scenes: &[SceneGraph], options: &EvalOptions) -> Result<Metrics> {
    options.validate()?;
    check_lengths(scores, scenes)?;
    let mut recall = BTreeMap::new();
    let mut counted = 0;
    for &k in &options.recall_k {
        let mut per_scene = Vec::new();
        for (s, g) in scores.iter().zip(scenes) {
            if g.edges.is_empty() {
                continue;
            }
            per_scene.push(sgcls_recall_counts(&sgcls_triplets(s, options.graph_constraint), g, k)?);
        }
        counted = per_scene.len();
        recall.insert(k, aggregate(&per_scene, options.micro));
    }
    Ok(Metrics {
        recall,
        topk: BTreeMap::new(),
        scenes: counted,
        instances: scenes.iter().map(|g| g.edges.len()).sum(),
    })
}

/// Labels with count below `threshold` are rare; the rest are frequent.
/// Both lists keep vocabulary order.
pub fn longtail_split(vocab: &Vocabulary, threshold: u64) -> (Vec<String>, Vec<String>) {
    let mut rare = Vec::new();
    let mut frequent = Vec::new();
    for (label, count) in vocab.iter() {
        if count < threshold {
            rare.push(label.to_string());
        } else {
            frequent.push(label.to_string());
        }
    }
    (rare, frequent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymEntry {
    pub label: String,
    pub count: u64,
    pub synonyms: Vec<String>,
    /// summed vocabulary counts of the synonyms
    pub synonym_instances: u64,
}

/// Near-synonyms by phrase-embedding cosine. Labels without any known token
/// are skipped with a warning, or rejected when `strict`.
pub fn synonym_report(
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    similarity_threshold: f64,
    strict: bool,
) -> Result<Vec<SynonymEntry>> {
    let mut known: Vec<(String, u64, Vec<f64>)> = Vec::new();
    for (label, count) in vocab.iter() {
        let v = table.embed_phrase(label, strict)?;
        if v.oov {
            log::warn!("skipping label {label:?}: no token has an embedding");
            continue;
        }
        known.push((label.to_string(), count, v.vector));
    }
    let mut out = Vec::with_capacity(known.len());
    for (i, (label, count, v)) in known.iter().enumerate() {
        let mut synonyms = Vec::new();
        let mut instances = 0;
        for (j, (other, c, w)) in known.iter().enumerate() {
            if i != j && cosine(v, w)? >= similarity_threshold {
                synonyms.push(other.clone());
                instances += c;
            }
        }
        out.push(SynonymEntry {
            label: label.clone(),
            count: *count,
            synonyms,
            synonym_instances: instances,
        });
    }
    Ok(out)
}

/// Per-label long-tail and synonym table, most frequent first.
pub fn longtail_report(vocab: &Vocabulary, entries: &[SynonymEntry], threshold: u64) -> Report {
    let by_label: BTreeMap<&str, &SynonymEntry> = entries.iter().map(|e| (e.label.as_str(), e)).collect();
    let mut labels: Vec<(&str, u64)> = vocab.iter().collect();
    labels.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let rows = labels
        .into_iter()
        .map(|(l, c)| {
            let (n, inst) = by_label
                .get(l)
                .map(|e| (e.synonyms.len().to_string(), e.synonym_instances.to_string()))
                .unwrap_or_else(|| ("-".into(), "-".into()));
            let class = if c < threshold { "rare" } else { "frequent" };
            vec![l.to_string(), c.to_string(), class.into(), n, inst]
        })
        .collect();
    Report {
        title: format!("long tail (rare < {threshold})"),
        columns: ["label", "count", "class", "synonyms", "synonym_instances"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

/// A titled table rendered as TSV or aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len()).collect();
        for r in &self.rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                write!(s, "{c:<w$}").unwrap();
            }
            s.trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&self.columns));
        out.push('\n');
        let total: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Tsv => self.to_tsv(),
            ReportFormat::Table => self.to_table(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Tsv,
    #[default]
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "table" => Ok(ReportFormat::Table),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?} (tsv|table)"))),
        }
    }
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePredictions {
    pub scene: usize,
    pub triplets: Vec<TripletPrediction>,
}

#[derive(Serialize, Deserialize)]
struct PredictionsWire {
    scene: usize,
    triplets: Vec<(usize, usize, usize, f64)>,
}

pub fn predictions_to_jsonl(items: &[ScenePredictions]) -> String {
    let mut out = String::new();
    for p in items {
        let wire = PredictionsWire {
            scene: p.scene,
            triplets: p
                .triplets
                .iter()
                .map(|t| (t.subject, t.object, t.predicate, t.confidence))
                .collect(),
        };
        out.push_str(&serde_json::to_string(&wire).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_predictions<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<ScenePredictions>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: PredictionsWire = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if wire.triplets.iter().any(|t| !t.3.is_finite()) {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message: "non-finite confidence".into(),
            });
        }
        out.push(ScenePredictions {
            scene: wire.scene,
            triplets: wire
                .triplets
                .into_iter()
                .map(|(s, o, p, c)| TripletPrediction {
                    subject: s,
                    object: o,
                    predicate: p,
                    confidence: c,
                })
                .collect(),
        });
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<ScenePredictions>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(std::io::BufReader::new(f), &path.display().to_string())
}
