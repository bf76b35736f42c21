//! Scene-graph domain types shared by every other module.
//!
//! Boxes are kept in center/size form `(x, y, w, h)`. Scenes are read and
//! written as one JSON document per line:
//!
//! ```text
//! {"objects":[{"label":0,"box":[x,y,w,h]}],"edges":[[s,o,p]],
//!  "object_features":[[...]],"pair_features":{"s,o":[...]}}
//! ```
//!
//! Both feature fields are optional on read.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        match b.violation() {
            Some(msg) => Err(Error::InvalidBox(msg)),
            None => Ok(b),
        }
    }

    fn violation(&self) -> Option<String> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Some(format!("non-finite coordinate in {self}"));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Some(format!("non-positive size in {self}"));
        }
        None
    }

    pub fn is_valid(&self) -> bool {
        self.violation().is_none()
    }

    /// `(x_min, y_min, x_max, y_max)`.
    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [self.x - hw, self.y - hh, self.x + hw, self.y + hh]
    }

    pub fn from_corners(c: [f64; 4]) -> Result<Self> {
        Self::new(
            (c[0] + c[2]) / 2.0,
            (c[1] + c[3]) / 2.0,
            c[2] - c[0],
            c[3] - c[1],
        )
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        let a = self.corners();
        let b = other.corners();
        a[0] <= b[0] && a[1] <= b[1] && a[2] >= b[2] && a[3] >= b[3]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(x={}, y={}, w={}, h={})", self.x, self.y, self.w, self.h)
    }
}

/// Smallest axis-aligned box covering both inputs.
pub fn union_box(a: &BoundingBox, b: &BoundingBox) -> Result<BoundingBox> {
    for bx in [a, b] {
        if let Some(msg) = bx.violation() {
            return Err(Error::InvalidBox(msg));
        }
    }
    // Containment returns the outer box unchanged so that nesting and
    // idempotence survive the corner round trip bit-for-bit.
    if a.contains(b) {
        return Ok(*a);
    }
    if b.contains(a) {
        return Ok(*b);
    }
    let (ca, cb) = (a.corners(), b.corners());
    BoundingBox::from_corners([
        ca[0].min(cb[0]),
        ca[1].min(cb[1]),
        ca[2].max(cb[2]),
        ca[3].max(cb[3]),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub label: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn edge_for(&self, subject: usize, object: usize) -> Option<&Edge> {
        self.edges
            .iter()
            .find(|e| e.subject == subject && e.object == object)
    }
}

/// One training or evaluation example: ground-truth graph plus ingested
/// object and pair feature vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneInstance {
    pub graph: SceneGraph,
    pub object_features: Vec<Vec<f64>>,
    pub pair_features: BTreeMap<(usize, usize), Vec<f64>>,
}

impl SceneInstance {
    pub fn num_objects(&self) -> usize {
        self.graph.objects.len()
    }

    pub fn has_features(&self) -> bool {
        !self.object_features.is_empty()
    }

    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.graph.objects.iter().map(|o| o.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Check every structural invariant of a scene. Features are optional; when
/// present they must be complete and uniform.
pub fn validate_scene(instance: &SceneInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: String, rule: &str| {
        out.push(Violation {
            field,
            rule: rule.to_string(),
        })
    };
    let n = instance.num_objects();

    for (i, obj) in instance.graph.objects.iter().enumerate() {
        let b = &obj.bbox;
        if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
            push(format!("objects[{i}].box"), "coordinates must be finite");
        } else if b.w <= 0.0 || b.h <= 0.0 {
            push(format!("objects[{i}].box"), "width and height must be > 0");
        }
    }

    let mut seen = HashMap::new();
    for (k, e) in instance.graph.edges.iter().enumerate() {
        if e.subject >= n || e.object >= n {
            push(format!("edges[{k}]"), "object index out of range");
            continue;
        }
        if e.subject == e.object {
            push(format!("edges[{k}]"), "subject index equals object index");
        }
        if let Some(first) = seen.insert((e.subject, e.object), k) {
            push(
                format!("edges[{k}]"),
                &format!("duplicate (subject, object) pair, first at edges[{first}]"),
            );
        }
    }

    if instance.has_features() {
        if instance.object_features.len() != n {
            push(
                "object_features".to_string(),
                "one feature vector per object required",
            );
        }
        let dim = instance.object_features[0].len();
        for (i, f) in instance.object_features.iter().enumerate() {
            if f.len() != dim {
                push(format!("object_features[{i}]"), "non-uniform dimension");
            } else if !f.iter().all(|v| v.is_finite()) {
                push(format!("object_features[{i}]"), "non-finite entry");
            }
        }
        for (&(s, o), f) in &instance.pair_features {
            if s >= n || o >= n || s == o {
                push(format!("pair_features[{s},{o}]"), "invalid ordered pair");
            } else if f.len() != dim {
                push(format!("pair_features[{s},{o}]"), "non-uniform dimension");
            }
        }
    } else if !instance.pair_features.is_empty() {
        push(
            "object_features".to_string(),
            "pair features present without object features",
        );
    }
    out
}

/// Ordered label set with per-label occurrence counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    labels: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(labels: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if labels.len() != counts.len() {
            return Err(Error::InvalidArgument(
                "label and count lists differ in length".into(),
            ));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate label {l:?}")));
            }
        }
        Ok(Vocabulary {
            labels,
            counts,
            index,
        })
    }

    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let counts = vec![0; labels.len()];
        Self::new(labels, counts)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.labels
            .iter()
            .map(String::as_str)
            .zip(self.counts.iter().copied())
    }

    /// One label per line, optionally followed by a tab and a count.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut labels = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (label, count) = match line.split_once('\t') {
                Some((l, c)) => {
                    let c = c.trim().parse::<u64>().map_err(|e| Error::Parse {
                        source_name: source_name.to_string(),
                        line: i + 1,
                        message: format!("bad count: {e}"),
                    })?;
                    (l.trim(), c)
                }
                None => (line.trim(), 0),
            };
            labels.push(label.to_string());
            counts.push(count);
        }
        Self::new(labels, counts).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, c) in self.iter() {
            s.push_str(&format!("{l}\t{c}\n"));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct WireObject {
    label: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct WireScene {
    objects: Vec<WireObject>,
    #[serde(default)]
    edges: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    object_features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pair_features: BTreeMap<String, Vec<f64>>,
}

fn parse_pair_key(key: &str) -> Option<(usize, usize)> {
    let (s, o) = key.split_once(',')?;
    Some((s.trim().parse().ok()?, o.trim().parse().ok()?))
}

impl SceneInstance {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let wire: WireScene = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let objects = wire
            .objects
            .into_iter()
            .map(|o| SceneObject {
                label: o.label,
                bbox: BoundingBox {
                    x: o.bbox[0],
                    y: o.bbox[1],
                    w: o.bbox[2],
                    h: o.bbox[3],
                },
            })
            .collect();
        let edges = wire
            .edges
            .into_iter()
            .map(|[s, o, p]| Edge {
                subject: s,
                object: o,
                predicate: p,
            })
            .collect();
        let mut pair_features = BTreeMap::new();
        for (k, v) in wire.pair_features {
            let key = parse_pair_key(&k).ok_or_else(|| format!("bad pair key {k:?}"))?;
            pair_features.insert(key, v);
        }
        Ok(SceneInstance {
            graph: SceneGraph { objects, edges },
            object_features: wire.object_features,
            pair_features,
        })
    }

    pub fn to_json(&self) -> String {
        let wire = WireScene {
            objects: self
                .graph
                .objects
                .iter()
                .map(|o| WireObject {
                    label: o.label,
                    bbox: o.bbox.as_array(),
                })
                .collect(),
            edges: self
                .graph
                .edges
                .iter()
                .map(|e| [e.subject, e.object, e.predicate])
                .collect(),
            object_features: self.object_features.clone(),
            pair_features: self
                .pair_features
                .iter()
                .map(|(&(s, o), v)| (format!("{s},{o}"), v.clone()))
                .collect(),
        };
        serde_json::to_string(&wire).expect("scene serialization cannot fail")
    }
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneInstance>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scenes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene = SceneInstance::from_json(&line).map_err(|message| Error::Parse {
            source_name: path.display().to_string(),
            line: i + 1,
            message,
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn write_scenes(path: &Path, scenes: &[SceneInstance]) -> Result<()> {
    let mut out = Vec::new();
    for s in scenes {
        writeln!(out, "{}", s.to_json()).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn two_object_scene() -> SceneInstance {
        let mut pair_features = BTreeMap::new();
        pair_features.insert((0, 1), vec![0.5, 0.5]);
        SceneInstance {
            graph: SceneGraph {
                objects: vec![
                    SceneObject {
                        label: 0,
                        bbox: bx(1.0, 1.0, 2.0, 2.0),
                    },
                    SceneObject {
                        label: 1,
                        bbox: bx(4.0, 1.0, 2.0, 2.0),
                    },
                ],
                edges: vec![Edge {
                    subject: 0,
                    object: 1,
                    predicate: 2,
                }],
            },
            object_features: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            pair_features,
        }
    }

    #[test]
    fn union_of_side_by_side_boxes() {
        let u = union_box(&bx(1.0, 1.0, 2.0, 2.0), &bx(4.0, 1.0, 2.0, 2.0)).unwrap();
        assert_eq!(u, bx(2.5, 1.0, 5.0, 2.0));
    }

    #[test]
    fn union_idempotent_and_nested() {
        let a = bx(0.1, 0.7, 0.3, 1.9);
        assert_eq!(union_box(&a, &a).unwrap(), a);
        let inner = bx(0.2, 0.8, 0.05, 0.1);
        assert_eq!(union_box(&a, &inner).unwrap(), a);
        assert_eq!(union_box(&inner, &a).unwrap(), a);
    }

    #[test]
    fn union_rejects_non_finite() {
        let bad = BoundingBox {
            x: f64::NAN,
            y: 0.0,
            w: 1.0,
            h: 1.0,
        };
        assert!(matches!(
            union_box(&bad, &bx(0.0, 0.0, 1.0, 1.0)),
            Err(Error::InvalidBox(_))
        ));
    }

    #[test]
    fn validate_well_formed() {
        assert!(validate_scene(&two_object_scene()).is_empty());
    }

    #[test]
    fn validate_self_loop() {
        let mut s = two_object_scene();
        s.graph.edges[0].object = 0;
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].rule.contains("subject index equals"));
    }

    #[test]
    fn validate_zero_width() {
        let mut s = two_object_scene();
        s.graph.objects[1].bbox.w = 0.0;
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "objects[1].box");
    }

    #[test]
    fn validate_duplicate_edge_and_range() {
        let mut s = two_object_scene();
        s.graph.edges.push(s.graph.edges[0]);
        s.graph.edges.push(Edge {
            subject: 0,
            object: 9,
            predicate: 0,
        });
        assert_eq!(validate_scene(&s).len(), 2);
    }

    #[test]
    fn scene_json_roundtrip_and_optional_features() {
        let s = two_object_scene();
        let text = s.to_json();
        assert_eq!(SceneInstance::from_json(&text).unwrap(), s);

        let bare = r#"{"objects":[{"label":3,"box":[1,2,3,4]}],"edges":[]}"#;
        let parsed = SceneInstance::from_json(bare).unwrap();
        assert!(!parsed.has_features());
        assert!(validate_scene(&parsed).is_empty());
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::from_labels(vec!["a".into(), "a".into()]).is_err());
        let v = Vocabulary::parse("man\t3\nhelmet\t1\n", "t").unwrap();
        assert_eq!(v.id("helmet"), Some(1));
        assert_eq!(v.count(0), 3);
        assert_eq!(Vocabulary::parse(&v.to_text(), "t").unwrap(), v);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.01..50.0f64, 0.01..50.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, w, h))
    }

    fn close(a: &BoundingBox, b: &BoundingBox) -> bool {
        a.as_array()
            .iter()
            .zip(b.as_array())
            .all(|(p, q)| (p - q).abs() <= 1e-9 * (1.0 + p.abs().max(q.abs())))
    }

    proptest! {
        #[test]
        fn union_commutative(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(union_box(&a, &b).unwrap(), union_box(&b, &a).unwrap());
        }

        #[test]
        fn union_idempotent(a in arb_box()) {
            prop_assert_eq!(union_box(&a, &a).unwrap(), a);
        }

        #[test]
        fn union_associative(a in arb_box(), b in arb_box(), c in arb_box()) {
            let left = union_box(&union_box(&a, &b).unwrap(), &c).unwrap();
            let right = union_box(&a, &union_box(&b, &c).unwrap()).unwrap();
            prop_assert!(close(&left, &right), "{} vs {}", left, right);
        }

        #[test]
        fn union_covers_inputs(a in arb_box(), b in arb_box()) {
            let u = union_box(&a, &b).unwrap();
            let cu = u.corners();
            // exact on the corner extremes; center/size conversion may move a
            // corner by a few ulps
            let tol = 1e-12 * (1.0 + cu.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            for c in [a.corners(), b.corners()] {
                prop_assert!(c[0] >= cu[0] - tol && c[1] >= cu[1] - tol);
                prop_assert!(c[2] <= cu[2] + tol && c[3] <= cu[3] + tol);
            }
        }
    }
}
