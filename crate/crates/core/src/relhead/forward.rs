use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::attention::{attend_cached, softmax, softmax_rows, AttendCache};
use super::params::ModelParams;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::sg::BoundingBox;

/// Mechanism switches mirroring the incremental ablation rows. A disabled
/// mechanism becomes a passthrough (or a zero code) without changing shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub object_attention: bool,
    pub geometric_encoding_objects: bool,
    pub geometric_encoding_relationships: bool,
    pub subject_object_attention: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::all_on()
    }
}

impl Ablation {
    pub fn all_on() -> Self {
        Ablation {
            object_attention: true,
            geometric_encoding_objects: true,
            geometric_encoding_relationships: true,
            subject_object_attention: true,
        }
    }

    pub fn all_off() -> Self {
        Ablation {
            object_attention: false,
            geometric_encoding_objects: false,
            geometric_encoding_relationships: false,
            subject_object_attention: false,
        }
    }

    /// The four cumulative configurations: object attention only, then
    /// adding object geometry, relationship geometry and subject-object
    /// attention in turn.
    pub fn cumulative_rows() -> [Ablation; 4] {
        let mut rows = [Ablation::all_off(); 4];
        for (i, row) in rows.iter_mut().enumerate() {
            row.object_attention = true;
            row.geometric_encoding_objects = i >= 1;
            row.geometric_encoding_relationships = i >= 2;
            row.subject_object_attention = i >= 3;
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Divide the attention vector by the number of context rows.
    pub attention_mean: bool,
    pub ablation: Ablation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            attention_mean: true,
            ablation: Ablation::all_on(),
        }
    }
}

/// One ordered object pair to classify.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub subject: usize,
    pub object: usize,
    /// ingested union-box visual feature, length d
    pub feature: Array1<f64>,
    /// candidate predicate embeddings from the text prior, k × e (k may be 0)
    pub candidates: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    /// n × d
    pub features: Array2<f64>,
    pub boxes: Vec<BoundingBox>,
    pub pairs: Vec<PairInput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrace {
    /// box rows `[x, y, w, h]`, n × 4
    pub boxes: Array2<f64>,
    /// `[F, B·W_spat + b_spat]`, n × (d+r)
    pub base: Array2<f64>,
    /// after neighbour self-attention, n × (d+r)
    pub enriched: Array2<f64>,
    pub attention: Vec<Option<AttendCache>>,
    pub probs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTrace {
    pub subject: usize,
    pub object: usize,
    pub quad: [f64; 4],
    pub geo: Array1<f64>,
    /// `[f_pair, g]`
    pub f1: Array1<f64>,
    pub candidate_embeddings: Array2<f64>,
    pub text_attention: Option<AttendCache>,
    /// after text attention
    pub f2: Array1<f64>,
    /// rows `[f_s, f_o]` and `[f_o, f_s]`, 2 × 2(d+r)
    pub so_inputs: Array2<f64>,
    pub so_attention: Option<AttendCache>,
    /// after subject-object attention
    pub f3: Array1<f64>,
    pub probs: Array1<f64>,
    pub embedding: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub objects: ObjectTrace,
    pub pairs: Vec<PairTrace>,
}

/// Raw relative geometry `[(x_i-x_j)/w_i, (y_i-y_j)/h_i, w_j/w_i, h_j/h_i]`.
pub fn geometric_quad(subject: &BoundingBox, object: &BoundingBox) -> Result<[f64; 4]> {
    if !(subject.w > 0.0 && subject.h > 0.0) || !subject.is_valid() || !object.is_valid() {
        return Err(Error::InvalidBox(format!("{subject} -> {object}")));
    }
    Ok([
        (subject.x - object.x) / subject.w,
        (subject.y - object.y) / subject.h,
        object.w / subject.w,
        object.h / subject.h,
    ])
}

pub fn build_pair_feature(pair_feature: ArrayView1<'_, f64>, geo: ArrayView1<'_, f64>) -> Array1<f64> {
    concatenate![Axis(0), pair_feature, geo]
}

fn check_finite<'a, D: ndarray::Dimension>(
    name: &str,
    a: impl Into<ndarray::ArrayView<'a, f64, D>>,
) -> Result<()> {
    if a.into().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            tensor: name.to_string(),
        })
    }
}

/// Borrowed parameters plus forward options.
#[derive(Debug, Clone, Copy)]
pub struct RelationHead<'a> {
    pub params: &'a ModelParams,
    pub config: HeadConfig,
}

impl<'a> RelationHead<'a> {
    pub fn new(params: &'a ModelParams, config: HeadConfig) -> Self {
        RelationHead { params, config }
    }

    fn hidden(&self) -> usize {
        self.params.dims.hidden()
    }

    pub fn attend(&self, q: ArrayView1<'_, f64>, c: ArrayView2<'_, f64>, w: &Array2<f64>) -> Result<Array1<f64>> {
        attend_cached(q, c, w, self.config.attention_mean).map(|(o, _)| o)
    }

    fn object_stage(&self, features: &Array2<f64>, boxes: &[BoundingBox]) -> Result<ObjectTrace> {
        let p = self.params;
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyScene);
        }
        if boxes.len() != n || features.ncols() != p.dims.d {
            return Err(Error::Shape(format!(
                "{} boxes for {} feature rows of width {} (d = {})",
                boxes.len(),
                n,
                features.ncols(),
                p.dims.d
            )));
        }
        let box_rows = Array2::from_shape_fn((n, 4), |(i, j)| boxes[i].as_array()[j]);
        let spatial = if self.config.ablation.geometric_encoding_objects {
            box_rows.dot(&p.w_spat) + &p.b_spat
        } else {
            Array2::zeros((n, p.dims.r))
        };
        let base = concatenate![Axis(1), features.view(), spatial.view()];
        let mut enriched = base.clone();
        let mut attention = vec![None; n];
        if self.config.ablation.object_attention && n > 1 {
            for i in 0..n {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let ctx = base.select(Axis(0), &others);
                let (out, cache) =
                    attend_cached(base.row(i), ctx.view(), &p.w_att_obj, self.config.attention_mean)?;
                enriched.row_mut(i).assign(&out);
                attention[i] = Some(cache);
            }
        }
        let probs = softmax_rows(&(enriched.dot(&p.w_o) + &p.b_o));
        check_finite("enriched object features", &enriched)?;
        check_finite("object probabilities", &probs)?;
        Ok(ObjectTrace {
            boxes: box_rows,
            base,
            enriched,
            attention,
            probs,
        })
    }

    /// `[F, B·W_spat + b_spat]` followed by neighbour self-attention.
    pub fn enrich_object_features(&self, features: &Array2<f64>, boxes: &[BoundingBox]) -> Result<Array2<f64>> {
        self.object_stage(features, boxes).map(|t| t.enriched)
    }

    /// Row-wise softmax over object classes.
    pub fn classify_objects(&self, enriched: &Array2<f64>) -> Array2<f64> {
        softmax_rows(&(enriched.dot(&self.params.w_o) + &self.params.b_o))
    }

    pub fn geometric_encode(&self, subject: &BoundingBox, object: &BoundingBox) -> Result<Array1<f64>> {
        let quad = geometric_quad(subject, object)?;
        Ok(Array1::from(quad.to_vec()).dot(&self.params.w_geo) + &self.params.b_geo)
    }

    /// Project candidate embeddings and attend over them; no candidates is a
    /// passthrough.
    pub fn attend_text_embeddings(&self, f1: ArrayView1<'_, f64>, candidates: &Array2<f64>) -> Result<Array1<f64>> {
        self.text_stage(f1, candidates).map(|(o, _)| o)
    }

    fn text_stage(&self, f1: ArrayView1<'_, f64>, candidates: &Array2<f64>) -> Result<(Array1<f64>, Option<AttendCache>)> {
        let p = self.params;
        if candidates.nrows() == 0 {
            return Ok((f1.to_owned(), None));
        }
        if candidates.ncols() != p.dims.e {
            return Err(Error::Shape(format!(
                "candidate embeddings have width {}, expected e = {}",
                candidates.ncols(),
                p.dims.e
            )));
        }
        let projected = candidates.dot(&p.w_txt) + &p.b_txt;
        let (out, cache) = attend_cached(f1, projected.view(), &p.w_att_txt, self.config.attention_mean)?;
        Ok((out, Some(cache)))
    }

    /// Text attention with candidate phrases looked up in `table`.
    pub fn attend_text(
        &self,
        f1: ArrayView1<'_, f64>,
        candidates: &[String],
        table: &EmbeddingTable,
    ) -> Result<Array1<f64>> {
        let rows = candidate_matrix(candidates, table, true)?;
        self.attend_text_embeddings(f1, &rows)
    }

    fn so_stage(
        &self,
        f2: ArrayView1<'_, f64>,
        f_subject: ArrayView1<'_, f64>,
        f_object: ArrayView1<'_, f64>,
    ) -> Result<(Array1<f64>, Array2<f64>, Option<AttendCache>)> {
        let p = self.params;
        let h = self.hidden();
        let mut inputs = Array2::zeros((2, 2 * h));
        inputs.slice_mut(s![0, ..h]).assign(&f_subject);
        inputs.slice_mut(s![0, h..]).assign(&f_object);
        inputs.slice_mut(s![1, ..h]).assign(&f_object);
        inputs.slice_mut(s![1, h..]).assign(&f_subject);
        if !self.config.ablation.subject_object_attention {
            return Ok((f2.to_owned(), inputs, None));
        }
        let ctx = inputs.dot(&p.w_so);
        let (out, cache) = attend_cached(f2, ctx.view(), &p.w_att_so, self.config.attention_mean)?;
        Ok((out, inputs, Some(cache)))
    }

    /// Attend over the projected `[f_s, f_o]` and `[f_o, f_s]` contexts.
    pub fn attend_subject_object(
        &self,
        f2: ArrayView1<'_, f64>,
        f_subject: ArrayView1<'_, f64>,
        f_object: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.so_stage(f2, f_subject, f_object).map(|(o, _, _)| o)
    }

    /// Predicate distribution and relationship embedding.
    pub fn predict_relationship(&self, f3: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>) {
        let p = self.params;
        let probs = softmax((f3.dot(&p.w_r) + &p.b_r).view());
        let emb = f3.dot(&p.w_re) + &p.b_re;
        (probs, emb)
    }

    pub fn forward(&self, input: &SceneInput) -> Result<ForwardTrace> {
        let p = self.params;
        let objects = self.object_stage(&input.features, &input.boxes)?;
        let n = input.boxes.len();
        let mut pairs = Vec::with_capacity(input.pairs.len());
        for pair in &input.pairs {
            let (si, oi) = (pair.subject, pair.object);
            if si >= n || oi >= n || si == oi {
                return Err(Error::Shape(format!("invalid pair ({si}, {oi}) for {n} objects")));
            }
            if pair.feature.len() != p.dims.d {
                return Err(Error::Shape(format!(
                    "pair feature has width {}, expected d = {}",
                    pair.feature.len(),
                    p.dims.d
                )));
            }
            let quad = geometric_quad(&input.boxes[si], &input.boxes[oi])?;
            let geo = if self.config.ablation.geometric_encoding_relationships {
                Array1::from(quad.to_vec()).dot(&p.w_geo) + &p.b_geo
            } else {
                Array1::zeros(p.dims.r)
            };
            let f1 = build_pair_feature(pair.feature.view(), geo.view());
            let (f2, text_attention) = self.text_stage(f1.view(), &pair.candidates)?;
            let (f3, so_inputs, so_attention) =
                self.so_stage(f2.view(), objects.enriched.row(si), objects.enriched.row(oi))?;
            let (probs, embedding) = self.predict_relationship(f3.view());
            check_finite("relationship features", &f3)?;
            check_finite("relationship probabilities", &probs)?;
            check_finite("relationship embedding", &embedding)?;
            pairs.push(PairTrace {
                subject: si,
                object: oi,
                quad,
                geo,
                f1,
                candidate_embeddings: pair.candidates.clone(),
                text_attention,
                f2,
                so_inputs,
                so_attention,
                f3,
                probs,
                embedding,
            });
        }
        Ok(ForwardTrace { objects, pairs })
    }
}

/// Stack candidate phrase embeddings into a k × e matrix. In lenient mode
/// phrases with no known token are skipped.
pub fn candidate_matrix(candidates: &[String], table: &EmbeddingTable, strict: bool) -> Result<Array2<f64>> {
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        let pv = table.embed_phrase(c, strict)?;
        if !pv.oov {
            rows.push(pv.vector);
        }
    }
    let k = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((k, table.dim()), flat).expect("rows have table dimension"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relhead::attention::attend;
    use crate::relhead::params::{Dims, LossWeights};
    use ndarray::array;
    use proptest::prelude::*;

    fn dims() -> Dims {
        Dims {
            d: 3,
            r: 4,
            e: 2,
            objects: 3,
            predicates: 4,
        }
    }

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn params() -> ModelParams {
        ModelParams::init(dims(), LossWeights::default(), 1.0, 5).unwrap()
    }

    #[test]
    fn quad_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(geometric_quad(&a, &a).unwrap(), [0.0, 0.0, 1.0, 1.0]);
        let b = bx(2.0, 2.0, 4.0, 4.0);
        assert_eq!(geometric_quad(&a, &b).unwrap(), [-1.0, -1.0, 2.0, 2.0]);
        let bad = BoundingBox { x: 0.0, y: 0.0, w: 0.0, h: 1.0 };
        assert!(matches!(geometric_quad(&bad, &a), Err(Error::InvalidBox(_))));
    }

    #[test]
    fn identity_geometry_weights() {
        let mut p = ModelParams::zeros(dims());
        p.w_geo = Array2::eye(4);
        let head = RelationHead::new(&p, HeadConfig::default());
        let g = head.geometric_encode(&bx(0.0, 0.0, 2.0, 2.0), &bx(2.0, 2.0, 4.0, 4.0)).unwrap();
        assert_eq!(g, array![-1.0, -1.0, 2.0, 2.0]);
    }

    #[test]
    fn pair_feature_concatenation() {
        assert_eq!(build_pair_feature(array![1.0, 2.0].view(), array![3.0].view()), array![1.0, 2.0, 3.0]);
        assert_eq!(build_pair_feature(array![].view(), array![3.0, 4.0].view()), array![3.0, 4.0]);
        assert_eq!(
            build_pair_feature(array![-1.0].view(), array![0.0, 0.5, 9.0].view()),
            array![-1.0, 0.0, 0.5, 9.0]
        );
    }

    #[test]
    fn single_object_skips_attention() {
        let p = params();
        let head = RelationHead::new(&p, HeadConfig::default());
        let f = array![[0.1, 0.2, 0.3]];
        let b = [bx(0.5, 0.5, 0.2, 0.4)];
        let e = head.enrich_object_features(&f, &b).unwrap();
        let spatial = array![0.5, 0.5, 0.2, 0.4].dot(&p.w_spat) + &p.b_spat;
        let expect = concatenate![Axis(0), f.row(0), spatial.view()];
        assert!((&e.row(0) - &expect).iter().all(|d| d.abs() < 1e-15));
        assert!(matches!(
            head.enrich_object_features(&Array2::zeros((0, 3)), &[]),
            Err(Error::EmptyScene)
        ));
    }

    #[test]
    fn zero_spatial_weights_give_zero_columns() {
        let mut p = params();
        p.w_spat.fill(0.0);
        p.b_spat.fill(0.0);
        let mut cfg = HeadConfig::default();
        cfg.ablation.object_attention = false;
        let head = RelationHead::new(&p, cfg);
        let f = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]];
        let b = [bx(0.5, 0.5, 0.2, 0.4), bx(0.1, 0.9, 0.1, 0.1)];
        let e = head.enrich_object_features(&f, &b).unwrap();
        assert!(e.slice(s![.., 3..]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn enrichment_matches_scalar_reference() {
        let p = params();
        let head = RelationHead::new(&p, HeadConfig::default());
        let f = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0], [0.4, 0.4, -0.2]];
        let b = [bx(0.5, 0.5, 0.2, 0.4), bx(0.1, 0.9, 0.1, 0.1), bx(0.3, 0.3, 0.6, 0.2)];
        let e = head.enrich_object_features(&f, &b).unwrap();
        // reference: build each base row with loops, attend over the others
        let mut base = vec![vec![0.0; 7]; 3];
        for i in 0..3 {
            for j in 0..3 {
                base[i][j] = f[[i, j]];
            }
            let bb = b[i].as_array();
            for c in 0..4 {
                let mut acc = p.b_spat[c];
                for k in 0..4 {
                    acc += bb[k] * p.w_spat[[k, c]];
                }
                base[i][3 + c] = acc;
            }
        }
        for i in 0..3 {
            let others: Vec<Vec<f64>> = (0..3).filter(|&j| j != i).map(|j| base[j].clone()).collect();
            let ctx = Array2::from_shape_fn((2, 7), |(r, c)| others[r][c]);
            let q = Array1::from(base[i].clone());
            let want = attend(q.view(), ctx.view(), &p.w_att_obj, true).unwrap();
            for (a, w) in e.row(i).iter().zip(want.iter()) {
                assert!((a - w).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn classifier_uniform_under_zero_params() {
        let p = ModelParams::zeros(dims());
        let head = RelationHead::new(&p, HeadConfig::default());
        let probs = head.classify_objects(&Array2::from_elem((2, 7), 0.3));
        assert!(probs.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let (r, v) = head.predict_relationship(array![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0].view());
        assert!(r.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn classifier_matches_reference_argmax() {
        let p = params();
        let head = RelationHead::new(&p, HeadConfig::default());
        let e = Array2::from_shape_fn((4, 7), |(i, j)| ((i * 7 + j) as f64 * 0.77).sin());
        let probs = head.classify_objects(&e);
        for i in 0..4 {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..3 {
                let mut z = p.b_o[c];
                for k in 0..7 {
                    z += e[[i, k]] * p.w_o[[k, c]];
                }
                if z > best.1 {
                    best = (c, z);
                }
            }
            let argmax = (0..3).max_by(|&a, &b| probs[[i, a]].total_cmp(&probs[[i, b]])).unwrap();
            assert_eq!(argmax, best.0);
            assert!((probs.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn text_attention_cases() {
        let p = params();
        let head = RelationHead::new(&p, HeadConfig::default());
        let f1 = Array1::from_shape_fn(7, |i| i as f64 * 0.1);
        // empty candidates pass through
        let none = head.attend_text_embeddings(f1.view(), &Array2::zeros((0, 2))).unwrap();
        assert_eq!(none, f1);
        // k = 1 equals direct concat-fuse with the single projected row
        let one = array![[0.3, -0.6]];
        let proj = one.dot(&p.w_txt) + &p.b_txt;
        let got = head.attend_text_embeddings(f1.view(), &one).unwrap();
        let cat = concatenate![Axis(0), f1.view(), proj.row(0)];
        let want = cat.dot(&p.w_att_txt);
        assert!((&got - &want).iter().all(|d| d.abs() < 1e-13));
        // k = 3 vs reference path
        let three = array![[0.3, -0.6], [1.0, 0.0], [0.2, 0.2]];
        let proj = three.dot(&p.w_txt) + &p.b_txt;
        let got = head.attend_text_embeddings(f1.view(), &three).unwrap();
        let want = attend(f1.view(), proj.view(), &p.w_att_txt, true).unwrap();
        assert!((&got - &want).iter().all(|d| d.abs() < 1e-13));
    }

    #[test]
    fn subject_object_cases() {
        let mut p = params();
        let head = RelationHead::new(&p, HeadConfig::default());
        let f2 = Array1::from_shape_fn(7, |i| (i as f64).cos());
        let fs = Array1::from_shape_fn(7, |i| (i as f64 * 0.3).sin());
        // identical endpoints: both context rows equal, uniform weights
        let (_, _, cache) = head.so_stage(f2.view(), fs.view(), fs.view()).unwrap();
        let cache = cache.unwrap();
        assert!((cache.weights[0] - 0.5).abs() < 1e-15);
        let row = concatenate![Axis(0), fs.view(), fs.view()].dot(&p.w_so);
        for (v, r) in cache.attended.iter().zip(row.iter()) {
            assert!((v - r / 2.0).abs() < 1e-13);
        }
        // zero projection: zero contexts, uniform weights
        p.w_so.fill(0.0);
        let head = RelationHead::new(&p, HeadConfig::default());
        let fo = Array1::from_shape_fn(7, |i| i as f64);
        let (_, _, cache) = head.so_stage(f2.view(), fs.view(), fo.view()).unwrap();
        let cache = cache.unwrap();
        assert_eq!(cache.weights, array![0.5, 0.5]);
        assert!(cache.attended.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn subject_object_matches_reference() {
        let p = params();
        let head = RelationHead::new(&p, HeadConfig::default());
        let f2 = Array1::from_shape_fn(7, |i| (i as f64).cos());
        let fs = Array1::from_shape_fn(7, |i| (i as f64 * 0.3).sin());
        let fo = Array1::from_shape_fn(7, |i| (i as f64 * 0.5 + 1.0).sin());
        let got = head.attend_subject_object(f2.view(), fs.view(), fo.view()).unwrap();
        let mut ctx = Array2::zeros((2, 7));
        for c in 0..7 {
            for k in 0..7 {
                ctx[[0, c]] += fs[k] * p.w_so[[k, c]] + fo[k] * p.w_so[[7 + k, c]];
                ctx[[1, c]] += fo[k] * p.w_so[[k, c]] + fs[k] * p.w_so[[7 + k, c]];
            }
        }
        let want = attend(f2.view(), ctx.view(), &p.w_att_so, true).unwrap();
        assert!((&got - &want).iter().all(|d| d.abs() < 1e-13));
    }

    #[test]
    fn prediction_matches_reference() {
        let p = params();
        let head = RelationHead::new(&p, HeadConfig::default());
        let f3 = Array1::from_shape_fn(7, |i| (i as f64 * 0.9).sin());
        let (probs, emb) = head.predict_relationship(f3.view());
        let logits: Vec<f64> = (0..4)
            .map(|c| p.b_r[c] + (0..7).map(|k| f3[k] * p.w_r[[k, c]]).sum::<f64>())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for c in 0..4 {
            assert!((probs[c] - logits[c].exp() / z).abs() < 1e-14);
        }
        for c in 0..2 {
            let want = p.b_re[c] + (0..7).map(|k| f3[k] * p.w_re[[k, c]]).sum::<f64>();
            assert!((emb[c] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn disabled_mechanisms_are_passthrough() {
        let p = params();
        let cfg = HeadConfig {
            attention_mean: true,
            ablation: Ablation::all_off(),
        };
        let head = RelationHead::new(&p, cfg);
        let input = SceneInput {
            features: array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]],
            boxes: vec![bx(0.5, 0.5, 0.2, 0.4), bx(0.1, 0.9, 0.1, 0.1)],
            pairs: vec![PairInput {
                subject: 0,
                object: 1,
                feature: array![0.5, 0.5, 0.5],
                candidates: Array2::zeros((0, 2)),
            }],
        };
        let t = head.forward(&input).unwrap();
        assert_eq!(t.objects.enriched, t.objects.base);
        assert!(t.objects.base.slice(s![.., 3..]).iter().all(|&x| x == 0.0));
        let pt = &t.pairs[0];
        assert_eq!(pt.f3, pt.f1);
        assert_eq!(pt.f1, array![0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn quad_translation_invariant(
            x1 in -10.0..10.0f64, y1 in -10.0..10.0f64, w1 in 0.1..5.0f64, h1 in 0.1..5.0f64,
            x2 in -10.0..10.0f64, y2 in -10.0..10.0f64, w2 in 0.1..5.0f64, h2 in 0.1..5.0f64,
            // power-of-two offsets keep the translated coordinates exact
            tx in -8i32..8, ty in -8i32..8,
        ) {
            let (dx, dy) = (tx as f64 * 0.25, ty as f64 * 0.25);
            let a = bx(x1, y1, w1, h1);
            let b = bx(x2, y2, w2, h2);
            let q = geometric_quad(&a, &b).unwrap();
            let qt = geometric_quad(&bx(x1 + dx, y1 + dy, w1, h1), &bx(x2 + dx, y2 + dy, w2, h2)).unwrap();
            for (u, v) in q.iter().zip(qt) {
                prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
            }
        }
    }
}
