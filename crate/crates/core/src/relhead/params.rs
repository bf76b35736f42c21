//! Learned tensors of the relationship head and the text checkpoint format.
//!
//! Checkpoint layout:
//!
//! ```text
//! relkit-checkpoint 1
//! dims <d> <r> <e> <objects> <predicates>
//! lambda <l1> <l2> <l3>
//! <name> <rows> <cols>
//! <row 0 values>
//! ...
//! ```
//!
//! Vectors are written as `rows = 1`. Values use shortest round-trip decimal
//! formatting, so a save/load cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// visual feature size
    pub d: usize,
    /// spatial / geometric encoding size
    pub r: usize,
    /// word embedding size
    pub e: usize,
    pub objects: usize,
    pub predicates: usize,
}

impl Dims {
    /// Width of enriched object and pair features, `d + r`.
    pub fn hidden(&self) -> usize {
        self.d + self.r
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.r == 0 || self.e == 0 || self.objects == 0 || self.predicates == 0 {
            return Err(Error::Config(format!("all dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub object: f64,
    pub relationship: f64,
    pub embedding: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            object: 1.0,
            relationship: 1.0,
            embedding: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(object: f64, relationship: f64, embedding: f64) -> Self {
        LossWeights {
            object,
            relationship,
            embedding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.object, self.relationship, self.embedding];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// All learned weights. Matrices use the row-vector convention: an input row
/// `x` maps to `x · W + b`. Gradient collections reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub lambda: LossWeights,
    /// 4 × r, box → spatial code
    pub w_spat: Array2<f64>,
    pub b_spat: Array1<f64>,
    /// 2(d+r) × (d+r), object self-attention fuse
    pub w_att_obj: Array2<f64>,
    /// (d+r) × |O|
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    /// 4 × r
    pub w_geo: Array2<f64>,
    pub b_geo: Array1<f64>,
    /// e × (d+r)
    pub w_txt: Array2<f64>,
    pub b_txt: Array1<f64>,
    /// 2(d+r) × (d+r), text attention fuse
    pub w_att_txt: Array2<f64>,
    /// 2(d+r) × (d+r), subject-object context projection
    pub w_so: Array2<f64>,
    /// 2(d+r) × (d+r), subject-object attention fuse
    pub w_att_so: Array2<f64>,
    /// (d+r) × |R|
    pub w_r: Array2<f64>,
    pub b_r: Array1<f64>,
    /// (d+r) × e
    pub w_re: Array2<f64>,
    pub b_re: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 16] = [
    "w_spat", "b_spat", "w_att_obj", "w_o", "b_o", "w_geo", "b_geo", "w_txt", "b_txt",
    "w_att_txt", "w_so", "w_att_so", "w_r", "b_r", "w_re", "b_re",
];

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        let h = dims.hidden();
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        ModelParams {
            dims,
            lambda: LossWeights::default(),
            w_spat: m(4, dims.r),
            b_spat: v(dims.r),
            w_att_obj: m(2 * h, h),
            w_o: m(h, dims.objects),
            b_o: v(dims.objects),
            w_geo: m(4, dims.r),
            b_geo: v(dims.r),
            w_txt: m(dims.e, h),
            b_txt: v(h),
            w_att_txt: m(2 * h, h),
            w_so: m(2 * h, h),
            w_att_so: m(2 * h, h),
            w_r: m(h, dims.predicates),
            b_r: v(dims.predicates),
            w_re: m(h, dims.e),
            b_re: v(dims.e),
        }
    }

    /// Weights ~ N(0, 1/fan_in) scaled by `scale`, biases zero.
    pub fn init(dims: Dims, lambda: LossWeights, scale: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        lambda.validate()?;
        let mut p = Self::zeros(dims);
        p.lambda = lambda;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in p.tensors_mut() {
            if name.starts_with("b_") {
                continue;
            }
            let fan_in = t.rows as f64;
            let std = scale / fan_in.sqrt();
            for x in t.data.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = z * std;
            }
        }
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        macro_rules! m {
            ($f:ident) => {
                TensorRef {
                    name: stringify!($f),
                    rows: self.$f.nrows(),
                    cols: self.$f.ncols(),
                    data: self.$f.as_slice().expect("standard layout"),
                }
            };
        }
        macro_rules! v {
            ($f:ident) => {
                TensorRef {
                    name: stringify!($f),
                    rows: 1,
                    cols: self.$f.len(),
                    data: self.$f.as_slice().expect("standard layout"),
                }
            };
        }
        vec![
            m!(w_spat),
            v!(b_spat),
            m!(w_att_obj),
            m!(w_o),
            v!(b_o),
            m!(w_geo),
            v!(b_geo),
            m!(w_txt),
            v!(b_txt),
            m!(w_att_txt),
            m!(w_so),
            m!(w_att_so),
            m!(w_r),
            v!(b_r),
            m!(w_re),
            v!(b_re),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, TensorMut<'_>)> {
        macro_rules! m {
            ($f:ident) => {
                (
                    stringify!($f),
                    TensorMut {
                        rows: self.$f.nrows(),
                        data: self.$f.as_slice_mut().expect("standard layout"),
                    },
                )
            };
        }
        macro_rules! v {
            ($f:ident) => {
                (
                    stringify!($f),
                    TensorMut {
                        rows: 1,
                        data: self.$f.as_slice_mut().expect("standard layout"),
                    },
                )
            };
        }
        vec![
            m!(w_spat),
            v!(b_spat),
            m!(w_att_obj),
            m!(w_o),
            v!(b_o),
            m!(w_geo),
            v!(b_geo),
            m!(w_txt),
            v!(b_txt),
            m!(w_att_txt),
            m!(w_so),
            m!(w_att_so),
            m!(w_r),
            v!(b_r),
            m!(w_re),
            v!(b_re),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.data.iter_mut().zip(s.data) {
                *a += alpha * b;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn to_checkpoint(&self) -> String {
        let d = &self.dims;
        let l = &self.lambda;
        let mut out = String::from("relkit-checkpoint 1\n");
        writeln!(out, "dims {} {} {} {} {}", d.d, d.r, d.e, d.objects, d.predicates).unwrap();
        writeln!(out, "lambda {} {} {}", l.object, l.relationship, l.embedding).unwrap();
        for t in self.tensors() {
            writeln!(out, "{} {} {}", t.name, t.rows, t.cols).unwrap();
            for row in t.data.chunks(t.cols.max(1)) {
                let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n').map(|raw| {
            let start = offset;
            offset += raw.len() as u64;
            (start, raw.trim_end_matches(['\n', '\r']))
        });
        let fail = |at: u64, message: String| Error::Format { offset: at, message };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| fail(text.len() as u64, format!("unexpected end of file, expected {what}")))
        };
        let nums = |at: u64, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|_| fail(at, format!("bad number {f:?}"))))
                .collect()
        };

        let (at, magic) = next("header")?;
        if magic != "relkit-checkpoint 1" {
            return Err(fail(at, "not a relkit checkpoint".into()));
        }
        let (at, line) = next("dims")?;
        let dims_v = line
            .strip_prefix("dims ")
            .map(|s| s.split_whitespace().map(|f| f.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>())
            .and_then(|r| r.ok())
            .filter(|v| v.len() == 5)
            .ok_or_else(|| fail(at, "expected `dims d r e objects predicates`".into()))?;
        let dims = Dims {
            d: dims_v[0],
            r: dims_v[1],
            e: dims_v[2],
            objects: dims_v[3],
            predicates: dims_v[4],
        };
        dims.validate().map_err(|e| fail(at, e.to_string()))?;
        let (at, line) = next("lambda")?;
        let lam = line
            .strip_prefix("lambda ")
            .map(|s| nums(at, s))
            .transpose()?
            .filter(|v| v.len() == 3)
            .ok_or_else(|| fail(at, "expected `lambda l1 l2 l3`".into()))?;

        let mut params = ModelParams::zeros(dims);
        params.lambda = LossWeights::new(lam[0], lam[1], lam[2]);
        for (name, dst) in params.tensors_mut() {
            let (at, header) = next(name)?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            let cols = dst.data.len() / dst.rows.max(1);
            let expected = [name.to_string(), dst.rows.to_string(), cols.to_string()];
            if fields.len() != 3 || fields.iter().zip(&expected).any(|(a, b)| a != b) {
                return Err(fail(
                    at,
                    format!("expected tensor header `{}`, found {header:?}", expected.join(" ")),
                ));
            }
            for row in dst.data.chunks_mut(cols.max(1)) {
                let (at, line) = next(name)?;
                let vals = nums(at, line)?;
                if vals.len() != row.len() {
                    return Err(fail(at, format!("{name}: expected {} values, found {}", row.len(), vals.len())));
                }
                row.copy_from_slice(&vals);
            }
        }
        if let Some((at, rest)) = lines.next() {
            if !rest.trim().is_empty() {
                return Err(fail(at, "trailing data".into()));
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub rows: usize,
    pub data: &'a mut [f64],
}
