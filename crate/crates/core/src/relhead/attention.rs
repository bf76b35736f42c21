//! Generic attention step and its backward pass.
//!
//! For a query `q` (length n) and context rows `C` (k × n):
//! `a = C·q`, `w = softmax(a)`, `v = s · Σ w_i c_i` and the result is
//! `[q, v] · W` with `W` of shape 2n × n. The scale `s` is `1/k` when
//! `mean` is set and 1 otherwise.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out = logits.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let sm = softmax(row.view());
        row.assign(&sm);
    }
    out
}

/// Forward values kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendCache {
    pub query: Array1<f64>,
    pub context: Array2<f64>,
    pub weights: Array1<f64>,
    pub attended: Array1<f64>,
    pub scale: f64,
}

pub fn attend_cached(
    query: ArrayView1<'_, f64>,
    context: ArrayView2<'_, f64>,
    w_fuse: &Array2<f64>,
    mean: bool,
) -> Result<(Array1<f64>, AttendCache)> {
    let n = query.len();
    let k = context.nrows();
    if k == 0 {
        return Err(Error::EmptyContext);
    }
    if context.ncols() != n || w_fuse.dim() != (2 * n, n) {
        return Err(Error::Shape(format!(
            "attend: query {n}, context {:?}, fuse {:?}",
            context.dim(),
            w_fuse.dim()
        )));
    }
    let scores = context.dot(&query);
    let weights = softmax(scores.view());
    let scale = if mean { 1.0 / k as f64 } else { 1.0 };
    let attended = weights.dot(&context) * scale;
    let out = query.dot(&w_fuse.slice(s![..n, ..])) + attended.dot(&w_fuse.slice(s![n.., ..]));
    Ok((
        out,
        AttendCache {
            query: query.to_owned(),
            context: context.to_owned(),
            weights,
            attended,
            scale,
        },
    ))
}

pub fn attend(
    query: ArrayView1<'_, f64>,
    context: ArrayView2<'_, f64>,
    w_fuse: &Array2<f64>,
    mean: bool,
) -> Result<Array1<f64>> {
    attend_cached(query, context, w_fuse, mean).map(|(o, _)| o)
}

/// Backpropagate `grad_out` through one attention step. Accumulates into
/// `grad_fuse` and returns the gradients for the query and the context rows.
pub fn attend_backward(
    cache: &AttendCache,
    w_fuse: &Array2<f64>,
    grad_out: ArrayView1<'_, f64>,
    grad_fuse: &mut Array2<f64>,
) -> (Array1<f64>, Array2<f64>) {
    let n = cache.query.len();
    let top = w_fuse.slice(s![..n, ..]);
    let bottom = w_fuse.slice(s![n.., ..]);

    let g_col = grad_out.insert_axis(Axis(0));
    grad_fuse
        .slice_mut(s![..n, ..])
        .scaled_add(1.0, &cache.query.view().insert_axis(Axis(1)).dot(&g_col));
    grad_fuse
        .slice_mut(s![n.., ..])
        .scaled_add(1.0, &cache.attended.view().insert_axis(Axis(1)).dot(&g_col));

    let mut g_query = top.dot(&grad_out);
    let g_attended = bottom.dot(&grad_out);

    // v = s Σ w_i c_i
    let g_weights = cache.context.dot(&g_attended) * cache.scale;
    let mut g_context = cache
        .weights
        .view()
        .insert_axis(Axis(1))
        .dot(&g_attended.view().insert_axis(Axis(0)))
        * cache.scale;

    // softmax
    let inner = cache.weights.dot(&g_weights);
    let g_scores = &cache.weights * &(g_weights - inner);

    // a_i = c_i · q
    g_query += &g_scores.dot(&cache.context);
    g_context += &g_scores
        .view()
        .insert_axis(Axis(1))
        .dot(&cache.query.view().insert_axis(Axis(0)));
    (g_query, g_context)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Scalar-loop reference, written independently of the ndarray path.
    fn reference(q: &[f64], c: &[Vec<f64>], w: &[Vec<f64>], mean: bool) -> Vec<f64> {
        let n = q.len();
        let k = c.len();
        let a: Vec<f64> = c.iter().map(|row| (0..n).map(|j| row[j] * q[j]).sum()).collect();
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut v = vec![0.0; n];
        for i in 0..k {
            for j in 0..n {
                v[j] += e[i] / z * c[i][j];
            }
        }
        if mean {
            for x in &mut v {
                *x /= k as f64;
            }
        }
        let cat: Vec<f64> = q.iter().chain(v.iter()).cloned().collect();
        (0..n)
            .map(|col| (0..2 * n).map(|row| cat[row] * w[row][col]).sum())
            .collect()
    }

    fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
        m.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn singleton_context() {
        let q = array![1.0, -2.0];
        let c = array![[0.5, 3.0]];
        let w = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let out = attend(q.view(), c.view(), &w, true).unwrap();
        let cat = array![1.0, -2.0, 0.5, 3.0];
        let expect = cat.dot(&w);
        assert!((&out - &expect).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn identical_rows() {
        let q = array![0.3, 0.7, -1.0];
        let c = Array2::from_shape_fn((4, 3), |(_, j)| [2.0, -1.0, 0.5][j]);
        let (_, cache) = attend_cached(q.view(), c.view(), &Array2::zeros((6, 3)), true).unwrap();
        // uniform weights; with the 1/k convention v = c / k
        for (v, x) in cache.attended.iter().zip([2.0, -1.0, 0.5]) {
            assert!((v - x / 4.0).abs() < 1e-15);
        }
        let (_, cache) = attend_cached(q.view(), c.view(), &Array2::zeros((6, 3)), false).unwrap();
        for (v, x) in cache.attended.iter().zip([2.0, -1.0, 0.5]) {
            assert!((v - x).abs() < 1e-15);
        }
    }

    #[test]
    fn numeric_case_matches_reference() {
        let q = array![0.2, -0.4, 1.1];
        let c = array![[1.0, 0.5, -0.3], [-0.7, 0.2, 0.9]];
        let w = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        for mean in [true, false] {
            let out = attend(q.view(), c.view(), &w, mean).unwrap();
            let r = reference(&q.to_vec(), &to_rows(&c), &to_rows(&w), mean);
            for (a, b) in out.iter().zip(&r) {
                assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            }
        }
        // scores: c·q = (0.2 - 0.2 - 0.33, -0.14 - 0.08 + 0.99) = (-0.33, 0.77)
        let (_, cache) = attend_cached(q.view(), c.view(), &w, true).unwrap();
        let e1 = (-0.33f64).exp();
        let e2 = 0.77f64.exp();
        assert!((cache.weights[0] - e1 / (e1 + e2)).abs() < 1e-15);
    }

    #[test]
    fn empty_context_errors() {
        let q = array![1.0];
        let c = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            attend(q.view(), c.view(), &Array2::zeros((2, 1)), true),
            Err(Error::EmptyContext)
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let q = array![0.2, -0.4, 1.1];
        let c = array![[1.0, 0.5, -0.3], [-0.7, 0.2, 0.9], [0.1, 0.1, -0.5]];
        let w = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).cos());
        let probe = array![0.3, -1.0, 0.6];
        let f = |q: &Array1<f64>, c: &Array2<f64>, w: &Array2<f64>| {
            attend(q.view(), c.view(), w, true).unwrap().dot(&probe)
        };
        let (_, cache) = attend_cached(q.view(), c.view(), &w, true).unwrap();
        let mut gw = Array2::zeros(w.dim());
        let (gq, gc) = attend_backward(&cache, &w, probe.view(), &mut gw);
        let h = 1e-6;
        for i in 0..3 {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[i] += h;
            qm[i] -= h;
            let fd = (f(&qp, &c, &w) - f(&qm, &c, &w)) / (2.0 * h);
            assert!((fd - gq[i]).abs() < 1e-8);
        }
        for idx in [(0, 0), (1, 2), (2, 1)] {
            let (mut cp, mut cm) = (c.clone(), c.clone());
            cp[idx] += h;
            cm[idx] -= h;
            let fd = (f(&q, &cp, &w) - f(&q, &cm, &w)) / (2.0 * h);
            assert!((fd - gc[idx]).abs() < 1e-8);
        }
        for idx in [(0, 0), (4, 2), (5, 1)] {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[idx] += h;
            wm[idx] -= h;
            let fd = (f(&q, &c, &wp) - f(&q, &c, &wm)) / (2.0 * h);
            assert!((fd - gw[idx]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_normalized(v in prop::collection::vec(-15.0..15.0f64, 2..12)) {
            // logit spread stays small enough that 1 - p is representable
            let p = softmax(Array1::from(v).view());
            prop_assert!((p.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }

        #[test]
        fn context_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..6),
            q in prop::collection::vec(-2.0..2.0f64, 3),
            seed in any::<u64>(),
        ) {
            let k = rows.len();
            let c = Array2::from_shape_fn((k, 3), |(i, j)| rows[i][j]);
            let mut order: Vec<usize> = (0..k).collect();
            // deterministic shuffle from the seed
            let mut s = seed;
            for i in (1..k).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let cp = Array2::from_shape_fn((k, 3), |(i, j)| rows[order[i]][j]);
            let w = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) as f64).sin());
            let q = Array1::from(q);
            let a = attend(q.view(), c.view(), &w, true).unwrap();
            let b = attend(q.view(), cp.view(), &w, true).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
