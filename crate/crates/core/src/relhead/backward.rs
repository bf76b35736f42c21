//! Exact gradients of the composite loss through one forward trace.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::attention::attend_backward;
use super::forward::{ForwardTrace, RelationHead, SceneInput};
use super::loss::{composite_loss, cosine_term_grad, cross_entropy_logit_grad, LossBreakdown};
use super::params::ModelParams;
use crate::error::{Error, Result};

/// Ground truth for one scene. Relationship targets pair with
/// `SceneInput::pairs` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTarget {
    pub object_labels: Vec<usize>,
    pub predicate_labels: Vec<usize>,
    /// embedding of each pair's ground-truth predicate phrase, pairs × e
    pub predicate_embeddings: Array2<f64>,
}

pub fn trace_loss(trace: &ForwardTrace, target: &SceneTarget, params: &ModelParams) -> Result<LossBreakdown> {
    let p = trace.pairs.len();
    let mut r = Array2::zeros((p, params.dims.predicates));
    let mut v = Array2::zeros((p, params.dims.e));
    for (i, pt) in trace.pairs.iter().enumerate() {
        r.row_mut(i).assign(&pt.probs);
        v.row_mut(i).assign(&pt.embedding);
    }
    composite_loss(
        &target.object_labels,
        &target.predicate_labels,
        target.predicate_embeddings.view(),
        trace.objects.probs.view(),
        r.view(),
        v.view(),
        &params.lambda,
    )
}

fn outer_add(dst: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    dst.scaled_add(1.0, &a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0))));
}

/// Gradient of the scene loss (times `weight`) accumulated into `grad`.
pub fn accumulate_gradients(
    head: &RelationHead<'_>,
    trace: &ForwardTrace,
    target: &SceneTarget,
    weight: f64,
    grad: &mut ModelParams,
) -> Result<()> {
    let p = head.params;
    let ab = head.config.ablation;
    let d = p.dims.d;
    let h = p.dims.hidden();
    let n = trace.objects.enriched.nrows();
    let np = trace.pairs.len();
    if target.object_labels.len() != n
        || target.predicate_labels.len() != np
        || target.predicate_embeddings.nrows() != np
    {
        return Err(Error::Shape("targets do not match the forward trace".into()));
    }
    let lam = p.lambda;
    let w_obj = weight * lam.object / n as f64;
    let (w_rel, w_emb) = if np == 0 {
        (0.0, 0.0)
    } else {
        (weight * lam.relationship / np as f64, weight * lam.embedding / np as f64)
    };

    let mut g_enriched = Array2::<f64>::zeros((n, h));

    for (k, pt) in trace.pairs.iter().enumerate() {
        let g_logits = cross_entropy_logit_grad(pt.probs.view(), target.predicate_labels[k]) * w_rel;
        let g_emb = cosine_term_grad(target.predicate_embeddings.row(k), pt.embedding.view()) * w_emb;
        outer_add(&mut grad.w_r, pt.f3.view(), g_logits.view());
        grad.b_r += &g_logits;
        outer_add(&mut grad.w_re, pt.f3.view(), g_emb.view());
        grad.b_re += &g_emb;
        let g_f3 = p.w_r.dot(&g_logits) + p.w_re.dot(&g_emb);

        let g_f2 = match &pt.so_attention {
            Some(cache) => {
                let (g_q, g_ctx) = attend_backward(cache, &p.w_att_so, g_f3.view(), &mut grad.w_att_so);
                grad.w_so += &pt.so_inputs.t().dot(&g_ctx);
                let g_in = g_ctx.dot(&p.w_so.t());
                let mut gs = g_enriched.row_mut(pt.subject);
                gs += &g_in.slice(s![0, ..h]);
                gs += &g_in.slice(s![1, h..]);
                let mut go = g_enriched.row_mut(pt.object);
                go += &g_in.slice(s![0, h..]);
                go += &g_in.slice(s![1, ..h]);
                g_q
            }
            None => g_f3,
        };

        let g_f1 = match &pt.text_attention {
            Some(cache) => {
                let (g_q, g_v) = attend_backward(cache, &p.w_att_txt, g_f2.view(), &mut grad.w_att_txt);
                grad.w_txt += &pt.candidate_embeddings.t().dot(&g_v);
                grad.b_txt += &g_v.sum_axis(Axis(0));
                g_q
            }
            None => g_f2,
        };

        if ab.geometric_encoding_relationships {
            let g_geo = g_f1.slice(s![d..]);
            outer_add(&mut grad.w_geo, Array1::from(pt.quad.to_vec()).view(), g_geo);
            grad.b_geo += &g_geo;
        }
    }

    // object classifier
    let obj = &trace.objects;
    let mut g_logits = Array2::zeros(obj.probs.dim());
    for i in 0..n {
        g_logits
            .row_mut(i)
            .assign(&(cross_entropy_logit_grad(obj.probs.row(i), target.object_labels[i]) * w_obj));
    }
    grad.w_o += &obj.enriched.t().dot(&g_logits);
    grad.b_o += &g_logits.sum_axis(Axis(0));
    g_enriched += &g_logits.dot(&p.w_o.t());

    // neighbour self-attention
    let mut g_base = Array2::<f64>::zeros((n, h));
    for i in 0..n {
        match &obj.attention[i] {
            Some(cache) => {
                let (g_q, g_ctx) = attend_backward(cache, &p.w_att_obj, g_enriched.row(i), &mut grad.w_att_obj);
                let mut row = g_base.row_mut(i);
                row += &g_q;
                for (m, j) in (0..n).filter(|&j| j != i).enumerate() {
                    let mut row = g_base.row_mut(j);
                    row += &g_ctx.row(m);
                }
            }
            None => {
                let mut row = g_base.row_mut(i);
                row += &g_enriched.row(i);
            }
        }
    }

    if ab.geometric_encoding_objects {
        let g_spatial = g_base.slice(s![.., d..]);
        grad.w_spat += &obj.boxes.t().dot(&g_spatial);
        grad.b_spat += &g_spatial.sum_axis(Axis(0));
    }
    for t in grad.tensors() {
        if !t.data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                tensor: format!("gradient of {}", t.name),
            });
        }
    }
    Ok(())
}

/// Mean loss over the scenes and its exact gradient.
pub fn gradients(
    head: &RelationHead<'_>,
    batch: &[(SceneInput, SceneTarget)],
) -> Result<(LossBreakdown, ModelParams)> {
    let mut grad = ModelParams::zeros(head.params.dims);
    grad.lambda = head.params.lambda;
    if batch.is_empty() {
        return Ok((LossBreakdown::default(), grad));
    }
    let weight = 1.0 / batch.len() as f64;
    let mut losses = Vec::with_capacity(batch.len());
    for (input, target) in batch {
        let trace = head.forward(input)?;
        losses.push(trace_loss(&trace, target, head.params)?);
        accumulate_gradients(head, &trace, target, weight, &mut grad)?;
    }
    Ok((LossBreakdown::mean(&losses), grad))
}

/// Mean loss without gradients.
pub fn batch_loss(head: &RelationHead<'_>, batch: &[(SceneInput, SceneTarget)]) -> Result<LossBreakdown> {
    let losses = batch
        .iter()
        .map(|(input, target)| trace_loss(&head.forward(input)?, target, head.params))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&losses))
}
