//! Single-device trainer over the whole graph with every intermediate kept.
//!
//! Shares no kernel code with the chunked pipeline so it can serve as a
//! parity oracle for it.

use crate::error::Result;
use crate::graph::Graph;
use crate::matrix::{DenseMatrix, Real, dot};

use super::loss::softmax_cross_entropy;
use super::{Gradients, LayerParams, Model, ModelKind, TrainData};

struct LayerCache<F: Real> {
    input: DenseMatrix<F>,
    /// GCN: aggregate. GAT: projected rows `h W`.
    pre: DenseMatrix<F>,
    /// Pre-activation output (`z` or `o`).
    out: DenseMatrix<F>,
    logits: Vec<F>,
    alpha: Vec<F>,
}

fn leaky<F: Real>(x: F, s: F) -> F {
    if x > F::zero() { x } else { s * x }
}

fn layer_forward<F: Real>(g: &Graph, kind: ModelKind, p: &LayerParams<F>, slope: F, h: DenseMatrix<F>) -> Result<LayerCache<F>> {
    let nv = g.num_vertices();
    let w = g.edge_weights();
    match kind {
        ModelKind::Gcn => {
            let mut a = DenseMatrix::zeros(nv, h.cols());
            for v in 0..nv {
                for e in g.in_edge_range(v) {
                    let u = g.edge_source(e);
                    for c in 0..h.cols() {
                        let x = a.get(v, c) + F::of_f64(w[e]) * h.get(u, c);
                        a.set(v, c, x);
                    }
                }
            }
            let out = a.matmul(&p.w)?;
            Ok(LayerCache { input: h, pre: a, out, logits: Vec::new(), alpha: Vec::new() })
        }
        ModelKind::Gat => {
            let proj = h.matmul(&p.w)?;
            let mut logits = vec![F::zero(); g.num_edges()];
            let mut alpha = vec![F::zero(); g.num_edges()];
            let mut out = DenseMatrix::zeros(nv, p.w.cols());
            for v in 0..nv {
                let r = g.in_edge_range(v);
                if r.is_empty() {
                    continue;
                }
                for e in r.clone() {
                    logits[e] = dot(&p.a_dst, proj.row(v)) + dot(&p.a_src, proj.row(g.edge_source(e)));
                }
                let mx = r.clone().map(|e| leaky(logits[e], slope)).fold(F::neg_infinity(), F::max);
                let z: F = r.clone().map(|e| (leaky(logits[e], slope) - mx).exp()).sum();
                for e in r {
                    alpha[e] = (leaky(logits[e], slope) - mx).exp() / z;
                    let u = g.edge_source(e);
                    for c in 0..out.cols() {
                        let x = out.get(v, c) + alpha[e] * proj.get(u, c);
                        out.set(v, c, x);
                    }
                }
            }
            Ok(LayerCache { input: h, pre: proj, out, logits, alpha })
        }
    }
}

fn relu_rows<F: Real>(m: &DenseMatrix<F>) -> DenseMatrix<F> {
    DenseMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c).max(F::zero()))
}

fn layer_backward<F: Real>(
    g: &Graph,
    kind: ModelKind,
    p: &LayerParams<F>,
    slope: F,
    cache: &LayerCache<F>,
    grad_h: &DenseMatrix<F>,
) -> Result<(LayerParams<F>, DenseMatrix<F>)> {
    let nv = g.num_vertices();
    let gout = DenseMatrix::from_fn(nv, grad_h.cols(), |r, c| {
        if cache.out.get(r, c) > F::zero() { grad_h.get(r, c) } else { F::zero() }
    });
    let mut gp = p.zeros_like();
    match kind {
        ModelKind::Gcn => {
            gp.w = cache.pre.transpose_matmul(&gout)?;
            let ga = gout.matmul_transpose(&p.w)?;
            let mut gin = DenseMatrix::zeros(nv, cache.input.cols());
            for e in 0..g.num_edges() {
                let (u, v) = g.edges_csc()[e];
                for c in 0..gin.cols() {
                    let x = gin.get(u, c) + F::of_f64(g.edge_weights()[e]) * ga.get(v, c);
                    gin.set(u, c, x);
                }
            }
            Ok((gp, gin))
        }
        ModelKind::Gat => {
            let proj = &cache.pre;
            let d = proj.cols();
            let mut gproj = DenseMatrix::zeros(nv, d);
            for v in 0..nv {
                let r = g.in_edge_range(v);
                let ga: Vec<F> = r.clone().map(|e| dot(gout.row(v), proj.row(g.edge_source(e)))).collect();
                let avg: F = r.clone().zip(&ga).map(|(e, &x)| cache.alpha[e] * x).sum();
                for (k, e) in r.enumerate() {
                    let u = g.edge_source(e);
                    for c in 0..d {
                        let x = gproj.get(u, c) + cache.alpha[e] * gout.get(v, c);
                        gproj.set(u, c, x);
                    }
                    let dl = if cache.logits[e] > F::zero() { F::one() } else { slope };
                    let gt = cache.alpha[e] * (ga[k] - avg) * dl;
                    for c in 0..d {
                        gp.a_dst[c] += gt * proj.get(v, c);
                        gp.a_src[c] += gt * proj.get(u, c);
                        let x = gproj.get(v, c) + gt * p.a_dst[c];
                        gproj.set(v, c, x);
                        let y = gproj.get(u, c) + gt * p.a_src[c];
                        gproj.set(u, c, y);
                    }
                }
            }
            gp.w = cache.input.transpose_matmul(&gproj)?;
            Ok((gp, gproj.matmul_transpose(&p.w)?))
        }
    }
}

/// Loss, gradients and logits of one full-graph pass.
pub fn forward_backward<F: Real>(g: &Graph, model: &Model<F>, data: &TrainData<F>) -> Result<(F, Gradients<F>, DenseMatrix<F>)> {
    let mut caches = Vec::with_capacity(model.num_layers());
    let mut h = data.features.clone();
    for p in &model.layers {
        let c = layer_forward(g, model.kind, p, model.leaky_slope, h)?;
        h = relu_rows(&c.out);
        caches.push(c);
    }
    let loss = softmax_cross_entropy(&h, &data.labels, &data.mask)?;
    let mut grad = loss.grad;
    let mut grads = vec![LayerParams { w: DenseMatrix::zeros(0, 0), a_src: Vec::new(), a_dst: Vec::new() }; model.num_layers()];
    for l in (0..model.num_layers()).rev() {
        let (gp, gin) = layer_backward(g, model.kind, &model.layers[l], model.leaky_slope, &caches[l], &grad)?;
        grads[l] = gp;
        grad = gin;
    }
    Ok((loss.loss, grads, h))
}

/// One full-graph SGD epoch; returns the pre-update loss.
pub fn train_epoch<F: Real>(g: &Graph, model: &mut Model<F>, data: &TrainData<F>, lr: F) -> Result<F> {
    let (loss, grads, _) = forward_backward(g, model, data)?;
    model.apply(&grads, lr)?;
    Ok(loss)
}
