//! Single-head graph attention on one chunk.
//!
//! `p = h_N W`, `q = h_V W`, edge logit `t = a_dst . q_v + a_src . p_u`,
//! score `LeakyReLU(t)`, per-destination softmax `alpha`, `o = sum alpha p_u`,
//! `h = ReLU(o)`. A destination without in-edges produces a zero row.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real, dot};
use crate::partition::LocalAdjacency;

use super::{LayerParams, relu};

#[derive(Debug, Clone, PartialEq)]
pub struct GatIntermediates<F: Real = f64> {
    pub p: DenseMatrix<F>,
    pub q: DenseMatrix<F>,
    /// Pre-activation logits per CSC position.
    pub t: Vec<F>,
    pub alpha: Vec<F>,
    pub o: DenseMatrix<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatGrads<F: Real = f64> {
    pub params: LayerParams<F>,
    pub h_n: DenseMatrix<F>,
    pub h_v: DenseMatrix<F>,
}

fn leaky<F: Real>(x: F, slope: F) -> F {
    if x > F::zero() { x } else { slope * x }
}

fn leaky_grad<F: Real>(x: F, slope: F) -> F {
    if x > F::zero() { F::one() } else { slope }
}

pub fn forward<F: Real>(
    adj: &LocalAdjacency,
    h_n: &DenseMatrix<F>,
    h_v: &DenseMatrix<F>,
    params: &LayerParams<F>,
    slope: F,
) -> Result<(GatIntermediates<F>, DenseMatrix<F>)> {
    if h_n.rows() != adj.num_src() || h_v.rows() != adj.num_dst() {
        return Err(Error::Dimension(format!(
            "GAT inputs {:?}/{:?} for a chunk with {} sources and {} destinations",
            h_n.shape(),
            h_v.shape(),
            adj.num_src(),
            adj.num_dst()
        )));
    }
    let dout = params.w.cols();
    if params.a_src.len() != dout || params.a_dst.len() != dout {
        return Err(Error::Dimension(format!("attention vectors must have length {dout}")));
    }
    let p = h_n.matmul(&params.w)?;
    let q = h_v.matmul(&params.w)?;
    let src_score: Vec<F> = (0..p.rows()).map(|u| dot(&params.a_src, p.row(u))).collect();
    let mut t = vec![F::zero(); adj.num_edges()];
    let mut alpha = vec![F::zero(); adj.num_edges()];
    let mut o = DenseMatrix::zeros(adj.num_dst(), dout);
    for d in 0..adj.num_dst() {
        let range = adj.in_range(d);
        if range.is_empty() {
            continue;
        }
        let ds = dot(&params.a_dst, q.row(d));
        let mut max = F::neg_infinity();
        for pos in range.clone() {
            t[pos] = ds + src_score[adj.src_at(pos)];
            max = max.max(leaky(t[pos], slope));
        }
        let mut sum = F::zero();
        for pos in range.clone() {
            alpha[pos] = (leaky(t[pos], slope) - max).exp();
            sum += alpha[pos];
        }
        let out = o.row_mut(d);
        for pos in range {
            alpha[pos] /= sum;
            for (x, &y) in out.iter_mut().zip(p.row(adj.src_at(pos))) {
                *x += alpha[pos] * y;
            }
        }
    }
    let h = DenseMatrix::from_vec(o.rows(), dout, o.as_slice().iter().map(|&x| relu(x)).collect())?;
    Ok((GatIntermediates { p, q, t, alpha, o }, h))
}

pub fn backward<F: Real>(
    adj: &LocalAdjacency,
    inter: &GatIntermediates<F>,
    h_n: &DenseMatrix<F>,
    h_v: &DenseMatrix<F>,
    params: &LayerParams<F>,
    slope: F,
    grad_h: &DenseMatrix<F>,
) -> Result<GatGrads<F>> {
    if grad_h.shape() != inter.o.shape() {
        return Err(Error::Dimension(format!(
            "output gradient {:?} does not match activations {:?}",
            grad_h.shape(),
            inter.o.shape()
        )));
    }
    let dout = params.w.cols();
    let mut go = grad_h.clone();
    for (g, &o) in go.as_mut_slice().iter_mut().zip(inter.o.as_slice()) {
        if o <= F::zero() {
            *g = F::zero();
        }
    }
    let mut gp = DenseMatrix::zeros(inter.p.rows(), dout);
    let mut gq = DenseMatrix::zeros(inter.q.rows(), dout);
    let mut g_src = DenseMatrix::<F>::zeros(1, dout);
    let mut g_dst = DenseMatrix::<F>::zeros(1, dout);
    // dL/dt per edge, then fold into p, q and the attention vectors
    let mut gt = vec![F::zero(); adj.num_edges()];
    for d in 0..adj.num_dst() {
        let range = adj.in_range(d);
        let god = go.row(d);
        let mut weighted = F::zero();
        let mut galpha = Vec::with_capacity(range.len());
        for pos in range.clone() {
            let u = adj.src_at(pos);
            let ga = dot(god, inter.p.row(u));
            weighted += inter.alpha[pos] * ga;
            galpha.push(ga);
            for (x, &y) in gp.row_mut(u).iter_mut().zip(god) {
                *x += inter.alpha[pos] * y;
            }
        }
        for (k, pos) in range.enumerate() {
            let gs = inter.alpha[pos] * (galpha[k] - weighted);
            gt[pos] = gs * leaky_grad(inter.t[pos], slope);
        }
    }
    for d in 0..adj.num_dst() {
        for pos in adj.in_range(d) {
            let u = adj.src_at(pos);
            let g = gt[pos];
            for (x, &y) in g_dst.row_mut(0).iter_mut().zip(inter.q.row(d)) {
                *x += g * y;
            }
            for (x, &y) in g_src.row_mut(0).iter_mut().zip(inter.p.row(u)) {
                *x += g * y;
            }
            for (x, &y) in gq.row_mut(d).iter_mut().zip(&params.a_dst) {
                *x += g * y;
            }
            for (x, &y) in gp.row_mut(u).iter_mut().zip(&params.a_src) {
                *x += g * y;
            }
        }
    }
    let mut gw = h_n.transpose_matmul(&gp)?;
    gw.add_assign(&h_v.transpose_matmul(&gq)?)?;
    Ok(GatGrads {
        params: LayerParams {
            w: gw,
            a_src: g_src.into_vec(),
            a_dst: g_dst.into_vec(),
        },
        h_n: gp.matmul_transpose(&params.w)?,
        h_v: gq.matmul_transpose(&params.w)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::LocalEdge;

    fn adj() -> LocalAdjacency {
        let e = |src, dst| LocalEdge {
            src,
            dst,
            weight: 1.0,
            edge_id: 0,
        };
        // destination 2 has no in-edges
        LocalAdjacency::from_edges(3, 3, vec![e(0, 0), e(1, 0), e(2, 0), e(1, 1), e(2, 1)]).unwrap()
    }

    fn params() -> LayerParams<f64> {
        LayerParams {
            w: DenseMatrix::from_fn(2, 3, |r, c| ((r * 3 + c) as f64 * 0.7).sin()),
            a_src: vec![0.4, -0.3, 0.8],
            a_dst: vec![-0.6, 0.5, 0.2],
        }
    }

    fn inputs() -> (DenseMatrix<f64>, DenseMatrix<f64>) {
        (
            DenseMatrix::from_fn(3, 2, |r, c| (r as f64 + 1.0) * 0.5 - c as f64 * 0.3),
            DenseMatrix::from_fn(3, 2, |r, c| 0.2 * r as f64 + 0.4 * c as f64 - 0.1),
        )
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let adj = adj();
        let (hn, hv) = inputs();
        let (inter, h) = forward(&adj, &hn, &hv, &params(), 0.2).unwrap();
        for d in 0..2 {
            let s: f64 = adj.in_range(d).map(|p| inter.alpha[p]).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!(h.row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_is_shift_stable() {
        let adj = adj();
        let (hn, hv) = inputs();
        let mut big = params();
        big.a_src.iter_mut().for_each(|x| *x *= 400.0);
        let (inter, _) = forward(&adj, &hn, &hv, &big, 0.2).unwrap();
        assert!(inter.alpha.iter().all(|a| a.is_finite()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let adj = adj();
        let (hn, hv) = inputs();
        let prm = params();
        let up = DenseMatrix::from_fn(3, 3, |r, c| 1.0 - 0.3 * r as f64 + 0.2 * c as f64);
        let loss = |hn: &DenseMatrix<f64>, hv: &DenseMatrix<f64>, p: &LayerParams<f64>| {
            let (_, h) = forward(&adj, hn, hv, p, 0.2).unwrap();
            h.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (inter, _) = forward(&adj, &hn, &hv, &prm, 0.2).unwrap();
        let g = backward(&adj, &inter, &hn, &hv, &prm, 0.2, &up).unwrap();
        let eps = 1e-6;
        let flat = g.params.flat();
        for k in 0..prm.num_scalars() {
            let (mut p, mut m) = (prm.clone(), prm.clone());
            *p.scalar_mut(k) += eps;
            *m.scalar_mut(k) -= eps;
            let fd = (loss(&hn, &hv, &p) - loss(&hn, &hv, &m)) / (2.0 * eps);
            assert!((fd - flat[k]).abs() < 1e-7, "param {k}: {fd} vs {}", flat[k]);
        }
        for k in 0..6 {
            let (mut p, mut m) = (hn.clone(), hn.clone());
            p.as_mut_slice()[k] += eps;
            m.as_mut_slice()[k] -= eps;
            let fd = (loss(&p, &hv, &prm) - loss(&m, &hv, &prm)) / (2.0 * eps);
            assert!((fd - g.h_n.as_slice()[k]).abs() < 1e-7, "h_n[{k}]");
            let (mut p, mut m) = (hv.clone(), hv.clone());
            p.as_mut_slice()[k] += eps;
            m.as_mut_slice()[k] -= eps;
            let fd = (loss(&hn, &p, &prm) - loss(&hn, &m, &prm)) / (2.0 * eps);
            assert!((fd - g.h_v.as_slice()[k]).abs() < 1e-7, "h_v[{k}]");
        }
    }
}
