//! Graph convolution on one chunk: `a = sum_u d_uv h_u`, `z = a W`,
//! `h = ReLU(z)`.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::partition::LocalAdjacency;

use super::relu;

/// Intermediates the backward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnIntermediates<F: Real = f64> {
    pub a: DenseMatrix<F>,
    pub z: DenseMatrix<F>,
}

fn check_rows<F: Real>(adj: &LocalAdjacency, h_n: &DenseMatrix<F>) -> Result<()> {
    if h_n.rows() != adj.num_src() {
        return Err(Error::Dimension(format!(
            "{} neighbor rows for a chunk with {} sources",
            h_n.rows(),
            adj.num_src()
        )));
    }
    Ok(())
}

/// Weighted neighbor aggregation in CSC order.
pub fn aggregate<F: Real>(adj: &LocalAdjacency, h_n: &DenseMatrix<F>) -> Result<DenseMatrix<F>> {
    check_rows(adj, h_n)?;
    let mut a = DenseMatrix::zeros(adj.num_dst(), h_n.cols());
    for d in 0..adj.num_dst() {
        let out = a.row_mut(d);
        for pos in adj.in_range(d) {
            let w = F::of_f64(adj.weight_at(pos));
            for (o, &x) in out.iter_mut().zip(h_n.row(adj.src_at(pos))) {
                *o += w * x;
            }
        }
    }
    Ok(a)
}

/// Rebuilds every intermediate from the cached aggregate.
pub fn recompute<F: Real>(a: DenseMatrix<F>, w: &DenseMatrix<F>) -> Result<GcnIntermediates<F>> {
    let z = a.matmul(w)?;
    Ok(GcnIntermediates { a, z })
}

pub fn forward<F: Real>(
    adj: &LocalAdjacency,
    h_n: &DenseMatrix<F>,
    w: &DenseMatrix<F>,
) -> Result<(GcnIntermediates<F>, DenseMatrix<F>)> {
    let inter = recompute(aggregate(adj, h_n)?, w)?;
    let h = activate(&inter.z);
    Ok((inter, h))
}

pub fn activate<F: Real>(z: &DenseMatrix<F>) -> DenseMatrix<F> {
    let v = z.as_slice().iter().map(|&x| relu(x)).collect();
    DenseMatrix::from_vec(z.rows(), z.cols(), v).expect("same shape")
}

/// Returns `(dL/dW, dL/dh_N)` given `dL/dh` of the chunk's destinations.
pub fn backward<F: Real>(
    adj: &LocalAdjacency,
    inter: &GcnIntermediates<F>,
    w: &DenseMatrix<F>,
    grad_h: &DenseMatrix<F>,
) -> Result<(DenseMatrix<F>, DenseMatrix<F>)> {
    if grad_h.shape() != inter.z.shape() {
        return Err(Error::Dimension(format!(
            "output gradient {:?} does not match activations {:?}",
            grad_h.shape(),
            inter.z.shape()
        )));
    }
    let mut gz = grad_h.clone();
    for (g, &z) in gz.as_mut_slice().iter_mut().zip(inter.z.as_slice()) {
        if z <= F::zero() {
            *g = F::zero();
        }
    }
    let gw = inter.a.transpose_matmul(&gz)?;
    let ga = gz.matmul_transpose(w)?;
    let mut gn = DenseMatrix::zeros(adj.num_src(), w.rows());
    for s in 0..adj.num_src() {
        let out = gn.row_mut(s);
        for &pos in adj.out_positions(s) {
            let wt = F::of_f64(adj.weight_at(pos));
            for (o, &x) in out.iter_mut().zip(ga.row(adj.dst_at(pos))) {
                *o += wt * x;
            }
        }
    }
    Ok((gw, gn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::LocalEdge;

    fn adj() -> LocalAdjacency {
        let e = |src, dst, weight| LocalEdge {
            src,
            dst,
            weight,
            edge_id: 0,
        };
        LocalAdjacency::from_edges(3, 2, vec![e(0, 0, 0.5), e(2, 0, 0.25), e(1, 1, 1.0), e(2, 1, 2.0)]).unwrap()
    }

    #[test]
    fn aggregate_by_hand() {
        let h = DenseMatrix::from_vec(3, 1, vec![1.0, 10.0, 100.0]).unwrap();
        let a = aggregate(&adj(), &h).unwrap();
        assert_eq!(a.as_slice(), &[0.5 + 25.0, 10.0 + 200.0]);
        let bad = DenseMatrix::<f64>::zeros(2, 1);
        assert!(aggregate(&adj(), &bad).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let adj = adj();
        let h = DenseMatrix::from_fn(3, 2, |r, c| 0.3 * r as f64 - 0.7 * c as f64 + 0.1);
        let w = DenseMatrix::from_fn(2, 2, |r, c| if r == c { 0.9 } else { -0.4 });
        let up = DenseMatrix::from_fn(2, 2, |r, c| 1.0 + r as f64 - 0.5 * c as f64);
        // L = sum(up * h_out)
        let loss = |h: &DenseMatrix<f64>, w: &DenseMatrix<f64>| {
            let (_, out) = forward(&adj, h, w).unwrap();
            out.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (inter, _) = forward(&adj, &h, &w).unwrap();
        let (gw, gn) = backward(&adj, &inter, &w, &up).unwrap();
        let eps = 1e-6;
        for k in 0..4 {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.as_mut_slice()[k] += eps;
            m.as_mut_slice()[k] -= eps;
            let fd = (loss(&h, &p) - loss(&h, &m)) / (2.0 * eps);
            assert!((fd - gw.as_slice()[k]).abs() < 1e-7, "w[{k}] {fd} vs {}", gw.as_slice()[k]);
        }
        for k in 0..6 {
            let (mut p, mut m) = (h.clone(), h.clone());
            p.as_mut_slice()[k] += eps;
            m.as_mut_slice()[k] -= eps;
            let fd = (loss(&p, &w) - loss(&m, &w)) / (2.0 * eps);
            assert!((fd - gn.as_slice()[k]).abs() < 1e-7, "h[{k}]");
        }
    }

    #[test]
    fn recompute_is_bitwise() {
        let adj = adj();
        let h = DenseMatrix::from_fn(3, 3, |r, c| ((r * 7 + c * 3) as f64).sin());
        let w = DenseMatrix::from_fn(3, 2, |r, c| ((r + 2 * c) as f64).cos());
        let (inter, _) = forward(&adj, &h, &w).unwrap();
        let again = recompute(inter.a.clone(), &w).unwrap();
        assert_eq!(inter, again);
    }
}
