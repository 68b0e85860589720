//! Masked softmax cross-entropy.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<F: Real = f64> {
    pub loss: F,
    /// `dL/dlogits`, zero outside the mask.
    pub grad: DenseMatrix<F>,
    pub correct: usize,
    pub counted: usize,
}

/// Mean cross-entropy over masked rows. An empty mask yields zero loss and
/// a zero gradient.
pub fn softmax_cross_entropy<F: Real>(
    logits: &DenseMatrix<F>,
    labels: &[usize],
    mask: &[bool],
) -> Result<LossOutput<F>> {
    let (n, c) = logits.shape();
    if labels.len() != n || mask.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels and {} mask entries for {n} rows",
            labels.len(),
            mask.len()
        )));
    }
    if let Some(v) = (0..n).find(|&v| mask[v] && labels[v] >= c) {
        return Err(Error::Dimension(format!(
            "label {} of vertex {v} exceeds {c} classes",
            labels[v]
        )));
    }
    let counted = mask.iter().filter(|&&b| b).count();
    let mut grad = DenseMatrix::zeros(n, c);
    let mut loss = F::zero();
    let mut correct = 0;
    if counted == 0 {
        return Ok(LossOutput {
            loss,
            grad,
            correct,
            counted,
        });
    }
    let scale = F::one() / F::from_usize(counted).expect("count fits");
    for v in (0..n).filter(|&v| mask[v]) {
        let row = logits.row(v);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let sum: F = row.iter().map(|&x| (x - max).exp()).sum();
        loss += (sum.ln() + max - row[labels[v]]) * scale;
        let argmax = row
            .iter()
            .enumerate()
            .fold(0, |b, (k, &x)| if x > row[b] { k } else { b });
        correct += usize::from(argmax == labels[v]);
        for (k, g) in grad.row_mut(v).iter_mut().enumerate() {
            let p = (row[k] - max).exp() / sum;
            let y = if k == labels[v] { F::one() } else { F::zero() };
            *g = (p - y) * scale;
        }
    }
    Ok(LossOutput {
        loss,
        grad,
        correct,
        counted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let l = DenseMatrix::<f64>::zeros(2, 4);
        let out = softmax_cross_entropy(&l, &[1, 3], &[true, true]).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-15);
        assert!((out.grad.get(0, 1) - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((out.grad.get(1, 0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn mask_and_errors() {
        let l = DenseMatrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let out = softmax_cross_entropy(&l, &[0, 0], &[true, false]).unwrap();
        assert_eq!(out.grad.row(1), &[0.0, 0.0]);
        assert_eq!((out.correct, out.counted), (1, 1));
        let empty = softmax_cross_entropy(&l, &[0, 0], &[false, false]).unwrap();
        assert_eq!(empty.loss, 0.0);
        assert!(empty.grad.as_slice().iter().all(|&g| g == 0.0));
        assert!(softmax_cross_entropy(&l, &[0, 5], &[true, true]).is_err());
        assert!(softmax_cross_entropy(&l, &[0], &[true]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let l = DenseMatrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64 * 0.37 - 1.0);
        let labels = [2, 0, 1];
        let mask = [true, true, false];
        let out = softmax_cross_entropy(&l, &labels, &mask).unwrap();
        for k in 0..9 {
            let (mut p, mut m) = (l.clone(), l.clone());
            p.as_mut_slice()[k] += 1e-6;
            m.as_mut_slice()[k] -= 1e-6;
            let fd = (softmax_cross_entropy(&p, &labels, &mask).unwrap().loss
                - softmax_cross_entropy(&m, &labels, &mask).unwrap().loss)
                / 2e-6;
            assert!((fd - out.grad.as_slice()[k]).abs() < 1e-8);
        }
    }
}
