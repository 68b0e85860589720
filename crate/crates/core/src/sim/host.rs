use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};

/// Host-resident training state: per-layer representations, their
/// gradients and recomputation checkpoints.
#[derive(Debug, Clone)]
pub struct HostStore<F: Real = f64> {
    /// `h[l]` for `l = 0..=L`.
    pub h: Vec<DenseMatrix<F>>,
    /// `grad[l]` aligned with `h[l]`.
    pub grad: Vec<DenseMatrix<F>>,
    checkpoints: HashMap<(usize, usize, usize), DenseMatrix<F>>,
    forwarded: Vec<bool>,
}

impl<F: Real> HostStore<F> {
    pub fn new(features: DenseMatrix<F>, dims: &[usize]) -> Result<Self> {
        if dims.first() != Some(&features.cols()) {
            return Err(Error::Dimension(format!(
                "features have {} columns, model expects {:?}",
                features.cols(),
                dims.first()
            )));
        }
        let n = features.rows();
        let mut h = vec![features];
        h.extend(dims[1..].iter().map(|&d| DenseMatrix::zeros(n, d)));
        let grad = dims.iter().map(|&d| DenseMatrix::zeros(n, d)).collect();
        Ok(Self {
            h,
            grad,
            checkpoints: HashMap::new(),
            forwarded: vec![false; dims.len() - 1],
        })
    }

    pub fn num_layers(&self) -> usize {
        self.h.len() - 1
    }

    pub fn num_vertices(&self) -> usize {
        self.h[0].rows()
    }

    pub(crate) fn put_checkpoint(&mut self, layer: usize, partition: usize, chunk: usize, m: DenseMatrix<F>) {
        self.checkpoints.insert((layer, partition, chunk), m);
    }

    pub fn checkpoint(&self, layer: usize, partition: usize, chunk: usize) -> Result<&DenseMatrix<F>> {
        self.checkpoints
            .get(&(layer, partition, chunk))
            .ok_or(Error::MissingCheckpoint {
                layer,
                partition,
                chunk,
            })
    }

    pub fn mark_forwarded(&mut self, layer: usize) {
        self.forwarded[layer] = true;
    }

    pub fn is_forwarded(&self, layer: usize) -> bool {
        self.forwarded.get(layer).copied().unwrap_or(false)
    }

    /// Drops checkpoints and forward marks; representations stay.
    pub fn clear_checkpoints(&mut self) {
        self.checkpoints.clear();
        self.forwarded.iter_mut().for_each(|f| *f = false);
    }

    pub fn zero_grads(&mut self) {
        self.grad.iter_mut().for_each(DenseMatrix::fill_zero);
    }

    pub fn checkpoint_rows(&self) -> usize {
        self.checkpoints.values().map(DenseMatrix::rows).sum()
    }
}
