//! Layer kernels, model parameters and the chunk-pipelined trainer.

pub mod gat;
pub mod gcn;
pub mod loss;
pub mod reference;
mod tracker;
mod train;

pub use crate::sim::GradFlush;
pub use tracker::ActivationTracker;
pub use train::{CheckpointPolicy, EpochReport, Pass, TrainData, TrainOptions, Trainer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Gcn,
    Gat,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
        }
    }
}

/// Parameters of one layer. `a_src`/`a_dst` are empty for GCN.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F: Real = f64> {
    pub w: DenseMatrix<F>,
    pub a_src: Vec<F>,
    pub a_dst: Vec<F>,
}

impl<F: Real> LayerParams<F> {
    pub fn zeros_like(&self) -> Self {
        Self {
            w: DenseMatrix::zeros(self.w.rows(), self.w.cols()),
            a_src: vec![F::zero(); self.a_src.len()],
            a_dst: vec![F::zero(); self.a_dst.len()],
        }
    }

    pub fn add_assign(&mut self, o: &Self) -> Result<()> {
        self.w.add_assign(&o.w)?;
        add_vec(&mut self.a_src, &o.a_src);
        add_vec(&mut self.a_dst, &o.a_dst);
        Ok(())
    }

    fn sub_scaled(&mut self, lr: F, g: &Self) -> Result<()> {
        self.w.sub_scaled(lr, &g.w)?;
        for (p, &d) in self.a_src.iter_mut().zip(&g.a_src) {
            *p -= lr * d;
        }
        for (p, &d) in self.a_dst.iter_mut().zip(&g.a_dst) {
            *p -= lr * d;
        }
        Ok(())
    }

    /// All scalars in a fixed order: `w` row-major, then `a_src`, `a_dst`.
    pub fn flat(&self) -> Vec<F> {
        let mut v = self.w.as_slice().to_vec();
        v.extend_from_slice(&self.a_src);
        v.extend_from_slice(&self.a_dst);
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.w.rows() * self.w.cols() + self.a_src.len() + self.a_dst.len()
    }

    /// Mutable access to scalar `k` in [`LayerParams::flat`] order.
    pub fn scalar_mut(&mut self, k: usize) -> &mut F {
        let nw = self.w.rows() * self.w.cols();
        if k < nw {
            &mut self.w.as_mut_slice()[k]
        } else if k < nw + self.a_src.len() {
            &mut self.a_src[k - nw]
        } else {
            &mut self.a_dst[k - nw - self.a_src.len()]
        }
    }

    fn cast<G: Real>(&self) -> LayerParams<G> {
        LayerParams {
            w: self.w.cast(),
            a_src: self.a_src.iter().map(|x| G::of_f64(x.as_f64())).collect(),
            a_dst: self.a_dst.iter().map(|x| G::of_f64(x.as_f64())).collect(),
        }
    }
}

fn add_vec<F: Real>(a: &mut [F], b: &[F]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F: Real = f64> {
    pub kind: ModelKind,
    pub dims: Vec<usize>,
    pub leaky_slope: F,
    pub layers: Vec<LayerParams<F>>,
}

/// Gradients share the parameter layout.
pub type Gradients<F = f64> = Vec<LayerParams<F>>;

impl<F: Real> Model<F> {
    /// Glorot-uniform weights drawn from a seeded ChaCha8 stream, layer by
    /// layer (`W` row-major, then `a_src`, then `a_dst`).
    pub fn init(kind: ModelKind, dims: &[usize], leaky_slope: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dimensions {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, bound: f64| -> Vec<F> {
            (0..n).map(|_| F::of_f64(rng.random_range(-bound..=bound))).collect()
        };
        let layers = dims
            .windows(2)
            .map(|d| {
                let (din, dout) = (d[0], d[1]);
                let w = uniform(din * dout, (6.0 / (din + dout) as f64).sqrt());
                let (a_src, a_dst) = match kind {
                    ModelKind::Gcn => (Vec::new(), Vec::new()),
                    ModelKind::Gat => {
                        let b = (6.0 / (1 + 2 * dout) as f64).sqrt();
                        (uniform(dout, b), uniform(dout, b))
                    }
                };
                LayerParams {
                    w: DenseMatrix::from_vec(din, dout, w).expect("sized"),
                    a_src,
                    a_dst,
                }
            })
            .collect();
        Ok(Self {
            kind,
            dims: dims.to_vec(),
            leaky_slope: F::of_f64(leaky_slope),
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_grads(&self) -> Gradients<F> {
        self.layers.iter().map(LayerParams::zeros_like).collect()
    }

    /// Plain SGD step.
    pub fn apply(&mut self, grads: &Gradients<F>, lr: F) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "{} gradient layers for {} model layers",
                grads.len(),
                self.layers.len()
            )));
        }
        for (p, g) in self.layers.iter_mut().zip(grads) {
            p.sub_scaled(lr, g)?;
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            kind: self.kind,
            dims: self.dims.clone(),
            leaky_slope: G::of_f64(self.leaky_slope.as_f64()),
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }
}

/// Largest per-layer relative error between two gradient sets.
pub fn grad_relative_error<F: Real>(a: &Gradients<F>, b: &Gradients<F>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let fx = x.flat();
            let fy = y.flat();
            let diff: f64 = fx.iter().zip(&fy).map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2)).sum();
            let norm: f64 = fy.iter().map(|q| q.as_f64().powi(2)).sum();
            diff.sqrt() / norm.sqrt().max(1.0)
        })
        .fold(0.0, f64::max)
}

#[inline]
pub(crate) fn relu<F: Real>(x: F) -> F {
    if x > F::zero() { x } else { F::zero() }
}
