//! The unfolded network: one RLS iteration per layer with trainable
//! per-layer weights `H_k`, biases `b_k` and forgetting parameters `omega_k`.

mod adam;
mod checkpoint;
mod forward;
mod metrics;
mod train;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use checkpoint::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub use forward::{forward, loss, loss_and_gradients, loss_with, penalty, ForwardOutput, LayerTrace, Residual};
pub use metrics::{evaluate, evaluate_per_sequence, sequence_metrics, Metrics, MAX_ALIGNED_SOURCES};
pub use train::{train, TrainConfig};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::rls::{orthonormal_init, DEFAULT_DELTA};
use crate::signal::derive_seed;

/// Initial forgetting parameter of every layer.
pub const INITIAL_OMEGA: f64 = 0.99;

/// Std of the Gaussian perturbation added to `H_k = I` at initialization.
pub const INITIAL_H_JITTER: f64 = 0.01;

/// Trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `m x m`.
    pub h: DMatrix<f64>,
    /// Length `m`.
    pub b: DVector<f64>,
    pub omega: f64,
}

impl LayerParams {
    /// `H = I`, `b = 0`: the layer reduces to a plain RLS step with forgetting factor `omega`.
    pub fn identity(m: usize, omega: f64) -> Self {
        Self {
            h: DMatrix::identity(m, m),
            b: DVector::zeros(m),
            omega,
        }
    }

    pub fn sources(&self) -> usize {
        self.b.len()
    }

    fn param_count(m: usize) -> usize {
        m * m + m + 1
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        let m = self.sources();
        for r in 0..m {
            for c in 0..m {
                out.push(self.h[(r, c)]);
            }
        }
        out.extend(self.b.iter());
        out.push(self.omega);
    }

    fn read_flat(&mut self, src: &[f64]) {
        let m = self.sources();
        for r in 0..m {
            for c in 0..m {
                self.h[(r, c)] = src[r * m + c];
            }
        }
        for i in 0..m {
            self.b[i] = src[m * m + i];
        }
        self.omega = src[m * m + m];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepRlsModel {
    /// One entry per layer, or a single shared entry in tied mode.
    params: Vec<LayerParams>,
    depth: usize,
    w0: DMatrix<f64>,
    p0: DMatrix<f64>,
    nonlinearity: Nonlinearity,
}

impl DeepRlsModel {
    /// `T` layers with `H_k = I + N(0, 0.01^2)`, `b_k = 0`, `omega_k = 0.99`,
    /// orthonormal Gaussian `W0` and `P0 = 100 I`.
    pub fn init(l: usize, m: usize, depth: usize, g: Nonlinearity, seed: u64) -> Result<Self> {
        Self::init_inner(l, m, depth, g, seed, false)
    }

    /// Same initialization with one parameter set shared by every layer.
    pub fn init_tied(l: usize, m: usize, depth: usize, g: Nonlinearity, seed: u64) -> Result<Self> {
        Self::init_inner(l, m, depth, g, seed, true)
    }

    fn init_inner(l: usize, m: usize, depth: usize, g: Nonlinearity, seed: u64, tied: bool) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("model depth must be at least one layer"));
        }
        let w0 = orthonormal_init(l, m, derive_seed(seed, 1, 0))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, 0));
        let sets = if tied { 1 } else { depth };
        let params = (0..sets)
            .map(|_| {
                let mut layer = LayerParams::identity(m, INITIAL_OMEGA);
                for v in layer.h.iter_mut() {
                    *v += INITIAL_H_JITTER * rng.sample::<f64, _>(StandardNormal);
                }
                layer
            })
            .collect();
        Ok(Self {
            params,
            depth,
            w0,
            p0: DMatrix::identity(m, m) / DEFAULT_DELTA,
            nonlinearity: g,
        })
    }

    /// Builds a model from explicit parts. `params` holds either `depth`
    /// entries, or exactly one entry for a tied model.
    pub fn from_parts(
        params: Vec<LayerParams>,
        depth: usize,
        w0: DMatrix<f64>,
        p0: DMatrix<f64>,
        g: Nonlinearity,
    ) -> Result<Self> {
        let m = w0.ncols();
        if depth == 0 || m == 0 || w0.nrows() < m {
            return Err(Error::invalid(format!(
                "invalid dimensions: depth {depth}, W0 {:?}",
                w0.shape()
            )));
        }
        if p0.shape() != (m, m) {
            return Err(Error::invalid(format!("P0 must be {m} x {m}, got {:?}", p0.shape())));
        }
        if params.len() != depth && params.len() != 1 {
            return Err(Error::invalid(format!(
                "{} parameter sets for {depth} layers",
                params.len()
            )));
        }
        for (k, p) in params.iter().enumerate() {
            if p.h.shape() != (m, m) || p.b.len() != m {
                return Err(Error::invalid(format!("layer {k} parameters do not match m = {m}")));
            }
        }
        Ok(Self {
            params,
            depth,
            w0,
            p0,
            nonlinearity: g,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn sensors(&self) -> usize {
        self.w0.nrows()
    }

    pub fn sources(&self) -> usize {
        self.w0.ncols()
    }

    /// True when every layer shares one parameter set. A depth-1 model is never tied.
    pub fn is_tied(&self) -> bool {
        self.params.len() == 1 && self.depth > 1
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn w0(&self) -> &DMatrix<f64> {
        &self.w0
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    /// Parameters used by layer `k` (0-based).
    pub fn layer(&self, k: usize) -> &LayerParams {
        &self.params[if self.params.len() == 1 { 0 } else { k }]
    }

    /// The distinct parameter sets.
    pub fn parameter_sets(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn parameter_sets_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len() * LayerParams::param_count(self.sources())
    }

    /// Flattened parameters: for each set, `H` row-major, then `b`, then `omega`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            p.write_flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let stride = LayerParams::param_count(self.sources());
        for (p, chunk) in self.params.iter_mut().zip(flat.chunks_exact(stride)) {
            p.read_flat(chunk);
        }
        Ok(())
    }

    /// Copy with every layer's parameters stored separately.
    pub fn untied(&self) -> Self {
        let params = (0..self.depth).map(|k| self.layer(k).clone()).collect();
        Self { params, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_contract() {
        let model = DeepRlsModel::init(4, 2, 10, Nonlinearity::Tanh, 3).unwrap();
        assert_eq!(model.depth(), 10);
        assert_eq!(model.parameter_sets().len(), 10);
        let eye = DMatrix::<f64>::identity(2, 2);
        for k in 0..10 {
            let layer = model.layer(k);
            assert!((&layer.h - &eye).amax() < 0.05);
            assert_ne!(layer.h, eye);
            assert_eq!(layer.b, DVector::zeros(2));
            assert_eq!(layer.omega, 0.99);
        }
        assert!((model.w0().tr_mul(model.w0()) - &eye).amax() < 1e-12);
        assert_eq!(model.p0(), &(eye * 100.0));
        assert_eq!(model, DeepRlsModel::init(4, 2, 10, Nonlinearity::Tanh, 3).unwrap());
        assert_ne!(model, DeepRlsModel::init(4, 2, 10, Nonlinearity::Tanh, 4).unwrap());
    }

    #[test]
    fn init_rejects_bad_dimensions() {
        assert!(matches!(
            DeepRlsModel::init(4, 2, 0, Nonlinearity::Tanh, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(DeepRlsModel::init(1, 2, 3, Nonlinearity::Tanh, 0).is_err());
    }

    #[test]
    fn flat_parameters_round_trip() {
        let mut model = DeepRlsModel::init(3, 2, 4, Nonlinearity::Tanh, 1).unwrap();
        let flat = model.to_flat();
        assert_eq!(flat.len(), 4 * 7);
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        model.set_flat(&shifted).unwrap();
        assert_eq!(model.to_flat(), shifted);
        assert_eq!(model.layer(0).omega, 1.99);
        assert!(model.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn tied_model_shares_parameters() {
        let model = DeepRlsModel::init_tied(3, 2, 5, Nonlinearity::Tanh, 1).unwrap();
        assert!(model.is_tied());
        assert_eq!(model.param_count(), 7);
        assert_eq!(model.layer(0), model.layer(4));
        let untied = model.untied();
        assert!(!untied.is_tied());
        assert_eq!(untied.parameter_sets().len(), 5);
    }
}
