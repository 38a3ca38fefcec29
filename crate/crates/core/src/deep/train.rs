use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{adam_step, loss_and_gradients, AdamConfig, AdamMoments, DeepRlsModel, Residual};
use crate::error::{Error, Result};
use crate::signal::MixtureDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the forgetting-parameter penalty.
    pub lambda: f64,
    pub residual: Residual,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 50,
            batch_size: 40,
            learning_rate: adam.learning_rate,
            lambda: 1.0,
            residual: Residual::Updated,
            seed: 0,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !positive(self.learning_rate) || !positive(self.adam_eps) {
            return Err(Error::invalid("learning rate and Adam epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam decay rates must lie in [0, 1)"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Mini-batch Adam training on the unfolded loss.
///
/// Each epoch shuffles the sequences, and each batch averages the loss and
/// gradients of its member sequences before a single Adam step. Returns the
/// trained model and the mean per-sequence loss of every epoch.
pub fn train(
    model: &DeepRlsModel,
    sequences: &[MixtureDataset],
    config: &TrainConfig,
) -> Result<(DeepRlsModel, Vec<f64>)> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for (i, d) in sequences.iter().enumerate() {
        if d.observations.shape() != (model.sensors(), model.depth()) {
            return Err(Error::invalid(format!(
                "training sequence {i} is {:?}, model expects {} x {}",
                d.observations.shape(),
                model.sensors(),
                model.depth()
            )));
        }
    }

    let mut model = model.clone();
    let adam = config.adam();
    let mut params = model.to_flat();
    let mut moments = AdamMoments::new(params.len());
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| loss_and_gradients(&model, &sequences[i].observations, config.lambda, config.residual))
                .collect::<Result<Vec<_>>>()?;
            // Reduce in batch order so the sum is independent of thread scheduling.
            let mut grad = vec![0.0; params.len()];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= scale);
            adam_step(&mut params, &grad, &mut moments, &adam)?;
            model.set_flat(&params)?;
        }
        history.push(epoch_loss / sequences.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::Nonlinearity;
    use crate::signal::{generate, GeneratorConfig};

    fn data(count: usize, len: usize) -> Vec<MixtureDataset> {
        let mut cfg = GeneratorConfig::new(2, len, 3);
        cfg.num_train = count;
        cfg.num_test = 0;
        generate(&cfg).unwrap().sequences
    }

    #[test]
    fn zero_epochs_is_identity() {
        let model = DeepRlsModel::init(4, 2, 6, Nonlinearity::Tanh, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&model, &data(3, 6), &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(history.is_empty());
    }

    #[test]
    fn rejects_empty_and_mismatched_sets() {
        let model = DeepRlsModel::init(4, 2, 6, Nonlinearity::Tanh, 1).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&model, &[], &cfg), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            train(&model, &data(2, 7), &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_sequence_loss_decreases() {
        let model = DeepRlsModel::init(4, 2, 10, Nonlinearity::Tanh, 1).unwrap();
        let cfg = TrainConfig::default();
        let (_, history) = train(&model, &data(1, 10), &cfg).unwrap();
        assert_eq!(history.len(), 50);
        assert!(history[49] < history[0], "{history:?}");
    }

    #[test]
    fn deterministic() {
        let model = DeepRlsModel::init(4, 2, 5, Nonlinearity::Tanh, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let set = data(10, 5);
        let a = train(&model, &set, &cfg).unwrap();
        let b = train(&model, &set, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tied_training_keeps_one_parameter_set() {
        let model = DeepRlsModel::init_tied(4, 2, 5, Nonlinearity::Tanh, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&model, &data(4, 5), &cfg).unwrap();
        assert!(trained.is_tied());
        assert_ne!(trained, model);
    }
}
