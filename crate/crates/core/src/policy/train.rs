use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::transmit::{ChannelBatch, ChannelSet};

use super::{loss_and_gradients, stack_inputs, AdamConfig, MLPParams, OptimizerState, PolicyError, Result, DEFAULT_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatches per epoch; `None` covers the dataset once per epoch.
    pub batches_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batches_per_epoch: None, batch_size: 256, seed: 0, hidden: DEFAULT_HIDDEN.to_vec(), adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batches_per_epoch == Some(0) || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(PolicyError::InvalidConfig(format!(
                "batch size {}, batches per epoch {:?}, hidden {:?}",
                self.batch_size, self.batches_per_epoch, self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MLPParams,
    pub log: Vec<EpochLog>,
}

/// Trains from a seeded initialisation; see [`train_with`].
pub fn train(config: &TrainConfig, dataset: &[ChannelSet]) -> Result<TrainOutcome> {
    train_with(config, dataset, |_| {})
}

/// Epoch loop over shuffled minibatches with one Adam update per batch.
/// `on_epoch` sees each log entry as it is produced. Runs are bit-identical
/// for equal seeds.
pub fn train_with(config: &TrainConfig, dataset: &[ChannelSet], mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    config.validate()?;
    let m = config.batch_size;
    if dataset.len() < m {
        return Err(PolicyError::DatasetTooSmall { have: dataset.len(), need: m });
    }
    let dims = dataset[0].dims();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MLPParams::init(dims, &config.hidden, &mut rng)?;
    let mut opt = OptimizerState::new(config.adam, &params.trainable())?;
    let batches = config.batches_per_epoch.unwrap_or(dataset.len() / m);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        for _ in 0..batches {
            if cursor + m > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let sets: Vec<&ChannelSet> = order[cursor..cursor + m].iter().map(|&i| &dataset[i]).collect();
            cursor += m;
            let batch = ChannelBatch::new(&sets)?;
            let x = stack_inputs(&sets)?;
            let (l, grads, stats) = loss_and_gradients(&params, &batch, &x)?;
            opt.step(&mut params.trainable_mut(), &grads)?;
            params.update_running_stats(&stats, m);
            total += l;
        }
        let entry = EpochLog { epoch, mean_loss: total / batches as f64, seconds: start.elapsed().as_secs_f64() };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}
