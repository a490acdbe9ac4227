//! Joint optimisation of the CTE and vector-field parameters.
//!
//! Every step draws its batch indices, crops, reference segments and flow noise from a
//! ChaCha stream keyed by `(seed, iteration)`, so a run resumed from a checkpoint
//! replays exactly the steps an uninterrupted run would have taken.

mod checkpoint;
mod config;
mod data;
mod metrics;
mod optim;
mod step;
mod validate;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelPreset, TrainConfig};
pub use data::{build_batch, BatchItem, Dataset, DatasetItem, TrainBatch};
pub use metrics::{read_metrics, MetricsLog, StepMetrics};
pub use optim::{adamw_step, clip_grad_norm, global_norm, AdamState};
pub use step::{batch_loss, draw_flow, loss_weights, train_step, FlowDraw, LossParts};
pub use validate::{validate, ValMetrics};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::ProviderRegistry;
use crate::model::Model;

/// Everything a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub opt: AdamState,
    /// Completed optimisation steps.
    pub iteration: u64,
    pub config: TrainConfig,
}

impl TrainState {
    /// Fresh optimiser state; parameters are rounded to `f32` so they persist losslessly.
    pub fn new(mut model: Model, config: TrainConfig) -> Self {
        model.params.round_to_f32();
        let opt = AdamState::new(&model.params);
        Self { model, opt, iteration: 0, config }
    }

    /// New model sized for `registry`, with mel normalisation fitted to `data`.
    pub fn initialise(config: TrainConfig, registry: &ProviderRegistry, data: &Dataset) -> Result<Self> {
        config.validate()?;
        let content_dim = registry
            .content_dim()
            .ok_or_else(|| crate::Error::Provider("content provider".into()))?;
        let mut model_cfg = config.model.build(content_dim, &registry.sv_dims());
        let (mean, std) = data.mel_stats();
        model_cfg.mel_mean = mean as f32 as f64;
        model_cfg.mel_std = std as f32 as f64;
        let model = Model::new(model_cfg, config.seed)?;
        Ok(Self::new(model, config))
    }
}

/// RNG for iteration `iteration` of a run seeded with `seed`.
pub fn step_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Training loop over an in-memory dataset.
pub struct Trainer<'r> {
    pub state: TrainState,
    pub data: Dataset,
    registry: &'r ProviderRegistry,
}

impl<'r> Trainer<'r> {
    pub fn new(state: TrainState, data: Dataset, registry: &'r ProviderRegistry) -> Self {
        Self { state, data, registry }
    }

    /// Runs iteration `state.iteration + 1`.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let iteration = self.state.iteration + 1;
        let cfg = &self.state.config;
        let mut rng = step_rng(cfg.seed, iteration);
        let n = self.data.len();
        let indices: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect();
        let batch = self.data.batch(&indices, self.registry, &mut rng, cfg)?;
        let metrics = train_step(
            &mut self.state.model,
            &mut self.state.opt,
            self.registry.speakers(),
            &batch,
            cfg,
            iteration,
            &mut rng,
        )?;
        self.state.iteration = iteration;
        Ok(metrics)
    }

    /// Steps until `state.iteration == until`, handing each step's metrics to `on_step`.
    pub fn run_until<F>(&mut self, until: u64, mut on_step: F) -> Result<()>
    where
        F: FnMut(&TrainState, &StepMetrics) -> Result<()>,
    {
        while self.state.iteration < until {
            let m = self.step()?;
            on_step(&self.state, &m)?;
        }
        Ok(())
    }
}
