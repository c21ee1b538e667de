//! Alternating discriminator/generator optimization, checkpoints and the loss log.

pub mod adam;
pub mod checkpoint;
pub mod log;
pub mod objective;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remic_nn::Tensor;

use crate::data::visibility::{sample_visibility, MaskMode};
use crate::error::{config, input, RemicError, Result};
use crate::image::Sample;
use crate::losses::LossWeights;
use crate::model::{is_disc_group, Remic};
use crate::params::{standard_normal, Binder, Graph};
pub use adam::{Adam, AdamState, Optimizer, ADAM_EPS};
pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, Checkpoint};
pub use log::LossLog;
pub use objective::{discriminator_objective, generator_objective, IterationInputs, LossRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub weights: LossWeights,
    pub mask_mode: MaskMode,
    pub multi_sample: bool,
    pub seed: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            iterations: 2000,
            weights: LossWeights::default(),
            mask_mode: MaskMode::UniformK,
            multi_sample: false,
            seed: 0,
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be positive"));
        }
        if self.log_every == 0 {
            return Err(config("log_every must be positive"));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> Adam {
        Adam { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: ADAM_EPS }
    }
}

/// Single-writer training state: model, optimizer moments, RNG and iteration counter.
pub struct Trainer {
    pub model: Remic<f32>,
    pub config: TrainConfig,
    pub optimizer: Optimizer<f32>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(model: Remic<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        config.mask_mode.validate(model.config().num_domains)?;
        let optimizer = Optimizer::new(config.adam(), model.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { model, config, optimizer, rng, iteration: 0 })
    }

    /// Draws visibility masks and prior styles for the given samples.
    pub fn draw_inputs(&mut self, samples: Vec<Sample>) -> Result<IterationInputs<f32>> {
        let cfg = self.model.config();
        let (n, dim) = (cfg.num_domains, cfg.style_dim);
        let mut visibility = Vec::with_capacity(samples.len());
        let mut prior = Vec::with_capacity(samples.len());
        for _ in &samples {
            visibility.push(sample_visibility(n, self.config.mask_mode, &mut self.rng)?);
            prior.push(
                (0..n)
                    .map(|_| Tensor::vector(standard_normal(&mut self.rng, dim)).expect("style_dim > 0"))
                    .collect(),
            );
        }
        Ok(IterationInputs { samples, visibility, prior })
    }

    /// Updates the discriminators only. Returns `None` when the adversarial weight is zero.
    pub fn discriminator_step(&mut self, inputs: &IterationInputs<f32>) -> Result<Option<f64>> {
        if self.config.weights.adv == 0.0 {
            return Ok(None);
        }
        let grads = {
            let mut g = Graph::new(Binder::new(self.model.params(), is_disc_group));
            let loss = discriminator_objective(&self.model, &mut g, inputs)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(RemicError::NonFiniteLoss { iteration: self.iteration, breakdown: format!("d_loss={value}") });
            }
            (collect_grads(&g, loss)?, value)
        };
        self.optimizer.apply(self.model.params_mut(), &grads.0)?;
        Ok(Some(grads.1))
    }

    /// Updates encoders, generators and the segmentation path; discriminators stay fixed.
    pub fn generator_step(&mut self, inputs: &IterationInputs<f32>) -> Result<LossRecord> {
        let (grads, record) = {
            let mut g = Graph::new(Binder::new(self.model.params(), |grp| !is_disc_group(grp)));
            let (total, record) =
                generator_objective(&self.model, &mut g, inputs, &self.config.weights, self.config.multi_sample)?;
            if !record.is_finite() {
                return Err(RemicError::NonFiniteLoss { iteration: self.iteration, breakdown: record.breakdown() });
            }
            (collect_grads(&g, total)?, record)
        };
        self.optimizer.apply(self.model.params_mut(), &grads)?;
        Ok(record)
    }

    /// One D step then one G step on the given samples.
    pub fn train_iteration(&mut self, batch: &[Sample]) -> Result<LossRecord> {
        let inputs = self.draw_inputs(batch.to_vec())?;
        self.run_inputs(&inputs)
    }

    /// Style-swap iteration on two samples.
    pub fn multi_sample_iteration(&mut self, a: &Sample, b: &Sample) -> Result<LossRecord> {
        if !self.config.multi_sample {
            return Err(input("multi_sample is disabled in the training configuration"));
        }
        let inputs = self.draw_inputs(vec![a.clone(), b.clone()])?;
        self.run_inputs(&inputs)
    }

    fn run_inputs(&mut self, inputs: &IterationInputs<f32>) -> Result<LossRecord> {
        let d = self.discriminator_step(inputs)?;
        let mut record = self.generator_step(inputs)?;
        self.iteration += 1;
        record.iteration = self.iteration;
        record.d_loss = d;
        Ok(record)
    }

    /// Picks a batch from `train` with the trainer's RNG and runs one iteration.
    pub fn step(&mut self, train: &[Sample]) -> Result<LossRecord> {
        if train.is_empty() {
            return Err(input("empty training set"));
        }
        let count = if self.config.multi_sample { 2 } else { self.config.batch_size };
        let batch: Vec<Sample> = (0..count).map(|_| train[self.rng.random_range(0..train.len())].clone()).collect();
        let inputs = self.draw_inputs(batch)?;
        self.run_inputs(&inputs)
    }

    /// Runs until `config.iterations`, logging and checkpointing into `out_dir` when given.
    pub fn run(
        &mut self,
        train: &[Sample],
        mut log: Option<&mut LossLog>,
        out_dir: Option<&Path>,
        mut on_record: impl FnMut(&LossRecord),
    ) -> Result<()> {
        while self.iteration < self.config.iterations {
            let record = self.step(train)?;
            if let Some(log) = log.as_deref_mut() {
                if record.iteration % self.config.log_every == 0 || record.iteration == self.config.iterations {
                    log.append(&record)?;
                }
            }
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.iteration.is_multiple_of(every) {
                    save_checkpoint(&dir.join(format!("ckpt_{:06}.bin", self.iteration)), self)?;
                }
            }
            on_record(&record);
        }
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("final.bin"), self)?;
        }
        Ok(())
    }
}

fn collect_grads(g: &Graph<f32>, loss: remic_nn::Var) -> Result<Vec<(crate::params::ParamId, Tensor<f32>)>> {
    let mut grads = g.tape.backward(loss)?;
    g.binder.bound_trainable().into_iter().map(|(id, v)| Ok((id, grads.take(v)?))).collect()
}
