//! Teacher-forced training with the two-term pretraining objective.
//!
//! A training unit is one source sentence's sequences: an `(MD, EG)` pair
//! when pretraining, a single EG sequence when fine-tuning. Within a batch
//! every task term is the mean cross-entropy over that task's target tokens,
//! and the objective is the sum of the task terms.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::net::{forward_backward, Example, Packed};
use super::optim::{AdamW, AdamWConfig, Schedule};
use super::params::Params;
use super::scalar::Scalar;
use crate::data::Task;
use crate::rng;

/// One encoded sequence with its task and provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tagged {
    pub id: String,
    pub task: Task,
    pub example: Example,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    /// Present when the batch holds mention-describing sequences.
    pub md_term: Option<f64>,
    pub eg_term: Option<f64>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrainError {
    #[error("loss is not finite on instance {id:?}")]
    NonFiniteLoss { id: String },
    #[error("training diverged at step {step}: {source}")]
    Diverged { step: usize, source: Box<TrainError> },
    #[error("parameters became non-finite at step {0}")]
    NonFiniteParams(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub lr: f64,
    /// Linear warmup/decay when set; constant rate otherwise.
    pub warmup_fraction: Option<f64>,
    /// Exactly one of `steps` and `epochs` is used; `steps` wins when both are set.
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Batches are split into this many contiguous shards whose gradients are
    /// summed in shard order. The result depends on `shards`, never on
    /// `threads`.
    pub shards: usize,
    pub threads: usize,
}

impl TrainConfig {
    pub fn pretrain(steps: usize, seed: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            batch_size: 16,
            lr: 5e-5,
            warmup_fraction: None,
            steps: Some(steps),
            epochs: None,
            optimizer: AdamWConfig::default(),
            seed,
            shards: 1,
            threads: 1,
        }
    }

    pub fn finetune(epochs: usize, seed: u64) -> Self {
        Self {
            stage: Stage::Finetune,
            batch_size: 4,
            lr: 1e-4,
            warmup_fraction: Some(0.06),
            steps: None,
            epochs: Some(epochs),
            optimizer: AdamWConfig::default(),
            seed,
            shards: 1,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.steps.is_none() && self.epochs.is_none() {
            return bad("either steps or epochs must be set");
        }
        if let Some(w) = self.warmup_fraction {
            if !(0.0..=1.0).contains(&w) {
                return bad("warmup fraction must lie in [0, 1]");
            }
        }
        if self.shards == 0 || self.threads == 0 {
            return bad("shards and threads must be positive");
        }
        Ok(())
    }

    pub fn total_steps(&self, units: usize) -> usize {
        match (self.steps, self.epochs) {
            (Some(s), _) => s,
            (None, Some(e)) => e * units.div_ceil(self.batch_size),
            (None, None) => 0,
        }
    }

    pub fn schedule(&self, total_steps: usize) -> Schedule {
        match self.warmup_fraction {
            Some(w) => Schedule::linear(self.lr, w, total_steps),
            None => Schedule::Constant { lr: self.lr },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: LossReport,
    /// Indices of the units in this step's batch.
    pub batch: Vec<usize>,
}

/// Loss and summed gradients of one batch of units.
pub fn batch_loss<S: Scalar>(
    params: &Params<S>,
    heads: usize,
    units: &[&[Tagged]],
    shards: usize,
    threads: usize,
    with_grads: bool,
) -> Result<(LossReport, Option<Params<S>>), TrainError> {
    let seqs: Vec<&Tagged> = units.iter().flat_map(|u| u.iter()).collect();
    if seqs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let tokens = |task: Task| -> usize { seqs.iter().filter(|t| t.task == task).map(|t| t.example.tgt.len()).sum() };
    let (n_md, n_eg) = (tokens(Task::MentionDescribing), tokens(Task::EntityGeneration));
    let weight = |t: &Tagged| -> S {
        let n = if t.task == Task::MentionDescribing { n_md } else { n_eg };
        S::one() / S::lit(n as f64)
    };

    let shard_len = seqs.len().div_ceil(shards.max(1));
    let chunks: Vec<&[&Tagged]> = seqs.chunks(shard_len).collect();
    let run = |chunk: &&[&Tagged]| {
        let examples: Vec<&Example> = chunk.iter().map(|t| &t.example).collect();
        let weights: Vec<S> = chunk.iter().map(|t| weight(t)).collect();
        forward_backward(params, heads, &Packed::new(&examples, &weights), with_grads)
    };
    let passes: Vec<_> = if threads > 1 && chunks.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        pool.install(|| chunks.par_iter().map(run).collect())
    } else {
        chunks.iter().map(run).collect()
    };

    let mut md = 0.0;
    let mut eg = 0.0;
    let mut grads: Option<Params<S>> = None;
    for (chunk, pass) in chunks.iter().zip(passes) {
        let mut row = 0;
        for t in chunk.iter() {
            let n = t.example.tgt.len();
            let sum: f64 = pass.row_loss[row..row + n].iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).sum();
            if !sum.is_finite() {
                return Err(TrainError::NonFiniteLoss { id: t.id.clone() });
            }
            match t.task {
                Task::MentionDescribing => md += sum,
                Task::EntityGeneration => eg += sum,
            }
            row += n;
        }
        if let Some(g) = pass.grads {
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.add_assign(&g),
            }
        }
    }
    let md_term = (n_md > 0).then(|| md / n_md as f64);
    let eg_term = (n_eg > 0).then(|| eg / n_eg as f64);
    let total = md_term.unwrap_or(0.0) + eg_term.unwrap_or(0.0);
    Ok((LossReport { total, md_term, eg_term }, grads))
}

/// Trains `params` in place on `units` and returns the per-step log.
/// `on_step` sees each log entry with the parameters its loss was computed
/// from, before the update.
pub fn train<S: Scalar>(
    params: &mut Params<S>,
    heads: usize,
    units: &[Vec<Tagged>],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &Params<S>),
) -> Result<Vec<StepLog>, TrainError> {
    cfg.validate()?;
    if units.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let total_steps = cfg.total_steps(units.len());
    let schedule = cfg.schedule(total_steps);
    let mut opt = AdamW::new(cfg.optimizer, params);
    let mut log = Vec::with_capacity(total_steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    for step in 0..total_steps {
        if cursor >= order.len() {
            order = (0..units.len()).collect();
            order.shuffle(&mut rng::keyed(cfg.seed, "train-shuffle", epoch));
            epoch += 1;
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let picked = order[cursor..end].to_vec();
        let batch: Vec<&[Tagged]> = picked.iter().map(|&i| units[i].as_slice()).collect();
        cursor = end;
        let (loss, grads) = batch_loss(params, heads, &batch, cfg.shards, cfg.threads, true)
            .map_err(|e| TrainError::Diverged { step, source: Box::new(e) })?;
        let lr = schedule.lr(step);
        let entry = StepLog { step, lr, loss, batch: picked };
        on_step(&entry, params);
        opt.step(params, grads.as_ref().expect("gradients requested"), lr);
        if !params.is_finite() {
            return Err(TrainError::NonFiniteParams(step));
        }
        log.push(entry);
    }
    Ok(log)
}
