//! Contrastive training of a linear adapter over frozen embeddings.
//!
//! The adapter maps `v -> normalize(W v)` on both the query and the document side. Training
//! minimizes the InfoNCE loss of each `(query, positive, negatives)` triple with gradients taken
//! through the normalization, accumulated over a window of triples and applied with Adam.

mod adapter;
mod loss;
mod optim;

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, Embedding};
use crate::mining::TrainingTriple;
use crate::scalar::Scalar;

pub use adapter::{adapter_apply, load_adapter, read_adapter, save_adapter, write_adapter, Adapter};
pub use loss::{
    gradient_check, gradient_check_random, infonce_from_scores, infonce_loss, triple_loss, triple_loss_and_grad, GradCheck,
    InfoNce, TripleVectors,
};
pub use optim::Adam;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("temperature must be positive, got {0}")]
    InvalidTau(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("adapter maps the input to the zero vector")]
    ZeroProjection,
    #[error("no embedding for id `{0}`")]
    MissingEmbedding(String),
    #[error("non-finite loss or gradient at triple `{0}`")]
    NonFinite(String),
    #[error("adapter file checksum mismatch or truncated file")]
    Checksum,
    #[error("not an adapter file (bad magic)")]
    BadMagic,
    #[error("adapter i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid training config: {0}")]
    Config(String),
}

impl From<EmbedError> for TrainError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::DimensionMismatch { expected, actual } => {
                TrainError::DimensionMismatch { expected, actual }
            }
            _ => TrainError::ZeroProjection,
        }
    }
}

fn default_tau() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    2
}
fn default_accumulation() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Triples per optimizer step.
    #[serde(default = "default_accumulation")]
    pub accumulation_steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            epochs: default_epochs(),
            accumulation_steps: default_accumulation(),
            learning_rate: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.tau > 0.0) {
            return Err(TrainError::InvalidTau(self.tau));
        }
        if self.accumulation_steps == 0 {
            return Err(TrainError::Config("accumulation_steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over each epoch's triples, measured before each window's update.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over all triples with the identity adapter.
    pub initial_loss: f64,
    /// Mean loss over all triples with the trained adapter.
    pub final_loss: f64,
    pub steps: usize,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub log: Vec<LogEntry>,
}

fn lookup<'a, T>(
    store: &'a HashMap<String, Embedding<T>>,
    id: &str,
) -> Result<&'a Embedding<T>, TrainError> {
    store
        .get(id)
        .ok_or_else(|| TrainError::MissingEmbedding(id.to_string()))
}

fn resolve<'a, T>(
    triple: &TrainingTriple,
    store: &'a HashMap<String, Embedding<T>>,
) -> Result<TripleVectors<'a, T>, TrainError> {
    Ok(TripleVectors {
        query: lookup(store, &triple.query_id)?,
        positive: lookup(store, &triple.positive_pt_id)?,
        negatives: triple
            .negative_pt_ids
            .iter()
            .map(|id| lookup(store, id))
            .collect::<Result<_, _>>()?,
    })
}

/// Mean InfoNCE loss of `adapter` over `triples`.
pub fn mean_loss<T: Scalar>(
    adapter: &Adapter<T>,
    triples: &[TripleVectors<'_, T>],
    tau: f64,
) -> Result<f64, TrainError> {
    if triples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in triples {
        total += triple_loss(adapter, t, T::of(tau))?.as_f64();
    }
    Ok(total / triples.len() as f64)
}

/// Trains an identity-initialized adapter on `triples`.
///
/// `store` maps query ids and partial-table ids to their frozen base embeddings.
pub fn train<T: Scalar>(
    triples: &[TrainingTriple],
    store: &HashMap<String, Embedding<T>>,
    cfg: &TrainConfig,
) -> Result<(Adapter<T>, TrainReport), TrainError> {
    cfg.validate()?;
    let started = Instant::now();
    let resolved: Vec<TripleVectors<'_, T>> = triples
        .iter()
        .map(|t| resolve(t, store))
        .collect::<Result<_, _>>()?;
    let dim = match resolved.first() {
        Some(t) => t.query.dim(),
        None => store.values().next().map_or(0, Embedding::dim),
    };
    let mut adapter = Adapter::identity(dim);
    let tau = T::of(cfg.tau);
    let initial_loss = mean_loss(&adapter, &resolved, cfg.tau)?;

    let mut adam = Adam::new(dim * dim, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut grad = vec![T::zero(); dim * dim];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::new();
    let mut steps = 0;

    for epoch in 0..cfg.epochs {
        if resolved.is_empty() {
            break;
        }
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_total = 0.0;
        for window in order.chunks(cfg.accumulation_steps) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let mut window_total = 0.0;
            for &i in window {
                let loss = triple_loss_and_grad(&adapter, &resolved[i], tau, &mut grad)?;
                let loss = loss.as_f64();
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite(triples[i].query_id.clone()));
                }
                window_total += loss;
            }
            let scale = T::of(1.0 / window.len() as f64);
            for g in grad.iter_mut() {
                *g *= scale;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite(triples[window[0]].query_id.clone()));
            }
            adam.step(adapter.weights_mut(), &grad);
            steps += 1;
            epoch_total += window_total;
            log.push(LogEntry {
                epoch,
                step: steps,
                loss: window_total / window.len() as f64,
            });
        }
        epoch_losses.push(epoch_total / resolved.len() as f64);
    }
    if steps > 0 {
        adapter.version = 1;
    }
    let final_loss = mean_loss(&adapter, &resolved, cfg.tau)?;
    Ok((
        adapter,
        TrainReport {
            epoch_losses,
            initial_loss,
            final_loss,
            steps,
            wall_time_secs: started.elapsed().as_secs_f64(),
            log,
        },
    ))
}
