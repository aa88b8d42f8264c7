//! Deterministic stand-in for model training and model validation.
//!
//! A task is a hidden integer target vector. Models are integer parameter
//! vectors; the score is `1 / (1 + MSE)` in fixed point with scale 10^6,
//! evaluated entirely in integer arithmetic so every node computes the same
//! bits. Training is a seeded hill-climb that never sees the test seed.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, CodecError, Reader, Writer};

/// Fixed-point scale of [`Score`].
pub const SCORE_SCALE: u64 = 1_000_000;
/// Train targets are drawn from `[-TARGET_RANGE, TARGET_RANGE]`.
pub const TARGET_RANGE: i64 = 1_000;
/// Test targets deviate from train targets by at most this much per coordinate.
pub const TEST_NOISE: i64 = 2;
/// Upper bound on task dimension accepted from order links.
pub const MAX_DIMENSION: u32 = 4096;

const LINK_PREFIX: &str = "toy:";

#[derive(Debug, thiserror::Error, PartialEq, Eq, Clone)]
pub enum WorkloadError {
    #[error("model has dimension {model}, task expects {task}")]
    DimensionMismatch { model: usize, task: usize },
    #[error("malformed task link {0:?}")]
    BadLink(String),
}

/// Score in `[0, SCORE_SCALE]`, representing `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Score(pub u64);

impl Score {
    pub const MAX: Score = Score(SCORE_SCALE);

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / SCORE_SCALE as f64
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub dimension: u32,
    pub train_seed: u64,
    pub test_seed: u64,
}

/// The part of a task a miner may train against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingData {
    pub dimension: u32,
    pub train_seed: u64,
}

impl TrainingData {
    pub fn target(&self) -> Vec<i64> {
        train_target(self.dimension, self.train_seed)
    }
}

fn train_target(dimension: u32, seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dimension)
        .map(|_| rng.gen_range(-TARGET_RANGE..=TARGET_RANGE))
        .collect()
}

impl TaskSpec {
    pub fn new(dimension: u32, train_seed: u64, test_seed: u64) -> Self {
        TaskSpec { dimension, train_seed, test_seed }
    }

    pub fn training_data(&self) -> TrainingData {
        TrainingData { dimension: self.dimension, train_seed: self.train_seed }
    }

    pub fn train_target(&self) -> Vec<i64> {
        train_target(self.dimension, self.train_seed)
    }

    /// The held-out target: the train target plus bounded seeded noise.
    pub fn test_target(&self) -> Vec<i64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.test_seed ^ 0x7465_7374_7365_6564);
        self.train_target()
            .into_iter()
            .map(|t| t + rng.gen_range(-TEST_NOISE..=TEST_NOISE))
            .collect()
    }

    /// `toy:dim=<d>;train=<seed>;test=<seed>`
    pub fn to_link(&self) -> String {
        format!(
            "{LINK_PREFIX}dim={};train={};test={}",
            self.dimension, self.train_seed, self.test_seed
        )
    }

    pub fn from_link(link: &str) -> Result<Self, WorkloadError> {
        let bad = || WorkloadError::BadLink(link.to_string());
        let body = link.strip_prefix(LINK_PREFIX).ok_or_else(bad)?;
        let (mut dim, mut train, mut test) = (None, None, None);
        for part in body.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "dim" => dim = Some(v.parse::<u32>().map_err(|_| bad())?),
                "train" => train = Some(v.parse::<u64>().map_err(|_| bad())?),
                "test" => test = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let dimension = dim.ok_or_else(bad)?;
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(bad());
        }
        Ok(TaskSpec {
            dimension,
            train_seed: train.ok_or_else(bad)?,
            test_seed: test.ok_or_else(bad)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToyModel {
    pub params: Vec<i64>,
}

impl ToyModel {
    /// The client's initial model: all zeros.
    pub fn initial(dimension: u32) -> Self {
        ToyModel { params: vec![0; dimension as usize] }
    }

    pub fn dimension(&self) -> usize {
        self.params.len()
    }
}

impl Canonical for ToyModel {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.params.len() as u32);
        for p in &self.params {
            w.put_i64(*p);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.u32()? as usize;
        if n > MAX_DIMENSION as usize || n * 8 > r.remaining() {
            return Err(CodecError::Invalid("model dimension"));
        }
        let params = (0..n).map(|_| r.i64()).collect::<Result<_, _>>()?;
        Ok(ToyModel { params })
    }
}

fn sum_squared_error(params: &[i64], target: &[i64]) -> u128 {
    params
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (*p as i128 - *t as i128).unsigned_abs();
            d.saturating_mul(d)
        })
        .fold(0u128, |acc, x| acc.saturating_add(x))
}

/// `round(SCALE * d / (d + sse))`, ties rounding up.
fn score_from_sse(dimension: usize, sse: u128) -> Score {
    let d = dimension as u128;
    let denom = d.saturating_add(sse);
    let num = (2 * SCORE_SCALE as u128 * d).saturating_add(denom);
    Score((num / denom.saturating_mul(2)) as u64)
}

fn check_dims(model: &ToyModel, dimension: u32) -> Result<(), WorkloadError> {
    if model.params.len() != dimension as usize {
        return Err(WorkloadError::DimensionMismatch {
            model: model.params.len(),
            task: dimension as usize,
        });
    }
    Ok(())
}

/// The validation function: score of `model` against the held-out target.
pub fn vrf_model(model: &ToyModel, spec: &TaskSpec) -> Result<Score, WorkloadError> {
    check_dims(model, spec.dimension)?;
    let sse = sum_squared_error(&model.params, &spec.test_target());
    Ok(score_from_sse(model.params.len(), sse))
}

/// Score against the training target, what a miner optimizes.
pub fn train_score(model: &ToyModel, data: &TrainingData) -> Result<Score, WorkloadError> {
    check_dims(model, data.dimension)?;
    let sse = sum_squared_error(&model.params, &data.target());
    Ok(score_from_sse(model.params.len(), sse))
}

/// Seeded hill-climb: each step proposes a unit move on one coordinate and
/// keeps it only if the squared error against the train target shrinks.
pub fn train_step(model: &ToyModel, data: &TrainingData, rng_seed: u64, budget: u64) -> ToyModel {
    let mut params = model.params.clone();
    if budget == 0 || params.is_empty() {
        return ToyModel { params };
    }
    let target = data.target();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = params.len().min(target.len());
    for _ in 0..budget {
        let j = rng.gen_range(0..d);
        let delta: i64 = if rng.gen::<bool>() { 1 } else { -1 };
        let cur = (params[j] as i128 - target[j] as i128).abs();
        let next = (params[j] as i128 + delta as i128 - target[j] as i128).abs();
        if next < cur {
            params[j] += delta;
        }
    }
    ToyModel { params }
}
