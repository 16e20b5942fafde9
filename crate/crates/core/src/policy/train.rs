use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{features, Activation, Encoder, EncoderSpec, PolicyHead, PolicySnapshot, TrainEcho};
use crate::config::{
    ACTION_DIM, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_HIDDEN, DEFAULT_LEARNING_RATE,
    HEAD_INPUT_DIM,
};
use crate::error::{Error, Result};
use crate::loader::{epoch_order, observation};
use crate::optim::{Adam, AdamConfig};
use crate::store::DatasetHandle;
use crate::trajectory::{normalize_action, Action7};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("batch size and hidden width must be positive".into()));
        }
        Ok(())
    }

    fn echo(&self) -> TrainEcho {
        TrainEcho {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: "adam".into(),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Head inputs and normalized targets, one row per sample.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub x: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.x.select_rows(idx), self.t.select_rows(idx))
    }
}

/// Minibatch Adam on the MSE loss. Returns the head and the mean loss of
/// each epoch.
pub fn fit_head(set: &FeatureSet, cfg: &TrainConfig) -> Result<(PolicyHead, Vec<f64>)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut head = PolicyHead::new(set.x.ncols(), cfg.hidden, set.t.ncols(), cfg.activation, cfg.seed);
    let mut adam = Adam::new(
        head.param_count(),
        AdamConfig {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        },
    );
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(set.len(), cfg.seed, epoch as u64, true);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, t) = set.rows(idx);
            let (loss, grads) = head.loss_and_grad(&x, &t);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("loss {loss}, batch of {} samples", idx.len()),
                });
            }
            adam.step(&mut head.params_mut(), &grads.slices(), cfg.learning_rate);
            total += loss * idx.len() as f64;
        }
        curve.push(total / set.len() as f64);
    }
    Ok((head, curve))
}

/// Encoder features and normalized targets for every record, in dataset order.
pub fn feature_set(handle: &DatasetHandle, encoder: &Encoder, external: Option<&[Vec<f64>]>) -> Result<FeatureSet> {
    let n = handle.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(ext) = external {
        if ext.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{} external feature rows for {n} records",
                ext.len()
            )));
        }
    }
    let stats = handle.norm_stats();
    let rows: Vec<(Vec<f64>, [f64; ACTION_DIM])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = handle.read_record(i)?;
            let f = features(encoder, &observation(&r), external.map(|e| e[i].as_slice()))?;
            Ok((f, normalize_action(&Action7::from_array(&r.action), stats)))
        })
        .collect::<Result<_>>()?;
    let x = DMatrix::from_fn(n, HEAD_INPUT_DIM, |i, j| rows[i].0[j]);
    let t = DMatrix::from_fn(n, ACTION_DIM, |i, j| rows[i].1[j]);
    Ok(FeatureSet { x, t })
}

/// Train on every record of a dataset. The encoder is fixed, so its features
/// are computed once up front.
pub fn train_policy(
    handle: &DatasetHandle,
    encoder: &EncoderSpec,
    cfg: &TrainConfig,
) -> Result<(PolicySnapshot, Vec<f64>)> {
    train_inner(handle, encoder, None, cfg)
}

/// As [`train_policy`], with caller-supplied image features (one 512-vec per
/// record, in dataset order) for the external-features encoder.
pub fn train_policy_with_features(
    handle: &DatasetHandle,
    encoder: &EncoderSpec,
    external: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(PolicySnapshot, Vec<f64>)> {
    train_inner(handle, encoder, Some(external), cfg)
}

fn train_inner(
    handle: &DatasetHandle,
    spec: &EncoderSpec,
    external: Option<&[Vec<f64>]>,
    cfg: &TrainConfig,
) -> Result<(PolicySnapshot, Vec<f64>)> {
    cfg.validate()?;
    let encoder = Encoder::new(*spec)?;
    let set = feature_set(handle, &encoder, external)?;
    let (head, curve) = fit_head(&set, cfg)?;
    let mut snap = PolicySnapshot::new(*spec, head, *handle.norm_stats());
    snap.train = Some(cfg.echo());
    Ok((snap, curve))
}
