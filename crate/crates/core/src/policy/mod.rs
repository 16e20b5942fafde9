//! Behavior-cloning policy: a fixed image encoder and median-pooled depth
//! feed a two-layer head that regresses normalized 7-dim actions.

mod blob;
mod encoder;
mod head;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{
    ACTION_DIM, CONTROL_HZ, DEFAULT_GRIPPER_THRESHOLD, FEATURE_DIM, HEAD_INPUT_DIM, OBS_LEN,
    OBS_PIXELS, OBS_SIZE,
};
use crate::error::{Error, IoContext, Result};
use crate::geometry::{axis_angle_to_quat, quat_to_axis_angle};
use crate::trajectory::{denormalize_action, Action7, NormStats};

pub use encoder::{Encoder, EncoderKind, EncoderSpec};
pub use head::{grad_check, Activation, HeadGrads, PolicyHead};
pub use train::{feature_set, fit_head, train_policy, train_policy_with_features, FeatureSet, TrainConfig};

pub const SNAPSHOT_VERSION: u32 = 1;
pub const POOL_ROWS: usize = 16;
pub const POOL_COLS: usize = 32;
const CELL_H: usize = OBS_SIZE / POOL_ROWS;
const CELL_W: usize = OBS_SIZE / POOL_COLS;

/// Median of the valid (> 0) depths in each cell of a 16×32 grid; cells
/// with no valid pixel give 0.
pub fn depth_median_pool(depth: &[f32]) -> Vec<f64> {
    let mut out = vec![0.0; POOL_ROWS * POOL_COLS];
    depth_median_pool_into(depth, &mut out);
    out
}

fn depth_median_pool_into(depth: &[f32], out: &mut [f64]) {
    let mut cell = Vec::with_capacity(CELL_H * CELL_W);
    for r in 0..POOL_ROWS {
        for c in 0..POOL_COLS {
            cell.clear();
            for y in r * CELL_H..(r + 1) * CELL_H {
                let row = &depth[y * OBS_SIZE + c * CELL_W..y * OBS_SIZE + (c + 1) * CELL_W];
                cell.extend(row.iter().filter(|&&d| d > 0.0).map(|&d| d as f64));
            }
            out[r * POOL_COLS + c] = median(&mut cell);
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    v.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Head input for one observation: encoder output then pooled depth.
pub fn features(encoder: &Encoder, obs: &[f32], external: Option<&[f64]>) -> Result<Vec<f64>> {
    if obs.len() != OBS_LEN {
        return Err(Error::LengthMismatch(format!(
            "observation has {} values, expected {OBS_LEN}",
            obs.len()
        )));
    }
    let mut out = vec![0.0; HEAD_INPUT_DIM];
    let (img, depth) = out.split_at_mut(FEATURE_DIM);
    encoder.encode_into(&obs[..3 * OBS_PIXELS], external, img)?;
    depth_median_pool_into(&obs[3 * OBS_PIXELS..], depth);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Closed,
}

/// Training settings recorded alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEcho {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub format_version: u32,
    pub encoder: EncoderSpec,
    pub head: PolicyHead,
    pub norm_stats: NormStats,
    pub gripper_threshold: f64,
    pub control_hz: f64,
    pub train: Option<TrainEcho>,
}

impl PolicySnapshot {
    pub fn new(encoder: EncoderSpec, head: PolicyHead, norm_stats: NormStats) -> Self {
        PolicySnapshot {
            format_version: SNAPSHOT_VERSION,
            encoder,
            head,
            norm_stats,
            gripper_threshold: DEFAULT_GRIPPER_THRESHOLD,
            control_hz: CONTROL_HZ,
            train: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != SNAPSHOT_VERSION {
            return Err(Error::VersionUnsupported(self.format_version));
        }
        if self.head.input_dim() != HEAD_INPUT_DIM || self.head.output_dim() != ACTION_DIM {
            return Err(Error::MalformedSnapshot(format!(
                "head maps {} → {}, expected {HEAD_INPUT_DIM} → {ACTION_DIM}",
                self.head.input_dim(),
                self.head.output_dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.gripper_threshold) {
            return Err(Error::MalformedSnapshot(format!(
                "gripper threshold {} outside [0, 1]",
                self.gripper_threshold
            )));
        }
        if !self.norm_stats.is_valid() {
            return Err(Error::MalformedSnapshot("invalid norm stats".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::MalformedSnapshot(e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SNAPSHOT_VERSION as u64 => {}
            Some(v) => return Err(Error::VersionUnsupported(v as u32)),
            None => return Err(Error::MalformedSnapshot("missing format_version".into())),
        }
        let snap: PolicySnapshot =
            serde_json::from_value(value).map_err(|e| Error::MalformedSnapshot(e.to_string()))?;
        snap.validate()?;
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path).at(path)?)
    }
}

/// A snapshot with its encoder built, ready for inference.
#[derive(Debug, Clone)]
pub struct BcPolicy {
    pub snapshot: PolicySnapshot,
    encoder: Encoder,
}

impl BcPolicy {
    pub fn new(snapshot: PolicySnapshot) -> Result<Self> {
        snapshot.validate()?;
        let encoder = Encoder::new(snapshot.encoder)?;
        Ok(BcPolicy { snapshot, encoder })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Normalized 7-vec for one observation.
    pub fn forward(&self, obs: &[f32], external: Option<&[f64]>) -> Result<[f64; ACTION_DIM]> {
        let x = features(&self.encoder, obs, external)?;
        Ok(self.forward_features(&x))
    }

    pub fn forward_features(&self, x: &[f64]) -> [f64; ACTION_DIM] {
        let y = self.snapshot.head.forward(x);
        std::array::from_fn(|i| y[i])
    }

    pub fn predict(&self, obs: &[f32], external: Option<&[f64]>) -> Result<(Action7, GripperCommand)> {
        let y = self.forward(obs, external)?;
        Ok(decide(&y, &self.snapshot.norm_stats, self.snapshot.gripper_threshold))
    }
}

/// Denormalize a head output and binarize its gripper value. The rotation is
/// brought back to its canonical axis-angle form.
pub fn decide(y: &[f64; ACTION_DIM], stats: &NormStats, threshold: f64) -> (Action7, GripperCommand) {
    let mut a = denormalize_action(y, stats);
    a.drot = quat_to_axis_angle(&axis_angle_to_quat(&a.drot));
    let cmd = if a.gripper >= threshold {
        GripperCommand::Open
    } else {
        GripperCommand::Closed
    };
    (a, cmd)
}

pub fn policy_forward(obs: &[f32], snapshot: &PolicySnapshot) -> Result<[f64; ACTION_DIM]> {
    BcPolicy::new(snapshot.clone())?.forward(obs, None)
}

pub fn predict_action(snapshot: &PolicySnapshot, obs: &[f32]) -> Result<(Action7, GripperCommand)> {
    BcPolicy::new(snapshot.clone())?.predict(obs, None)
}
