use serde::{Deserialize, Serialize};

use super::Action7;
use crate::config::ACTION_DIM;
use crate::error::{Error, Result};

/// Floor applied to every per-axis standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-axis action statistics over a training set (gripper axis included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; ACTION_DIM],
    pub std: [f64; ACTION_DIM],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; ACTION_DIM],
            std: [1.0; ACTION_DIM],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mean.iter().all(|m| m.is_finite())
            && self.std.iter().all(|s| s.is_finite() && *s >= STD_FLOOR)
    }
}

/// Population mean and standard deviation per axis.
pub fn compute_norm_stats(actions: &[Action7]) -> Result<NormStats> {
    if actions.len() < 2 {
        return Err(Error::TooFewActions {
            found: actions.len(),
            min: 2,
        });
    }
    let n = actions.len() as f64;
    let rows: Vec<[f64; ACTION_DIM]> = actions.iter().map(Action7::to_array).collect();
    let mut mean = [0.0; ACTION_DIM];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    // two-pass variance
    let mut var = [0.0; ACTION_DIM];
    for row in &rows {
        for i in 0..ACTION_DIM {
            let d = row[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
    Ok(NormStats { mean, std })
}

pub fn normalize_action(action: &Action7, stats: &NormStats) -> [f64; ACTION_DIM] {
    let raw = action.to_array();
    std::array::from_fn(|i| (raw[i] - stats.mean[i]) / stats.std[i])
}

/// Inverse of [`normalize_action`]; the gripper is clamped back into `[0, 1]`.
pub fn denormalize_action(v: &[f64; ACTION_DIM], stats: &NormStats) -> Action7 {
    let mut raw: [f64; ACTION_DIM] = std::array::from_fn(|i| v[i] * stats.std[i] + stats.mean[i]);
    raw[ACTION_DIM - 1] = raw[ACTION_DIM - 1].clamp(0.0, 1.0);
    Action7::from_array(&raw)
}

pub fn normalize_actions(actions: &[Action7], stats: &NormStats) -> Vec<[f64; ACTION_DIM]> {
    actions.iter().map(|a| normalize_action(a, stats)).collect()
}

pub fn denormalize_actions(vecs: &[[f64; ACTION_DIM]], stats: &NormStats) -> Vec<Action7> {
    vecs.iter().map(|v| denormalize_action(v, stats)).collect()
}
