//! From 30 Hz recordings to control-rate `(observation, action)` pairs.

mod aperture;
mod norm;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::ACTION_DIM;
use crate::error::{Error, Result};
use crate::geometry::{quat_to_axis_angle, relative_pose, AxisAngle, Pose};
use crate::recording::FrameRecord;

pub use aperture::{
    downsample_gray, estimate_aperture, fit_aperture_regressor, ApertureEstimator,
    ApertureFitConfig, ApertureModel, APERTURE_INPUT_SIDE, MIN_APERTURE_SAMPLES,
};
pub use norm::{
    compute_norm_stats, denormalize_action, denormalize_actions, normalize_action,
    normalize_actions, NormStats, STD_FLOOR,
};

/// Relative motion from one control tick to the next, in the camera frame of
/// the earlier tick, plus the gripper aperture to reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action7 {
    pub dpos: [f64; 3],
    pub drot: AxisAngle,
    pub gripper: f64,
}

impl Action7 {
    pub fn zero(gripper: f64) -> Self {
        Action7 {
            dpos: [0.0; 3],
            drot: AxisAngle::ZERO,
            gripper,
        }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let [x, y, z] = self.dpos;
        let [rx, ry, rz] = self.drot.0;
        [x, y, z, rx, ry, rz, self.gripper]
    }

    pub fn from_array(v: &[f64; ACTION_DIM]) -> Self {
        Action7 {
            dpos: [v[0], v[1], v[2]],
            drot: AxisAngle([v[3], v[4], v[5]]),
            gripper: v[6],
        }
    }

    /// The rigid transform this action applies.
    pub fn motion(&self) -> Pose {
        Pose::from_action(Vector3::from(self.dpos), &self.drot)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Frame stride between control ticks.
pub fn control_stride(record_hz: f64, control_hz: f64) -> Result<usize> {
    let ratio = record_hz / control_hz;
    let stride = ratio.round();
    if !ratio.is_finite() || stride < 1.0 || (ratio - stride).abs() > 1e-9 {
        return Err(Error::NonIntegerStride {
            record_hz,
            control_hz,
        });
    }
    Ok(stride as usize)
}

/// Frames sampled at the control rate: `0, stride, 2·stride, …` up to the last frame.
pub fn subsample_indices(n_frames: usize, record_hz: f64, control_hz: f64) -> Result<Vec<usize>> {
    let stride = control_stride(record_hz, control_hz)?;
    Ok((0..n_frames).step_by(stride).collect())
}

/// Actions between consecutive subsampled poses. The gripper label of each
/// action is the aperture at its target frame.
pub fn extract_actions_from_poses(
    poses: &[Pose],
    apertures: &[f64],
    stride: usize,
) -> Result<Vec<Action7>> {
    if poses.len() != apertures.len() {
        return Err(Error::LengthMismatch(format!(
            "{} poses but {} apertures",
            poses.len(),
            apertures.len()
        )));
    }
    if stride == 0 {
        return Err(Error::LengthMismatch("stride must be positive".into()));
    }
    let ticks: Vec<usize> = (0..poses.len()).step_by(stride).collect();
    Ok(ticks
        .windows(2)
        .map(|w| {
            let (t, next) = (w[0], w[1]);
            let delta = relative_pose(&poses[t], &poses[next]);
            Action7 {
                dpos: delta.position.into(),
                drot: quat_to_axis_angle(delta.orientation()),
                gripper: apertures[next].clamp(0.0, 1.0),
            }
        })
        .collect())
}

pub fn extract_actions(
    frames: &[FrameRecord],
    apertures: &[f64],
    stride: usize,
) -> Result<Vec<Action7>> {
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    extract_actions_from_poses(&poses, apertures, stride)
}
