//! Kinematic evaluation: open-loop replay, start grids and closed-loop
//! episodes in the BeaconReach environment.

mod demos;
mod env;

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EVAL_STARTS;
use crate::error::{Error, IoContext, Result};
use crate::geometry::{compose_pose, AxisAngle, Pose};
use crate::policy::{BcPolicy, GripperCommand};
use crate::trajectory::Action7;

pub use demos::{
    gen_synthetic_demos, oracle_demo, synthetic_aperture_set, synthetic_trajectory, DemoConfig,
    OracleDemo,
};
pub use env::BeaconReach;

pub const DEFAULT_MAX_STEPS: usize = 30;
/// Fraction of the remaining offset the oracle covers per control tick.
pub const ORACLE_GAIN: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee_pose: Pose,
    pub gripper: GripperCommand,
    pub step: usize,
}

impl SimState {
    pub fn aperture(&self) -> f64 {
        match self.gripper {
            GripperCommand::Open => 1.0,
            GripperCommand::Closed => 0.0,
        }
    }
}

/// Anything that maps an observation to an action. `state` is privileged
/// information that learned policies must ignore.
pub trait Policy: Sync {
    fn act(&self, obs: &[f32], state: &SimState) -> Result<(Action7, GripperCommand)>;
}

impl Policy for BcPolicy {
    fn act(&self, obs: &[f32], _state: &SimState) -> Result<(Action7, GripperCommand)> {
        self.predict(obs, None)
    }
}

/// Proportional controller with access to the true target.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub env: BeaconReach,
    pub gain: f64,
}

impl OraclePolicy {
    pub fn new(env: &BeaconReach) -> Self {
        OraclePolicy {
            env: env.clone(),
            gain: ORACLE_GAIN,
        }
    }
}

impl Policy for OraclePolicy {
    fn act(&self, _obs: &[f32], state: &SimState) -> Result<(Action7, GripperCommand)> {
        let pose = &state.ee_pose;
        let offset = pose.orientation().inverse() * (self.env.target() - pose.position);
        let (step, cmd) = if offset.norm() <= self.env.success_radius {
            (offset, GripperCommand::Closed)
        } else {
            (offset * self.gain, GripperCommand::Open)
        };
        let gripper = if cmd == GripperCommand::Open { 1.0 } else { 0.0 };
        Ok((
            Action7 {
                dpos: step.into(),
                drot: AxisAngle::ZERO,
                gripper,
            },
            cmd,
        ))
    }
}

/// Always commands no motion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&self, _obs: &[f32], _state: &SimState) -> Result<(Action7, GripperCommand)> {
        Ok((Action7::zero(1.0), GripperCommand::Open))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps_used: usize,
    pub final_distance: f64,
    pub trajectory: Vec<Pose>,
    pub gripper: Vec<GripperCommand>,
    /// Set when the episode was aborted, e.g. on a non-finite action.
    pub failure: Option<String>,
}

impl EpisodeResult {
    /// `step,px,py,pz,qw,qx,qy,qz,gripper` rows; gripper is 1 for open.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "px", "py", "pz", "qw", "qx", "qy", "qz", "gripper"])
            .map_err(|e| csv_err(path, e))?;
        for (i, (p, g)) in self.trajectory.iter().zip(&self.gripper).enumerate() {
            let [qw, qx, qy, qz] = p.quaternion_wxyz();
            let open = (*g == GripperCommand::Open) as u8;
            let row = [
                i.to_string(),
                p.position.x.to_string(),
                p.position.y.to_string(),
                p.position.z.to_string(),
                qw.to_string(),
                qx.to_string(),
                qy.to_string(),
                qz.to_string(),
                open.to_string(),
            ];
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().at(path)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::MalformedCsv {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub successes: usize,
    pub total: usize,
    pub results: Vec<EpisodeResult>,
}

impl SuccessTable {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.total.max(1) as f64
    }

    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        Ok(())
    }
}

/// `pose_{k+1} = pose_k ∘ motion(action_k)`; returns all `K + 1` poses.
pub fn open_loop_replay(start: &Pose, actions: &[Action7]) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(actions.len() + 1);
    poses.push(*start);
    for a in actions {
        let next = compose_pose(poses.last().unwrap(), &a.motion());
        poses.push(next);
    }
    poses
}

/// `rows × cols` poses centered on `base`, spaced in its camera plane.
pub fn make_start_grid(rows: usize, cols: usize, dx: f64, dy: f64, base: &Pose) -> Vec<Pose> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x = (c as f64 - (cols as f64 - 1.0) / 2.0) * dx;
            let y = (r as f64 - (rows as f64 - 1.0) / 2.0) * dy;
            let position = base.transform_point(&Vector3::new(x, y, 0.0));
            out.push(Pose::from_parts(position, *base.orientation()));
        }
    }
    out
}

/// The ten evaluation starts: a 2×5 grid with the collection spacing.
pub fn eval10(base: &Pose, spacing: f64) -> Vec<Pose> {
    let starts = make_start_grid(2, 5, spacing, spacing, base);
    debug_assert_eq!(starts.len(), EVAL_STARTS);
    starts
}

/// Parse a grid given as `ROWSxCOLS`.
pub fn parse_grid(s: &str) -> Option<(usize, usize)> {
    let (r, c) = s.split_once(['x', 'X'])?;
    let (r, c) = (r.trim().parse().ok()?, c.trim().parse().ok()?);
    (r >= 1 && c >= 1).then_some((r, c))
}

/// Observe, act, repeat: one action per rendered observation until success
/// or `max_steps`.
pub fn run_episode(env: &BeaconReach, policy: &dyn Policy, start: &Pose, max_steps: usize) -> EpisodeResult {
    let mut state = SimState {
        ee_pose: *start,
        gripper: GripperCommand::Open,
        step: 0,
    };
    let mut trajectory = vec![state.ee_pose];
    let mut gripper = vec![state.gripper];
    let mut success = env.is_success(&state);
    let mut failure = None;
    while !success && state.step < max_steps {
        let obs = env.observe(&state.ee_pose, state.aperture());
        let (action, cmd) = match policy.act(&obs, &state) {
            Ok(a) => a,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        if !action.is_finite() {
            let e = Error::NonFiniteAction {
                step: state.step,
                detail: format!("{:?}", action.to_array()),
            };
            failure = Some(e.to_string());
            break;
        }
        state.ee_pose = compose_pose(&state.ee_pose, &action.motion());
        state.gripper = cmd;
        state.step += 1;
        trajectory.push(state.ee_pose);
        gripper.push(state.gripper);
        success = env.is_success(&state);
    }
    EpisodeResult {
        success,
        steps_used: state.step,
        final_distance: env.distance(&state.ee_pose),
        trajectory,
        gripper,
        failure,
    }
}

/// One independent episode per start; results keep the order of `starts`.
pub fn evaluate_policy(env: &BeaconReach, policy: &dyn Policy, starts: &[Pose], max_steps: usize) -> SuccessTable {
    let results: Vec<EpisodeResult> = starts
        .par_iter()
        .map(|s| run_episode(env, policy, s, max_steps))
        .collect();
    SuccessTable {
        successes: results.iter().filter(|r| r.success).count(),
        total: results.len(),
        results,
    }
}
