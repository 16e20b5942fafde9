use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BeaconReach, ORACLE_GAIN};
use crate::config::{CONTROL_HZ, RECORD_HZ};
use crate::error::Result;
use crate::geometry::Pose;
use crate::recording::{resize_rgb_to_obs, depth_mm_to_obs, BundleWriter, FrameRecord, PoseRow, TipAnnotation};
use crate::store::{ProcessedTrajectory, TrajectoryInfo};
use crate::trajectory::{control_stride, estimate_aperture, extract_actions_from_poses};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub record_hz: f64,
    pub gain: f64,
    /// Std of Gaussian noise added to each tick's translation, meters per axis.
    pub noise_sigma: f64,
    pub seed: u64,
    pub max_ticks: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            record_hz: RECORD_HZ,
            gain: ORACLE_GAIN,
            noise_sigma: 0.0,
            seed: 0,
            max_ticks: 40,
        }
    }
}

/// A demonstration at the recording rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDemo {
    pub poses: Vec<Pose>,
    pub apertures: Vec<f64>,
    pub stride: usize,
}

fn demo_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Proportional approach at the control rate, linearly interpolated between
/// ticks. Once within the success radius the controller moves onto the
/// target while closing the gripper, then holds for one tick.
pub fn oracle_demo(env: &BeaconReach, start: &Pose, cfg: &DemoConfig, index: usize) -> Result<OracleDemo> {
    let stride = control_stride(cfg.record_hz, CONTROL_HZ)?;
    let mut rng = demo_rng(cfg.seed, index);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let rot = *start.orientation();
    let target = env.target();

    // (position, aperture) per tick
    let mut ticks: Vec<(Vector3<f64>, f64)> = vec![(start.position, 1.0)];
    loop {
        let (p, _) = *ticks.last().unwrap();
        if (target - p).norm() <= env.success_radius || ticks.len() > cfg.max_ticks {
            ticks.push((target, 0.0));
            ticks.push((target, 0.0));
            break;
        }
        let mut step = (target - p) * cfg.gain;
        if cfg.noise_sigma > 0.0 {
            step += Vector3::from_fn(|_, _| rng.sample(noise));
        }
        ticks.push((p + step, 1.0));
    }

    let mut poses = Vec::with_capacity((ticks.len() - 1) * stride + 1);
    let mut apertures = Vec::with_capacity(poses.capacity());
    poses.push(Pose::from_parts(ticks[0].0, rot));
    apertures.push(ticks[0].1);
    for w in ticks.windows(2) {
        let ((p0, a0), (p1, a1)) = (w[0], w[1]);
        for j in 1..=stride {
            let s = j as f64 / stride as f64;
            poses.push(Pose::from_parts(p0 + (p1 - p0) * s, rot));
            apertures.push(a0 + (a1 - a0) * s);
        }
    }
    Ok(OracleDemo {
        poses,
        apertures,
        stride,
    })
}

fn annotation(env: &BeaconReach, frame_index: usize, aperture: f64) -> TipAnnotation {
    TipAnnotation {
        frame_index,
        ..env.tips(aperture)
    }
}

fn demo_name(index: usize) -> String {
    format!("demo_{index:03}")
}

/// Render one recording bundle per start under `out_dir`, named `demo_000`,
/// `demo_001`, … Bundles carry per-frame tip annotations.
pub fn gen_synthetic_demos(
    env: &BeaconReach,
    starts: &[Pose],
    cfg: &DemoConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let demo = oracle_demo(env, start, cfg, i)?;
            let mut meta = env.meta();
            meta.nominal_fps = cfg.record_hz;
            let mut w = BundleWriter::create(out_dir.join(demo_name(i)), meta)?;
            for (f, (pose, &a)) in demo.poses.iter().zip(&demo.apertures).enumerate() {
                let (rgb, depth) = env.render(pose, a);
                w.push_frame(PoseRow::from_pose(f as f64 / cfg.record_hz, pose), &rgb, &depth)?;
                w.annotate(annotation(env, f, a));
            }
            w.finish()
        })
        .collect()
}

/// The trajectory that ingesting the bundle from [`gen_synthetic_demos`]
/// would produce, built without touching disk.
pub fn synthetic_trajectory(
    env: &BeaconReach,
    start: &Pose,
    cfg: &DemoConfig,
    index: usize,
) -> Result<ProcessedTrajectory> {
    let demo = oracle_demo(env, start, cfg, index)?;
    let ticks: Vec<usize> = (0..demo.poses.len()).step_by(demo.stride).collect();
    let frames: Vec<FrameRecord> = ticks
        .par_iter()
        .map(|&f| {
            let pose = PoseRow::from_pose(f as f64 / cfg.record_hz, &demo.poses[f]).pose();
            let (rgb, depth) = env.render(&pose, demo.apertures[f]);
            let (w, h) = (env.meta().depth_width, env.meta().depth_height);
            FrameRecord {
                index: f,
                timestamp: f as f64 / cfg.record_hz,
                rgb: resize_rgb_to_obs(&rgb),
                depth: depth_mm_to_obs(&depth, w, h),
                pose,
            }
        })
        .collect();
    let apertures = ticks
        .iter()
        .map(|&f| {
            let ann = annotation(env, f, demo.apertures[f]);
            estimate_aperture(&[], Some(&ann), None, env.max_tip_distance_px)
        })
        .collect::<Result<Vec<f64>>>()?;
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    let actions = extract_actions_from_poses(&poses, &apertures, 1)?;
    let meta = env.meta();
    Ok(ProcessedTrajectory {
        info: TrajectoryInfo {
            name: demo_name(index),
            home_id: meta.home_id,
            task_label: meta.task_label,
            env_id: meta.env_id,
            recorder_id: meta.recorder_id,
            frames: demo.poses.len(),
            fps: cfg.record_hz,
        },
        samples: frames.into_iter().zip(actions).collect(),
    })
}

/// Labeled `(256×256 RGB, aperture)` pairs: random apertures, seen from
/// random poses around the env's base so the beacon moves in the background.
pub fn synthetic_aperture_set(env: &BeaconReach, n: usize, seed: u64) -> Vec<(Vec<u8>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(Pose, f64)> = (0..n)
        .map(|_| {
            let offset = Vector3::new(
                rng.random_range(-0.06..0.06),
                rng.random_range(-0.04..0.04),
                rng.random_range(0.0..0.07),
            );
            (Pose::from_parts(env.base.transform_point(&offset), *env.base.orientation()), rng.random())
        })
        .collect();
    draws
        .par_iter()
        .map(|(pose, a)| (resize_rgb_to_obs(&env.render(pose, *a).0), *a))
        .collect()
}
