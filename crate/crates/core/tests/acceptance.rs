//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 11 reads a converted HoNY dataset from `DEMOFORGE_HONY_DATASET`
//! and is skipped when the variable is unset.

use std::fs::OpenOptions;
use std::io::{Read, Seek, SeekFrom, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use demoforge::config::*;
use demoforge::geometry::{
    axis_angle_to_quat, compose_pose, quat_to_axis_angle, relative_pose, rotation_distance, AxisAngle, Pose,
};
use demoforge::loader::{batch_iter, Batch, BatchSpec};
use demoforge::pipeline::{ingest, IngestOptions};
use demoforge::policy::{grad_check, Activation, BcPolicy, EncoderKind, EncoderSpec, PolicyHead, TrainConfig};
use demoforge::recording::FrameRecord;
use demoforge::rollout::{
    eval10, evaluate_policy, gen_synthetic_demos, make_start_grid, open_loop_replay, synthetic_aperture_set,
    synthetic_trajectory, BeaconReach, DemoConfig, DEFAULT_MAX_STEPS,
};
use demoforge::store::{
    open_dataset, stats_report, write_shards, DatasetHandle, ProcessedTrajectory, TrajectoryInfo, Variant,
};
use demoforge::trajectory::{
    compute_norm_stats, control_stride, denormalize_action, extract_actions_from_poses, fit_aperture_regressor,
    normalize_actions, Action7, ApertureFitConfig, STD_FLOOR,
};
use demoforge::Error;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn random_unit_quat(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::x() } else { axis.normalize() };
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    axis_angle_to_quat(&(axis * angle).into())
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    Pose::from_parts(p, random_unit_quat(rng))
}

fn pose_error(a: &Pose, b: &Pose) -> f64 {
    (a.position - b.position).norm().max(rotation_distance(a.orientation(), b.orientation()))
}

fn geometry_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        worst = worst.max(pose_error(&compose_pose(&a, &relative_pose(&a, &b)), &b));
        let q = random_unit_quat(&mut rng);
        let back = axis_angle_to_quat(&quat_to_axis_angle(&q));
        worst = worst.max(rotation_distance(&q, &back));
        let r = quat_to_axis_angle(&q);
        worst = worst.max((quat_to_axis_angle(&axis_angle_to_quat(&r)).vector() - r.vector()).norm());
    }
    let axis = Vector3::new(0.3, -0.5, 0.81).normalize();
    for angle in [0.0, 1e-10, std::f64::consts::PI - 1e-7, std::f64::consts::PI] {
        let r = AxisAngle::from(axis * angle);
        let q = axis_angle_to_quat(&r);
        let back = quat_to_axis_angle(&q);
        let mut err = (back.vector() - r.vector()).norm();
        if angle == std::f64::consts::PI {
            // the axis sign is ambiguous at π
            err = err.min((back.vector() + r.vector()).norm());
        }
        worst = worst.max(err).max(rotation_distance(&q, &axis_angle_to_quat(&back)));
        ensure((back.angle() - angle).abs() <= 1e-9, format!("angle {angle}: got {}", back.angle()))?;
    }
    ensure(worst <= 1e-9, format!("max error {worst:e}"))?;
    within(t0.elapsed(), Duration::from_secs(5))?;
    Ok(format!("max error {worst:.1e} in {:.2?}", t0.elapsed()))
}

/// A smooth random 30 Hz trajectory: piecewise-constant body velocities.
fn random_trajectory(rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let n = rng.random_range(61..400);
    let mut pose = random_pose(rng);
    let mut poses = vec![pose];
    let mut twist = (Vector3::zeros(), Vector3::zeros());
    for i in 1..n {
        if i % 15 == 1 {
            twist = (
                Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)),
                Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)),
            );
        }
        pose = compose_pose(&pose, &Pose::from_action(twist.0, &twist.1.into()));
        poses.push(pose);
    }
    poses
}

fn replay_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let stride = control_stride(RECORD_HZ, CONTROL_HZ).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let poses = random_trajectory(&mut rng);
        let apertures: Vec<f64> = poses.iter().map(|_| rng.random()).collect();
        let actions = extract_actions_from_poses(&poses, &apertures, stride).map_err(|e| e.to_string())?;
        let ticks: Vec<&Pose> = poses.iter().step_by(stride).collect();
        ensure(actions.len() + 1 == ticks.len(), "action count")?;
        let replayed = open_loop_replay(ticks[0], &actions);
        for (r, t) in replayed.iter().zip(&ticks) {
            worst = worst.max(pose_error(r, t));
        }
    }
    ensure(worst <= 1e-9, format!("max error {worst:e}"))?;
    Ok(format!("100 trajectories, stride {stride}, max error {worst:.1e}"))
}

fn pipeline_constants() -> Outcome {
    let stride = control_stride(RECORD_HZ, CONTROL_HZ).map_err(|e| e.to_string())?;
    ensure(RECORD_HZ == 30.0 && CONTROL_HZ == 3.75 && stride == 8, "stride")?;
    ensure(
        OBS_CHANNELS == 4 && OBS_SIZE == 256 && OBS_LEN == 4 * 256 * 256,
        "observation shape",
    )?;
    ensure(ACTION_DIM == 7 && Action7::zero(0.0).to_array().len() == 7, "action dim")?;
    let cfg = TrainConfig::default();
    ensure(cfg.epochs == 50 && cfg.learning_rate == 3e-5, "training defaults")?;
    ensure(DEFAULT_GRID_ROWS * DEFAULT_GRID_COLS == 24, "demo grid")?;
    let env = BeaconReach::default();
    ensure(env.observe(&env.base, 1.0).len() == OBS_LEN, "rendered observation length")?;
    Ok(format!(
        "stride {stride}, obs {OBS_CHANNELS}x{OBS_SIZE}x{OBS_SIZE}, action {ACTION_DIM}, epochs {}, lr {:e}, grid {DEFAULT_GRID_ROWS}x{DEFAULT_GRID_COLS}",
        cfg.epochs, cfg.learning_rate
    ))
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sets: Vec<Vec<Action7>> = (0..20)
        .map(|k| {
            let n = rng.random_range(2..500);
            (0..n)
                .map(|_| {
                    let mut v = [0.0; ACTION_DIM];
                    for (i, x) in v.iter_mut().enumerate() {
                        *x = rng.random_range(-1.0..1.0) * 10f64.powi(i as i32 - 3) + k as f64;
                    }
                    v[6] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                    Action7::from_array(&v)
                })
                .collect()
        })
        .collect();
    // a real training set, with degenerate rotation axes
    let env = BeaconReach::default();
    let cfg = DemoConfig::default();
    let starts = make_start_grid(2, 2, DEFAULT_GRID_SPACING, DEFAULT_GRID_SPACING, &env.base);
    let demo: Vec<Action7> = starts
        .iter()
        .enumerate()
        .flat_map(|(i, s)| synthetic_trajectory(&env, s, &cfg, i).unwrap().samples.into_iter().map(|s| s.1))
        .collect();
    sets.push(demo);

    let (mut worst_mean, mut worst_std, mut worst_rt) = (0.0f64, 0.0f64, 0.0f64);
    for set in &sets {
        let stats = compute_norm_stats(set).map_err(|e| e.to_string())?;
        let z = normalize_actions(set, &stats);
        let n = z.len() as f64;
        for axis in 0..ACTION_DIM {
            if stats.std[axis] <= STD_FLOOR {
                continue;
            }
            let mean = z.iter().map(|r| r[axis]).sum::<f64>() / n;
            let std = (z.iter().map(|r| (r[axis] - mean).powi(2)).sum::<f64>() / n).sqrt();
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((std - 1.0).abs());
        }
        for (a, v) in set.iter().zip(&z) {
            let back = denormalize_action(v, &stats).to_array();
            for (x, y) in a.to_array().iter().zip(back) {
                worst_rt = worst_rt.max((x - y).abs());
            }
        }
    }
    ensure(worst_mean <= 1e-10, format!("|mean| {worst_mean:e}"))?;
    ensure(worst_std <= 1e-9, format!("|std-1| {worst_std:e}"))?;
    ensure(worst_rt <= 1e-12, format!("round trip {worst_rt:e}"))?;
    Ok(format!(
        "{} sets, |mean| {worst_mean:.1e}, |std-1| {worst_std:.1e}, round trip {worst_rt:.1e}",
        sets.len()
    ))
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let input = rng.random_range(1..=24);
        let hidden = rng.random_range(1..=16);
        let batch = rng.random_range(1..=8);
        let act = if k % 4 == 3 { Activation::Identity } else { Activation::Relu };
        let head = PolicyHead::new(input, hidden, ACTION_DIM, act, rng.random());
        let x = DMatrix::from_fn(batch, input, |_, _| rng.random_range(-2.0..2.0));
        let t = DMatrix::from_fn(batch, ACTION_DIM, |_, _| rng.random_range(-2.0..2.0));
        let err = grad_check(&head, &x, &t, 1e-6);
        ensure(err <= 1e-4, format!("pair {k} ({input}x{hidden}, batch {batch}): {err:e}"))?;
        worst = worst.max(err);
    }
    within(t0.elapsed(), Duration::from_secs(30))?;
    Ok(format!("100 pairs, max relative error {worst:.1e} in {:.2?}", t0.elapsed()))
}

fn aperture_regressor() -> Outcome {
    let t0 = Instant::now();
    let env = BeaconReach::default();
    let set = synthetic_aperture_set(&env, 500, 6);
    let (_, mse) = fit_aperture_regressor(&set, 0.2, &ApertureFitConfig::default()).map_err(|e| e.to_string())?;
    ensure(mse <= 0.035, format!("validation MSE {mse:.4}"))?;
    within(t0.elapsed(), Duration::from_secs(120))?;
    Ok(format!("500 frames, validation MSE {mse:.4} in {:.1?}", t0.elapsed()))
}

fn train_and_evaluate(env: &BeaconReach, handle: &DatasetHandle, seed: u64) -> Result<usize, String> {
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let spec = EncoderSpec::new(EncoderKind::RandomProjection, seed);
    let (snap, _) = demoforge::policy::train_policy(handle, &spec, &cfg).map_err(|e| e.to_string())?;
    let policy = BcPolicy::new(snap).map_err(|e| e.to_string())?;
    let table = evaluate_policy(env, &policy, &eval10(&env.base, DEFAULT_GRID_SPACING), DEFAULT_MAX_STEPS);
    Ok(table.successes)
}

fn end_to_end_run(sigma: f64, dir: &Path) -> Result<usize, String> {
    let env = BeaconReach::default();
    let starts = make_start_grid(
        DEFAULT_GRID_ROWS,
        DEFAULT_GRID_COLS,
        DEFAULT_GRID_SPACING,
        DEFAULT_GRID_SPACING,
        &env.base,
    );
    let cfg = DemoConfig {
        noise_sigma: sigma,
        ..DemoConfig::default()
    };
    let bundles = gen_synthetic_demos(&env, &starts, &cfg, dir.join("demos")).map_err(|e| e.to_string())?;
    let report = ingest(&bundles, &dir.join("dataset"), &IngestOptions::default()).map_err(|e| e.to_string())?;
    ensure(report.kept.len() == 24, format!("kept {} bundles", report.kept.len()))?;
    let handle = open_dataset(dir.join("dataset")).map_err(|e| e.to_string())?;
    train_and_evaluate(&env, &handle, 0)
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean = end_to_end_run(0.0, &tmp.path().join("clean"))?;
    let t_clean = t0.elapsed();
    let noisy = end_to_end_run(0.002, &tmp.path().join("noisy"))?;
    let detail = format!("sigma 0: {clean}/10, sigma 0.002: {noisy}/10, {t_clean:.1?} per run");
    ensure(clean >= 9 && noisy >= 7, detail.clone())?;
    within(t_clean, Duration::from_secs(300))?;
    Ok(detail)
}

fn demo_count_scaling() -> Outcome {
    const COUNTS: [usize; 4] = [4, 8, 16, 24];
    const SEEDS: u64 = 5;
    let env = BeaconReach::default();
    let starts = make_start_grid(
        DEFAULT_GRID_ROWS,
        DEFAULT_GRID_COLS,
        DEFAULT_GRID_SPACING,
        DEFAULT_GRID_SPACING,
        &env.base,
    );
    let cfg = DemoConfig::default();
    let trajectories: Vec<ProcessedTrajectory> = starts
        .iter()
        .enumerate()
        .map(|(i, s)| synthetic_trajectory(&env, s, &cfg, i))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut totals = [0usize; COUNTS.len()];
    for seed in 0..SEEDS {
        let mut order: Vec<usize> = (0..trajectories.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (c, &n) in COUNTS.iter().enumerate() {
            let subset: Vec<ProcessedTrajectory> = order[..n].iter().map(|&i| trajectories[i].clone()).collect();
            let dir = tmp.path().join(format!("s{seed}_n{n}"));
            write_shards(&subset, &dir, Variant::Rgbd, DEFAULT_SHARD_SIZE).map_err(|e| e.to_string())?;
            let handle = open_dataset(&dir).map_err(|e| e.to_string())?;
            totals[c] += train_and_evaluate(&env, &handle, seed)?;
        }
    }
    let rates: Vec<f64> = totals.iter().map(|&t| t as f64 / (10 * SEEDS) as f64).collect();
    let inversions = rates.windows(2).filter(|w| w[1] < w[0]).count();
    let detail = COUNTS
        .iter()
        .zip(&rates)
        .map(|(n, r)| format!("{n}: {:.0}%", 100.0 * r))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(inversions <= 1 && rates[3] >= rates[0], format!("{detail}; {inversions} inversions"))?;
    Ok(format!("{detail}; {inversions} inversions"))
}

fn fixture_trajectories(seed: u64) -> Vec<ProcessedTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..5)
        .map(|t| {
            let per = rng.random_range(1..12);
            let samples = (0..per)
                .map(|i| {
                    let frame = FrameRecord {
                        index: 8 * i,
                        timestamp: 8.0 * i as f64 / RECORD_HZ,
                        rgb: (0..OBS_PIXELS * 3).map(|_| rng.random()).collect(),
                        depth: (0..OBS_PIXELS).map(|_| rng.random_range(0.0..4.0)).collect(),
                        pose: random_pose(&mut rng),
                    };
                    let action = Action7::from_array(&std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
                    (frame, action)
                })
                .collect();
            ProcessedTrajectory {
                info: TrajectoryInfo {
                    name: format!("t{t}"),
                    home_id: format!("home{}", t % 2),
                    task_label: "fixture".into(),
                    env_id: "fixture".into(),
                    recorder_id: "fixture".into(),
                    frames: 8 * per + 1,
                    fps: RECORD_HZ,
                },
                samples,
            }
        })
        .collect()
}

fn dataset_store() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trajs = fixture_trajectories(9);
    let expected: Vec<&(FrameRecord, Action7)> = trajs.iter().flat_map(|t| &t.samples).collect();
    let rgbd = tmp.path().join("rgbd");
    let rgb = tmp.path().join("rgb");
    write_shards(&trajs, &rgbd, Variant::Rgbd, 7).map_err(|e| e.to_string())?;
    write_shards(&trajs, &rgb, Variant::RgbOnly, 7).map_err(|e| e.to_string())?;
    let a = open_dataset(&rgbd).map_err(|e| e.to_string())?;
    let b = open_dataset(&rgb).map_err(|e| e.to_string())?;
    ensure(a.len() == expected.len() && b.len() == expected.len(), "record count")?;
    for (i, (frame, action)) in expected.iter().enumerate() {
        let ra = a.read_record(i).map_err(|e| e.to_string())?;
        let rb = b.read_record(i).map_err(|e| e.to_string())?;
        ensure(ra.rgb == frame.rgb && ra.depth.as_deref() == Some(&frame.depth[..]), format!("record {i} bytes"))?;
        ensure(ra.action == action.to_array(), format!("record {i} action"))?;
        ensure(
            rb.depth.is_none()
                && rb.rgb == ra.rgb
                && rb.action == ra.action
                && rb.trajectory_id == ra.trajectory_id
                && rb.frame_index == ra.frame_index,
            format!("record {i} variants disagree"),
        )?;
    }
    ensure(a.norm_stats() == b.norm_stats(), "variants disagree on norm stats")?;

    // flip one bit in the middle of the second shard
    let shard = rgbd.join(&a.manifest().shards[1].file);
    let mut f = OpenOptions::new().read(true).write(true).open(&shard).map_err(|e| e.to_string())?;
    let len = f.metadata().map_err(|e| e.to_string())?.len();
    let mut byte = [0u8];
    f.seek(SeekFrom::Start(len / 2)).and_then(|_| f.read_exact(&mut byte)).map_err(|e| e.to_string())?;
    byte[0] ^= 0x10;
    f.seek(SeekFrom::Start(len / 2)).and_then(|_| f.write_all(&byte)).map_err(|e| e.to_string())?;
    drop(f);
    let c = open_dataset(&rgbd).map_err(|e| e.to_string())?;
    let first_in_shard = a.manifest().shards[0].records;
    let detected = matches!(c.read_record(first_in_shard), Err(Error::ChecksumMismatch { .. }));
    ensure(detected, "bit flip not detected")?;
    ensure(c.read_record(0).is_ok(), "intact shard rejected")?;
    Ok(format!("{} records byte-exact in both variants, bit flip detected", expected.len()))
}

fn epoch(handle: &Arc<DatasetHandle>, spec: &BatchSpec, epoch: u64) -> Result<Vec<Batch>, String> {
    batch_iter(handle.clone(), spec, epoch)
        .map_err(|e| e.to_string())?
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())
}

fn loader_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_shards(&fixture_trajectories(10), tmp.path(), Variant::Rgbd, 9).map_err(|e| e.to_string())?;
    let handle = Arc::new(open_dataset(tmp.path()).map_err(|e| e.to_string())?);
    let spec = BatchSpec {
        batch_size: 5,
        seed: 17,
        ..BatchSpec::default()
    };
    for e in 0..3 {
        ensure(epoch(&handle, &spec, e)? == epoch(&handle, &spec, e)?, format!("epoch {e} differs"))?;
    }
    ensure(epoch(&handle, &spec, 0)? != epoch(&handle, &spec, 1)?, "epochs share an order")?;
    let reference = epoch(&handle, &BatchSpec { prefetch_depth: 0, ..spec }, 0)?;
    for depth in [1, 4] {
        let got = epoch(&handle, &BatchSpec { prefetch_depth: depth, ..spec }, 0)?;
        ensure(got == reference, format!("prefetch {depth} differs"))?;
    }
    let n: usize = reference.iter().map(Batch::len).sum();
    ensure(n == handle.len(), "epoch does not cover the dataset")?;
    Ok(format!("{n} records, identical across runs and prefetch depths 0/1/4"))
}

fn hony_stats() -> Option<Outcome> {
    let path = std::env::var_os("DEMOFORGE_HONY_DATASET")?;
    Some((|| {
        let handle = open_dataset(&path).map_err(|e| e.to_string())?;
        let stats = stats_report(&handle).total;
        let hours = stats.minutes / 60.0;
        let close = |got: f64, want: f64| (got - want).abs() <= 0.02 * want;
        let detail = format!("{} demos, {} frames, {hours:.2} h", stats.demos, stats.frames);
        ensure(
            close(stats.demos as f64, 5620.0) && close(stats.frames as f64, 1.5e6) && close(hours, 13.0),
            detail.clone(),
        )?;
        Ok(detail)
    })())
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id:>2} {tag} {name}: {detail} [{:.1?}]", t0.elapsed());
    outcome.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= run(1, "geometry oracle", geometry_oracle);
    ok &= run(2, "replay fidelity", replay_fidelity);
    ok &= run(3, "pipeline constants", pipeline_constants);
    ok &= run(4, "normalization", normalization);
    ok &= run(5, "gradient check", gradient_check);
    ok &= run(6, "aperture regressor", aperture_regressor);
    ok &= run(7, "end-to-end BeaconReach", end_to_end);
    ok &= run(8, "demo-count scaling", demo_count_scaling);
    ok &= run(9, "dataset store", dataset_store);
    ok &= run(10, "loader determinism", loader_determinism);
    match hony_stats() {
        Some(outcome) => ok &= run(11, "HoNY stats", || outcome),
        None => println!("criterion 11 SKIP HoNY stats: DEMOFORGE_HONY_DATASET not set"),
    }
    if !ok {
        std::process::exit(1);
    }
}
