//! `demoforge` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (parse, QC, checksum),
//! 3 runtime error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use demoforge::config::{
    CONTROL_HZ, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_GRID_SPACING, DEFAULT_HIDDEN, DEFAULT_LEARNING_RATE,
    DEFAULT_SHARD_SIZE, RECORD_HZ,
};
use demoforge::geometry::rotation_distance;
use demoforge::loader::observation_from_parts;
use demoforge::pipeline::{ingest, process_bundle, IngestOptions};
use demoforge::policy::{
    train_policy, train_policy_with_features, BcPolicy, EncoderKind, EncoderSpec, PolicySnapshot, TrainConfig,
};
use demoforge::recording::{parse_bundle, validate_bundle};
use demoforge::rollout::{
    eval10, evaluate_policy, gen_synthetic_demos, make_start_grid, open_loop_replay, parse_grid, BeaconReach,
    DemoConfig, DEFAULT_MAX_STEPS,
};
use demoforge::store::{export_dataset, open_dataset, stats_report, Variant};
use demoforge::trajectory::{control_stride, extract_actions_from_poses, ApertureEstimator, ApertureModel};
use demoforge::{Error, ErrorClass};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "demoforge", version, about = "Demonstration datasets and desk-scale behavior cloning")]
pub struct Cli {
    /// Emit a single JSON document on stdout
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Suppress progress and human-readable output
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Leave the generation time out of JSON output
    #[arg(long, global = true)]
    no_timestamps: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quality-check recording bundles and write a sharded dataset
    Ingest(IngestArgs),
    /// Run the quality checks on one recording bundle
    Validate {
        bundle: PathBuf,
    },
    /// Demonstrations, frames and minutes per home and per task
    Stats {
        dataset: PathBuf,
    },
    /// Re-write a dataset, optionally dropping depth
    Export {
        dataset: PathBuf,
        #[arg(long, default_value = "rgb-only")]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHARD_SIZE)]
        shard_size: usize,
    },
    /// Fit a policy head on a dataset (defaults: 50 epochs, lr 3e-5)
    Train(TrainArgs),
    /// Open-loop check of a bundle: odometry replay or policy action error
    Replay(ReplayArgs),
    /// Closed-loop evaluation of a policy snapshot
    Rollout(RolloutArgs),
    /// Render oracle demonstrations as recording bundles
    DemoGen(DemoGenArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EnvName {
    Beacon,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(required = true)]
    bundles: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "rgbd")]
    variant: Variant,
    #[arg(long, default_value_t = DEFAULT_SHARD_SIZE)]
    shard_size: usize,
    /// Bundle id to drop; repeatable
    #[arg(long)]
    exclude: Vec<String>,
    /// Aperture regressor for frames without tip annotations
    #[arg(long)]
    aperture_model: Option<PathBuf>,
    #[arg(long, default_value_t = 400.0)]
    max_tip_distance_px: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    dataset: PathBuf,
    #[arg(long, default_value = "random-projection")]
    encoder: EncoderKind,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    /// JSON array with one 512-vector per record, for the external-features encoder
    #[arg(long, required_if_eq("encoder", "external-features"))]
    features: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").required(true).args(["snapshot_free", "snapshot"])))]
struct ReplayArgs {
    bundle: PathBuf,
    /// Replay the extracted actions against the recorded poses
    #[arg(long)]
    snapshot_free: bool,
    /// Compare a policy's predictions with the recorded actions
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    aperture_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    snapshot: PathBuf,
    #[arg(long, value_enum, default_value = "beacon")]
    env: EnvName,
    /// `eval10` or a grid such as `4x6`
    #[arg(long, default_value = "eval10")]
    starts: String,
    #[arg(long, default_value_t = DEFAULT_GRID_SPACING)]
    spacing: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// Write one CSV per episode here
    #[arg(long)]
    episodes_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DemoGenArgs {
    #[arg(long, value_enum, default_value = "beacon")]
    env: EnvName,
    /// Start grid as ROWSxCOLS (default 4x6, 24 demos)
    #[arg(long, default_value = "4x6")]
    grid: String,
    #[arg(long, default_value_t = DEFAULT_GRID_SPACING)]
    spacing: f64,
    /// Std of per-tick translation noise, meters
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<Report, Failure>;

/// What a command produced: a JSON value, a human summary and its exit code.
struct Report {
    value: Value,
    text: String,
    code: i32,
}

impl Report {
    fn ok(value: Value, text: String) -> Self {
        Report {
            value,
            text,
            code: EXIT_OK,
        }
    }
}

struct Out {
    json: bool,
    quiet: bool,
}

impl Out {
    fn progress(&self, msg: &str) {
        if !self.quiet && !self.json {
            eprintln!("{msg}");
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("DEMOFORGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool already exists when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parse `argv` (program name first), run the command and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    init_threads();
    let out = Out {
        json: cli.json,
        quiet: cli.quiet,
    };
    let name = command_name(&cli.command);
    match dispatch(&cli, &out) {
        Ok(report) => {
            if cli.json {
                let mut doc = json!({ "command": name, "ok": report.code == EXIT_OK, "result": report.value });
                if !cli.no_timestamps {
                    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                    doc["generated_at"] = json!(secs);
                }
                println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
            } else if !cli.quiet {
                println!("{}", report.text.trim_end());
            }
            report.code
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Core(e)) => {
            let code = match e.class() {
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Runtime => EXIT_RUNTIME,
            };
            eprintln!("error: {e}");
            if cli.json {
                let doc = json!({ "command": name, "ok": false, "error": e.to_string(), "exit_code": code });
                println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
            }
            code
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Validate { .. } => "validate",
        Command::Stats { .. } => "stats",
        Command::Export { .. } => "export",
        Command::Train(_) => "train",
        Command::Replay(_) => "replay",
        Command::Rollout(_) => "rollout",
        Command::DemoGen(_) => "demo-gen",
    }
}

fn dispatch(cli: &Cli, out: &Out) -> CmdResult {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, out),
        Command::Validate { bundle } => cmd_validate(bundle),
        Command::Stats { dataset } => cmd_stats(dataset),
        Command::Export {
            dataset,
            variant,
            out: dest,
            shard_size,
        } => {
            let handle = open_dataset(dataset)?;
            let m = export_dataset(&handle, dest, *variant, *shard_size)?;
            let text = format!("exported {} records as {} to {}", m.totals.records, m.variant, dest.display());
            Ok(Report::ok(
                json!({ "out": dest, "variant": m.variant, "records": m.totals.records, "shards": m.shards.len() }),
                text,
            ))
        }
        Command::Train(a) => cmd_train(a, cli.seed, out),
        Command::Replay(a) => cmd_replay(a),
        Command::Rollout(a) => cmd_rollout(a, out),
        Command::DemoGen(a) => cmd_demo_gen(a, cli.seed, out),
    }
}

fn load_aperture_model(path: Option<&PathBuf>) -> Result<Option<ApertureModel>, Failure> {
    Ok(path.map(|p| ApertureModel::load(p)).transpose()?)
}

fn cmd_ingest(a: &IngestArgs, out: &Out) -> CmdResult {
    let opts = IngestOptions {
        variant: a.variant,
        shard_size: a.shard_size,
        exclude: a.exclude.iter().cloned().collect::<BTreeSet<_>>(),
        aperture_model: load_aperture_model(a.aperture_model.as_ref())?,
        max_tip_distance_px: a.max_tip_distance_px,
    };
    out.progress(&format!("ingesting {} bundles", a.bundles.len()));
    let report = ingest(&a.bundles, &a.out, &opts)?;
    let m = &report.manifest;
    let mut text = format!(
        "kept {} bundles, {} records in {} shards ({})\n",
        report.kept.len(),
        m.totals.records,
        m.shards.len(),
        m.variant
    );
    for r in &report.rejected {
        text.push_str(&format!("rejected {}: {}\n", r.id, r.reasons.join(", ")));
    }
    Ok(Report::ok(
        json!({
            "out": a.out,
            "kept": report.kept,
            "rejected": report.rejected,
            "records": m.totals.records,
            "shards": m.shards.len(),
            "variant": m.variant,
            "norm_stats": m.norm_stats,
        }),
        text,
    ))
}

fn cmd_validate(bundle: &Path) -> CmdResult {
    let b = parse_bundle(bundle)?;
    let report = validate_bundle(&b);
    let mut text = format!("{}: {}\n", report.bundle_id, if report.passed { "pass" } else { "fail" });
    for c in &report.checks {
        let tag = if c.passed { "ok" } else if c.mandatory { "FAIL" } else { "warn" };
        text.push_str(&format!("  {:<12} {tag:<4} {}\n", c.name, c.detail));
    }
    let verdict = if report.passed { "pass" } else { "fail" };
    Ok(Report {
        value: json!({ "verdict": verdict, "report": report }),
        text,
        code: if report.passed { EXIT_OK } else { EXIT_DATA },
    })
}

fn cmd_stats(dataset: &Path) -> CmdResult {
    let handle = open_dataset(dataset)?;
    let table = stats_report(&handle);
    let (mean_demos, mean_minutes) = table.mean_per_home();
    Ok(Report::ok(
        json!({ "table": table, "mean_per_home": { "demos": mean_demos, "minutes": mean_minutes } }),
        table.to_text(),
    ))
}

fn read_features(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Core(Error::from(e)))
}

fn cmd_train(a: &TrainArgs, seed: u64, out: &Out) -> CmdResult {
    let handle = open_dataset(&a.dataset)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        hidden: a.hidden,
        seed,
        ..TrainConfig::default()
    };
    let spec = EncoderSpec::new(a.encoder, seed);
    out.progress(&format!(
        "training on {} records: {} epochs, lr {:e}, batch {}",
        handle.len(),
        cfg.epochs,
        cfg.learning_rate,
        cfg.batch_size
    ));
    let (snap, curve) = match &a.features {
        Some(p) => train_policy_with_features(&handle, &spec, &read_features(p)?, &cfg)?,
        None => train_policy(&handle, &spec, &cfg)?,
    };
    snap.save(&a.out)?;
    let last = curve.last().copied().unwrap_or(f64::NAN);
    let text = format!(
        "trained {} epochs on {} records, final loss {last:.5}; snapshot {}",
        curve.len(),
        handle.len(),
        a.out.display()
    );
    Ok(Report::ok(
        json!({
            "snapshot": a.out,
            "records": handle.len(),
            "encoder": spec,
            "config": cfg,
            "final_loss": last,
            "loss_curve": curve,
        }),
        text,
    ))
}

fn cmd_replay(a: &ReplayArgs) -> CmdResult {
    let bundle = parse_bundle(&a.bundle)?;
    let stride = control_stride(bundle.meta.nominal_fps, CONTROL_HZ)?;
    match &a.snapshot {
        None => {
            let poses = bundle.poses();
            let actions = extract_actions_from_poses(&poses, &vec![0.0; poses.len()], stride)?;
            let ticks: Vec<_> = poses.iter().step_by(stride).collect();
            let replayed = open_loop_replay(ticks[0], &actions);
            let (mut pos_err, mut rot_err) = (0.0f64, 0.0f64);
            for (r, t) in replayed.iter().zip(&ticks) {
                pos_err = pos_err.max((r.position - t.position).norm());
                rot_err = rot_err.max(rotation_distance(r.orientation(), t.orientation()));
            }
            let text = format!(
                "{}: {} actions at stride {stride}, max position error {pos_err:.3e} m, max rotation error {rot_err:.3e} rad",
                bundle.id(),
                actions.len()
            );
            Ok(Report::ok(
                json!({
                    "bundle": bundle.id(),
                    "mode": "snapshot-free",
                    "stride": stride,
                    "actions": actions.len(),
                    "max_position_error": pos_err,
                    "max_rotation_error": rot_err,
                }),
                text,
            ))
        }
        Some(path) => {
            let policy = BcPolicy::new(PolicySnapshot::load(path)?)?;
            let estimator = ApertureEstimator {
                max_tip_distance_px: 400.0,
                model: load_aperture_model(a.aperture_model.as_ref())?,
            };
            let traj = process_bundle(&bundle, &estimator)?;
            let mut obs = vec![0.0; demoforge::config::OBS_LEN];
            let mut err = [0.0f64; 7];
            for (frame, action) in &traj.samples {
                observation_from_parts(&frame.rgb, Some(&frame.depth), &mut obs);
                let (pred, _) = policy.predict(&obs, None)?;
                for (e, (p, t)) in err.iter_mut().zip(pred.to_array().iter().zip(action.to_array())) {
                    *e += (p - t).abs();
                }
            }
            let n = traj.samples.len().max(1) as f64;
            let mae = err.map(|e| e / n);
            let text = format!("{}: mean absolute action error per axis {:?}", bundle.id(), mae);
            Ok(Report::ok(
                json!({ "bundle": bundle.id(), "mode": "snapshot", "samples": traj.samples.len(), "mean_abs_error": mae }),
                text,
            ))
        }
    }
}

fn cmd_rollout(a: &RolloutArgs, out: &Out) -> CmdResult {
    let EnvName::Beacon = a.env;
    let env = BeaconReach::default();
    let starts = if a.starts == "eval10" {
        eval10(&env.base, a.spacing)
    } else {
        let (rows, cols) =
            parse_grid(&a.starts).ok_or_else(|| Failure::Usage(format!("bad --starts {:?}", a.starts)))?;
        make_start_grid(rows, cols, a.spacing, a.spacing, &env.base)
    };
    let policy = BcPolicy::new(PolicySnapshot::load(&a.snapshot)?)?;
    out.progress(&format!("rolling out {} episodes", starts.len()));
    let table = evaluate_policy(&env, &policy, &starts, a.max_steps);
    if let Some(dir) = &a.episodes_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, r) in table.results.iter().enumerate() {
            r.write_csv(&dir.join(format!("episode_{i:03}.csv")))?;
        }
    }
    let episodes: Vec<Value> = table
        .results
        .iter()
        .map(|r| {
            json!({
                "success": r.success,
                "steps_used": r.steps_used,
                "final_distance": r.final_distance,
                "failure": r.failure,
            })
        })
        .collect();
    let mut text = format!("success {}/{} ({:.0}%)\n", table.successes, table.total, 100.0 * table.rate());
    for (i, r) in table.results.iter().enumerate() {
        text.push_str(&format!(
            "  episode {i:>2}: {} in {} steps, final distance {:.4} m\n",
            if r.success { "success" } else { "failure" },
            r.steps_used,
            r.final_distance
        ));
    }
    Ok(Report::ok(
        json!({
            "success_table": { "successes": table.successes, "total": table.total, "rate": table.rate() },
            "episodes": episodes,
        }),
        text,
    ))
}

fn cmd_demo_gen(a: &DemoGenArgs, seed: u64, out: &Out) -> CmdResult {
    let EnvName::Beacon = a.env;
    let (rows, cols) = parse_grid(&a.grid).ok_or_else(|| Failure::Usage(format!("bad --grid {:?}", a.grid)))?;
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(Failure::Usage(format!("--noise must be non-negative, got {}", a.noise)));
    }
    let env = BeaconReach::default();
    let starts = make_start_grid(rows, cols, a.spacing, a.spacing, &env.base);
    let cfg = DemoConfig {
        record_hz: RECORD_HZ,
        noise_sigma: a.noise,
        seed,
        ..DemoConfig::default()
    };
    out.progress(&format!("rendering {} demonstrations", starts.len()));
    let dirs = gen_synthetic_demos(&env, &starts, &cfg, &a.out)?;
    let text = format!("wrote {} bundles to {}", dirs.len(), a.out.display());
    Ok(Report::ok(json!({ "out": a.out, "bundles": dirs, "grid": [rows, cols] }), text))
}
