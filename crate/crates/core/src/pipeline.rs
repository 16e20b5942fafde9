//! Recording bundles to a sharded dataset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CONTROL_HZ, DEFAULT_SHARD_SIZE};
use crate::error::{Error, Result};
use crate::recording::{decode_frame, parse_bundle, validate_bundle, RecordingBundle};
use crate::store::{qc_filter, write_shards, DatasetManifest, ProcessedTrajectory, QcRules, TrajectoryInfo, Variant};
use crate::trajectory::{extract_actions_from_poses, subsample_indices, ApertureEstimator, ApertureModel};

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub variant: Variant,
    pub shard_size: usize,
    pub exclude: BTreeSet<String>,
    pub aperture_model: Option<ApertureModel>,
    pub max_tip_distance_px: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            variant: Variant::Rgbd,
            shard_size: DEFAULT_SHARD_SIZE,
            exclude: BTreeSet::new(),
            aperture_model: None,
            max_tip_distance_px: 400.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectedBundle {
    pub id: String,
    pub path: PathBuf,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub kept: Vec<String>,
    pub rejected: Vec<RejectedBundle>,
    pub manifest: DatasetManifest,
}

/// Decode a bundle's control-rate frames and extract their actions. Each
/// sample pairs a frame with the action taken from it, so the final tick
/// contributes no sample.
pub fn process_bundle(bundle: &RecordingBundle, estimator: &ApertureEstimator) -> Result<ProcessedTrajectory> {
    let meta = &bundle.meta;
    let ticks = subsample_indices(bundle.frame_count, meta.nominal_fps, CONTROL_HZ)?;
    let annotations = bundle.annotations()?;
    let decoded: Vec<_> = ticks
        .par_iter()
        .map(|&i| {
            let frame = decode_frame(bundle, i)?;
            let aperture = estimator.estimate(&frame.rgb, annotations.get(&i))?;
            Ok((frame, aperture))
        })
        .collect::<Result<_>>()?;
    let (frames, apertures): (Vec<_>, Vec<f64>) = decoded.into_iter().unzip();
    let poses: Vec<_> = frames.iter().map(|f| f.pose).collect();
    let actions = extract_actions_from_poses(&poses, &apertures, 1)?;
    Ok(ProcessedTrajectory {
        info: TrajectoryInfo {
            name: bundle.id(),
            home_id: meta.home_id.clone(),
            task_label: meta.task_label.clone(),
            env_id: meta.env_id.clone(),
            recorder_id: meta.recorder_id.clone(),
            frames: bundle.frame_count,
            fps: meta.nominal_fps,
        },
        samples: frames.into_iter().zip(actions).collect(),
    })
}

/// Parse, quality-check, process and store bundles. Bundles that fail QC are
/// reported, not fatal; a bundle that cannot be parsed is an error.
pub fn ingest(bundle_dirs: &[PathBuf], out_dir: &Path, opts: &IngestOptions) -> Result<IngestReport> {
    let mut parsed = Vec::with_capacity(bundle_dirs.len());
    for dir in bundle_dirs {
        let b = parse_bundle(dir)?;
        let report = validate_bundle(&b);
        parsed.push((b, report));
    }
    let outcome = qc_filter(
        parsed,
        &QcRules {
            exclude: opts.exclude.clone(),
        },
    );
    if outcome.kept.is_empty() {
        return Err(Error::EmptyInput);
    }
    let estimator = ApertureEstimator {
        max_tip_distance_px: opts.max_tip_distance_px,
        model: opts.aperture_model.clone(),
    };
    let trajectories = outcome
        .kept
        .iter()
        .map(|b| process_bundle(b, &estimator))
        .collect::<Result<Vec<_>>>()?;
    let manifest = write_shards(&trajectories, out_dir, opts.variant, opts.shard_size)?;
    Ok(IngestReport {
        kept: outcome.kept.iter().map(RecordingBundle::id).collect(),
        rejected: outcome
            .rejected
            .into_iter()
            .map(|r| RejectedBundle {
                id: r.bundle.id(),
                path: r.bundle.root.clone(),
                reasons: r.reasons,
            })
            .collect(),
        manifest,
    })
}
