//! Sharded on-disk datasets.
//!
//! A dataset directory holds `manifest.json` plus numbered shard files (see
//! [`shard`] for the record layout). Shards are checksummed with CRC-64/XZ;
//! the check runs lazily the first time a shard is read.

mod filter;
pub mod shard;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::config::{ACTION_DIM, DEFAULT_SHARD_SIZE, OBS_SIZE};
use crate::error::{Error, IoContext, Result};
use crate::recording::FrameRecord;
use crate::trajectory::{compute_norm_stats, Action7, NormStats};

pub use filter::{qc_filter, QcOutcome, QcRules, Rejected};
pub use shard::{payload_len, Record};
pub use stats::{stats_report, StatsRow, StatsTable};

use shard::{encode_record, index_file_name, shard_file_name, ShardReader, ShardWriter};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    RgbOnly,
    Rgbd,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::RgbOnly => "rgb-only",
            Variant::Rgbd => "rgbd",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rgb-only" | "rgb_only" => Ok(Variant::RgbOnly),
            "rgbd" => Ok(Variant::Rgbd),
            other => Err(format!("unknown variant {other:?} (expected rgbd or rgb-only)")),
        }
    }
}

/// Where a trajectory came from and how long it was at capture time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInfo {
    pub name: String,
    pub home_id: String,
    pub task_label: String,
    pub env_id: String,
    pub recorder_id: String,
    /// Frames in the original recording.
    pub frames: usize,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub id: u32,
    #[serde(flatten)]
    pub info: TrajectoryInfo,
    pub records: usize,
    pub first_record: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub index_file: String,
    pub records: usize,
    pub bytes: u64,
    pub crc64: u64,
    pub index_crc64: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub demos: usize,
    pub frames: usize,
    pub records: usize,
    pub seconds: f64,
}

impl GroupCounts {
    fn add(&mut self, t: &TrajectoryEntry) {
        self.demos += 1;
        self.frames += t.info.frames;
        self.records += t.records;
        self.seconds += t.info.frames as f64 / t.info.fps;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub variant: Variant,
    pub obs_size: usize,
    pub action_dim: usize,
    pub shards: Vec<ShardEntry>,
    pub trajectories: Vec<TrajectoryEntry>,
    pub totals: GroupCounts,
    pub per_home: BTreeMap<String, GroupCounts>,
    pub per_task: BTreeMap<String, GroupCounts>,
    pub norm_stats: NormStats,
}

impl DatasetManifest {
    pub fn total_records(&self) -> usize {
        self.totals.records
    }

    fn check_arithmetic(&self) -> Result<()> {
        let shard_sum: usize = self.shards.iter().map(|s| s.records).sum();
        let traj_sum: usize = self.trajectories.iter().map(|t| t.records).sum();
        let frames: usize = self.trajectories.iter().map(|t| t.info.frames).sum();
        if shard_sum != self.totals.records
            || traj_sum != self.totals.records
            || frames != self.totals.frames
            || self.trajectories.len() != self.totals.demos
        {
            return Err(Error::CorruptDataset(format!(
                "manifest totals disagree: shards {shard_sum}, trajectories {traj_sum}, totals {}",
                self.totals.records
            )));
        }
        let mut next = 0;
        for t in &self.trajectories {
            if t.first_record != next {
                return Err(Error::CorruptDataset(format!(
                    "trajectory {} starts at record {}, expected {next}",
                    t.id, t.first_record
                )));
            }
            next += t.records;
        }
        if self.obs_size != OBS_SIZE || self.action_dim != ACTION_DIM {
            return Err(Error::CorruptDataset(format!(
                "unsupported record shape obs {} / action {}",
                self.obs_size, self.action_dim
            )));
        }
        if !self.norm_stats.is_valid() {
            return Err(Error::CorruptDataset("invalid norm stats".into()));
        }
        Ok(())
    }
}

/// A decoded trajectory ready for storage: one frame per action, where
/// `samples[k].1` is the action taken from `samples[k].0`.
#[derive(Debug, Clone)]
pub struct ProcessedTrajectory {
    pub info: TrajectoryInfo,
    pub samples: Vec<(FrameRecord, Action7)>,
}

/// Streams records into shards; the manifest is written on [`DatasetWriter::finish`].
pub struct DatasetWriter {
    dir: PathBuf,
    variant: Variant,
    shard_size: usize,
    current: Option<ShardWriter>,
    shards: Vec<ShardEntry>,
    trajectories: Vec<TrajectoryEntry>,
    records: usize,
    buf: Vec<u8>,
}

impl DatasetWriter {
    pub fn create(dir: impl AsRef<Path>, variant: Variant, shard_size: usize) -> Result<Self> {
        if shard_size == 0 {
            return Err(Error::InvalidConfig("shard_size must be at least 1".into()));
        }
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).at(&dir)?;
        Ok(DatasetWriter {
            dir,
            variant,
            shard_size,
            current: None,
            shards: Vec::new(),
            trajectories: Vec::new(),
            records: 0,
            buf: Vec::new(),
        })
    }

    /// Start a new trajectory; following [`push`](Self::push) calls belong to it.
    pub fn begin_trajectory(&mut self, info: TrajectoryInfo) -> u32 {
        let id = self.trajectories.len() as u32;
        self.trajectories.push(TrajectoryEntry {
            id,
            info,
            records: 0,
            first_record: self.records,
        });
        id
    }

    pub fn push(
        &mut self,
        frame_index: u32,
        action: &[f64; ACTION_DIM],
        rgb: &[u8],
        depth: Option<&[f32]>,
    ) -> Result<()> {
        let traj = self
            .trajectories
            .last_mut()
            .ok_or_else(|| Error::InvalidConfig("push before begin_trajectory".into()))?;
        encode_record(self.variant, traj.id, frame_index, action, rgb, depth, &mut self.buf)?;
        if self.current.is_none() {
            self.current = Some(ShardWriter::create(&self.dir, self.shards.len())?);
        }
        let shard = self.current.as_mut().expect("created above");
        shard.push(&self.buf)?;
        traj.records += 1;
        self.records += 1;
        if shard.len() == self.shard_size {
            self.close_shard()?;
        }
        Ok(())
    }

    fn close_shard(&mut self) -> Result<()> {
        if let Some(w) = self.current.take() {
            let i = self.shards.len();
            let done = w.finish()?;
            self.shards.push(ShardEntry {
                file: shard_file_name(i),
                index_file: index_file_name(i),
                records: done.records,
                bytes: done.bytes,
                crc64: done.crc64,
                index_crc64: done.index_crc64,
            });
        }
        Ok(())
    }

    pub fn finish(mut self, norm_stats: NormStats) -> Result<DatasetManifest> {
        if self.records == 0 {
            return Err(Error::EmptyInput);
        }
        self.close_shard()?;
        let mut totals = GroupCounts::default();
        let mut per_home: BTreeMap<String, GroupCounts> = BTreeMap::new();
        let mut per_task: BTreeMap<String, GroupCounts> = BTreeMap::new();
        for t in &self.trajectories {
            totals.add(t);
            per_home.entry(t.info.home_id.clone()).or_default().add(t);
            per_task.entry(t.info.task_label.clone()).or_default().add(t);
        }
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            variant: self.variant,
            obs_size: OBS_SIZE,
            action_dim: ACTION_DIM,
            shards: self.shards,
            trajectories: self.trajectories,
            totals,
            per_home,
            per_task,
            norm_stats,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").at(&path)?;
        Ok(manifest)
    }
}

/// Write trajectories as a sharded dataset. Normalization statistics are
/// computed over every action in the input.
pub fn write_shards(
    trajectories: &[ProcessedTrajectory],
    out_dir: impl AsRef<Path>,
    variant: Variant,
    shard_size: usize,
) -> Result<DatasetManifest> {
    let actions: Vec<Action7> = trajectories
        .iter()
        .flat_map(|t| t.samples.iter().map(|(_, a)| *a))
        .collect();
    if actions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let stats = compute_norm_stats(&actions)?;
    let mut w = DatasetWriter::create(out_dir, variant, shard_size)?;
    for t in trajectories {
        w.begin_trajectory(t.info.clone());
        for (frame, action) in &t.samples {
            w.push(
                frame.index as u32,
                &action.to_array(),
                &frame.rgb,
                Some(&frame.depth),
            )?;
        }
    }
    w.finish(stats)
}

pub fn default_shard_size() -> usize {
    DEFAULT_SHARD_SIZE
}

#[derive(Debug)]
struct ShardSlot {
    bin: PathBuf,
    idx: PathBuf,
    first: usize,
    reader: OnceLock<std::result::Result<ShardReader, String>>,
}

/// An open dataset. Shard verification happens on first access; after that
/// reads are lock-free and the handle can be shared across threads.
#[derive(Debug)]
pub struct DatasetHandle {
    root: PathBuf,
    manifest: DatasetManifest,
    slots: Vec<ShardSlot>,
}

/// Open a dataset from its manifest path or its directory.
pub fn open_dataset(path: impl AsRef<Path>) -> Result<DatasetHandle> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let text = fs::read_to_string(&manifest_path).at(&manifest_path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptDataset("manifest has no format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionUnsupported(version as u32));
    }
    let manifest: DatasetManifest = serde_json::from_value(value)?;
    manifest.check_arithmetic()?;

    let mut slots = Vec::with_capacity(manifest.shards.len());
    let mut first = 0;
    for s in &manifest.shards {
        let bin = root.join(&s.file);
        let idx = root.join(&s.index_file);
        for p in [&bin, &idx] {
            if !p.exists() {
                return Err(Error::MissingShard(p.clone()));
            }
        }
        slots.push(ShardSlot {
            bin,
            idx,
            first,
            reader: OnceLock::new(),
        });
        first += s.records;
    }
    Ok(DatasetHandle {
        root,
        manifest,
        slots,
    })
}

impl DatasetHandle {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.total_records()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.manifest.norm_stats
    }

    pub fn variant(&self) -> Variant {
        self.manifest.variant
    }

    fn reader(&self, shard: usize) -> Result<&ShardReader> {
        let slot = &self.slots[shard];
        let entry = &self.manifest.shards[shard];
        let state = slot.reader.get_or_init(|| {
            ShardReader::open(
                &slot.bin,
                &slot.idx,
                self.manifest.variant,
                entry.records,
                entry.crc64,
                entry.index_crc64,
            )
            .map_err(|e| e.to_string())
        });
        match state {
            Ok(r) => Ok(r),
            Err(_) => {
                // Re-run verification to hand back a typed error; the cached
                // failure only records that this shard is bad.
                let err = ShardReader::open(
                    &slot.bin,
                    &slot.idx,
                    self.manifest.variant,
                    entry.records,
                    entry.crc64,
                    entry.index_crc64,
                )
                .err();
                Err(err.unwrap_or_else(|| {
                    Error::CorruptDataset(format!("{} failed verification", slot.bin.display()))
                }))
            }
        }
    }

    /// Map a global record index to (shard, index within shard).
    fn locate(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let shard = self.slots.partition_point(|s| s.first <= index) - 1;
        Ok((shard, index - self.slots[shard].first))
    }

    /// Record at a global position, in shard order.
    pub fn read_record(&self, index: usize) -> Result<Record> {
        let (shard, local) = self.locate(index)?;
        self.reader(shard)?.read(local)
    }

    /// Verify every shard now instead of on first access.
    pub fn verify_all(&self) -> Result<()> {
        (0..self.slots.len()).try_for_each(|i| self.reader(i).map(|_| ()))
    }
}

/// Re-write a dataset as `variant`, keeping trajectories and normalization statistics.
pub fn export_dataset(
    handle: &DatasetHandle,
    out_dir: impl AsRef<Path>,
    variant: Variant,
    shard_size: usize,
) -> Result<DatasetManifest> {
    if variant == Variant::Rgbd && handle.variant() == Variant::RgbOnly {
        return Err(Error::InvalidConfig(
            "cannot export an rgb-only dataset as rgbd".into(),
        ));
    }
    let mut w = DatasetWriter::create(out_dir, variant, shard_size)?;
    for t in &handle.manifest.trajectories {
        w.begin_trajectory(t.info.clone());
        for i in t.first_record..t.first_record + t.records {
            let r = handle.read_record(i)?;
            w.push(r.frame_index, &r.action, &r.rgb, r.depth.as_deref())?;
        }
    }
    w.finish(handle.manifest.norm_stats)
}
