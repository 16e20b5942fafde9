//! Recording bundles: the on-disk form of one captured demonstration.
//!
//! A bundle is a directory holding
//!
//! ```text
//! meta.json          capture metadata (image sizes, rate, intrinsics, labels)
//! poses.csv          ts,px,py,pz,qw,qx,qy,qz  -- one row per frame
//! rgb/%06d.png       8-bit RGB frames at native resolution
//! depth/%06d.raw     little-endian u16 millimeters, row-major, no header
//! annotations.csv    optional gripper-tip marks: frame_index,ax,ay,bx,by
//! ```

mod decode;
mod qc;
mod writer;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::geometry::Pose;

pub use decode::{decode_frame, depth_mm_to_obs, resize_rgb_to_obs, FrameRecord};
pub use qc::{validate_bundle, QcCheck, QcReport, FPS_TOLERANCE, MIN_DURATION_S};
pub use writer::{rewrite_bundle, BundleWriter};

pub const META_FILE: &str = "meta.json";
pub const POSES_FILE: &str = "poses.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const RGB_DIR: &str = "rgb";
pub const DEPTH_DIR: &str = "depth";
pub const POSES_HEADER: [&str; 8] = ["ts", "px", "py", "pz", "qw", "qx", "qy", "qz"];

/// Largest tolerated deviation of a recorded quaternion's norm from 1.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub rgb_width: u32,
    pub rgb_height: u32,
    pub depth_width: u32,
    pub depth_height: u32,
    pub nominal_fps: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub recorder_id: String,
    pub task_label: String,
    pub home_id: String,
    pub env_id: String,
}

impl BundleMeta {
    fn check(&self) -> Result<()> {
        let dims = [
            self.rgb_width,
            self.rgb_height,
            self.depth_width,
            self.depth_height,
        ];
        if dims.contains(&0) {
            return Err(Error::MalformedMeta("image dimensions must be positive".into()));
        }
        if !(self.nominal_fps.is_finite() && self.nominal_fps > 0.0) {
            return Err(Error::MalformedMeta(format!(
                "nominal_fps must be positive, got {}",
                self.nominal_fps
            )));
        }
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(Error::MalformedMeta("non-finite intrinsics".into()));
        }
        Ok(())
    }
}

/// One row of `poses.csv`, exactly as recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub ts: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
}

impl PoseRow {
    pub fn from_pose(ts: f64, pose: &Pose) -> Self {
        let [qw, qx, qy, qz] = pose.quaternion_wxyz();
        PoseRow {
            ts,
            px: pose.position.x,
            py: pose.position.y,
            pz: pose.position.z,
            qw,
            qx,
            qy,
            qz,
        }
    }

    fn quat_norm(&self) -> f64 {
        (self.qw * self.qw + self.qx * self.qx + self.qy * self.qy + self.qz * self.qz).sqrt()
    }

    /// The renormalized, canonical pose of this row.
    pub fn pose(&self) -> Pose {
        Pose::new(
            Vector3::new(self.px, self.py, self.pz),
            Quaternion::new(self.qw, self.qx, self.qy, self.qz),
        )
    }
}

/// Pixel positions of the two gripper tips in one native RGB frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipAnnotation {
    pub frame_index: usize,
    pub ax: f64,
    pub ay: f64,
    pub bx: f64,
    pub by: f64,
}

impl TipAnnotation {
    pub fn separation(&self) -> f64 {
        (self.ax - self.bx).hypot(self.ay - self.by)
    }
}

/// A parsed and cross-checked bundle. Immutable after [`parse_bundle`].
#[derive(Debug, Clone)]
pub struct RecordingBundle {
    pub root: PathBuf,
    pub meta: BundleMeta,
    pub frame_count: usize,
    /// Rows as read from disk; quaternions are renormalized by [`RecordingBundle::poses`].
    pub pose_rows: Vec<PoseRow>,
}

impl RecordingBundle {
    /// Directory name of the bundle; used as its identifier.
    pub fn id(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.root.display().to_string())
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.pose_rows.iter().map(PoseRow::pose).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.pose_rows.iter().map(|r| r.ts).collect()
    }

    pub fn rgb_path(&self, index: usize) -> PathBuf {
        rgb_path(&self.root, index)
    }

    pub fn depth_path(&self, index: usize) -> PathBuf {
        depth_path(&self.root, index)
    }

    /// Gripper-tip annotations keyed by frame index, if the bundle has any.
    pub fn annotations(&self) -> Result<BTreeMap<usize, TipAnnotation>> {
        let path = self.root.join(ANNOTATIONS_FILE);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        read_annotations(&path)
    }
}

pub fn rgb_path(root: &Path, index: usize) -> PathBuf {
    root.join(RGB_DIR).join(format!("{index:06}.png"))
}

pub fn depth_path(root: &Path, index: usize) -> PathBuf {
    root.join(DEPTH_DIR).join(format!("{index:06}.raw"))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn count_files(dir: &Path, ext: &str) -> Result<usize> {
    let mut n = 0;
    for entry in fs::read_dir(dir).at(dir)? {
        let entry = entry.at(dir)?;
        if entry.path().extension().is_some_and(|e| e == ext) {
            n += 1;
        }
    }
    Ok(n)
}

fn csv_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::MalformedCsv {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

pub fn read_meta(path: &Path) -> Result<BundleMeta> {
    require(path)?;
    let text = fs::read_to_string(path).at(path)?;
    let meta: BundleMeta =
        serde_json::from_str(&text).map_err(|e| Error::MalformedMeta(e.to_string()))?;
    meta.check()?;
    Ok(meta)
}

pub fn read_pose_rows(path: &Path) -> Result<Vec<PoseRow>> {
    require(path)?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    if headers.iter().ne(POSES_HEADER) {
        return Err(csv_error(path, format!("unexpected header {headers:?}")));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn read_annotations(path: &Path) -> Result<BTreeMap<usize, TipAnnotation>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<TipAnnotation>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        out.insert(row.frame_index, row);
    }
    Ok(out)
}

/// Parse a bundle directory and cross-check poses against frame files.
pub fn parse_bundle(path: impl AsRef<Path>) -> Result<RecordingBundle> {
    let root = path.as_ref();
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let meta = read_meta(&root.join(META_FILE))?;
    let pose_rows = read_pose_rows(&root.join(POSES_FILE))?;

    for (i, pair) in pose_rows.windows(2).enumerate() {
        // written as a negation so NaN timestamps are rejected too
        if !(pair[1].ts > pair[0].ts) {
            return Err(Error::NonMonotonicTimestamps {
                row: i + 1,
                prev: pair[0].ts,
                next: pair[1].ts,
            });
        }
    }
    for (row, r) in pose_rows.iter().enumerate() {
        let norm = r.quat_norm();
        let finite = [r.ts, r.px, r.py, r.pz].iter().all(|v| v.is_finite());
        if !finite || !((norm - 1.0).abs() <= QUAT_NORM_TOLERANCE) {
            return Err(Error::MalformedQuaternion { row, norm });
        }
    }

    let rgb_dir = root.join(RGB_DIR);
    let depth_dir = root.join(DEPTH_DIR);
    require(&rgb_dir)?;
    require(&depth_dir)?;
    let n = pose_rows.len();
    for i in 0..n {
        require(&rgb_path(root, i))?;
        require(&depth_path(root, i))?;
    }
    for (dir, ext) in [(&rgb_dir, "png"), (&depth_dir, "raw")] {
        let found = count_files(dir, ext)?;
        if found != n {
            return Err(Error::CountMismatch {
                what: format!("pose rows vs files in {}", dir.display()),
                expected: n,
                found,
            });
        }
    }

    Ok(RecordingBundle {
        root: root.to_path_buf(),
        meta,
        frame_count: n,
        pose_rows,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::{DEPTH_HEIGHT, DEPTH_WIDTH, RGB_HEIGHT, RGB_WIDTH};
    use image::RgbImage;

    pub fn test_meta() -> BundleMeta {
        BundleMeta {
            rgb_width: RGB_WIDTH,
            rgb_height: RGB_HEIGHT,
            depth_width: DEPTH_WIDTH,
            depth_height: DEPTH_HEIGHT,
            nominal_fps: 30.0,
            fx: 900.0,
            fy: 900.0,
            cx: 640.0,
            cy: 360.0,
            recorder_id: "rec0".into(),
            task_label: "reach".into(),
            home_id: "home0".into(),
            env_id: "env0".into(),
        }
    }

    /// Small bundle of `n` gray frames at 30 FPS moving along +z.
    pub fn write_fixture(dir: &Path, meta: &BundleMeta, n: usize) -> RecordingBundle {
        let mut w = BundleWriter::create(dir, meta.clone()).unwrap();
        let rgb = RgbImage::from_pixel(meta.rgb_width, meta.rgb_height, image::Rgb([90, 90, 90]));
        let depth = vec![1500u16; (meta.depth_width * meta.depth_height) as usize];
        for i in 0..n {
            let pose = Pose::from_translation(0.0, 0.0, 0.01 * i as f64);
            w.push_frame(PoseRow::from_pose(i as f64 / meta.nominal_fps, &pose), &rgb, &depth)
                .unwrap();
        }
        w.finish().unwrap();
        parse_bundle(dir).unwrap()
    }

    #[test]
    fn parses_fixture() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        let b = write_fixture(&dir, &test_meta(), 24);
        assert_eq!(b.frame_count, 24);
        assert_eq!(b.id(), "demo");
        assert_eq!(b.meta, test_meta());
    }

    #[test]
    fn missing_pose_row_is_count_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        write_fixture(&dir, &test_meta(), 24);
        let text = fs::read_to_string(dir.join(POSES_FILE)).unwrap();
        let kept: Vec<&str> = text.lines().take(24).collect();
        fs::write(dir.join(POSES_FILE), kept.join("\n") + "\n").unwrap();
        assert!(matches!(
            parse_bundle(&dir),
            Err(Error::CountMismatch { expected: 23, found: 24, .. })
        ));
    }

    #[test]
    fn missing_frame_file() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        write_fixture(&dir, &test_meta(), 5);
        fs::remove_file(depth_path(&dir, 3)).unwrap();
        assert!(matches!(parse_bundle(&dir), Err(Error::MissingFile(p)) if p.ends_with("000003.raw")));
    }

    #[test]
    fn repeated_timestamp_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        write_fixture(&dir, &test_meta(), 3);
        fs::write(
            dir.join(POSES_FILE),
            "ts,px,py,pz,qw,qx,qy,qz\n0.0,0,0,0,1,0,0,0\n0.033,0,0,0,1,0,0,0\n0.033,0,0,0,1,0,0,0\n",
        )
        .unwrap();
        assert!(matches!(
            parse_bundle(&dir),
            Err(Error::NonMonotonicTimestamps { row: 2, .. })
        ));
    }

    #[test]
    fn quaternion_tolerance() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        write_fixture(&dir, &test_meta(), 2);
        fs::write(
            dir.join(POSES_FILE),
            "ts,px,py,pz,qw,qx,qy,qz\n0.0,0,0,0,1.0005,0,0,0\n0.033,0,0,0,0.0,0.0,0.0,-1.0009\n",
        )
        .unwrap();
        let b = parse_bundle(&dir).unwrap();
        let poses = b.poses();
        assert_eq!(poses[0].quaternion_wxyz(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(poses[1].quaternion_wxyz(), [0.0, 0.0, 0.0, 1.0]);

        fs::write(
            dir.join(POSES_FILE),
            "ts,px,py,pz,qw,qx,qy,qz\n0.0,0,0,0,1.002,0,0,0\n0.033,0,0,0,1,0,0,0\n",
        )
        .unwrap();
        assert!(matches!(
            parse_bundle(&dir),
            Err(Error::MalformedQuaternion { row: 0, .. })
        ));
    }

    #[test]
    fn bad_meta() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        write_fixture(&dir, &test_meta(), 2);
        let mut meta = test_meta();
        meta.nominal_fps = 0.0;
        fs::write(dir.join(META_FILE), serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(matches!(parse_bundle(&dir), Err(Error::MalformedMeta(_))));
        fs::write(dir.join(META_FILE), "{\"rgb_width\": 3}").unwrap();
        assert!(matches!(parse_bundle(&dir), Err(Error::MalformedMeta(_))));
        fs::remove_file(dir.join(META_FILE)).unwrap();
        assert!(matches!(parse_bundle(&dir), Err(Error::MissingFile(_))));
    }

    #[test]
    fn write_parse_is_idempotent() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let first = write_fixture(&a, &test_meta(), 6);
        rewrite_bundle(&first, &b).unwrap();
        let second = parse_bundle(&b).unwrap();
        assert_eq!(first.meta, second.meta);
        assert_eq!(first.pose_rows, second.pose_rows);
        assert_eq!(
            fs::read(a.join(POSES_FILE)).unwrap(),
            fs::read(b.join(POSES_FILE)).unwrap()
        );
    }

    #[test]
    fn annotations_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("demo");
        let b = write_fixture(&dir, &test_meta(), 2);
        assert!(b.annotations().unwrap().is_empty());
        fs::write(
            dir.join(ANNOTATIONS_FILE),
            "frame_index,ax,ay,bx,by\n1,10,20,13,24\n",
        )
        .unwrap();
        let ann = b.annotations().unwrap();
        assert_eq!(ann[&1].separation(), 5.0);
    }
}
