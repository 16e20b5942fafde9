use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};

use super::{
    depth_path, rgb_path, BundleMeta, PoseRow, RecordingBundle, TipAnnotation, ANNOTATIONS_FILE,
    DEPTH_DIR, META_FILE, POSES_FILE, POSES_HEADER, RGB_DIR,
};
use crate::error::{Error, IoContext, Result};

/// Writes a bundle frame by frame; `poses.csv` is written by [`BundleWriter::finish`].
pub struct BundleWriter {
    root: PathBuf,
    meta: BundleMeta,
    rows: Vec<PoseRow>,
    annotations: Vec<TipAnnotation>,
}

impl BundleWriter {
    pub fn create(root: impl AsRef<Path>, meta: BundleMeta) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for dir in [root.join(RGB_DIR), root.join(DEPTH_DIR)] {
            fs::create_dir_all(&dir).at(&dir)?;
        }
        let meta_path = root.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&meta_path, text + "\n").at(&meta_path)?;
        Ok(BundleWriter {
            root,
            meta,
            rows: Vec::new(),
            annotations: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push_frame(&mut self, row: PoseRow, rgb: &RgbImage, depth_mm: &[u16]) -> Result<()> {
        let index = self.rows.len();
        if rgb.dimensions() != (self.meta.rgb_width, self.meta.rgb_height) {
            return Err(Error::LengthMismatch(format!(
                "frame {index}: rgb is {:?}, meta says {}x{}",
                rgb.dimensions(),
                self.meta.rgb_width,
                self.meta.rgb_height
            )));
        }
        let depth_len = (self.meta.depth_width * self.meta.depth_height) as usize;
        if depth_mm.len() != depth_len {
            return Err(Error::LengthMismatch(format!(
                "frame {index}: depth has {} values, meta says {depth_len}",
                depth_mm.len()
            )));
        }
        write_png(&rgb_path(&self.root, index), rgb)?;
        write_depth(&depth_path(&self.root, index), depth_mm)?;
        self.rows.push(row);
        Ok(())
    }

    pub fn annotate(&mut self, annotation: TipAnnotation) {
        self.annotations.push(annotation);
    }

    pub fn finish(self) -> Result<PathBuf> {
        write_pose_rows(&self.root.join(POSES_FILE), &self.rows)?;
        if !self.annotations.is_empty() {
            write_annotations(&self.root.join(ANNOTATIONS_FILE), &self.annotations)?;
        }
        Ok(self.root)
    }
}

pub(crate) fn write_png(path: &Path, rgb: &RgbImage) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut out = BufWriter::new(file);
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub)
        .write_image(
            rgb.as_raw(),
            rgb.width(),
            rgb.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::CorruptImage {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    out.flush().at(path)
}

pub(crate) fn write_depth(path: &Path, depth_mm: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = depth_mm.iter().flat_map(|d| d.to_le_bytes()).collect();
    fs::write(path, bytes).at(path)
}

fn write_pose_rows(path: &Path, rows: &[PoseRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_error(path, e))?;
    w.write_record(POSES_HEADER)
        .map_err(|e| csv_write_error(path, e))?;
    for r in rows {
        // f64 Display is the shortest string that parses back to the same value
        let fields = [r.ts, r.px, r.py, r.pz, r.qw, r.qx, r.qy, r.qz].map(|v| v.to_string());
        w.write_record(&fields).map_err(|e| csv_write_error(path, e))?;
    }
    w.flush().at(path)
}

fn write_annotations(path: &Path, rows: &[TipAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_write_error(path, e))?;
    }
    w.flush().at(path)
}

fn csv_write_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedCsv {
            path: path.to_path_buf(),
            msg: format!("{other:?}"),
        },
    }
}

/// Copy a parsed bundle to `out`, re-serializing its metadata and poses.
pub fn rewrite_bundle(bundle: &RecordingBundle, out: impl AsRef<Path>) -> Result<PathBuf> {
    let out = out.as_ref();
    let writer = BundleWriter::create(out, bundle.meta.clone())?;
    for i in 0..bundle.frame_count {
        for (src, dst) in [
            (bundle.rgb_path(i), rgb_path(out, i)),
            (bundle.depth_path(i), depth_path(out, i)),
        ] {
            fs::copy(&src, &dst).at(&src)?;
        }
    }
    let annotations = bundle.annotations()?;
    let mut writer = BundleWriter {
        rows: bundle.pose_rows.clone(),
        ..writer
    };
    writer.annotations = annotations.into_values().collect();
    writer.finish()
}
