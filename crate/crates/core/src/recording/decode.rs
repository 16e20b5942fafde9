use std::fs;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, RgbImage};

use super::RecordingBundle;
use crate::config::{OBS_PIXELS, OBS_SIZE};
use crate::error::{Error, IoContext, Result};
use crate::geometry::Pose;

/// One decoded timestep at policy resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    /// 256×256×3, row-major, interleaved RGB.
    pub rgb: Vec<u8>,
    /// 256×256 meters; 0.0 marks an invalid pixel.
    pub depth: Vec<f32>,
    pub pose: Pose,
}

/// Resize a native RGB frame to 256×256. Aspect ratio is not preserved.
pub fn resize_rgb_to_obs(rgb: &RgbImage) -> Vec<u8> {
    let side = OBS_SIZE as u32;
    if rgb.dimensions() == (side, side) {
        return rgb.as_raw().clone();
    }
    imageops::resize(rgb, side, side, FilterType::Triangle).into_raw()
}

/// Nearest-neighbor resize of a millimeter depth map to 256×256 meters.
/// Nearest sampling never blends a valid range with the 0 sentinel.
pub fn depth_mm_to_obs(depth_mm: &[u16], width: u32, height: u32) -> Vec<f32> {
    debug_assert_eq!(depth_mm.len(), (width * height) as usize);
    let side = OBS_SIZE as u32;
    let resized = if (width, height) == (side, side) {
        depth_mm.to_vec()
    } else {
        let src: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(width, height, depth_mm.to_vec())
                .expect("buffer length checked against dimensions");
        imageops::resize(&src, side, side, FilterType::Nearest).into_raw()
    };
    debug_assert_eq!(resized.len(), OBS_PIXELS);
    resized.into_iter().map(|mm| mm as f32 / 1000.0).collect()
}

fn corrupt(path: &std::path::Path, msg: impl Into<String>) -> Error {
    Error::CorruptImage {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Decode frame `index` of a bundle to policy resolution.
pub fn decode_frame(bundle: &RecordingBundle, index: usize) -> Result<FrameRecord> {
    if index >= bundle.frame_count {
        return Err(Error::IndexOutOfRange {
            index,
            len: bundle.frame_count,
        });
    }
    let meta = &bundle.meta;

    let rgb_path = bundle.rgb_path(index);
    let rgb = image::open(&rgb_path)
        .map_err(|e| corrupt(&rgb_path, e.to_string()))?
        .into_rgb8();
    if rgb.dimensions() != (meta.rgb_width, meta.rgb_height) {
        return Err(corrupt(
            &rgb_path,
            format!(
                "{:?} does not match meta {}x{}",
                rgb.dimensions(),
                meta.rgb_width,
                meta.rgb_height
            ),
        ));
    }

    let depth_path = bundle.depth_path(index);
    let bytes = fs::read(&depth_path).at(&depth_path)?;
    let expected = 2 * (meta.depth_width * meta.depth_height) as usize;
    if bytes.len() != expected {
        return Err(corrupt(
            &depth_path,
            format!("{} bytes, expected {expected}", bytes.len()),
        ));
    }
    let depth_mm: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();

    let row = &bundle.pose_rows[index];
    Ok(FrameRecord {
        index,
        timestamp: row.ts,
        rgb: resize_rgb_to_obs(&rgb),
        depth: depth_mm_to_obs(&depth_mm, meta.depth_width, meta.depth_height),
        pose: row.pose(),
    })
}
