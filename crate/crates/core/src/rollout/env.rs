use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SimState;
use crate::config::{DEPTH_HEIGHT, DEPTH_WIDTH, OBS_LEN, RGB_HEIGHT, RGB_WIDTH};
use crate::geometry::Pose;
use crate::loader::observation_from_parts;
use crate::policy::GripperCommand;
use crate::recording::{depth_mm_to_obs, resize_rgb_to_obs, BundleMeta, TipAnnotation};

const BACKGROUND: Rgb<u8> = Rgb([48, 52, 60]);
const BEACON: Rgb<u8> = Rgb([255, 214, 40]);
const TIP: Rgb<u8> = Rgb([90, 230, 255]);

/// Reach a point in front of a bright beacon. The camera sees the beacon as
/// a fixed-size disk at its pinhole projection; the depth image holds the
/// range to the beacon inside the disk and 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconReach {
    /// Point the end-effector must reach, world frame, meters.
    pub target: [f64; 3],
    /// Beacon position relative to the target, world frame.
    pub beacon_offset: [f64; 3],
    pub success_radius: f64,
    pub require_grasp: bool,
    /// Home pose the start grids are laid out around.
    pub base: Pose,
    pub disk_radius_px: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Tip markers sit on this image row, symmetric about `cx`.
    pub tip_row_px: f64,
    pub tip_radius_px: f64,
    /// Tip separation at full aperture.
    pub max_tip_distance_px: f64,
}

impl Default for BeaconReach {
    fn default() -> Self {
        BeaconReach {
            target: [0.0, 0.0, 0.0],
            beacon_offset: [0.0, 0.0, 0.10],
            success_radius: 0.01,
            require_grasp: false,
            base: Pose::from_translation(0.0, 0.0, -0.08),
            disk_radius_px: 180.0,
            fx: 900.0,
            fy: 900.0,
            cx: RGB_WIDTH as f64 / 2.0,
            cy: RGB_HEIGHT as f64 / 2.0,
            tip_row_px: 690.0,
            tip_radius_px: 18.0,
            max_tip_distance_px: 400.0,
        }
    }
}

/// Visit the pixels whose centers fall inside an axis-aligned ellipse.
fn for_each_in_ellipse(
    width: u32,
    height: u32,
    (cx, cy): (f64, f64),
    (rx, ry): (f64, f64),
    mut f: impl FnMut(u32, u32),
) {
    let x0 = (cx - rx).floor().max(0.0);
    let x1 = (cx + rx).ceil().min(width as f64 - 1.0);
    let y0 = (cy - ry).floor().max(0.0);
    let y1 = (cy + ry).ceil().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for y in y0 as u32..=y1 as u32 {
        let dy = (y as f64 + 0.5 - cy) / ry;
        for x in x0 as u32..=x1 as u32 {
            let dx = (x as f64 + 0.5 - cx) / rx;
            if dx * dx + dy * dy <= 1.0 {
                f(x, y);
            }
        }
    }
}

impl BeaconReach {
    pub fn target(&self) -> Vector3<f64> {
        Vector3::from(self.target)
    }

    pub fn beacon(&self) -> Vector3<f64> {
        self.target() + Vector3::from(self.beacon_offset)
    }

    pub fn distance(&self, pose: &Pose) -> f64 {
        (pose.position - self.target()).norm()
    }

    pub fn is_success(&self, state: &SimState) -> bool {
        self.distance(&state.ee_pose) <= self.success_radius
            && (!self.require_grasp || state.gripper == GripperCommand::Closed)
    }

    /// Camera intrinsics and sensor sizes for recordings of this env.
    pub fn meta(&self) -> BundleMeta {
        BundleMeta {
            rgb_width: RGB_WIDTH,
            rgb_height: RGB_HEIGHT,
            depth_width: DEPTH_WIDTH,
            depth_height: DEPTH_HEIGHT,
            nominal_fps: crate::config::RECORD_HZ,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            recorder_id: "synthetic".into(),
            task_label: "beacon_reach".into(),
            home_id: "desk".into(),
            env_id: "beacon".into(),
        }
    }

    /// Tip marker centers for a given aperture in [0, 1].
    pub fn tips(&self, aperture: f64) -> TipAnnotation {
        let half = 0.5 * self.max_tip_distance_px * aperture.clamp(0.0, 1.0);
        TipAnnotation {
            frame_index: 0,
            ax: self.cx - half,
            ay: self.tip_row_px,
            bx: self.cx + half,
            by: self.tip_row_px,
        }
    }

    /// Native-resolution RGB and millimeter depth as seen from `pose`.
    pub fn render(&self, pose: &Pose, aperture: f64) -> (RgbImage, Vec<u16>) {
        let mut rgb = RgbImage::from_pixel(RGB_WIDTH, RGB_HEIGHT, BACKGROUND);
        let mut depth = vec![0u16; (DEPTH_WIDTH * DEPTH_HEIGHT) as usize];
        let b = pose.inverse_transform_point(&self.beacon());
        if b.z > 1e-6 {
            let u = self.fx * b.x / b.z + self.cx;
            let v = self.fy * b.y / b.z + self.cy;
            let r = self.disk_radius_px;
            for_each_in_ellipse(RGB_WIDTH, RGB_HEIGHT, (u, v), (r, r), |x, y| {
                rgb.put_pixel(x, y, BEACON)
            });

            let sx = DEPTH_WIDTH as f64 / RGB_WIDTH as f64;
            let sy = DEPTH_HEIGHT as f64 / RGB_HEIGHT as f64;
            let mm = (b.norm() * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16;
            for_each_in_ellipse(DEPTH_WIDTH, DEPTH_HEIGHT, (u * sx, v * sy), (r * sx, r * sy), |x, y| {
                depth[(y * DEPTH_WIDTH + x) as usize] = mm
            });
        }
        let tips = self.tips(aperture);
        let t = self.tip_radius_px;
        for c in [(tips.ax, tips.ay), (tips.bx, tips.by)] {
            for_each_in_ellipse(RGB_WIDTH, RGB_HEIGHT, c, (t, t), |x, y| rgb.put_pixel(x, y, TIP));
        }
        (rgb, depth)
    }

    /// Policy observation (4×256×256) from `pose`, through the same resize
    /// path as recorded frames.
    pub fn observe(&self, pose: &Pose, aperture: f64) -> Vec<f32> {
        let (rgb, depth) = self.render(pose, aperture);
        let mut obs = vec![0.0; OBS_LEN];
        observation_from_parts(
            &resize_rgb_to_obs(&rgb),
            Some(&depth_mm_to_obs(&depth, DEPTH_WIDTH, DEPTH_HEIGHT)),
            &mut obs,
        );
        obs
    }
}
