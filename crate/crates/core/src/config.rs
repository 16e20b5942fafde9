//! Pipeline constants and the default values every front end starts from.

/// Recording rate of the capture app (frames per second).
pub const RECORD_HZ: f64 = 30.0;
/// Rate at which the policy predicts and executes actions.
pub const CONTROL_HZ: f64 = 3.75;

/// Native RGB capture size.
pub const RGB_WIDTH: u32 = 1280;
pub const RGB_HEIGHT: u32 = 720;
/// Native depth capture size.
pub const DEPTH_WIDTH: u32 = 256;
pub const DEPTH_HEIGHT: u32 = 192;

/// Side length of the square images fed to the policy.
pub const OBS_SIZE: usize = 256;
pub const OBS_PIXELS: usize = OBS_SIZE * OBS_SIZE;
/// R, G, B, depth.
pub const OBS_CHANNELS: usize = 4;
pub const OBS_LEN: usize = OBS_CHANNELS * OBS_PIXELS;

/// dpos (3) + axis-angle rotation (3) + gripper aperture (1).
pub const ACTION_DIM: usize = 7;

/// Width of the visual embedding and of the pooled depth vector.
pub const FEATURE_DIM: usize = 512;
pub const HEAD_INPUT_DIM: usize = 2 * FEATURE_DIM;
pub const DEFAULT_HIDDEN: usize = 512;

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 3e-5;
pub const DEFAULT_BATCH_SIZE: usize = 64;

pub const DEFAULT_GRID_ROWS: usize = 4;
pub const DEFAULT_GRID_COLS: usize = 6;
/// Spacing of the start grids, in meters.
pub const DEFAULT_GRID_SPACING: f64 = 0.02;
pub const EVAL_STARTS: usize = 10;

pub const DEFAULT_SHARD_SIZE: usize = 1024;
pub const DEFAULT_GRIPPER_THRESHOLD: f64 = 0.5;

/// Frames between consecutive control ticks at the default rates.
pub fn default_stride() -> usize {
    (RECORD_HZ / CONTROL_HZ).round() as usize
}
