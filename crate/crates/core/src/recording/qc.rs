use serde::{Deserialize, Serialize};

use super::RecordingBundle;

/// Allowed relative deviation of the observed frame rate from nominal.
pub const FPS_TOLERANCE: f64 = 0.2;
/// Shortest acceptable recording, in seconds of frames at the nominal rate.
pub const MIN_DURATION_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcCheck {
    pub name: String,
    pub passed: bool,
    pub mandatory: bool,
    pub detail: String,
    /// Frames that violate the check, when the check is per-frame.
    pub offending_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub bundle_id: String,
    pub checks: Vec<QcCheck>,
    pub passed: bool,
}

impl QcReport {
    pub fn check(&self, name: &str) -> Option<&QcCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &QcCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Content checks on a parsed bundle. Problems are reported, never raised.
pub fn validate_bundle(bundle: &RecordingBundle) -> QcReport {
    let meta = &bundle.meta;
    let mut checks = Vec::with_capacity(3);

    checks.push(QcCheck {
        name: "orientation".into(),
        passed: meta.rgb_width > meta.rgb_height,
        mandatory: true,
        detail: format!("rgb {}x{}", meta.rgb_width, meta.rgb_height),
        offending_frames: Vec::new(),
    });

    let ts = bundle.timestamps();
    let nominal_gap = 1.0 / meta.nominal_fps;
    let (fps_ok, fps_detail, offending) = if ts.len() < 2 {
        (false, "fewer than two frames".to_string(), Vec::new())
    } else {
        let span = ts[ts.len() - 1] - ts[0];
        let observed = (ts.len() - 1) as f64 / span;
        let ok = (observed - meta.nominal_fps).abs() <= FPS_TOLERANCE * meta.nominal_fps;
        let offending = ts
            .windows(2)
            .enumerate()
            .filter(|(_, w)| ((w[1] - w[0]) - nominal_gap).abs() > FPS_TOLERANCE * nominal_gap)
            .map(|(i, _)| i + 1)
            .collect();
        (
            ok,
            format!("observed {observed:.3} fps, nominal {}", meta.nominal_fps),
            offending,
        )
    };
    checks.push(QcCheck {
        name: "fps".into(),
        passed: fps_ok,
        mandatory: true,
        detail: fps_detail,
        offending_frames: offending,
    });

    let duration = bundle.frame_count as f64 / meta.nominal_fps;
    checks.push(QcCheck {
        name: "length".into(),
        passed: duration >= MIN_DURATION_S,
        mandatory: true,
        detail: format!("{duration:.3} s of frames"),
        offending_frames: Vec::new(),
    });

    let passed = checks.iter().filter(|c| c.mandatory).all(|c| c.passed);
    QcReport {
        bundle_id: bundle.id(),
        checks,
        passed,
    }
}
