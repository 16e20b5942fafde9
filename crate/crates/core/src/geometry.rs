//! Rigid-body pose algebra.
//!
//! Quaternions follow the Hamilton convention, are written `(w, x, y, z)` in
//! every external format, and are kept in the canonical half of the double
//! cover: `w >= 0`, and when `w == 0` the first nonzero vector component is
//! positive. Every constructor and every operation returns canonical values.

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Below this rotation-vector norm the exp map switches to its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Put a quaternion into canonical form: unit norm, `w >= 0`, sign tie
/// broken on the vector part when `w == 0`.
pub fn canonicalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let q = q.normalize();
    let flip = if q.w != 0.0 {
        q.w < 0.0
    } else {
        [q.i, q.j, q.k]
            .into_iter()
            .find(|c| *c != 0.0)
            .is_some_and(|c| c < 0.0)
    };
    UnitQuaternion::new_unchecked(if flip { -q } else { q })
}

/// Unit quaternion from `(w, x, y, z)` components.
pub fn quat_wxyz(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
    canonicalize(Quaternion::new(w, x, y, z))
}

/// `(w, x, y, z)` components of a quaternion.
pub fn wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// A rotation vector: direction is the axis, magnitude the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle(pub [f64; 3]);

impl AxisAngle {
    pub const ZERO: AxisAngle = AxisAngle([0.0; 3]);

    pub fn angle(&self) -> f64 {
        self.vector().norm()
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.0)
    }
}

impl From<Vector3<f64>> for AxisAngle {
    fn from(v: Vector3<f64>) -> Self {
        AxisAngle([v.x, v.y, v.z])
    }
}

/// Log map. The quaternion is canonicalized first, so the angle is in `[0, π]`.
pub fn quat_to_axis_angle(q: &UnitQuaternion<f64>) -> AxisAngle {
    let q = canonicalize(*q.quaternion());
    let v = q.imag();
    let vnorm = v.norm();
    if vnorm < SMALL_ANGLE {
        // 2·atan2(|v|, w)/|v| = (2/w)(1 - |v|²/(3w²) + ...), and w ≈ 1 here.
        let w = q.w;
        let scale = 2.0 / w * (1.0 - vnorm * vnorm / (3.0 * w * w));
        return (v * scale).into();
    }
    let angle = 2.0 * vnorm.atan2(q.w);
    (v * (angle / vnorm)).into()
}

/// Exp map. Angles beyond π are accepted and wrap through canonicalization.
pub fn axis_angle_to_quat(r: &AxisAngle) -> UnitQuaternion<f64> {
    let v = r.vector();
    let theta = v.norm();
    let half = 0.5 * theta;
    // sin(θ/2)/θ
    let sinc = if theta < SMALL_ANGLE {
        0.5 - theta * theta / 48.0
    } else {
        half.sin() / theta
    };
    canonicalize(Quaternion::from_parts(half.cos(), v * sinc))
}

/// A rigid transform: position in meters plus a canonical unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRepr", from = "PoseRepr")]
pub struct Pose {
    pub position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    quaternion: [f64; 4],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            position: p.position.into(),
            quaternion: wxyz(&p.orientation),
        }
    }
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let [w, x, y, z] = r.quaternion;
        Pose::new(Vector3::from(r.position), Quaternion::new(w, x, y, z))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Build from a position and any nonzero quaternion; the quaternion is
    /// normalized and canonicalized.
    pub fn new(position: Vector3<f64>, q: Quaternion<f64>) -> Self {
        Pose {
            position,
            orientation: canonicalize(q),
        }
    }

    pub fn from_parts(position: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Self::new(position, q.into_inner())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            position: Vector3::new(x, y, z),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// The transform a relative action describes.
    pub fn from_action(dpos: Vector3<f64>, drot: &AxisAngle) -> Self {
        Pose {
            position: dpos,
            orientation: axis_angle_to_quat(drot),
        }
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        wxyz(&self.orientation)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::from_parts(-(inv * self.position), inv)
    }

    /// Map a point from this frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    /// Map a parent-frame point into this frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p - self.position)
    }
}

/// `a⁻¹ ∘ b`: `b` expressed in the frame of `a`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let a_inv = a.orientation.inverse();
    Pose::new(
        a_inv * (b.position - a.position),
        (a_inv * b.orientation).into_inner(),
    )
}

/// `a ∘ d`. Exact inverse of [`relative_pose`]: `compose_pose(a, relative_pose(a, b)) == b`.
pub fn compose_pose(a: &Pose, d: &Pose) -> Pose {
    Pose::new(
        a.orientation * d.position + a.position,
        (a.orientation * d.orientation).into_inner(),
    )
}

/// Angle between two orientations, in `[0, π]`.
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    quat_to_axis_angle(&(a.inverse() * b)).angle().min(PI)
}
