//! SE(3) pose algebra, keypoint generation, and the keypoint pose distance.
//!
//! A pose is a translation plus a unit quaternion stored in (w, x, y, z)
//! order. Poses serialize as 7 numbers `[tx, ty, tz, qw, qx, qy, qz]` in
//! every file format. The keypoint distance places 4 points in the body
//! frame at `(±s_x/2, ±s_y/2, ±s_z/2)` with the asymmetric sign pattern
//! (+,+,+), (+,+,-), (-,-,+), (-,-,-) and takes the max paired Euclidean
//! displacement between the two placements, giving a single metric in
//! metres that mixes translation and rotation error.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Fixed keypoint scales used by the reward metric, in metres.
///
/// The long x extent makes the metric more sensitive to pitch/yaw than to
/// roll about the tool's long axis.
pub const REWARD_SCALES: KeypointScales = KeypointScales {
    s_x: 0.14,
    s_y: 0.03,
    s_z: 0.03,
};

/// Rigid transform in SE(3): rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_parts(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            translation,
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Quaternion components in storage order (w, x, y, z).
    ///
    /// Inputs already unit-norm (within 1e-9) pass through bit-exact so
    /// file round trips are lossless; anything else is renormalized.
    pub fn from_wxyz(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if !t.iter().all(|v| v.is_finite()) || !q.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "pose" });
        }
        let norm = quat.norm();
        if norm < 1e-12 {
            return Err(Error::validation("rotation", "zero-norm quaternion"));
        }
        let rotation = if (norm - 1.0).abs() <= 1e-9 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::new_normalize(quat)
        };
        Ok(Self {
            translation: Vector3::new(t[0], t[1], t[2]),
            rotation,
        })
    }

    /// Flat 7-vector `[tx, ty, tz, qw, qx, qy, qz]`, the wire format.
    pub fn to_array(&self) -> [f64; 7] {
        let t = self.translation;
        let q = self.rotation.quaternion();
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
    }

    pub fn from_array(a: &[f64; 7]) -> Result<Self> {
        Self::from_wxyz([a[0], a[1], a[2]], [a[3], a[4], a[5], a[6]])
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.quaternion().coords.iter().all(|v| v.is_finite())
    }

    /// Angle of the relative rotation to `other`, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(deserializer)?;
        Pose::from_array(&a).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Serde adapters for nalgebra types in file formats: vectors as `[x, y, z]`,
/// matrices as row-major `[[..]; 3]`.
pub mod wire {
    use nalgebra::{Matrix3, Vector3};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub mod vec3 {
        use super::*;

        pub fn serialize<S: Serializer>(
            v: &Vector3<f64>,
            s: S,
        ) -> std::result::Result<S::Ok, S::Error> {
            [v.x, v.y, v.z].serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Vector3<f64>, D::Error> {
            let a = <[f64; 3]>::deserialize(d)?;
            Ok(Vector3::new(a[0], a[1], a[2]))
        }
    }

    pub mod mat3 {
        use super::*;

        pub fn serialize<S: Serializer>(
            m: &Matrix3<f64>,
            s: S,
        ) -> std::result::Result<S::Ok, S::Error> {
            let rows: [[f64; 3]; 3] = [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ];
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Matrix3<f64>, D::Error> {
            let r = <[[f64; 3]; 3]>::deserialize(d)?;
            Ok(Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ))
        }
    }
}

/// Standard rigid-transform composition a∘b; quaternion renormalized.
pub fn compose(a: &Pose, b: &Pose) -> Result<Pose> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite { context: "compose" });
    }
    let q = a.rotation.into_inner() * b.rotation.into_inner();
    Ok(Pose {
        translation: a.rotation * b.translation + a.translation,
        rotation: UnitQuaternion::new_normalize(q),
    })
}

/// Rigid-transform inverse; quaternion renormalized.
pub fn invert(a: &Pose) -> Result<Pose> {
    if !a.is_finite() {
        return Err(Error::NonFinite { context: "invert" });
    }
    let rot_inv = a.rotation.inverse();
    Ok(Pose {
        translation: -(rot_inv * a.translation),
        rotation: UnitQuaternion::new_normalize(rot_inv.into_inner()),
    })
}

/// Box extents used to place keypoints, in metres. All positive.
///
/// The reward uses the fixed [`REWARD_SCALES`]; observations use the tool's
/// grasp-box extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointScales {
    pub s_x: f64,
    pub s_y: f64,
    pub s_z: f64,
}

impl KeypointScales {
    pub fn new(s_x: f64, s_y: f64, s_z: f64) -> Result<Self> {
        if !(s_x > 0.0 && s_y > 0.0 && s_z > 0.0) {
            return Err(Error::validation("scales", "all extents must be > 0"));
        }
        Ok(Self { s_x, s_y, s_z })
    }

    pub fn from_extents(e: &Vector3<f64>) -> Result<Self> {
        Self::new(e.x, e.y, e.z)
    }

    /// The 4 body-frame offsets with the asymmetric sign pattern.
    pub fn local_offsets(&self) -> [Vector3<f64>; 4] {
        let (hx, hy, hz) = (self.s_x / 2.0, self.s_y / 2.0, self.s_z / 2.0);
        [
            Vector3::new(hx, hy, hz),
            Vector3::new(hx, hy, -hz),
            Vector3::new(-hx, -hy, hz),
            Vector3::new(-hx, -hy, -hz),
        ]
    }
}

/// The 4 keypoints of a pose, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointSet {
    pub points: [Vector3<f64>; 4],
}

/// Places the 4 local offsets under `pose`.
pub fn keypoints_world(pose: &Pose, scales: &KeypointScales) -> KeypointSet {
    let mut points = scales.local_offsets();
    for p in &mut points {
        *p = pose.transform_point(p);
    }
    KeypointSet { points }
}

/// Keypoint pose distance: max over the 4 paired keypoint displacements.
///
/// Both poses must use the same scales for the number to mean anything.
pub fn keypoint_distance(a: &Pose, b: &Pose, scales: &KeypointScales) -> f64 {
    let ka = keypoints_world(a, scales);
    let kb = keypoints_world(b, scales);
    ka.points
        .iter()
        .zip(kb.points.iter())
        .map(|(pa, pb)| (pa - pb).norm())
        .fold(0.0, f64::max)
}

/// Uniform random rotation on SO(3).
///
/// Implemented as a normalized 4-vector of i.i.d. standard Gaussians, which
/// is uniform on the unit 3-sphere and hence uniform over rotations (the
/// double cover maps both antipodes to the same rotation).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let q = Quaternion::new(w, x, y, z);
        if q.norm() > 1e-9 {
            return UnitQuaternion::new_normalize(q);
        }
    }
}

/// Rotation about `axis` by `angle`, for building test poses and goal noise.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}
