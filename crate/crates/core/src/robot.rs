//! Kinematic chain model: forward kinematics, geometric Jacobians, joint
//! limits.
//!
//! Chains load from a JSON tree of links `{name, parent, transform, joint}`.
//! Joints are revolute or fixed; revolute joints get an index in file order
//! and the first `n_arm` of them form the arm. The model is immutable after
//! load and FK/Jacobian are pure, so it is safe to share across threads.

use nalgebra::{DMatrix, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Joint description as stored in the chain file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointSpec {
    Revolute {
        axis: [f64; 3],
        /// (lower, upper) in radians.
        limits: (f64, f64),
        /// Optional factor shrinking the limit range toward its midpoint,
        /// used to keep abduction joints away from self-collision.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit_shrink: Option<f64>,
    },
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    /// Parent link name; `None` for the single root.
    pub parent: Option<String>,
    /// Pose of this link's joint frame in the parent frame.
    pub transform: Pose,
    pub joint: JointSpec,
}

/// Named frames every downstream consumer relies on.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameNames {
    pub palm: String,
    pub fingertips: Vec<String>,
    pub end_effector: String,
}

/// Sphere rigidly attached to a link, used for collision checks by the
/// planners. A coarse set ships with the default model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSphere {
    pub frame: String,
    /// Center offset in the link frame.
    pub center: [f64; 3],
    pub radius: f64,
}

/// On-disk chain description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotSpec {
    pub name: String,
    /// Number of leading revolute joints that belong to the arm.
    pub n_arm: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FrameNames>,
    /// Joint positions the environment resets to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collision_spheres: Vec<CollisionSphere>,
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone)]
enum Joint {
    Revolute {
        axis: Unit<Vector3<f64>>,
        index: usize,
    },
    Fixed,
}

#[derive(Debug, Clone)]
struct Link {
    name: String,
    parent: Option<usize>,
    transform: Pose,
    joint: Joint,
}

/// Validated, immutable kinematic model.
#[derive(Debug, Clone)]
pub struct RobotModel {
    name: String,
    links: Vec<Link>,
    by_name: HashMap<String, usize>,
    /// Evaluation order: every parent before its children.
    topo: Vec<usize>,
    n_arm: usize,
    n_joints: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    frames: Option<FrameNames>,
    default_q: Vec<f64>,
    collision_spheres: Vec<CollisionSphere>,
}

/// Joint positions and velocities for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl JointState {
    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            qd: vec![0.0; n],
        }
    }
}

/// World poses of every link for one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    poses: Vec<Pose>,
}

impl Kinematics {
    pub fn link_pose(&self, index: usize) -> &Pose {
        &self.poses[index]
    }
}

impl RobotModel {
    pub fn from_spec(spec: RobotSpec) -> Result<Self> {
        let mut by_name = HashMap::new();
        for (i, link) in spec.links.iter().enumerate() {
            if by_name.insert(link.name.clone(), i).is_some() {
                return Err(Error::Model(format!("duplicate frame '{}'", link.name)));
            }
        }
        let mut links = Vec::with_capacity(spec.links.len());
        let mut n_joints = 0usize;
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut roots = 0usize;
        for link in &spec.links {
            let parent = match &link.parent {
                None => {
                    roots += 1;
                    None
                }
                Some(p) => Some(*by_name.get(p).ok_or_else(|| {
                    Error::Model(format!("link '{}' has unknown parent '{}'", link.name, p))
                })?),
            };
            if !link.transform.is_finite() {
                return Err(Error::NonFinite { context: "link transform" });
            }
            let joint = match &link.joint {
                JointSpec::Fixed => Joint::Fixed,
                JointSpec::Revolute {
                    axis,
                    limits,
                    limit_shrink,
                } => {
                    let axis_v = Vector3::new(axis[0], axis[1], axis[2]);
                    if axis_v.norm() < 1e-9 {
                        return Err(Error::Model(format!("link '{}' has zero axis", link.name)));
                    }
                    let (mut lo, mut hi) = *limits;
                    if !(lo < hi) {
                        return Err(Error::Model(format!(
                            "link '{}' has inverted limits [{lo}, {hi}]",
                            link.name
                        )));
                    }
                    if let Some(s) = limit_shrink {
                        if !(*s > 0.0 && *s <= 1.0) {
                            return Err(Error::Model(format!(
                                "link '{}' limit_shrink must be in (0, 1]",
                                link.name
                            )));
                        }
                        let mid = 0.5 * (lo + hi);
                        let half = 0.5 * (hi - lo) * s;
                        lo = mid - half;
                        hi = mid + half;
                    }
                    lower.push(lo);
                    upper.push(hi);
                    let j = Joint::Revolute {
                        axis: Unit::new_normalize(axis_v),
                        index: n_joints,
                    };
                    n_joints += 1;
                    j
                }
            };
            links.push(Link {
                name: link.name.clone(),
                parent,
                transform: link.transform,
                joint,
            });
        }
        if roots != 1 {
            return Err(Error::Model(format!("expected exactly 1 root, found {roots}")));
        }
        // Kahn-style topological order; leftovers mean a parent cycle.
        let mut topo = Vec::with_capacity(links.len());
        let mut placed = vec![false; links.len()];
        loop {
            let before = topo.len();
            for (i, link) in links.iter().enumerate() {
                if placed[i] {
                    continue;
                }
                let ready = match link.parent {
                    None => true,
                    Some(p) => placed[p],
                };
                if ready {
                    placed[i] = true;
                    topo.push(i);
                }
            }
            if topo.len() == links.len() {
                break;
            }
            if topo.len() == before {
                let stuck: Vec<_> = links
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !placed[*i])
                    .map(|(_, l)| l.name.clone())
                    .collect();
                return Err(Error::Model(format!("cycle involving {stuck:?}")));
            }
        }
        if spec.n_arm > n_joints {
            return Err(Error::Model(format!(
                "n_arm {} exceeds joint count {n_joints}",
                spec.n_arm
            )));
        }
        if let Some(frames) = &spec.frames {
            for name in std::iter::once(&frames.palm)
                .chain(frames.fingertips.iter())
                .chain(std::iter::once(&frames.end_effector))
            {
                if !by_name.contains_key(name) {
                    return Err(Error::Model(format!("frames reference unknown link '{name}'")));
                }
            }
            if frames.fingertips.len() != 5 {
                return Err(Error::Model(format!(
                    "expected 5 fingertips, got {}",
                    frames.fingertips.len()
                )));
            }
        }
        let default_q = match spec.default_q {
            Some(q) => {
                if q.len() != n_joints {
                    return Err(Error::LengthMismatch {
                        expected: n_joints,
                        got: q.len(),
                    });
                }
                q
            }
            None => vec![0.0; n_joints],
        };
        for sphere in &spec.collision_spheres {
            if !by_name.contains_key(&sphere.frame) {
                return Err(Error::Model(format!(
                    "collision sphere references unknown link '{}'",
                    sphere.frame
                )));
            }
            if !(sphere.radius > 0.0) {
                return Err(Error::Model(format!(
                    "collision sphere on '{}' needs radius > 0",
                    sphere.frame
                )));
            }
        }
        Ok(Self {
            name: spec.name,
            links,
            by_name,
            topo,
            n_arm: spec.n_arm,
            n_joints,
            lower,
            upper,
            frames: spec.frames,
            default_q,
            collision_spheres: spec.collision_spheres,
        })
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let spec: RobotSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            location: format!("line {}, column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        Self::from_spec(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// The model shipped with the crate: 7-DoF arm plus 22-DoF five-finger
    /// hand, 29 joints total.
    pub fn bundled_default() -> Self {
        Self::from_spec(default_robot_spec()).expect("bundled model is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_joints(&self) -> usize {
        self.n_joints
    }

    pub fn num_arm_joints(&self) -> usize {
        self.n_arm
    }

    pub fn num_hand_joints(&self) -> usize {
        self.n_joints - self.n_arm
    }

    pub fn lower_limits(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper_limits(&self) -> &[f64] {
        &self.upper
    }

    pub fn default_q(&self) -> &[f64] {
        &self.default_q
    }

    pub fn collision_spheres(&self) -> &[CollisionSphere] {
        &self.collision_spheres
    }

    pub fn frames(&self) -> Result<&FrameNames> {
        self.frames
            .as_ref()
            .ok_or_else(|| Error::Model("model declares no named frames".into()))
    }

    pub fn frame_index(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownFrame(name.to_string()))
    }

    pub fn link_names(&self) -> impl Iterator<Item = &str> {
        self.links.iter().map(|l| l.name.as_str())
    }

    /// Clamp q into the joint limits, elementwise.
    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        for (i, v) in q.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n_joints {
            return Err(Error::LengthMismatch {
                expected: self.n_joints,
                got: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "joint vector" });
        }
        Ok(())
    }

    /// World pose of every link.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Kinematics> {
        self.check_q(q)?;
        let mut poses = vec![Pose::identity(); self.links.len()];
        for &i in &self.topo {
            let link = &self.links[i];
            let parent = match link.parent {
                Some(p) => poses[p],
                None => Pose::identity(),
            };
            let joint_frame = Pose {
                translation: parent.rotation * link.transform.translation + parent.translation,
                rotation: parent.rotation * link.transform.rotation,
            };
            poses[i] = match &link.joint {
                Joint::Fixed => joint_frame,
                Joint::Revolute { axis, index } => {
                    let spin = UnitQuaternion::from_axis_angle(axis, q[*index]);
                    Pose {
                        translation: joint_frame.translation,
                        rotation: joint_frame.rotation * spin,
                    }
                }
            };
        }
        Ok(Kinematics { poses })
    }

    pub fn frame_pose(&self, kin: &Kinematics, name: &str) -> Result<Pose> {
        Ok(*kin.link_pose(self.frame_index(name)?))
    }

    /// Geometric Jacobian of `frame` in the world frame: rows 0..3 linear,
    /// 3..6 angular; one column per revolute joint of the model, zero for
    /// joints off the path.
    pub fn jacobian(&self, kin: &Kinematics, frame: &str) -> Result<DMatrix<f64>> {
        let target = self.frame_index(frame)?;
        let p_frame = kin.poses[target].translation;
        let mut jac = DMatrix::zeros(6, self.n_joints);
        self.fill_point_jacobian(kin, target, &p_frame, &mut jac, true);
        Ok(jac)
    }

    /// 3×n positional Jacobian of a point rigidly attached to `frame` at
    /// `local_offset`.
    pub fn point_jacobian(
        &self,
        kin: &Kinematics,
        frame: &str,
        local_offset: &Vector3<f64>,
    ) -> Result<DMatrix<f64>> {
        let target = self.frame_index(frame)?;
        let p = kin.poses[target].transform_point(local_offset);
        let mut jac = DMatrix::zeros(3, self.n_joints);
        self.fill_point_jacobian(kin, target, &p, &mut jac, false);
        Ok(jac)
    }

    fn fill_point_jacobian(
        &self,
        kin: &Kinematics,
        target: usize,
        point: &Vector3<f64>,
        jac: &mut DMatrix<f64>,
        angular: bool,
    ) {
        let mut cursor = Some(target);
        while let Some(i) = cursor {
            let link = &self.links[i];
            if let Joint::Revolute { axis, index } = &link.joint {
                let z = kin.poses[i].rotation * axis.into_inner();
                let lever = point - kin.poses[i].translation;
                let lin = z.cross(&lever);
                jac[(0, *index)] = lin.x;
                jac[(1, *index)] = lin.y;
                jac[(2, *index)] = lin.z;
                if angular {
                    jac[(3, *index)] = z.x;
                    jac[(4, *index)] = z.y;
                    jac[(5, *index)] = z.z;
                }
            }
            cursor = link.parent;
        }
    }

    /// Columns of `jac` restricted to the arm joints.
    pub fn arm_columns(&self, jac: &DMatrix<f64>) -> DMatrix<f64> {
        jac.columns(0, self.n_arm).into_owned()
    }
}

fn pose_z(tz: f64) -> Pose {
    Pose::from_translation(Vector3::new(0.0, 0.0, tz))
}

fn revolute(axis: [f64; 3], lo: f64, hi: f64) -> JointSpec {
    JointSpec::Revolute {
        axis,
        limits: (lo, hi),
        limit_shrink: None,
    }
}

/// Builds the bundled 29-DoF model: a 7R arm with alternating z/y axes and
/// a five-finger hand (four 4-joint fingers, one 6-joint thumb). The
/// dimensions are plausible rather than vendor-exact; every consumer is
/// model-agnostic.
pub fn default_robot_spec() -> RobotSpec {
    let mut links = vec![LinkSpec {
        name: "base".into(),
        parent: None,
        transform: Pose::identity(),
        joint: JointSpec::Fixed,
    }];
    let deg = |d: f64| d.to_radians();
    let arm: [(f64, [f64; 3], f64); 7] = [
        (0.1575, [0.0, 0.0, 1.0], deg(170.0)),
        (0.2025, [0.0, 1.0, 0.0], deg(120.0)),
        (0.2045, [0.0, 0.0, 1.0], deg(170.0)),
        (0.2155, [0.0, 1.0, 0.0], deg(120.0)),
        (0.1845, [0.0, 0.0, 1.0], deg(170.0)),
        (0.2155, [0.0, 1.0, 0.0], deg(120.0)),
        (0.0810, [0.0, 0.0, 1.0], deg(175.0)),
    ];
    for (i, (tz, axis, lim)) in arm.iter().enumerate() {
        links.push(LinkSpec {
            name: format!("arm_{}", i + 1),
            parent: Some(if i == 0 {
                "base".into()
            } else {
                format!("arm_{i}")
            }),
            transform: pose_z(*tz),
            joint: revolute(*axis, -lim, *lim),
        });
    }
    links.push(LinkSpec {
        name: "ee".into(),
        parent: Some("arm_7".into()),
        transform: pose_z(0.045),
        joint: JointSpec::Fixed,
    });
    links.push(LinkSpec {
        name: "palm".into(),
        parent: Some("ee".into()),
        transform: pose_z(0.09),
        joint: JointSpec::Fixed,
    });

    // Four fingers along palm +x, spread across y; flexion about +y curls
    // the tips toward palm -z, which is the grasp face.
    let fingers = [("index", 0.033), ("middle", 0.011), ("ring", -0.011), ("pinky", -0.033)];
    for (finger, y) in fingers {
        links.push(LinkSpec {
            name: format!("{finger}_abd"),
            parent: Some("palm".into()),
            transform: Pose::from_translation(Vector3::new(0.04, y, 0.0)),
            joint: JointSpec::Revolute {
                axis: [0.0, 0.0, 1.0],
                limits: (-0.35, 0.35),
                limit_shrink: Some(0.8),
            },
        });
        for (seg, parent_seg, dx, lo, hi) in [
            ("mcp", "abd", 0.012, -0.2, 1.6),
            ("pip", "mcp", 0.045, 0.0, 1.8),
            ("dip", "pip", 0.030, 0.0, 1.2),
        ] {
            links.push(LinkSpec {
                name: format!("{finger}_{seg}"),
                parent: Some(format!("{finger}_{parent_seg}")),
                transform: Pose::from_translation(Vector3::new(dx, 0.0, 0.0)),
                joint: revolute([0.0, 1.0, 0.0], lo, hi),
            });
        }
        links.push(LinkSpec {
            name: format!("{finger}_tip"),
            parent: Some(format!("{finger}_dip")),
            transform: Pose::from_translation(Vector3::new(0.025, 0.0, 0.0)),
            joint: JointSpec::Fixed,
        });
    }

    // Thumb: 6 joints for opposable motion.
    type ThumbJoint = (&'static str, &'static str, Vector3<f64>, [f64; 3], f64, f64, Option<f64>);
    let thumb: [ThumbJoint; 6] = [
        ("thumb_cmc_rot", "palm", Vector3::new(0.01, 0.05, 0.0), [1.0, 0.0, 0.0], -1.0, 1.0, None),
        ("thumb_cmc_abd", "thumb_cmc_rot", Vector3::zeros(), [0.0, 0.0, 1.0], -0.6, 0.6, Some(0.8)),
        ("thumb_cmc_flex", "thumb_cmc_abd", Vector3::new(0.012, 0.0, 0.0), [0.0, 1.0, 0.0], -0.3, 1.3, None),
        ("thumb_mcp", "thumb_cmc_flex", Vector3::new(0.040, 0.0, 0.0), [0.0, 1.0, 0.0], -0.2, 1.4, None),
        ("thumb_ip_rot", "thumb_mcp", Vector3::new(0.010, 0.0, 0.0), [1.0, 0.0, 0.0], -0.5, 0.5, None),
        ("thumb_ip", "thumb_ip_rot", Vector3::new(0.022, 0.0, 0.0), [0.0, 1.0, 0.0], -0.1, 1.2, None),
    ];
    for (name, parent, t, axis, lo, hi, shrink) in thumb {
        links.push(LinkSpec {
            name: name.into(),
            parent: Some(parent.into()),
            transform: Pose::from_translation(t),
            joint: JointSpec::Revolute {
                axis,
                limits: (lo, hi),
                limit_shrink: shrink,
            },
        });
    }
    links.push(LinkSpec {
        name: "thumb_tip".into(),
        parent: Some("thumb_ip".into()),
        transform: Pose::from_translation(Vector3::new(0.022, 0.0, 0.0)),
        joint: JointSpec::Fixed,
    });

    // Arm posture placing the palm over the table region at -y.
    let mut default_q = vec![0.0; 29];
    let half_pi = std::f64::consts::FRAC_PI_2;
    let arm_home = [-half_pi, 0.1745, 0.0, 1.3963, 0.0, -half_pi, 0.0];
    default_q[..7].copy_from_slice(&arm_home);

    // coarse sphere cover of the distal arm, wrist, and hand
    let sphere = |frame: &str, center: [f64; 3], radius: f64| CollisionSphere {
        frame: frame.into(),
        center,
        radius,
    };
    let collision_spheres = vec![
        sphere("arm_4", [0.0, 0.0, 0.10], 0.08),
        sphere("arm_5", [0.0, 0.0, 0.10], 0.07),
        sphere("arm_6", [0.0, 0.0, 0.05], 0.07),
        sphere("ee", [0.0, 0.0, 0.0], 0.06),
        sphere("palm", [0.03, 0.0, 0.0], 0.05),
    ];

    RobotSpec {
        name: "desk_arm_hand_29dof".into(),
        n_arm: 7,
        frames: Some(FrameNames {
            palm: "palm".into(),
            fingertips: vec![
                "thumb_tip".into(),
                "index_tip".into(),
                "middle_tip".into(),
                "ring_tip".into(),
                "pinky_tip".into(),
            ],
            end_effector: "ee".into(),
        }),
        default_q: Some(default_q),
        collision_spheres,
        links,
    }
}

/// A 2-link planar arm (revolute z-axes, links along x) used across tests.
pub fn planar_2link_spec(l1: f64, l2: f64) -> RobotSpec {
    RobotSpec {
        name: "planar_2link".into(),
        n_arm: 2,
        frames: None,
        default_q: None,
        collision_spheres: vec![],
        links: vec![
            LinkSpec {
                name: "base".into(),
                parent: None,
                transform: Pose::identity(),
                joint: JointSpec::Fixed,
            },
            LinkSpec {
                name: "shoulder".into(),
                parent: Some("base".into()),
                transform: Pose::identity(),
                joint: revolute([0.0, 0.0, 1.0], -3.0, 3.0),
            },
            LinkSpec {
                name: "elbow".into(),
                parent: Some("shoulder".into()),
                transform: Pose::from_translation(Vector3::new(l1, 0.0, 0.0)),
                joint: revolute([0.0, 0.0, 1.0], -3.0, 3.0),
            },
            LinkSpec {
                name: "tip".into(),
                parent: Some("elbow".into()),
                transform: Pose::from_translation(Vector3::new(l2, 0.0, 0.0)),
                joint: JointSpec::Fixed,
            },
        ],
    }
}
