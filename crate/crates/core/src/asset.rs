//! Procedural handle-head tool generation.
//!
//! A tool is a rigid union of two primitive parts: an elongated low-density
//! handle and a (typically) denser head mounted at one end with its long
//! axis perpendicular to the handle's. The object frame is the handle
//! frame: x points from handle toward head, origin at the handle centroid.
//! The grasp bounding box covers the handle and is the only geometric
//! descriptor downstream consumers see.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{self, wire, Pose};
use crate::rng;

/// Primitive shape of one tool part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartShape {
    Cuboid,
    Capsule,
}

/// One part: a cuboid or a capsule with its long axis along local x.
///
/// For capsules `width == height == diameter` and `length` is tip to tip;
/// the cylindrical segment is `length - diameter`, clamped at zero (the
/// part degrades to a sphere when length < diameter).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub shape: PartShape,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub density: f64,
}

impl PartSpec {
    pub fn validate(&self, name: &str) -> Result<()> {
        for (field, v) in [
            ("length", self.length),
            ("width", self.width),
            ("height", self.height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    format!("{name}.{field}"),
                    format!("must be > 0, got {v}"),
                ));
            }
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(Error::validation(
                format!("{name}.density"),
                format!("must be >= 0, got {}", self.density),
            ));
        }
        if self.shape == PartShape::Capsule && (self.width - self.height).abs() > 1e-12 {
            return Err(Error::validation(
                format!("{name}.height"),
                "capsule requires width == height (diameter)",
            ));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        match self.shape {
            PartShape::Cuboid => self.length * self.width * self.height,
            PartShape::Capsule => {
                let r = self.width / 2.0;
                let cyl = (self.length - 2.0 * r).max(0.0);
                PI * r * r * cyl + 4.0 / 3.0 * PI * r.powi(3)
            }
        }
    }

    pub fn mass(&self) -> f64 {
        self.volume() * self.density
    }

    /// Inertia about the part's own centroid, long axis along local x.
    pub fn inertia(&self) -> Matrix3<f64> {
        let m = self.mass();
        match self.shape {
            PartShape::Cuboid => {
                let (l, w, h) = (self.length, self.width, self.height);
                Matrix3::from_diagonal(&Vector3::new(
                    m * (w * w + h * h) / 12.0,
                    m * (l * l + h * h) / 12.0,
                    m * (l * l + w * w) / 12.0,
                ))
            }
            PartShape::Capsule => {
                let r = self.width / 2.0;
                let cyl = (self.length - 2.0 * r).max(0.0);
                let m_cyl = self.density * PI * r * r * cyl;
                let m_sph = self.density * 4.0 / 3.0 * PI * r.powi(3);
                let i_axis = m_cyl * r * r / 2.0 + m_sph * 2.0 * r * r / 5.0;
                let i_perp = m_cyl * (cyl * cyl / 12.0 + r * r / 4.0)
                    + m_sph * (2.0 * r * r / 5.0 + cyl * cyl / 4.0 + 3.0 * cyl * r / 8.0);
                Matrix3::from_diagonal(&Vector3::new(i_axis, i_perp, i_perp))
            }
        }
    }
}

/// Grasp region: axis-aligned box in the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspBox {
    #[serde(with = "wire::vec3")]
    pub center: Vector3<f64>,
    #[serde(with = "wire::vec3")]
    pub extents: Vector3<f64>,
}

/// A generated tool with derived mass properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub seed: u64,
    pub handle: PartSpec,
    pub head: PartSpec,
    /// Head frame expressed in the handle (= object) frame.
    pub head_offset: Pose,
    pub mass: f64,
    #[serde(with = "wire::vec3")]
    pub com: Vector3<f64>,
    /// About the combined center of mass, in the object frame.
    #[serde(with = "wire::mat3")]
    pub inertia: Matrix3<f64>,
    pub grasp_box: GraspBox,
}

impl ToolSpec {
    pub fn validate(&self) -> Result<()> {
        self.handle.validate("handle")?;
        self.head.validate("head")?;
        if !(self.mass > 0.0) {
            return Err(Error::validation("mass", "must be > 0"));
        }
        if self.grasp_box.extents.iter().any(|e| *e <= 0.0) {
            return Err(Error::validation("grasp_box.extents", "must be > 0"));
        }
        Ok(())
    }
}

/// Uniform sampling ranges for tool generation. Defaults span common
/// handheld tools, from small markers to larger hammers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleRanges {
    pub handle_length: (f64, f64),
    pub handle_cross: (f64, f64),
    pub head_length: (f64, f64),
    pub head_cross: (f64, f64),
    pub density_low: (f64, f64),
    pub density_high: (f64, f64),
}

impl Default for SampleRanges {
    fn default() -> Self {
        Self {
            handle_length: (0.05, 0.30),
            handle_cross: (0.01, 0.04),
            head_length: (0.01, 0.15),
            head_cross: (0.005, 0.12),
            density_low: (300.0, 600.0),
            density_high: (300.0, 2000.0),
        }
    }
}

impl SampleRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("handle_length", self.handle_length),
            ("handle_cross", self.handle_cross),
            ("head_length", self.head_length),
            ("head_cross", self.head_cross),
            ("density_low", self.density_low),
            ("density_high", self.density_high),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::validation(name, format!("degenerate range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn sample_part<R: Rng>(
    rng: &mut R,
    length_range: (f64, f64),
    cross_range: (f64, f64),
    density_range: (f64, f64),
) -> PartSpec {
    let shape = if rng.gen_bool(0.5) {
        PartShape::Cuboid
    } else {
        PartShape::Capsule
    };
    let length = rng.gen_range(length_range.0..=length_range.1);
    let (width, height) = match shape {
        PartShape::Cuboid => (
            rng.gen_range(cross_range.0..=cross_range.1),
            rng.gen_range(cross_range.0..=cross_range.1),
        ),
        PartShape::Capsule => {
            let d = rng.gen_range(cross_range.0..=cross_range.1);
            (d, d)
        }
    };
    let density = rng.gen_range(density_range.0..=density_range.1);
    PartSpec {
        shape,
        length,
        width,
        height,
        density,
    }
}

/// Sample one tool. Fully determined by `seed` and `ranges`.
///
/// The head centroid sits at the handle tip (x = +L/2) with its long axis
/// rotated 90 degrees about z, i.e. along object y.
pub fn sample_tool(seed: u64, ranges: &SampleRanges) -> Result<ToolSpec> {
    ranges.validate()?;
    let mut rng = rng::stream(seed, "asset.tool", 0);
    let handle = sample_part(&mut rng, ranges.handle_length, ranges.handle_cross, ranges.density_low);
    let head = sample_part(&mut rng, ranges.head_length, ranges.head_cross, ranges.density_high);
    let head_offset = Pose::from_parts(
        Vector3::new(handle.length / 2.0, 0.0, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI / 2.0),
    );
    let (mass, com, inertia) = mass_properties(&handle, &head, &head_offset)?;
    Ok(ToolSpec {
        seed,
        handle,
        head,
        head_offset,
        mass,
        com,
        inertia,
        grasp_box: GraspBox {
            center: Vector3::zeros(),
            extents: Vector3::new(handle.length, handle.width, handle.height),
        },
    })
}

/// Composite mass, center of mass, and inertia about the com, all in the
/// handle frame. Parts are summed as independent solids (overlap between
/// head and handle is counted twice, matching how rigid unions of
/// primitives are composed in physics engines).
pub fn mass_properties(
    handle: &PartSpec,
    head: &PartSpec,
    head_offset: &Pose,
) -> Result<(f64, Vector3<f64>, Matrix3<f64>)> {
    handle.validate("handle")?;
    head.validate("head")?;
    let m_handle = handle.mass();
    let m_head = head.mass();
    let mass = m_handle + m_head;
    if mass <= 0.0 {
        return Err(Error::validation("density", "total mass is zero"));
    }
    // Each part's centroid is its own frame origin.
    let c_handle = Vector3::zeros();
    let c_head = head_offset.translation;
    let com = (c_handle * m_handle + c_head * m_head) / mass;

    let rot_head = head_offset.rotation_matrix();
    let parallel_axis = |m: f64, d: Vector3<f64>| -> Matrix3<f64> {
        m * (Matrix3::identity() * d.norm_squared() - d * d.transpose())
    };
    let inertia = handle.inertia()
        + parallel_axis(m_handle, c_handle - com)
        + rot_head * head.inertia() * rot_head.transpose()
        + parallel_axis(m_head, c_head - com);
    Ok((mass, com, inertia))
}

/// Grasp frame recovered from labeled part point clouds, expressed in the
/// cloud's coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedGraspBox {
    /// Object frame: origin at the handle centroid, x toward the head.
    pub frame: Pose,
    /// Axis-aligned spans of the handle points in that frame.
    pub extents: Vector3<f64>,
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Derive the grasp box from handle/head point clouds.
///
/// Box center = handle centroid; x-axis points from handle centroid toward
/// head centroid; the z-axis comes from Gram-Schmidt of world up against x
/// (falling back to world x when they are parallel); y completes the
/// right-handed frame.
pub fn derive_grasp_bbox(
    handle_points: &[Vector3<f64>],
    head_points: &[Vector3<f64>],
) -> Result<DerivedGraspBox> {
    for (name, pts) in [("handle_points", handle_points), ("head_points", head_points)] {
        if pts.len() < 3 {
            return Err(Error::validation(name, "need at least 3 points"));
        }
        if pts.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite { context: "grasp bbox points" });
        }
    }
    let c_handle = centroid(handle_points);
    let c_head = centroid(head_points);
    let dir = c_head - c_handle;
    if dir.norm() < 1e-3 {
        return Err(Error::AmbiguousOrientation { distance: dir.norm() });
    }
    let x = dir.normalize();
    let mut z = Vector3::z() - x * x.dot(&Vector3::z());
    if z.norm() < 1e-6 {
        z = Vector3::x() - x * x.dot(&Vector3::x());
    }
    let z = z.normalize();
    let y = z.cross(&x);
    let rot = Matrix3::from_columns(&[x, y, z]);
    let frame = Pose::from_parts(
        c_handle,
        UnitQuaternion::from_matrix(&rot),
    );

    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for p in handle_points {
        let local = rot.transpose() * (p - c_handle);
        min = min.inf(&local);
        max = max.sup(&local);
    }
    Ok(DerivedGraspBox {
        frame,
        extents: max - min,
    })
}

/// Write a tool as JSON.
pub fn export_tool(tool: &ToolSpec, path: &Path) -> Result<()> {
    tool.validate()?;
    let json = serde_json::to_string_pretty(tool).expect("toolspec serializes");
    crate::io::write_atomic(path, json.as_bytes())
}

/// Read a tool back, with location-carrying parse errors and field
/// validation.
pub fn import_tool(path: &Path) -> Result<ToolSpec> {
    let text = std::fs::read_to_string(path)?;
    let tool: ToolSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        location: format!("line {}, column {}", e.line(), e.column()),
        reason: e.to_string(),
    })?;
    tool.validate()?;
    Ok(tool)
}

/// The grasp-box extents used as observation keypoint scales.
pub fn observation_scales(tool: &ToolSpec) -> Result<geometry::KeypointScales> {
    geometry::KeypointScales::from_extents(&tool.grasp_box.extents)
}
