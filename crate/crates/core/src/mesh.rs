//! Triangle-mesh tessellation of tools for planners and external viewers.
//!
//! Cuboids become 12 triangles; capsules are lathed with a configurable
//! segment count. Meshes are in the object frame and written as Wavefront
//! OBJ.

use nalgebra::Vector3;
use std::f64::consts::PI;
use std::path::Path;

use crate::asset::{PartShape, PartSpec, ToolSpec};
use crate::error::Result;
use crate::geometry::Pose;

#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn append(&mut self, other: &TriMesh, transform: &Pose) {
        let base = self.vertices.len() as u32;
        self.vertices
            .extend(other.vertices.iter().map(|v| transform.transform_point(v)));
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
}

fn cuboid_mesh(l: f64, w: f64, h: f64) -> TriMesh {
    let (hx, hy, hz) = (l / 2.0, w / 2.0, h / 2.0);
    let mut vertices = Vec::with_capacity(8);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                vertices.push(Vector3::new(sx * hx, sy * hy, sz * hz));
            }
        }
    }
    // vertex index = sx*4 + sy*2 + sz with s in {0,1}
    let quads: [[u32; 4]; 6] = [
        [0, 1, 3, 2], // -x
        [4, 6, 7, 5], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
        [0, 2, 6, 4], // -z
        [1, 5, 7, 3], // +z
    ];
    let mut triangles = Vec::with_capacity(12);
    for q in quads {
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    }
    TriMesh { vertices, triangles }
}

/// Lathe a capsule along x: `segments` around the axis, `segments/2` rings
/// per hemispherical cap.
fn capsule_mesh(length: f64, diameter: f64, segments: usize) -> TriMesh {
    let segments = segments.max(3);
    let r = diameter / 2.0;
    let half_cyl = ((length - diameter) / 2.0).max(0.0);
    let rings_per_cap = (segments / 2).max(2);

    // profile from -x tip to +x tip: (x, radius) pairs
    let mut profile: Vec<(f64, f64)> = Vec::new();
    for i in 0..=rings_per_cap {
        let a = -PI / 2.0 + (i as f64 / rings_per_cap as f64) * (PI / 2.0);
        profile.push((-half_cyl + r * a.sin(), r * a.cos()));
    }
    for i in 1..=rings_per_cap {
        let a = (i as f64 / rings_per_cap as f64) * (PI / 2.0);
        profile.push((half_cyl + r * a.sin(), r * a.cos()));
    }

    let mut mesh = TriMesh::default();
    let mut ring_starts = Vec::new();
    for &(x, radius) in &profile {
        let start = mesh.vertices.len() as u32;
        ring_starts.push(start);
        if radius < 1e-12 {
            mesh.vertices.push(Vector3::new(x, 0.0, 0.0));
        } else {
            for s in 0..segments {
                let theta = 2.0 * PI * s as f64 / segments as f64;
                mesh.vertices
                    .push(Vector3::new(x, radius * theta.cos(), radius * theta.sin()));
            }
        }
    }
    let ring_len = |idx: usize| -> usize {
        if profile[idx].1 < 1e-12 {
            1
        } else {
            segments
        }
    };
    for i in 0..profile.len() - 1 {
        let (a0, n0) = (ring_starts[i], ring_len(i));
        let (b0, n1) = (ring_starts[i + 1], ring_len(i + 1));
        for s in 0..segments {
            let s_next = (s + 1) % segments;
            let a = a0 + (s % n0) as u32;
            let a_next = a0 + (s_next % n0) as u32;
            let b = b0 + (s % n1) as u32;
            let b_next = b0 + (s_next % n1) as u32;
            if n0 == 1 {
                mesh.triangles.push([a, b, b_next]);
            } else if n1 == 1 {
                mesh.triangles.push([a, b, a_next]);
            } else {
                mesh.triangles.push([a, b, b_next]);
                mesh.triangles.push([a, b_next, a_next]);
            }
        }
    }
    mesh
}

pub fn tessellate_part(part: &PartSpec, segments: usize) -> TriMesh {
    match part.shape {
        PartShape::Cuboid => cuboid_mesh(part.length, part.width, part.height),
        PartShape::Capsule => capsule_mesh(part.length, part.width, segments),
    }
}

/// Handle plus head, both in the object frame.
pub fn tessellate_tool(tool: &ToolSpec, segments: usize) -> TriMesh {
    let mut mesh = tessellate_part(&tool.handle, segments);
    let head = tessellate_part(&tool.head, segments);
    mesh.append(&head, &tool.head_offset);
    mesh
}

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(mesh.vertices.len() * 32);
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    crate::io::write_atomic(path, out.as_bytes())
}
