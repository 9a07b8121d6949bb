use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{exposed_faces, VoxelGrid};
use crate::error::{Error, IoContext, Result};

/// Quad surface of a voxel shape: one unit quad per exposed cell face.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Zero-based vertex indices, counter-clockwise seen from outside.
    pub quads: Vec<[u32; 4]>,
}

/// Builds the boundary surface of the binarized grid. Vertices shared
/// between faces are merged, so a single solid component is watertight.
pub fn extract_surface_mesh(grid: &VoxelGrid, threshold: f64) -> Result<SurfaceMesh> {
    let faces = exposed_faces(grid, threshold)?;
    let inv_n = 1.0 / grid.resolution() as f64;
    let mut mesh = SurfaceMesh::default();
    let mut lookup: HashMap<[usize; 3], u32> = HashMap::new();
    for face in faces {
        let (a1, a2) = ((face.axis + 1) % 3, (face.axis + 2) % 3);
        let mut base = face.cell;
        base[face.axis] = face.plane();
        // (a1, a2) is a right-handed pair with the face axis, so this order
        // is counter-clockwise around +axis.
        let mut corners = [base; 4];
        corners[1][a1] += 1;
        corners[2][a1] += 1;
        corners[2][a2] += 1;
        corners[3][a2] += 1;
        if !face.positive {
            corners.swap(1, 3);
        }
        let mut quad = [0u32; 4];
        for (slot, corner) in quad.iter_mut().zip(corners) {
            *slot = *lookup.entry(corner).or_insert_with(|| {
                mesh.vertices.push([
                    corner[0] as f64 * inv_n,
                    corner[1] as f64 * inv_n,
                    corner[2] as f64 * inv_n,
                ]);
                (mesh.vertices.len() - 1) as u32
            });
        }
        mesh.quads.push(quad);
    }
    Ok(mesh)
}

impl SurfaceMesh {
    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for q in &self.quads {
            let _ = writeln!(s, "f {} {} {} {}", q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).at(path)
    }
}

/// Reads the `v` / `f` subset of OBJ written by [`SurfaceMesh::to_obj`].
pub fn parse_obj(text: &str) -> Result<SurfaceMesh> {
    let mut mesh = SurfaceMesh::default();
    let mut offset = 0u64;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|p| p.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::format(offset, format!("bad vertex: {e}")))?;
                if coords.len() != 3 {
                    return Err(Error::format(offset, "vertex needs 3 coordinates"));
                }
                mesh.vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|p| p.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::format(offset, format!("bad face: {e}")))?;
                if idx.len() != 4 || idx.iter().any(|&i| i == 0 || i as usize > mesh.vertices.len())
                {
                    return Err(Error::format(offset, "face must be a quad of valid 1-based indices"));
                }
                mesh.quads.push([idx[0] - 1, idx[1] - 1, idx[2] - 1, idx[3] - 1]);
            }
            _ => {}
        }
        offset += line.len() as u64 + 1;
    }
    Ok(mesh)
}
