//! Cubic occupancy grids and everything that operates on them directly:
//! binarization, max-pool downsampling, the `VXG1` file format, isosurface
//! sampling, the IoU / Chamfer metrics and surface mesh export.

mod mesh;
mod metrics;

use std::io::Write;
use std::path::Path;

pub use mesh::{extract_surface_mesh, parse_obj, SurfaceMesh};
pub use metrics::{
    chamfer_distance, exposed_faces, iou, nearest_distances, sample_isosurface_points, Face,
    PointCloud, EXHAUSTIVE_NN_LIMIT,
};

use crate::error::{Error, IoContext, Result};

/// Default binarization threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const GRID_MAGIC: &[u8; 4] = b"VXG1";

/// An `N×N×N` occupancy field with values in `[0, 1]`.
///
/// Cells are indexed `(x, y, z)` and stored x-fastest. The grid spans the unit
/// cube of the canonical object frame, so cell `(x, y, z)` covers
/// `[x/N, (x+1)/N] × [y/N, (y+1)/N] × [z/N, (z+1)/N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    values: Vec<f32>,
}

impl VoxelGrid {
    /// An empty (all-zero) grid.
    pub fn new(resolution: usize) -> Result<Self> {
        Self::filled(resolution, 0.0)
    }

    pub fn filled(resolution: usize, value: f32) -> Result<Self> {
        check_resolution(resolution)?;
        Self::from_values(resolution, vec![value; resolution.pow(3)])
    }

    pub fn from_values(resolution: usize, values: Vec<f32>) -> Result<Self> {
        check_resolution(resolution)?;
        if values.len() != resolution.pow(3) {
            return Err(Error::invalid(format!(
                "grid of resolution {resolution} needs {} values, got {}",
                resolution.pow(3),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "occupancy value {bad} outside [0, 1]"
            )));
        }
        Ok(Self { resolution, values })
    }

    /// Builds a grid from a predicate over cell indices.
    pub fn from_fn(resolution: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        check_resolution(resolution)?;
        let mut values = Vec::with_capacity(resolution.pow(3));
        for z in 0..resolution {
            for y in 0..resolution {
                for x in 0..resolution {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::from_values(resolution, values)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!(
                "occupancy value {value} outside [0, 1]"
            )));
        }
        let i = self.index(x, y, z);
        self.values[i] = value;
        Ok(())
    }

    /// True when cell `(x, y, z)` is occupied at `threshold`. Out-of-range
    /// coordinates count as empty.
    #[inline]
    pub fn occupied(&self, x: isize, y: isize, z: isize, threshold: f64) -> bool {
        let n = self.resolution as isize;
        if x < 0 || y < 0 || z < 0 || x >= n || y >= n || z >= n {
            return false;
        }
        f64::from(self.get(x as usize, y as usize, z as usize)) >= threshold
    }

    pub fn occupied_count(&self, threshold: f64) -> usize {
        self.values
            .iter()
            .filter(|&&v| f64::from(v) >= threshold)
            .count()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Thresholds every cell: `1` iff `value >= threshold`.
    pub fn binarize(&self, threshold: f64) -> Result<VoxelGrid> {
        check_threshold(threshold)?;
        Ok(VoxelGrid {
            resolution: self.resolution,
            values: self
                .values
                .iter()
                .map(|&v| if f64::from(v) >= threshold { 1.0 } else { 0.0 })
                .collect(),
        })
    }

    /// Max-pools `factor³` blocks into single cells.
    pub fn downsample(&self, factor: usize) -> Result<VoxelGrid> {
        if factor == 0 || self.resolution % factor != 0 {
            return Err(Error::invalid(format!(
                "downsample factor {factor} does not divide resolution {}",
                self.resolution
            )));
        }
        let coarse = self.resolution / factor;
        check_resolution(coarse).map_err(|_| {
            Error::invalid(format!(
                "downsampling {}³ by {factor} leaves fewer than 2 cells per side",
                self.resolution
            ))
        })?;
        let mut values = vec![0.0f32; coarse.pow(3)];
        for z in 0..self.resolution {
            for y in 0..self.resolution {
                for x in 0..self.resolution {
                    let c = x / factor + coarse * (y / factor + coarse * (z / factor));
                    let v = self.get(x, y, z);
                    if v > values[c] {
                        values[c] = v;
                    }
                }
            }
        }
        Ok(VoxelGrid {
            resolution: coarse,
            values,
        })
    }

    /// Serializes to the `VXG1` layout: magic, three little-endian `u32`
    /// dims, then `N³` little-endian `f32` values x-fastest.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(GRID_MAGIC);
        for _ in 0..3 {
            out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<VoxelGrid> {
        if bytes.len() < 4 {
            return Err(Error::format(bytes.len() as u64, "truncated magic"));
        }
        if &bytes[..4] != GRID_MAGIC {
            return Err(Error::format(0, "bad magic, expected VXG1"));
        }
        let mut dims = [0usize; 3];
        for (k, d) in dims.iter_mut().enumerate() {
            let at = 4 + 4 * k;
            let raw = bytes
                .get(at..at + 4)
                .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header"))?;
            *d = u32::from_le_bytes(raw.try_into().unwrap()) as usize;
        }
        if dims[0] != dims[1] || dims[1] != dims[2] {
            return Err(Error::format(4, format!("non-cubic dims {dims:?}")));
        }
        let n = dims[0];
        if n < 2 {
            return Err(Error::format(4, format!("resolution {n} below 2")));
        }
        let count = n
            .checked_pow(3)
            .ok_or_else(|| Error::format(4, "dims overflow"))?;
        let payload = &bytes[16..];
        if payload.len() < 4 * count {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated payload: expected {} bytes, got {}", 4 * count, payload.len()),
            ));
        }
        if payload.len() > 4 * count {
            return Err(Error::format(
                (16 + 4 * count) as u64,
                "trailing bytes after payload",
            ));
        }
        let mut values = Vec::with_capacity(count);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::format(
                    (16 + 4 * i) as u64,
                    format!("value {v} outside [0, 1]"),
                ));
            }
            values.push(v);
        }
        Ok(VoxelGrid {
            resolution: n,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).at(path)?;
        f.write_all(&self.to_bytes()).at(path)
    }

    pub fn read(path: &Path) -> Result<VoxelGrid> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes)
    }
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < 2 {
        return Err(Error::invalid(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    Ok(())
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(())
}
