//! Pinhole camera, exact voxel ray casting and observation maps.

mod camera;
mod image;

pub use camera::{camera_from_angles, Camera, ViewParams, DEFAULT_FILM_WIDTH_MM, DEFAULT_FOCAL_LENGTH_MM};
pub use image::{read_pbm, read_pfm, write_pbm, write_pfm, PfmImage};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

/// Where a ray first enters an occupied cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Distance from the ray origin to the hit point.
    pub t: f64,
    pub cell: [usize; 3],
    /// Axis of the entered face and whether its outward normal points
    /// along `+axis`.
    pub axis: usize,
    pub positive: bool,
}

impl RayHit {
    pub fn world_normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis] = if self.positive { 1.0 } else { -1.0 };
        n
    }
}

/// First occupied cell along `origin + t·dir` (`dir` of unit length)
/// through the grid on `[0, 1]³`, by axis-stepping traversal.
pub fn cast_ray(grid: &VoxelGrid, origin: [f64; 3], dir: [f64; 3]) -> Option<RayHit> {
    let n = grid.resolution();
    let nf = n as f64;
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < 0.0 || origin[a] > 1.0 {
                return None;
            }
            continue;
        }
        let t0 = (0.0 - origin[a]) / dir[a];
        let t1 = (1.0 - origin[a]) / dir[a];
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if lo > t_enter {
            t_enter = lo;
            enter_axis = a;
        }
        t_exit = t_exit.min(hi);
    }
    if t_enter > t_exit || t_exit < 0.0 || t_enter < 0.0 {
        // Origins inside the grid are not supported: cameras sit outside it.
        return None;
    }
    let mut cell = [0usize; 3];
    for a in 0..3 {
        cell[a] = if a == enter_axis {
            if dir[a] > 0.0 { 0 } else { n - 1 }
        } else {
            ((origin[a] + t_enter * dir[a]) * nf).floor().clamp(0.0, nf - 1.0) as usize
        };
    }
    let mut t = t_enter;
    let mut axis = enter_axis;
    let step = dir.map(|d| if d > 0.0 { 1isize } else { -1 });
    let boundary = |a: usize, c: usize| -> f64 {
        let plane = if dir[a] > 0.0 { (c + 1) as f64 } else { c as f64 } / nf;
        (plane - origin[a]) / dir[a]
    };
    let mut t_next = [f64::INFINITY; 3];
    for a in 0..3 {
        if dir[a] != 0.0 {
            t_next[a] = boundary(a, cell[a]);
        }
    }
    loop {
        if grid.get(cell[0], cell[1], cell[2]) >= 0.5 {
            return Some(RayHit {
                t,
                cell,
                axis,
                positive: dir[axis] < 0.0,
            });
        }
        let a = (0..3).fold(0, |best, k| if t_next[k] < t_next[best] { k } else { best });
        if !t_next[a].is_finite() {
            return None;
        }
        let next = cell[a] as isize + step[a];
        if next < 0 || next >= n as isize {
            return None;
        }
        t = t_next[a];
        axis = a;
        cell[a] = next as usize;
        t_next[a] = boundary(a, cell[a]);
    }
}

/// Per-pixel ray depth, camera-space normal and silhouette, stored row by
/// row from the top-left pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMaps {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub normal: Vec<[f64; 3]>,
    pub silhouette: Vec<bool>,
}

impl ObservationMaps {
    pub fn pixel(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn hit_count(&self) -> usize {
        self.silhouette.iter().filter(|&&s| s).count()
    }
}

pub fn render_view(grid: &VoxelGrid, camera: &Camera) -> Result<ObservationMaps> {
    if !grid.is_binary() {
        return Err(Error::invalid("render_view needs a binary grid"));
    }
    let (w, h) = (camera.width, camera.height);
    let origin = camera.position();
    let rows: Vec<Vec<(f64, [f64; 3], bool)>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    let dir = camera.pixel_ray(u as f64 + 0.5, v as f64 + 0.5);
                    match cast_ray(grid, origin, dir) {
                        Some(hit) => (hit.t, camera.to_camera(hit.world_normal()), true),
                        None => (0.0, [0.0; 3], false),
                    }
                })
                .collect()
        })
        .collect();
    let mut maps = ObservationMaps {
        width: w,
        height: h,
        depth: Vec::with_capacity(w * h),
        normal: Vec::with_capacity(w * h),
        silhouette: Vec::with_capacity(w * h),
    };
    for (d, n, s) in rows.into_iter().flatten() {
        maps.depth.push(d);
        maps.normal.push(n);
        maps.silhouette.push(s);
    }
    Ok(maps)
}

/// Masked network input `[4, H, W]`: depth rescaled to `[0, 1]` over the
/// silhouette, then the three normal components, all zero off-silhouette.
pub fn mask_maps(maps: &ObservationMaps) -> Result<Vec<f64>> {
    let hits: Vec<f64> = maps
        .depth
        .iter()
        .zip(&maps.silhouette)
        .filter(|(_, &s)| s)
        .map(|(&d, _)| d)
        .collect();
    if hits.is_empty() {
        return Err(Error::EmptyView);
    }
    let lo = hits.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = hits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let plane = maps.width * maps.height;
    let mut out = vec![0.0; 4 * plane];
    for p in 0..plane {
        if !maps.silhouette[p] {
            continue;
        }
        out[p] = if hi > lo { (maps.depth[p] - lo) / (hi - lo) } else { 0.0 };
        for c in 0..3 {
            out[(c + 1) * plane + p] = maps.normal[p][c];
        }
    }
    Ok(out)
}
