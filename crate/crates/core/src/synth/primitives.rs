use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::voxel::VoxelGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// Closed axis-aligned box.
    Box { lo: [f64; 3], hi: [f64; 3] },
    /// Closed circular cylinder along `axis`; `center` holds the other two
    /// coordinates in increasing axis order.
    Cylinder {
        axis: usize,
        center: [f64; 2],
        radius: f64,
        lo: f64,
        hi: f64,
    },
}

impl Primitive {
    pub fn aabb(lo: [f64; 3], hi: [f64; 3]) -> Primitive {
        Primitive::Box { lo, hi }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Primitive::Box { lo, hi } => (0..3).all(|a| lo[a] <= p[a] && p[a] <= hi[a]),
            Primitive::Cylinder { axis, center, radius, lo, hi } => {
                let [u, v] = other_axes(*axis);
                let (du, dv) = (p[u] - center[0], p[v] - center[1]);
                *lo <= p[*axis] && p[*axis] <= *hi && du * du + dv * dv <= radius * radius
            }
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Primitive::Box { lo, hi } => (*lo, *hi),
            Primitive::Cylinder { axis, center, radius, lo, hi } => {
                let [u, v] = other_axes(*axis);
                let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
                (a[*axis], b[*axis]) = (*lo, *hi);
                (a[u], b[u]) = (center[0] - radius, center[0] + radius);
                (a[v], b[v]) = (center[1] - radius, center[1] + radius);
                (a, b)
            }
        }
    }

    /// Sets every cell whose center lies inside to 1, visiting only the
    /// index range spanned by the bounding box.
    pub fn rasterize(&self, grid: &mut VoxelGrid) -> Result<()> {
        let n = grid.resolution();
        let (lo, hi) = self.bounds();
        let range = |a: usize| {
            // Centers (i + 0.5) / n inside [lo, hi], widened by one cell for rounding.
            let first = ((lo[a] * n as f64 - 0.5).ceil() as isize - 1).max(0) as usize;
            let last = ((hi[a] * n as f64 - 0.5).floor() as isize + 1).min(n as isize - 1);
            (first, last)
        };
        let ranges = [range(0), range(1), range(2)];
        if ranges.iter().any(|&(f, l)| l < f as isize) {
            return Ok(());
        }
        let c = |i: usize| (i as f64 + 0.5) / n as f64;
        for z in ranges[2].0..=ranges[2].1 as usize {
            for y in ranges[1].0..=ranges[1].1 as usize {
                for x in ranges[0].0..=ranges[0].1 as usize {
                    if self.contains([c(x), c(y), c(z)]) {
                        grid.set(x, y, z, 1.0)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn other_axes(axis: usize) -> [usize; 2] {
    match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}
