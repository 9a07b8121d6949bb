use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_threshold, VoxelGrid};
use crate::error::{Error, Result};

/// Clouds with fewer points than this use exhaustive nearest-neighbor search;
/// larger ones go through a uniform-grid spatial hash. Both return identical
/// distances.
pub const EXHAUSTIVE_NN_LIMIT: usize = 4096;

/// Intersection over union of the two grids after binarizing both at
/// `threshold`. Two empty grids have IoU 1.
pub fn iou(a: &VoxelGrid, b: &VoxelGrid, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if a.resolution() != b.resolution() {
        return Err(Error::invalid(format!(
            "IoU needs equal resolutions, got {} and {}",
            a.resolution(),
            b.resolution()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&va, &vb) in a.values().iter().zip(b.values()) {
        let oa = f64::from(va) >= threshold;
        let ob = f64::from(vb) >= threshold;
        inter += (oa && ob) as usize;
        union += (oa || ob) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// A point set in the unit-cube frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|p| p.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::invalid(format!("point {p:?} outside the unit cube")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A boundary face of an occupied cell: the side of `cell` facing along
/// `axis` in the `positive` or negative direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub cell: [usize; 3],
    pub axis: usize,
    pub positive: bool,
}

impl Face {
    /// Coordinate of the face plane along `axis`, in cell units.
    pub fn plane(&self) -> usize {
        self.cell[self.axis] + self.positive as usize
    }
}

/// All faces of occupied cells whose neighbor across the face is empty or
/// outside the grid, in deterministic (z, y, x, direction) order.
pub fn exposed_faces(grid: &VoxelGrid, threshold: f64) -> Result<Vec<Face>> {
    check_threshold(threshold)?;
    let n = grid.resolution();
    let mut faces = Vec::new();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                if !grid.occupied(xi, yi, zi, threshold) {
                    continue;
                }
                for axis in 0..3 {
                    for positive in [false, true] {
                        let step = if positive { 1 } else { -1 };
                        let mut nb = [xi, yi, zi];
                        nb[axis] += step;
                        if !grid.occupied(nb[0], nb[1], nb[2], threshold) {
                            faces.push(Face {
                                cell: [x, y, z],
                                axis,
                                positive,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(faces)
}

/// Draws `count` points uniformly over the exposed faces of the binarized
/// grid. All faces have equal area, so a face is chosen uniformly and then a
/// point uniformly within it.
pub fn sample_isosurface_points(
    grid: &VoxelGrid,
    count: usize,
    threshold: f64,
    seed: u64,
) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::invalid("point count must be positive"));
    }
    let faces = exposed_faces(grid, threshold)?;
    if faces.is_empty() {
        return Err(Error::EmptyShape);
    }
    let inv_n = 1.0 / grid.resolution() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let face = faces[rng.random_range(0..faces.len())];
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let (a1, a2) = ((face.axis + 1) % 3, (face.axis + 2) % 3);
        let mut p = [0.0; 3];
        p[face.axis] = face.plane() as f64 * inv_n;
        p[a1] = (face.cell[a1] as f64 + u) * inv_n;
        p[a2] = (face.cell[a2] as f64 + v) * inv_n;
        points.push(p);
    }
    Ok(PointCloud { points })
}

#[inline]
fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// For every point of `from`, the Euclidean distance to its nearest point
/// in `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::invalid("nearest-neighbor search on an empty cloud"));
    }
    if from.len().max(to.len()) < EXHAUSTIVE_NN_LIMIT {
        Ok(from
            .points
            .iter()
            .map(|p| to.points.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .collect())
    } else {
        let index = SpatialHash::build(&to.points);
        Ok(from.points.iter().map(|p| index.nearest(p)).collect())
    }
}

/// Symmetric Chamfer distance: half the sum of the two directional mean
/// nearest-neighbor distances.
pub fn chamfer_distance(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    let forward = nearest_distances(p, q)?;
    let backward = nearest_distances(q, p)?;
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    Ok(0.5 * (mean(&forward) + mean(&backward)))
}

/// Uniform grid over a point set, searched in growing Chebyshev shells.
struct SpatialHash<'a> {
    points: &'a [[f64; 3]],
    lo: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// Point indices bucketed by cell; `starts[c]..starts[c + 1]` indexes `order`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> SpatialHash<'a> {
    fn build(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-9);
        // Roughly two points per occupied cell for surface-like clouds.
        let per_side = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).clamp(1, 256);
        let cell = extent / per_side as f64;
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = (((hi[a] - lo[a]) / cell).floor() as usize + 1).min(per_side + 1);
        }
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; total + 1];
        let cell_of = |p: &[f64; 3]| -> usize {
            let mut c = [0usize; 3];
            for a in 0..3 {
                c[a] = (((p[a] - lo[a]) / cell).floor().max(0.0) as usize).min(dims[a] - 1);
            }
            c[0] + dims[0] * (c[1] + dims[1] * c[2])
        };
        let ids: Vec<usize> = points.iter().map(cell_of).collect();
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0usize; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            lo,
            cell,
            dims,
            starts,
            order,
        }
    }

    fn nearest(&self, p: &[f64; 3]) -> f64 {
        let mut center = [0isize; 3];
        for a in 0..3 {
            let c = ((p[a] - self.lo[a]) / self.cell).floor();
            center[a] = (c.max(0.0) as isize).min(self.dims[a] as isize - 1);
        }
        let max_r = *self.dims.iter().max().unwrap() as isize;
        let mut best = f64::INFINITY;
        for r in 0..=max_r {
            for cz in center[2] - r..=center[2] + r {
                for cy in center[1] - r..=center[1] + r {
                    for cx in center[0] - r..=center[0] + r {
                        let c = [cx, cy, cz];
                        let on_shell = (0..3).any(|a| (c[a] - center[a]).abs() == r);
                        if !on_shell
                            || (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a] as isize)
                        {
                            continue;
                        }
                        let id = cx as usize
                            + self.dims[0] * (cy as usize + self.dims[1] * cz as usize);
                        for &i in &self.order[self.starts[id]..self.starts[id + 1]] {
                            best = best.min(dist(p, &self.points[i]));
                        }
                    }
                }
            }
            // Lower bound on the distance to any point in a cell outside the
            // searched block.
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                let lo_cell = center[a] - r;
                let hi_cell = center[a] + r;
                if lo_cell > 0 {
                    let face = self.lo[a] + lo_cell as f64 * self.cell;
                    bound = bound.min((p[a] - face).max(0.0));
                }
                if hi_cell < self.dims[a] as isize - 1 {
                    let face = self.lo[a] + (hi_cell + 1) as f64 * self.cell;
                    bound = bound.min((face - p[a]).max(0.0));
                }
            }
            if best <= bound {
                break;
            }
        }
        best
    }
}
