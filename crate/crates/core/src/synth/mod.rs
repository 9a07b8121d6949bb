//! Procedural table, chair and plane shapes built from boxes and
//! cylinders, plus dataset generation with train/test splits.

mod dataset;
mod primitives;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, DatasetConfig, DatasetManifest, ManifestEntry, Split};
pub use primitives::Primitive;

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

/// Smallest resolution at which every in-bounds spec is non-empty.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Table,
    Chair,
    Plane,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Table, Family::Chair, Family::Plane];

    /// Parameter names with inclusive bounds, in object-frame units.
    pub fn bounds(self) -> &'static [(&'static str, f64, f64)] {
        match self {
            Family::Table => &[
                ("top_width", 0.5, 0.9),
                ("top_depth", 0.5, 0.9),
                ("top_thickness", 0.125, 0.2),
                ("height", 0.45, 0.8),
                ("leg_thickness", 0.125, 0.2),
            ],
            Family::Chair => &[
                ("seat_width", 0.45, 0.7),
                ("seat_depth", 0.45, 0.7),
                ("seat_height", 0.35, 0.5),
                ("seat_thickness", 0.125, 0.2),
                ("back_height", 0.2, 0.4),
                ("back_thickness", 0.125, 0.2),
                ("leg_radius", 0.0625, 0.1),
            ],
            Family::Plane => &[
                ("fuselage_length", 0.6, 0.9),
                ("fuselage_radius", 0.09, 0.15),
                ("wing_span", 0.5, 0.95),
                ("wing_chord", 0.15, 0.3),
                ("wing_thickness", 0.125, 0.2),
                ("tail_height", 0.125, 0.25),
                ("tail_thickness", 0.125, 0.2),
            ],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Table => "table",
            Family::Chair => "chair",
            Family::Plane => "plane",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl ShapeSpec {
    /// Draws every parameter uniformly within its bounds.
    pub fn random(family: Family, seed: u64) -> ShapeSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = family
            .bounds()
            .iter()
            .map(|&(name, lo, hi)| (name.to_string(), rng.random_range(lo..=hi)))
            .collect();
        ShapeSpec { family, params, seed }
    }

    /// Every parameter at its lower (`t = 0`) or upper (`t = 1`) bound.
    pub fn at_bounds(family: Family, t: f64) -> ShapeSpec {
        let params = family
            .bounds()
            .iter()
            .map(|&(name, lo, hi)| (name.to_string(), lo + t * (hi - lo)))
            .collect();
        ShapeSpec { family, params, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = self.family.bounds();
        for key in self.params.keys() {
            if !bounds.iter().any(|(n, _, _)| n == key) {
                return Err(Error::invalid(format!("unknown {} parameter `{key}`", self.family)));
            }
        }
        for &(name, lo, hi) in bounds {
            let v = *self
                .params
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing {} parameter `{name}`", self.family)))?;
            if !(lo..=hi).contains(&v) {
                return Err(Error::invalid(format!(
                    "{} parameter `{name}` = {v} outside [{lo}, {hi}]",
                    self.family
                )));
            }
        }
        Ok(())
    }

    fn p(&self, name: &str) -> f64 {
        self.params[name]
    }

    /// The primitives whose union is the shape, in the `[0, 1]³` frame
    /// with `+y` up and the object centered on `x = z = 0.5`.
    pub fn primitives(&self) -> Result<Vec<Primitive>> {
        self.validate()?;
        let c = 0.5;
        let floor = 0.05;
        Ok(match self.family {
            Family::Table => {
                let (w, d) = (self.p("top_width"), self.p("top_depth"));
                let (top_y, t, leg) = (floor + self.p("height"), self.p("top_thickness"), self.p("leg_thickness"));
                let mut prims = vec![Primitive::aabb([c - w / 2.0, top_y - t, c - d / 2.0], [c + w / 2.0, top_y, c + d / 2.0])];
                for sx in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        let x0 = if sx < 0.0 { c - w / 2.0 } else { c + w / 2.0 - leg };
                        let z0 = if sz < 0.0 { c - d / 2.0 } else { c + d / 2.0 - leg };
                        prims.push(Primitive::aabb([x0, floor, z0], [x0 + leg, top_y - t, z0 + leg]));
                    }
                }
                prims
            }
            Family::Chair => {
                let (w, d) = (self.p("seat_width"), self.p("seat_depth"));
                let (seat_y, t) = (floor + self.p("seat_height"), self.p("seat_thickness"));
                let (back_h, back_t, r) = (self.p("back_height"), self.p("back_thickness"), self.p("leg_radius"));
                let mut prims = vec![
                    Primitive::aabb([c - w / 2.0, seat_y - t, c - d / 2.0], [c + w / 2.0, seat_y, c + d / 2.0]),
                    Primitive::aabb([c - w / 2.0, seat_y, c + d / 2.0 - back_t], [c + w / 2.0, seat_y + back_h, c + d / 2.0]),
                ];
                for sx in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        let center = [c + sx * (w / 2.0 - r), c + sz * (d / 2.0 - r)];
                        prims.push(Primitive::Cylinder { axis: 1, center, radius: r, lo: floor, hi: seat_y - t });
                    }
                }
                prims
            }
            Family::Plane => {
                let (len, r) = (self.p("fuselage_length"), self.p("fuselage_radius"));
                let (span, chord, wt) = (self.p("wing_span"), self.p("wing_chord"), self.p("wing_thickness"));
                let (tail_h, tail_t) = (self.p("tail_height"), self.p("tail_thickness"));
                let y = 0.45;
                let (z0, z1) = (c - len / 2.0, c + len / 2.0);
                vec![
                    Primitive::Cylinder { axis: 2, center: [c, y], radius: r, lo: z0, hi: z1 },
                    Primitive::aabb([c - span / 2.0, y - wt / 2.0, c - chord / 2.0], [c + span / 2.0, y + wt / 2.0, c + chord / 2.0]),
                    Primitive::aabb([c - tail_t / 2.0, y, z1 - chord / 2.0], [c + tail_t / 2.0, y + r + tail_h, z1]),
                    Primitive::aabb([c - span / 4.0, y - wt / 2.0, z1 - chord / 2.0], [c + span / 4.0, y + wt / 2.0, z1]),
                ]
            }
        })
    }
}

/// Rasterizes the spec: a cell is occupied when its center lies in any
/// primitive.
pub fn generate_shape(spec: &ShapeSpec, resolution: usize) -> Result<VoxelGrid> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::invalid(format!(
            "shape resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    let prims = spec.primitives()?;
    let mut grid = VoxelGrid::new(resolution)?;
    for prim in &prims {
        prim.rasterize(&mut grid)?;
    }
    Ok(grid)
}
