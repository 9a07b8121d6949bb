use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_shape, Family, ShapeSpec};
use crate::error::{Error, IoContext, Result};
use crate::render::ViewParams;
use crate::voxel::VoxelGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub shapes: usize,
    pub resolution: usize,
    pub views_per_shape: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub families: Vec<Family>,
    /// Half-open azimuth range in radians.
    pub azimuth_range: [f64; 2],
    pub elevation_range: [f64; 2],
    pub distance: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            shapes: 100,
            resolution: 16,
            views_per_shape: 20,
            train_fraction: 0.9,
            seed: 0,
            families: Family::ALL.to_vec(),
            azimuth_range: [0.0, std::f64::consts::TAU],
            elevation_range: [-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3],
            distance: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub spec: ShapeSpec,
    pub split: Split,
    pub views: Vec<ViewParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub resolution: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::NotFound(format!("shape `{id}` in manifest")))
    }

    pub fn read(dir: &Path) -> Result<DatasetManifest> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).at(&path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.entries.is_empty() {
            return Err(Error::EmptyManifest);
        }
        Ok(manifest)
    }

    pub fn shape_path(dir: &Path, id: &str) -> PathBuf {
        dir.join("shapes").join(format!("{id}.vxg"))
    }

    pub fn load_shape(dir: &Path, id: &str) -> Result<VoxelGrid> {
        VoxelGrid::read(&Self::shape_path(dir, id))
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shapes == 0 {
            return Err(Error::EmptyManifest);
        }
        if self.views_per_shape == 0 {
            return Err(Error::invalid("views_per_shape must be positive"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::invalid("train_fraction must lie in [0, 1]"));
        }
        if self.families.is_empty() {
            return Err(Error::invalid("at least one shape family is required"));
        }
        let [a0, a1] = self.azimuth_range;
        let [e0, e1] = self.elevation_range;
        if !(a0 < a1) || !(e0 <= e1) {
            return Err(Error::invalid("angle ranges must be increasing"));
        }
        if e0.abs() >= std::f64::consts::FRAC_PI_2 || e1.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::invalid("elevations must satisfy |e| < pi/2"));
        }
        if !(self.distance > 3f64.sqrt() / 2.0) {
            return Err(Error::invalid("distance must exceed sqrt(3)/2"));
        }
        Ok(())
    }

    /// Builds the manifest in memory; everything derives from `seed`.
    pub fn manifest(&self) -> Result<DatasetManifest> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let width = self.shapes.to_string().len().max(4);
        let mut entries = Vec::with_capacity(self.shapes);
        for i in 0..self.shapes {
            let family = self.families[i % self.families.len()];
            let spec = ShapeSpec::random(family, rng.random());
            let views = (0..self.views_per_shape)
                .map(|_| {
                    let [a0, a1] = self.azimuth_range;
                    let [e0, e1] = self.elevation_range;
                    ViewParams {
                        azimuth: rng.random_range(a0..a1),
                        elevation: if e0 < e1 { rng.random_range(e0..=e1) } else { e0 },
                        distance: self.distance,
                    }
                })
                .collect();
            entries.push(ManifestEntry {
                id: format!("s{i:0width$}"),
                spec,
                split: Split::Test,
                views,
            });
        }
        let mut order: Vec<usize> = (0..self.shapes).collect();
        order.shuffle(&mut rng);
        let train = (self.shapes as f64 * self.train_fraction).round() as usize;
        for &i in &order[..train] {
            entries[i].split = Split::Train;
        }
        Ok(DatasetManifest {
            resolution: self.resolution,
            seed: self.seed,
            entries,
        })
    }
}

/// Writes `manifest.json`, `shapes/<id>.vxg` and `views/<id>/<k>.json`
/// under `out`.
pub fn generate_dataset(config: &DatasetConfig, out: &Path) -> Result<DatasetManifest> {
    let manifest = config.manifest()?;
    let shapes = out.join("shapes");
    std::fs::create_dir_all(&shapes).at(&shapes)?;
    for entry in &manifest.entries {
        let grid = generate_shape(&entry.spec, config.resolution)?;
        grid.write(&DatasetManifest::shape_path(out, &entry.id))?;
        let views = out.join("views").join(&entry.id);
        std::fs::create_dir_all(&views).at(&views)?;
        for (k, view) in entry.views.iter().enumerate() {
            let path = views.join(format!("{k}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(view)? + "\n").at(&path)?;
        }
    }
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").at(&path)?;
    Ok(manifest)
}
