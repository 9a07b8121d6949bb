use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::render::{mask_maps, render_view, Camera, ViewParams, DEFAULT_FILM_WIDTH_MM, DEFAULT_FOCAL_LENGTH_MM};
use crate::synth::{DatasetManifest, Split};
use crate::voxel::VoxelGrid;

/// One (view, shape) training or evaluation pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub shape_id: String,
    pub view: usize,
    /// Masked observation `[4, W, W]`.
    pub input: Vec<f64>,
    /// Ground-truth occupancy, `N³`.
    pub target: Vec<f64>,
}

/// Renders `grid` from `view` and masks the maps into the network input.
pub fn observation_input(grid: &VoxelGrid, view: &ViewParams, image_size: usize) -> Result<Vec<f64>> {
    let camera = Camera::new(*view, image_size, image_size, DEFAULT_FOCAL_LENGTH_MM, DEFAULT_FILM_WIDTH_MM)?;
    mask_maps(&render_view(grid, &camera)?)
}

/// Samples for every shape of `split` and its first `views` views, ordered
/// by manifest entry then view. Views with an empty silhouette are skipped.
pub fn build_samples(
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
    views: Option<usize>,
    image_size: usize,
) -> Result<Vec<Sample>> {
    let entries: Vec<_> = manifest.split(split).collect();
    let per_entry: Vec<Vec<Sample>> = entries
        .par_iter()
        .map(|entry| {
            let grid = DatasetManifest::load_shape(dir, &entry.id)?;
            if grid.resolution() != manifest.resolution {
                return Err(Error::invalid(format!("shape `{}` has the wrong resolution", entry.id)));
            }
            let target: Vec<f64> = grid.values().iter().map(|&v| v as f64).collect();
            let count = views.unwrap_or(entry.views.len()).min(entry.views.len());
            let mut out = Vec::with_capacity(count);
            for (k, view) in entry.views[..count].iter().enumerate() {
                match observation_input(&grid, view, image_size) {
                    Ok(input) => out.push(Sample {
                        shape_id: entry.id.clone(),
                        view: k,
                        input,
                        target: target.clone(),
                    }),
                    Err(Error::EmptyView) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_entry.into_iter().flatten().collect())
}

/// Stacks samples into `([B, 4, W, W], [B, N, N, N])` tensors.
pub fn batch_tensors(samples: &[&Sample], image_size: usize, resolution: usize) -> Result<(Tensor, Tensor)> {
    let b = samples.len();
    let mut x = Vec::with_capacity(b * 4 * image_size * image_size);
    let mut t = Vec::with_capacity(b * resolution.pow(3));
    for s in samples {
        x.extend_from_slice(&s.input);
        t.extend_from_slice(&s.target);
    }
    Ok((
        Tensor::new(x, &[b, 4, image_size, image_size])?,
        Tensor::new(t, &[b, resolution, resolution, resolution])?,
    ))
}
