use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Tensor};
use crate::error::{Error, Result};
use crate::nets::CompletionNet;
use crate::train::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationHit {
    pub shape_id: String,
    pub view_id: usize,
    pub value: f64,
    /// Row and column of the spatial maximum in the unit's feature map.
    pub location: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRanking {
    pub unit: usize,
    /// Every activation of this unit was zero on every input.
    pub degenerate: bool,
    pub top: Vec<ActivationHit>,
}

/// Spatial maximum and its first row-major location in an `h × w` map.
fn spatial_max(map: &[f64], w: usize) -> (f64, [usize; 2]) {
    let mut best = (f64::NEG_INFINITY, [0, 0]);
    for (i, &v) in map.iter().enumerate() {
        if v > best.0 {
            best = (v, [i / w, i % w]);
        }
    }
    best
}

/// For every unit of encoder block `layer`, the `k` samples with the
/// largest spatial-max activation. Ties keep sample order.
pub fn top_activations(net: &CompletionNet, samples: &[Sample], layer: usize, k: usize) -> Result<Vec<UnitRanking>> {
    let layers = net.config().encoder_channels.len();
    if layer >= layers {
        return Err(Error::invalid(format!("encoder layer {layer} out of range (network has {layers})")));
    }
    let w = net.config().image_size;
    // Per sample, per unit: (max, location, all zero).
    let per_sample: Vec<Vec<(f64, [usize; 2], bool)>> = samples
        .par_iter()
        .map(|s| {
            let x = Tensor::new(s.input.clone(), &[1, 4, w, w])?;
            let act = no_grad(|| net.encoder_activations(&x, layer))?;
            let (c, fw) = (act.shape()[1], act.shape()[3]);
            let plane = act.numel() / c;
            Ok((0..c)
                .map(|u| {
                    let map = &act.data()[u * plane..(u + 1) * plane];
                    let (v, loc) = spatial_max(map, fw);
                    (v, loc, map.iter().all(|&a| a == 0.0))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let units = net.config().encoder_channels[layer];
    let take = k.min(samples.len());
    Ok((0..units)
        .map(|u| {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.sort_by(|&a, &b| per_sample[b][u].0.total_cmp(&per_sample[a][u].0).then(a.cmp(&b)));
            UnitRanking {
                unit: u,
                degenerate: per_sample.iter().all(|p| p[u].2),
                top: order[..take]
                    .iter()
                    .map(|&i| ActivationHit {
                        shape_id: samples[i].shape_id.clone(),
                        view_id: samples[i].view,
                        value: per_sample[i][u].0,
                        location: per_sample[i][u].1,
                    })
                    .collect(),
            }
        })
        .collect())
}
