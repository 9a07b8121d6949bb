//! Batch evaluation with IoU and Chamfer distance, report I/O, report
//! comparison and encoder unit rankings.

mod activations;
mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use activations::{top_activations, ActivationHit, UnitRanking};
pub use report::{compare_reports, DeltaRow, DeltaSummary, DeltaTable, MetricsReport, MetricsRow, Summary, SummaryStats};

use crate::autodiff::{no_grad, Tensor};
use crate::error::{Error, Result};
use crate::nets::CompletionNet;
use crate::synth::Family;
use crate::train::Sample;
use crate::voxel::{chamfer_distance, iou, sample_isosurface_points, VoxelGrid, DEFAULT_THRESHOLD};

pub const EMPTY_PREDICTION: &str = "empty_prediction";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Points sampled on each isosurface for Chamfer distance.
    pub cd_points: usize,
    /// Prediction clouds use `seed`, ground-truth clouds `seed + 1`.
    pub seed: u64,
    pub threshold: f64,
    pub coarse_factor: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cd_points: 1024,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            coarse_factor: 2,
        }
    }
}

/// Anything that maps an observation sample to occupancy values in `[0, 1]`.
pub trait Predictor: Sync {
    fn predict(&self, sample: &Sample) -> Result<Vec<f64>>;
}

impl Predictor for CompletionNet {
    fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        let w = self.config().image_size;
        let x = Tensor::new(sample.input.clone(), &[1, 4, w, w])?;
        Ok(no_grad(|| self.forward(&x))?.data().to_vec())
    }
}

/// Returns the ground truth itself.
pub struct GroundTruthModel;

impl Predictor for GroundTruthModel {
    fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(sample.target.clone())
    }
}

/// Predicts nothing anywhere.
pub struct EmptyModel;

impl Predictor for EmptyModel {
    fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(vec![0.0; sample.target.len()])
    }
}

fn binary_grid(values: &[f64], threshold: f64) -> Result<VoxelGrid> {
    let n = (values.len() as f64).cbrt().round() as usize;
    if n.pow(3) != values.len() {
        return Err(Error::invalid(format!("{} values do not form a cubic grid", values.len())));
    }
    VoxelGrid::from_values(n, values.iter().map(|&v| (v >= threshold) as u8 as f32).collect())
}

fn evaluate_one(model: &dyn Predictor, sample: &Sample, family: Option<Family>, config: &EvalConfig) -> Result<MetricsRow> {
    let pred = binary_grid(&model.predict(sample)?, config.threshold)?;
    let truth = binary_grid(&sample.target, config.threshold)?;
    if pred.resolution() != truth.resolution() {
        return Err(Error::invalid("prediction and ground truth resolutions differ"));
    }
    let iou_native = iou(&pred, &truth, 0.5)?;
    let iou_coarse = iou(
        &pred.downsample(config.coarse_factor)?,
        &truth.downsample(config.coarse_factor)?,
        0.5,
    )?;
    let mut flags = Vec::new();
    let cd = if pred.occupied_count(0.5) == 0 {
        flags.push(EMPTY_PREDICTION.to_string());
        None
    } else {
        let p = sample_isosurface_points(&pred, config.cd_points, 0.5, config.seed)?;
        let q = sample_isosurface_points(&truth, config.cd_points, 0.5, config.seed.wrapping_add(1))?;
        Some(chamfer_distance(&p, &q)?)
    };
    Ok(MetricsRow {
        shape_id: sample.shape_id.clone(),
        view_id: sample.view,
        family,
        iou_native,
        iou_coarse,
        cd,
        flags,
    })
}

/// Metrics for every sample, sorted by `(shape_id, view_id)`.
pub fn evaluate(
    model: &dyn Predictor,
    samples: &[Sample],
    families: &BTreeMap<String, Family>,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    if config.cd_points == 0 {
        return Err(Error::invalid("cd_points must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut rows: Vec<MetricsRow> = samples
        .par_iter()
        .map(|s| evaluate_one(model, s, families.get(&s.shape_id).copied(), config))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| (&a.shape_id, a.view_id).cmp(&(&b.shape_id, b.view_id)));
    Ok(MetricsReport {
        rows,
        cd_points: config.cd_points,
        seed: config.seed,
    })
}
