use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use voxprior_core::evalrep::{
    compare_reports, evaluate, top_activations, EvalConfig, GroundTruthModel, MetricsReport, Predictor,
};
use voxprior_core::nets::CompletionNet;
use voxprior_core::render::{render_view, write_pbm, write_pfm, Camera, PfmImage};
use voxprior_core::synth::{generate_dataset, DatasetConfig, DatasetManifest, Family, Split};
use voxprior_core::train::{
    build_samples, finetune, load_checkpoint, observation_input, LossCurve, save_checkpoint, train_completion, train_gan,
    Sample, Stage, TrainConfig,
};
use voxprior_core::voxel::extract_surface_mesh;
use voxprior_core::{Error, VoxelGrid};

use crate::config::{resolve, UsageError};
use crate::Common;

pub const CHECKPOINT: &str = "checkpoint.adp";
pub const GROUND_TRUTH_MODEL: &str = "ground-truth";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Provenance record: the command, its fully resolved config and results.
fn write_run(out: &Path, command: &str, config: &impl Serialize, result: Value) -> Result<()> {
    let run = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "result": result,
    });
    write(&out.join("run.json"), serde_json::to_string_pretty(&run)? + "\n")
}

fn required<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::MissingKey(key.into()).into())
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    DatasetManifest::read(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn synth(c: &Common) -> Result<()> {
    let cfg: DatasetConfig = resolve(c.config.as_deref(), &c.set)?;
    prepare(&c.out)?;
    let manifest = generate_dataset(&cfg, &c.out)?;
    let train = manifest.split(Split::Train).count();
    write_run(
        &c.out,
        "synth",
        &cfg,
        json!({ "shapes": manifest.entries.len(), "train": train, "test": manifest.entries.len() - train }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RenderCommand {
    dataset: Option<PathBuf>,
    /// Shape ids to render; empty means every shape.
    shapes: Vec<String>,
    views: Option<usize>,
    image_size: usize,
}

impl Default for RenderCommand {
    fn default() -> Self {
        Self {
            dataset: None,
            shapes: Vec::new(),
            views: None,
            image_size: 32,
        }
    }
}

fn write_maps(dir: &Path, stem: &str, grid: &VoxelGrid, camera: &Camera) -> Result<usize> {
    let maps = render_view(grid, camera)?;
    let (w, h) = (maps.width, maps.height);
    let depth = PfmImage {
        width: w,
        height: h,
        channels: 1,
        data: maps.depth.iter().map(|&d| d as f32).collect(),
    };
    let normal = PfmImage {
        width: w,
        height: h,
        channels: 3,
        data: maps.normal.iter().flat_map(|n| n.map(|v| v as f32)).collect(),
    };
    write_pfm(&dir.join(format!("{stem}depth.pfm")), &depth)?;
    write_pfm(&dir.join(format!("{stem}normal.pfm")), &normal)?;
    write_pbm(&dir.join(format!("{stem}silhouette.pbm")), w, h, &maps.silhouette)?;
    Ok(maps.hit_count())
}

pub fn render(c: &Common) -> Result<()> {
    let cfg: RenderCommand = resolve(c.config.as_deref(), &c.set)?;
    let dataset = required(&cfg.dataset, "dataset")?;
    let manifest = load_manifest(dataset)?;
    prepare(&c.out)?;
    let ids: Vec<String> = if cfg.shapes.is_empty() {
        manifest.entries.iter().map(|e| e.id.clone()).collect()
    } else {
        cfg.shapes.clone()
    };
    let mut rendered = 0;
    for id in &ids {
        let entry = manifest.entry(id)?;
        let grid = DatasetManifest::load_shape(dataset, id)?;
        let dir = c.out.join(id);
        prepare(&dir)?;
        let count = cfg.views.unwrap_or(entry.views.len()).min(entry.views.len());
        for (k, view) in entry.views[..count].iter().enumerate() {
            let camera = Camera::new(*view, cfg.image_size, cfg.image_size, 50.0, 35.0)?;
            write_maps(&dir, &format!("{k}_"), &grid, &camera)?;
            rendered += 1;
        }
    }
    write_run(&c.out, "render", &cfg, json!({ "views_rendered": rendered }))
}

fn train_shapes(dir: &Path, manifest: &DatasetManifest) -> Result<Vec<Vec<f64>>> {
    manifest
        .split(Split::Train)
        .map(|e| {
            let grid = DatasetManifest::load_shape(dir, &e.id)?;
            Ok(grid.values().iter().map(|&v| v as f64).collect())
        })
        .collect()
}

fn final_losses(curve: &LossCurve) -> Value {
    match curve.rows.last() {
        Some(row) => curve.columns.iter().zip(row).skip(1).map(|(k, v)| (k.to_string(), json!(v))).collect(),
        None => Value::Null,
    }
}

pub fn train(c: &Common, fine: bool) -> Result<()> {
    let mut cfg: TrainConfig = resolve(c.config.as_deref(), &c.set)?;
    if fine {
        cfg.stage = Stage::Finetune;
    } else if cfg.stage == Stage::Finetune {
        return Err(UsageError("stage `finetune` is run by the finetune subcommand".into()).into());
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    let dataset = required(&cfg.dataset, "dataset")?;
    let manifest = load_manifest(dataset)?;
    if manifest.resolution != cfg.completion.resolution {
        bail!(
            "dataset resolution {} differs from the configured network resolution {}",
            manifest.resolution,
            cfg.completion.resolution
        );
    }
    prepare(&c.out)?;
    let outcome = match cfg.stage {
        Stage::Gan => train_gan(&cfg, &train_shapes(dataset, &manifest)?)?,
        stage => {
            let samples = build_samples(dataset, &manifest, Split::Train, cfg.views, cfg.completion.image_size)?;
            if stage == Stage::Finetune {
                finetune(&cfg, &samples)?
            } else {
                train_completion(&cfg, &samples)?
            }
        }
    };
    save_checkpoint(&c.out.join(CHECKPOINT), &outcome.checkpoint)?;
    write(&c.out.join("loss.csv"), outcome.curve.to_csv())?;
    let meta = &outcome.checkpoint.meta;
    let mut result = json!({
        "epoch": meta.epoch,
        "step": meta.step,
        "final_losses": final_losses(&outcome.curve),
    });
    if fine {
        result["alpha"] = json!(meta.alpha);
        result["alpha_calibration"] = json!(outcome.calibration.map(|c| json!({
            "voxel_grad_norm": c.voxel_grad_norm,
            "natural_grad_norm": c.natural_grad_norm,
        })));
        result["critic_checksum"] = json!(meta.critic_checksum);
    }
    if cfg.stage == Stage::Gan {
        result["critic_checksum"] = json!(meta.critic_checksum);
    }
    write_run(&c.out, if fine { "finetune" } else { "train" }, &cfg, result)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalCommand {
    dataset: Option<PathBuf>,
    /// Checkpoint path, or `ground-truth` to score the targets themselves.
    model: Option<String>,
    split: Split,
    views: Option<usize>,
    image_size: usize,
    cd_points: usize,
    seed: u64,
    threshold: f64,
    coarse_factor: usize,
}

impl Default for EvalCommand {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            dataset: None,
            model: None,
            split: Split::Test,
            views: None,
            image_size: 32,
            cd_points: e.cd_points,
            seed: e.seed,
            threshold: e.threshold,
            coarse_factor: e.coarse_factor,
        }
    }
}

fn families(manifest: &DatasetManifest) -> BTreeMap<String, Family> {
    manifest.entries.iter().map(|e| (e.id.clone(), e.spec.family)).collect()
}

fn load_model(spec: &str) -> Result<Box<dyn Predictor>> {
    if spec == GROUND_TRUTH_MODEL {
        return Ok(Box::new(GroundTruthModel));
    }
    let ck = load_checkpoint(Path::new(spec)).with_context(|| format!("loading checkpoint {spec}"))?;
    Ok(Box::new(ck.completion_net()?))
}

pub fn eval(c: &Common) -> Result<()> {
    let cfg: EvalCommand = resolve(c.config.as_deref(), &c.set)?;
    let dataset = required(&cfg.dataset, "dataset")?;
    let model_spec = required(&cfg.model, "model")?;
    let manifest = load_manifest(dataset)?;
    let model = load_model(model_spec)?;
    let image_size = if model_spec == GROUND_TRUTH_MODEL {
        cfg.image_size
    } else {
        load_checkpoint(Path::new(model_spec))?.completion_net()?.config().image_size
    };
    let samples = build_samples(dataset, &manifest, cfg.split, cfg.views, image_size)?;
    let eval_cfg = EvalConfig {
        cd_points: cfg.cd_points,
        seed: cfg.seed,
        threshold: cfg.threshold,
        coarse_factor: cfg.coarse_factor,
    };
    let report = evaluate(model.as_ref(), &samples, &families(&manifest), &eval_cfg)?;
    prepare(&c.out)?;
    write(&c.out.join("report.csv"), report.to_csv())?;
    let summary = report.summary();
    write(&c.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    for row in report.rows.iter().filter(|r| !r.flags.is_empty()) {
        eprintln!("warning: {} view {} flagged: {}", row.shape_id, row.view_id, row.flags.join(";"));
    }
    write_run(&c.out, "eval", &cfg, serde_json::to_value(&summary.overall)?)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CompareCommand {
    /// Baseline report CSV.
    a: Option<PathBuf>,
    /// Candidate report CSV.
    b: Option<PathBuf>,
}

fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MetricsReport::from_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn compare(c: &Common) -> Result<()> {
    let cfg: CompareCommand = resolve(c.config.as_deref(), &c.set)?;
    let a = read_report(required(&cfg.a, "a")?)?;
    let b = read_report(required(&cfg.b, "b")?)?;
    let table = compare_reports(&a, &b)?;
    prepare(&c.out)?;
    write(&c.out.join("delta.csv"), table.to_csv())?;
    let summary = table.summary();
    write(&c.out.join("delta_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    write_run(&c.out, "compare", &cfg, serde_json::to_value(&summary)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExportCommand {
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    shape_id: Option<String>,
    view_id: usize,
    threshold: f64,
}

impl Default for ExportCommand {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            shape_id: None,
            view_id: 0,
            threshold: 0.5,
        }
    }
}

pub fn export_mesh(c: &Common) -> Result<()> {
    let cfg: ExportCommand = resolve(c.config.as_deref(), &c.set)?;
    let dataset = required(&cfg.dataset, "dataset")?;
    let id = required(&cfg.shape_id, "shape_id")?;
    let net = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?)?.completion_net()?;
    let manifest = load_manifest(dataset)?;
    let entry = manifest.entry(id)?;
    let view = entry
        .views
        .get(cfg.view_id)
        .ok_or_else(|| Error::NotFound(format!("view {} of shape `{id}`", cfg.view_id)))?;
    let truth = DatasetManifest::load_shape(dataset, id)?;
    let w = net.config().image_size;
    let sample = Sample {
        shape_id: id.clone(),
        view: cfg.view_id,
        input: observation_input(&truth, view, w)?,
        target: Vec::new(),
    };
    let values = net.predict(&sample)?;
    let n = net.config().resolution;
    let pred = VoxelGrid::from_values(n, values.iter().map(|&v| (v >= cfg.threshold) as u8 as f32).collect())?;
    prepare(&c.out)?;
    let pred_mesh = extract_surface_mesh(&pred, 0.5)?;
    let truth_mesh = extract_surface_mesh(&truth, 0.5)?;
    if pred_mesh.is_empty() {
        eprintln!("warning: prediction for {id} view {} is empty", cfg.view_id);
    }
    pred_mesh.write_obj(&c.out.join("prediction.obj"))?;
    truth_mesh.write_obj(&c.out.join("ground_truth.obj"))?;
    let camera = Camera::new(*view, w, w, 50.0, 35.0)?;
    write_maps(&c.out, "", &truth, &camera)?;
    write_run(
        &c.out,
        "export-mesh",
        &cfg,
        json!({
            "prediction_faces": pred_mesh.quads.len(),
            "ground_truth_faces": truth_mesh.quads.len(),
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ActivationsCommand {
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    /// Encoder block index; defaults to the last one.
    layer: Option<usize>,
    k: usize,
    split: Split,
    views: Option<usize>,
}

impl Default for ActivationsCommand {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            layer: None,
            k: 5,
            split: Split::Test,
            views: None,
        }
    }
}

pub fn activations(c: &Common) -> Result<()> {
    let cfg: ActivationsCommand = resolve(c.config.as_deref(), &c.set)?;
    let dataset = required(&cfg.dataset, "dataset")?;
    let net: CompletionNet = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?)?.completion_net()?;
    let manifest = load_manifest(dataset)?;
    let layer = cfg.layer.unwrap_or(net.config().encoder_channels.len() - 1);
    let samples = build_samples(dataset, &manifest, cfg.split, cfg.views, net.config().image_size)?;
    let ranking = top_activations(&net, &samples, layer, cfg.k)?;
    prepare(&c.out)?;
    write(&c.out.join("activations.json"), serde_json::to_string_pretty(&ranking)? + "\n")?;
    let degenerate = ranking.iter().filter(|r| r.degenerate).count();
    write_run(
        &c.out,
        "activations",
        &cfg,
        json!({ "layer": layer, "units": ranking.len(), "degenerate_units": degenerate }),
    )
}
