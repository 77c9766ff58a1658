//! Subcommand implementations.
//!
//! Each function takes resolved CLI arguments, performs one workflow end
//! to end, prints human-readable results to stdout and returns a
//! [`CliError`] carrying the process exit code on failure.
//!
//! The `GAZECLIP_WEIGHTS` environment variable names a weight archive
//! that is loaded wherever a *freshly initialized* model stands in for
//! the pretrained towers: the starting point of `train`, and the
//! direction-assignment model of `train`, `evaluate`, `assign-prompts`
//! and `predict`. Checkpointed weights always win for prediction itself,
//! and `ablate` cells intentionally run from their own seeded
//! initializations.

use crate::checkpoint::{load_checkpoint, load_weights, save_checkpoint, Checkpoint};
use crate::config::{parse_config, FileConfig};
use crate::dataset::{load_dataset, load_groups};
use crate::error::{read_file, resolve_near, write_file, CliError};
use crate::imagefile::{open_image, preprocess, save_image};
use crate::overlay::render_overlay;
use crate::report::{collect_runs, render_metrics, render_report, RunRecord, METRICS_FILE};
use gazeclip_core::encoder::ImageTensor;
use gazeclip_core::geometry::GazeAngles;
use gazeclip_core::manifest::{render_manifest, FaceSample};
use gazeclip_core::model::GazeClipModel;
use gazeclip_core::prompt::DirectionClass;
use gazeclip_core::split::{plan_kfold, plan_loso, FoldSpec, SplitPlan};
use gazeclip_core::train::{
    evaluate, prepare_dataset, train_from, ExperimentConfig, Protocol, TrainObserver,
    TrainSnapshot,
};
use gazeclip_core::ablation::{run_ablation, AblationSuite};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Name of the environment variable pointing at a weight archive.
pub const WEIGHTS_ENV: &str = "GAZECLIP_WEIGHTS";

fn weights_from_env() -> Option<PathBuf> {
    std::env::var_os(WEIGHTS_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Build the model a config describes, honoring `GAZECLIP_WEIGHTS`.
fn init_model(config: &ExperimentConfig) -> Result<GazeClipModel, CliError> {
    let mut model = config.build_model();
    if let Some(path) = weights_from_env() {
        load_weights(&mut model, &path)?;
        println!("loaded weights from {}", path.display());
    }
    Ok(model)
}

/// Explicit subject groups for the three-fold protocol, one list per fold.
type SubjectGroups = Vec<Vec<String>>;

/// Parse a config file and resolve its `groups` reference.
fn load_config(path: &Path) -> Result<(FileConfig, Option<SubjectGroups>), CliError> {
    let text = read_file(path)?;
    let file = parse_config(&text, &path.display().to_string())?;
    let groups = match &file.groups {
        Some(rel) => Some(load_groups(&resolve_near(path, rel))?),
        None => None,
    };
    Ok((file, groups))
}

/// Split plan for a protocol over manifest rows.
fn build_plan(
    protocol: Protocol,
    metas: &[FaceSample],
    groups: Option<&[Vec<String>]>,
) -> Result<SplitPlan, CliError> {
    let plan = match protocol {
        Protocol::Loso => plan_loso(metas)?,
        Protocol::Kfold3 => plan_kfold(metas, 3, groups)?,
    };
    Ok(plan)
}

fn fold_of(plan: &SplitPlan, index: usize) -> Result<&FoldSpec, CliError> {
    plan.folds.get(index).ok_or_else(|| {
        CliError::Contract(format!(
            "fold {index} is out of range: the plan has {} folds (0..={})",
            plan.folds.len(),
            plan.folds.len() - 1
        ))
    })
}

fn run_record(config: &ExperimentConfig, fold: usize, metrics: gazeclip_core::train::MetricsReport, epoch_losses: Vec<f64>) -> RunRecord {
    RunRecord {
        fold,
        protocol: config.protocol.as_str().to_string(),
        backbone: config.backbone.as_str().to_string(),
        fusion_mode: config.fusion_mode.as_str().to_string(),
        prompt_mode: config.prompt_mode.as_str().to_string(),
        seed: config.seed,
        metrics,
        epoch_losses,
    }
}

/// Per-epoch checkpoint writer: `checkpoint.gzcp` always holds the latest
/// epoch, `best.gzcp` the epoch with the lowest mean training loss (the
/// only in-run signal — folds carry no validation split), and `abort.gzcp`
/// is a best-effort diagnostic written if training hits a non-finite loss.
struct CheckpointWriter<'a> {
    dir: &'a Path,
    config: &'a ExperimentConfig,
    best_loss: f64,
}

impl CheckpointWriter<'_> {
    fn write(&self, name: &str, snapshot: &TrainSnapshot<'_>) -> Result<(), CliError> {
        save_checkpoint(
            &self.dir.join(name),
            self.config,
            snapshot.model,
            snapshot.adam,
            snapshot.epoch,
            snapshot.steps_done,
            snapshot.epoch_mean_loss,
        )
    }
}

impl TrainObserver for CheckpointWriter<'_> {
    fn epoch_end(&mut self, snapshot: &TrainSnapshot<'_>) -> Result<(), String> {
        self.write("checkpoint.gzcp", snapshot).map_err(|e| e.to_string())?;
        if snapshot.epoch_mean_loss < self.best_loss {
            self.best_loss = snapshot.epoch_mean_loss;
            self.write("best.gzcp", snapshot).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn numerical_abort(&mut self, snapshot: &TrainSnapshot<'_>) {
        if let Err(e) = self.write("abort.gzcp", snapshot) {
            eprintln!("warning: could not write diagnostic checkpoint: {e}");
        } else {
            eprintln!("diagnostic checkpoint written to {}", self.dir.join("abort.gzcp").display());
        }
    }
}

/// `gazeclip train --config <file> --fold <i> [--out <dir>]`
pub fn cmd_train(config_path: &Path, fold: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    let (file, groups) = load_config(config_path)?;
    let config = file.experiment;
    let manifest_path = resolve_near(config_path, &config.manifest);
    let items = load_dataset(&manifest_path)?;
    let metas: Vec<FaceSample> = items.iter().map(|(m, _)| m.clone()).collect();
    let plan = build_plan(config.protocol, &metas, groups.as_deref())?;
    let fold_spec = fold_of(&plan, fold)?.clone();

    let out_dir = out.unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-fold{fold}", &config.hash()[..8]))
    });
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io("create directory", &out_dir, e))?;

    let start = Instant::now();
    let model = init_model(&config)?;
    let dataset = prepare_dataset(&model, &items, config.prompt_mode).map_err(CliError::from)?;
    let mut writer = CheckpointWriter { dir: &out_dir, config: &config, best_loss: f64::INFINITY };
    let outcome = train_from(&config, model, &dataset, &fold_spec, &mut writer)?;
    let mut metrics = evaluate(&outcome.model, &dataset, &fold_spec, &config.hash())?;
    metrics.wall_clock_secs = start.elapsed().as_secs_f64();

    let mut losses = String::from("step,loss\n");
    for (i, loss) in outcome.report.step_losses.iter().enumerate() {
        losses.push_str(&format!("{},{loss}\n", i + 1));
    }
    write_file(&out_dir.join("losses.csv"), losses.as_bytes())?;
    let record = run_record(&config, fold, metrics, outcome.report.epoch_losses.clone());
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| CliError::Contract(format!("cannot encode run record: {e}")))?;
    write_file(&out_dir.join(METRICS_FILE), json.as_bytes())?;

    println!(
        "trained fold {fold} of {} ({}): {} steps over {} epochs",
        plan.folds.len(),
        config.protocol,
        outcome.report.steps,
        outcome.report.epochs_completed
    );
    if let Some(last) = record.epoch_losses.last() {
        println!("final epoch mean training loss: {last:.6}");
    }
    print!("{}", render_metrics(&record.metrics));
    println!("outputs in {}", out_dir.display());
    Ok(())
}

/// `gazeclip evaluate --checkpoint <file> --manifest <file> --fold <i>`
pub fn cmd_evaluate(
    checkpoint_path: &Path,
    manifest_path: &Path,
    fold: usize,
    groups_path: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let Checkpoint { config, model, epoch, .. } = load_checkpoint(checkpoint_path)?;
    let items = load_dataset(manifest_path)?;
    let metas: Vec<FaceSample> = items.iter().map(|(m, _)| m.clone()).collect();
    let groups = groups_path.map(|p| load_groups(&p)).transpose()?;
    let plan = build_plan(config.protocol, &metas, groups.as_deref())?;
    let fold_spec = fold_of(&plan, fold)?.clone();

    // Missing directions are assigned exactly as training would: by the
    // freshly initialized towers this config describes, not the
    // fine-tuned ones in the checkpoint.
    let assigner = init_model(&config)?;
    let dataset = prepare_dataset(&assigner, &items, config.prompt_mode).map_err(CliError::from)?;

    let start = Instant::now();
    let mut metrics = evaluate(&model, &dataset, &fold_spec, &config.hash())?;
    metrics.wall_clock_secs = start.elapsed().as_secs_f64();

    println!(
        "checkpoint {} (epoch {epoch}) on fold {fold} of {} ({})",
        checkpoint_path.display(),
        plan.folds.len(),
        config.protocol
    );
    print!("{}", render_metrics(&metrics));
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io("create directory", &dir, e))?;
        let record = run_record(&config, fold, metrics, Vec::new());
        let json = serde_json::to_string_pretty(&record)
            .map_err(|e| CliError::Contract(format!("cannot encode run record: {e}")))?;
        write_file(&dir.join(METRICS_FILE), json.as_bytes())?;
        println!("record written to {}", dir.join(METRICS_FILE).display());
    }
    Ok(())
}

/// `gazeclip ablate --suite <name> --config <file> [--fold <i>]`
pub fn cmd_ablate(
    suite_name: &str,
    config_path: &Path,
    fold: usize,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let suite: AblationSuite = suite_name.parse().map_err(CliError::contract)?;
    let (file, groups) = load_config(config_path)?;
    let config = file.experiment;
    let manifest_path = resolve_near(config_path, &config.manifest);
    let items = load_dataset(&manifest_path)?;
    let metas: Vec<FaceSample> = items.iter().map(|(m, _)| m.clone()).collect();
    let plan = build_plan(config.protocol, &metas, groups.as_deref())?;
    let fold_spec = fold_of(&plan, fold)?.clone();

    let table = run_ablation(suite, &config, &items, &fold_spec);
    let rendered = table.render();
    print!("{rendered}");
    if let Some(dir) = out {
        write_file(&dir.join(format!("{}.txt", suite.as_str())), rendered.as_bytes())?;
        let json = serde_json::to_string_pretty(&table)
            .map_err(|e| CliError::Contract(format!("cannot encode table: {e}")))?;
        write_file(&dir.join(format!("{}.json", suite.as_str())), json.as_bytes())?;
        println!("table written to {}", dir.join(format!("{}.{{txt,json}}", suite.as_str())).display());
    }
    Ok(())
}

/// `gazeclip assign-prompts --manifest <file>`
pub fn cmd_assign_prompts(
    manifest_path: &Path,
    config_path: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let config = match config_path {
        Some(path) => load_config(&path)?.0.experiment,
        None => ExperimentConfig { manifest: manifest_path.display().to_string(), ..Default::default() },
    };
    let items = load_dataset(manifest_path)?;
    let model = init_model(&config)?;
    let dataset = prepare_dataset(&model, &items, config.prompt_mode).map_err(CliError::from)?;
    let metas: Vec<FaceSample> = dataset.iter().map(|s| s.meta.clone()).collect();

    let rendered = render_manifest(&metas).map_err(CliError::contract)?;
    let target = out.unwrap_or_else(|| manifest_path.to_path_buf());
    write_file(&target, rendered.as_bytes())?;

    let mut counts = [0usize; 4];
    for meta in &metas {
        if let Some(class) = meta.direction {
            counts[class.ordinal() - 1] += 1;
        }
    }
    println!("assigned directions for {} samples:", metas.len());
    for class in DirectionClass::ALL {
        println!("  {}: {}", class.as_str(), counts[class.ordinal() - 1]);
    }
    println!("manifest written to {} (angles in radians)", target.display());
    Ok(())
}

/// `gazeclip predict --checkpoint <file> --image <file> [--overlay <out>]`
pub fn cmd_predict(
    checkpoint_path: &Path,
    image_path: &Path,
    overlay_out: Option<PathBuf>,
    truth: Option<GazeAngles>,
) -> Result<(), CliError> {
    let Checkpoint { config, model, .. } = load_checkpoint(checkpoint_path)?;
    let decoded = open_image(image_path)?;
    let tensor: ImageTensor = preprocess(&decoded);

    // Same assignment rule as training: freshly initialized towers.
    let assigner = init_model(&config)?;
    let class = assigner.assign_image(&tensor).map_err(CliError::from)?;
    let prompt = config.prompt_mode.fusion_text(class);
    let pred = model.predict(&tensor, prompt.as_deref());

    println!("direction: {}", class.as_str());
    match &prompt {
        Some(text) => println!("prompt: {text}"),
        None => println!("prompt: none (image-only pathway)"),
    }
    println!("pitch: {:.6} rad ({:.1}\u{b0})", pred.pitch, pred.pitch.to_degrees());
    println!("yaw: {:.6} rad ({:.1}\u{b0})", pred.yaw, pred.yaw.to_degrees());

    if let Some(out_path) = overlay_out {
        let rendered = render_overlay(&decoded.to_rgb8(), pred, truth)?;
        save_image(&rendered, &out_path)?;
        match truth {
            Some(_) => println!("overlay (red = truth, blue = prediction): {}", out_path.display()),
            None => println!("overlay (blue = prediction): {}", out_path.display()),
        }
    }
    Ok(())
}

/// `gazeclip report --runs <dir>`
pub fn cmd_report(runs_dir: &Path) -> Result<(), CliError> {
    let found = collect_runs(runs_dir)?;
    println!("found {} run record(s) under {}", found.len(), runs_dir.display());
    let records: Vec<RunRecord> = found.into_iter().map(|(_, r)| r).collect();
    print!("{}", render_report(&records));
    Ok(())
}
