use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentId};
use super::dataset::{example_mask, measure, training_examples, Phantom};
use super::experiments::{run_experiment, ExperimentOutcome};
use super::manifest::{read_manifest, RunManifest, RunRecorder, MANIFEST_NAME};
use crate::error::{PixcueError, Result};
use crate::io::{
    csv_string, encode_mask, encode_pgm, encode_pxi, encode_pxp, read_complex_pxi, read_mask, read_pxi, read_pxp,
    PxiData,
};
use crate::net::{
    init_params, load_checkpoint, train_with_validation, write_checkpoint, Checkpoint, ForwardMode, NetworkParameters,
};
use crate::quantizer::{expectation_image, ClassProbabilityVolume};
use crate::uncertainty::{
    exact_variance_map, fast_variance_map, mc_dropout_variance, mc_mean_distribution_variance, McConfig,
};
use crate::{KSpaceGrid, SamplingMask};

fn config_json(cfg: &impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

/// Writes phantoms, noiseless undersampled k-space, and masks for both sets.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut rec = RunRecorder::new("simulate", out, config_json(cfg)?)?;
    rec.seed("phantoms", cfg.phantoms.seed);
    rec.seed("validation", cfg.validation.seed);
    rec.seed("mask", cfg.mask.seed);
    let sets = [
        ("train", rec.timed("generate train", || cfg.phantoms.generate())?, cfg.mask.clone()),
        ("validation", rec.timed("generate validation", || cfg.validation.generate())?, cfg.validation_mask(&cfg.mask)),
    ];
    for (name, phantoms, mask_spec) in &sets {
        for (i, p) in phantoms.iter().enumerate() {
            let mask = example_mask(mask_spec, p.image.rows(), i)?;
            let y_u = measure(&p.image, &mask, 0.0, 0)?;
            rec.write(&format!("{name}/{}.pxi", p.id), &encode_pxi(&PxiData::Real(p.image.clone())))?;
            rec.write(&format!("{name}/{}_kspace.pxi", p.id), &encode_pxi(&PxiData::Complex(y_u.into())))?;
            rec.write(&format!("{name}/{}.mask", p.id), encode_mask(&mask).as_bytes())?;
        }
    }
    rec.finish()
}

/// Trains on the training set, selecting on the validation set.
pub fn train_model(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let training = cfg
        .training
        .as_ref()
        .ok_or_else(|| PixcueError::Config("config has no training section".into()))?;
    let train = training_examples(&cfg.phantoms.generate()?, &cfg.mask)?;
    let val = training_examples(&cfg.validation.generate()?, &cfg.validation_mask(&cfg.mask))?;
    let params = init_params(&training.arch, training.seed)?;
    let mut ck = train_with_validation(params, &train, &val, training)?;
    ck.mask_spec = Some(cfg.mask.clone());
    Ok(ck)
}

pub fn loss_csv(ck: &Checkpoint) -> String {
    let rows: Vec<Vec<String>> = ck
        .history
        .iter()
        .map(|h| vec![h.epoch.to_string(), format!("{:.9e}", h.train), format!("{:.9e}", h.validation)])
        .collect();
    csv_string(&["epoch", "train_loss", "validation_loss"], &rows)
}

/// Writes `model.pxc` and `loss.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(Checkpoint, RunManifest)> {
    cfg.validate()?;
    let mut rec = RunRecorder::new("train", out, config_json(cfg)?)?;
    if let Some(t) = &cfg.training {
        rec.seed("training", t.seed);
    }
    rec.seed("phantoms", cfg.phantoms.seed);
    rec.seed("mask", cfg.mask.seed);
    let ck = rec.timed("train", || train_model(cfg))?;
    rec.write("model.pxc", &write_checkpoint(&ck)?)?;
    rec.write("loss.csv", loss_csv(&ck).as_bytes())?;
    Ok((ck, rec.finish()?))
}

fn read_kspace(path: &Path) -> Result<KSpaceGrid> {
    Ok(read_complex_pxi(path)?.into())
}

/// Writes `recon.pxi` and `probs.pxp`.
pub fn cmd_reconstruct(checkpoint: &Path, kspace: &Path, mask_path: &Path, out: &Path) -> Result<RunManifest> {
    let ck = load_checkpoint(checkpoint)?;
    let y_u = read_kspace(kspace)?;
    let mask = read_mask(mask_path)?;
    let echo = serde_json::json!({ "checkpoint": checkpoint, "kspace": kspace, "mask": mask_path });
    let mut rec = RunRecorder::new("reconstruct", out, echo)?;
    let volume = rec.timed("forward", || crate::net::forward(&y_u, &mask, &ck.params, ForwardMode::Deterministic))?;
    let recon = expectation_image(&volume)?;
    rec.write("recon.pxi", &encode_pxi(&PxiData::Real(recon)))?;
    rec.write("probs.pxp", &encode_pxp(&volume))?;
    rec.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMethod {
    PixcueExact,
    PixcueFast,
    Mc,
    McMeandist,
}

impl std::str::FromStr for UncertaintyMethod {
    type Err = PixcueError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixcue-exact" => Ok(Self::PixcueExact),
            "pixcue-fast" => Ok(Self::PixcueFast),
            "mc" => Ok(Self::Mc),
            "mc-meandist" => Ok(Self::McMeandist),
            _ => Err(PixcueError::Config(format!(
                "unknown method {s:?} (expected pixcue-exact, pixcue-fast, mc, mc-meandist)"
            ))),
        }
    }
}

/// Source of an uncertainty estimate: a stored volume or a model plus data.
#[derive(Debug, Clone)]
pub enum UncertaintyInput {
    Volume(PathBuf),
    Model { checkpoint: PathBuf, kspace: PathBuf, mask: PathBuf },
}

fn input_model(input: &UncertaintyInput) -> Result<(NetworkParameters, KSpaceGrid, SamplingMask)> {
    match input {
        UncertaintyInput::Model { checkpoint, kspace, mask } => {
            Ok((load_checkpoint(checkpoint)?.params, read_kspace(kspace)?, read_mask(mask)?))
        }
        UncertaintyInput::Volume(_) => Err(PixcueError::Config(
            "MC methods need a checkpoint, k-space and mask instead of a volume".into(),
        )),
    }
}

fn input_volume(input: &UncertaintyInput) -> Result<ClassProbabilityVolume> {
    match input {
        UncertaintyInput::Volume(p) => read_pxp(p),
        UncertaintyInput::Model { .. } => {
            let (params, y_u, mask) = input_model(input)?;
            crate::net::forward(&y_u, &mask, &params, ForwardMode::Deterministic)
        }
    }
}

/// Writes `uncertainty.pxi`.
pub fn cmd_uncertainty(input: &UncertaintyInput, method: UncertaintyMethod, mc: &McConfig, out: &Path) -> Result<RunManifest> {
    let echo = match input {
        UncertaintyInput::Volume(p) => serde_json::json!({ "probs": p, "method": method }),
        UncertaintyInput::Model { checkpoint, kspace, mask } => serde_json::json!({
            "checkpoint": checkpoint, "kspace": kspace, "mask": mask, "method": method, "mc": mc,
        }),
    };
    let mut rec = RunRecorder::new("uncertainty", out, echo)?;
    rec.seed("mc", mc.seed);
    let map = match method {
        UncertaintyMethod::PixcueExact => {
            let v = input_volume(input)?;
            rec.timed("pixcue-exact", || exact_variance_map(&v))?
        }
        UncertaintyMethod::PixcueFast => {
            let v = input_volume(input)?;
            rec.timed("pixcue-fast", || fast_variance_map(&v))?
        }
        UncertaintyMethod::Mc => {
            let (params, y_u, mask) = input_model(input)?;
            rec.timed("mc", || mc_dropout_variance(&y_u, &mask, &params, mc))?
        }
        UncertaintyMethod::McMeandist => {
            let (params, y_u, mask) = input_model(input)?;
            rec.timed("mc-meandist", || mc_mean_distribution_variance(&y_u, &mask, &params, mc))?
        }
    };
    rec.write("uncertainty.pxi", &encode_pxi(&PxiData::Real(map.into_image())))?;
    rec.finish()
}

/// Loads the configured checkpoint, or trains one and stores it in `out`.
pub fn obtain_model(cfg: &ExperimentConfig, out: &Path) -> Result<Checkpoint> {
    match &cfg.checkpoint {
        Some(path) => load_checkpoint(path),
        None => Ok(cmd_train(cfg, &out.join("model"))?.0),
    }
}

/// Runs one experiment into `out/<id>`.
pub fn cmd_experiment(
    id: ExperimentId,
    cfg: &ExperimentConfig,
    params: &NetworkParameters,
    validation: &[Phantom],
    out: &Path,
) -> Result<ExperimentOutcome> {
    let mut echo = cfg.clone();
    echo.experiment = Some(id);
    let rec = RunRecorder::new(id.label(), &out.join(id.label()), config_json(&echo)?)?;
    run_experiment(id, cfg, params, validation, rec)
}

fn collect_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PixcueError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| PixcueError::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(&path, found)?;
        } else {
            found.push(path);
        }
    }
    Ok(())
}

/// Summarizes a report directory and rasterizes every real-valued map to PGM.
/// Returns the summary text, also written to `summary.txt`.
pub fn cmd_report(dir: &Path, rasterize: bool) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(PixcueError::InvalidArgument(format!("{} contains no files", dir.display())));
    }
    let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
    let mut text = format!("report for {}\n\n", dir.display());
    let csvs: Vec<&PathBuf> = files.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    text.push_str(&format!("CSV files ({}):\n", csvs.len()));
    for p in &csvs {
        let content = std::fs::read_to_string(p).map_err(|e| PixcueError::io(p, e))?;
        let rows = content.lines().count().saturating_sub(1);
        let header = content.lines().next().unwrap_or("");
        text.push_str(&format!("  {} ({rows} rows): {header}\n", rel(p)));
    }
    for p in files.iter().filter(|p| p.file_name().is_some_and(|n| n == "checks.json")) {
        let checks: Vec<serde_json::Value> =
            serde_json::from_slice(&std::fs::read(p).map_err(|e| PixcueError::io(p, e))?)?;
        text.push_str(&format!("\nchecks in {}:\n", rel(p)));
        for c in checks {
            let mark = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
            text.push_str(&format!("  {mark} {}: {}\n", c["name"].as_str().unwrap_or(""), c["detail"].as_str().unwrap_or("")));
        }
    }
    let mut rasters = Vec::new();
    if rasterize {
        for p in files.iter().filter(|p| p.extension().is_some_and(|e| e == "pxi")) {
            if let PxiData::Real(img) = read_pxi(p)? {
                let target = p.with_extension("pgm");
                crate::io::write_atomic(&target, encode_pgm(&img).as_bytes())?;
                rasters.push(rel(&target));
            }
        }
        text.push_str(&format!("\nrasterized {} maps to PGM\n", rasters.len()));
    }
    std::fs::write(dir.join("summary.txt"), &text).map_err(|e| PixcueError::io(dir, e))?;
    register_report_files(dir, &rasters)?;
    Ok(text)
}

/// Adds report outputs to an existing manifest so it keeps listing every file.
fn register_report_files(dir: &Path, rasters: &[String]) -> Result<()> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut rec = if manifest_path.exists() {
        RunRecorder::resume(dir, read_manifest(dir)?)
    } else {
        RunRecorder::new("report", dir, serde_json::json!({ "dir": dir }))?
    };
    for r in rasters.iter().map(String::as_str).chain(["summary.txt"]) {
        let path = dir.join(r);
        rec.record(r, &std::fs::read(&path).map_err(|e| PixcueError::io(&path, e))?);
    }
    rec.finish()?;
    Ok(())
}
