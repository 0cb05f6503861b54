//! `eval`, `sample` and `diagnose`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use symvec_core::checkpoint::{self, Checkpoint};
use symvec_core::data::{load_csv, CsvSchema, Split, Standardization};
use symvec_core::eval::diagnostics::{run_battery, CheckRecord, DiagnoseOptions};
use symvec_core::eval::per_class_accuracy;
use symvec_core::nets::{DecoderKind, Model};
use symvec_core::rng::{domain, mix, stream};
use symvec_core::sampler::PersistentChains;

use crate::config::RunConfig;
use crate::dataset::{self, prepare_test, truth_rows};
use crate::error::CliError;
use crate::run::accuracy_on;
use crate::svg;

/// The run configuration stored in a checkpoint.
pub fn checkpoint_config(ck: &Checkpoint) -> Result<RunConfig, CliError> {
    let value = ck
        .extra
        .get("config")
        .cloned()
        .ok_or_else(|| CliError::Config("checkpoint carries no run configuration".into()))?;
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("checkpoint configuration: {e}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub iteration: u64,
    pub n: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Test accuracy of a checkpoint. The test set is `data` (a CSV in the
/// training schema) if given, otherwise the test set named by the run
/// configuration stored in the checkpoint.
pub fn evaluate(
    path: &Path,
    data: Option<&Path>,
    n_mc: Option<usize>,
    seed: Option<u64>,
) -> Result<EvalReport, CliError> {
    let ck = checkpoint::load(path)?;
    let cfg = checkpoint_config(&ck)?;
    let raw = match data {
        Some(p) => Some(load_csv(
            p,
            &CsvSchema {
                label_column: cfg.data.label_column.clone().or_else(|| Some("label".into())),
                classes: ck.state.model.prior.classes(),
            },
        )?),
        None => dataset::load_test(&cfg)?,
    };
    let raw = raw.ok_or_else(|| CliError::Config("no test data: pass --data or configure a test set".into()))?;
    let test = prepare_test(raw, ck.standardization.as_ref())?;
    let (rows, labels) = truth_rows(&test, Split::Test);
    let n_mc = n_mc.unwrap_or(cfg.eval.n_mc);
    let seed = seed.unwrap_or(cfg.seed);
    let model = &ck.state.model;
    let (acc, preds) = accuracy_on(model, &test, &rows, &labels, n_mc, seed)?
        .ok_or_else(|| CliError::Config("test data has no labeled rows".into()))?;
    let k = model.prior.classes();
    let mut confusion = vec![vec![0; k]; k];
    for (&y, &p) in labels.iter().zip(&preds) {
        confusion[y][p] += 1;
    }
    Ok(EvalReport {
        checkpoint: path.display().to_string(),
        iteration: ck.state.iteration,
        n: rows.len(),
        n_mc,
        seed,
        accuracy: acc,
        per_class: per_class_accuracy(&preds, &labels, k),
        confusion,
    })
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub count: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub latent_dim: usize,
    pub data_dim: usize,
    /// `count x d` prior samples.
    pub z: Vec<f64>,
    /// `count x D` decoder means, in the original feature units.
    pub x: Vec<f64>,
    pub diverged: usize,
}

/// Runs fresh Langevin chains on the prior of `model` and decodes them.
pub fn sample(
    model: &Model,
    standardization: Option<&Standardization>,
    opts: &SampleOptions,
) -> Result<Samples, CliError> {
    let d = model.prior.latent_dim();
    let dd = model.decoder.obs_dim();
    if opts.count == 0 {
        return Ok(Samples { latent_dim: d, data_dim: dd, z: vec![], x: vec![], diverged: 0 });
    }
    let mut chains = PersistentChains::new(opts.count, d, mix(opts.seed, domain::SAMPLE), opts.step_size, opts.steps)?;
    let update = chains.update_all(&model.prior)?;
    let mut x = model.decoder.mean(&update.samples)?;
    if let (Some(s), DecoderKind::Gaussian { .. }) = (standardization, model.decoder.kind()) {
        for row in x.chunks_mut(dd) {
            for ((v, m), sd) in row.iter_mut().zip(&s.mean).zip(&s.std) {
                *v = *v * sd + m;
            }
        }
    }
    Ok(Samples { latent_dim: d, data_dim: dd, z: update.samples, x, diverged: update.diverged.len() })
}

/// Writes `samples.csv` (and `samples.svg` for 2-D data) to `out`.
pub fn write_samples(samples: &Samples, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let header: Vec<String> = (0..samples.latent_dim)
        .map(|j| format!("z{j}"))
        .chain((0..samples.data_dim).map(|j| format!("x{j}")))
        .collect();
    let mut text = header.join(",") + "\n";
    let rows = samples.z.len() / samples.latent_dim;
    for i in 0..rows {
        let z = &samples.z[i * samples.latent_dim..(i + 1) * samples.latent_dim];
        let x = &samples.x[i * samples.data_dim..(i + 1) * samples.data_dim];
        let fields: Vec<String> = z.iter().chain(x).map(f64::to_string).collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    let csv_path = out.join("samples.csv");
    fs::write(&csv_path, text).map_err(|e| CliError::io(&csv_path, e))?;
    let mut written = vec![csv_path];
    let plot = match (samples.data_dim, samples.latent_dim) {
        (2, _) => Some((&samples.x, "decoded prior samples")),
        (_, 2) => Some((&samples.z, "latent prior samples")),
        _ => None,
    };
    if let Some((points, title)) = plot {
        let svg_path = out.join("samples.svg");
        fs::write(&svg_path, svg::scatter(points, None, title)).map_err(|e| CliError::io(&svg_path, e))?;
        written.push(svg_path);
    }
    Ok(written)
}

/// The diagnostic battery; failing checks become [`CliError::DiagnoseFailed`]
/// after the records are handed to `report`.
pub fn diagnose(
    model: &Model,
    opts: &DiagnoseOptions,
    report: impl FnOnce(&[CheckRecord]),
) -> Result<Vec<CheckRecord>, CliError> {
    let records = run_battery(model, opts)?;
    report(&records);
    let failed: Vec<String> = records.iter().filter(|r| !r.pass).map(|r| r.check.clone()).collect();
    if failed.is_empty() {
        Ok(records)
    } else {
        Err(CliError::DiagnoseFailed(failed))
    }
}

/// A freshly initialized model for the configuration (dimensions from data).
pub fn fresh_model(cfg: &RunConfig) -> Result<Model, CliError> {
    let data = dataset::prepare(cfg)?;
    let spec = cfg.nets.spec(data.train.classes(), data.train.dim());
    Ok(Model::new(&spec, &mut stream(cfg.seed, domain::INIT, 0))?)
}
