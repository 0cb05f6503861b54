//! The `train` command: batches, metrics, checkpoints and the run directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use symvec_core::checkpoint::{self, Checkpoint};
use symvec_core::data::{BatchStream, SSLDataset, Split};
use symvec_core::eval::{accuracy, classify_batch, per_class_accuracy, quadrature_log_z, QuadratureGrid};
use symvec_core::nets::Model;
use symvec_core::trainer::{StepReport, TrainState};

use crate::config::RunConfig;
use crate::dataset::{prepare, truth_rows};
use crate::error::CliError;
use crate::svg;

pub const METRICS_HEADER: &str =
    "iter,elbo_est,recon,kl_q_p0,f_alpha_mean,chain_energy_mean,lab_acc,val_acc,wallclock_s";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Resume from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Stop (and write the final checkpoint) once this iteration is reached.
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub iteration: u64,
    pub finished: bool,
    pub test_accuracy: Option<f64>,
    pub test_per_class: Option<Vec<Option<f64>>>,
    pub test_size: usize,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Accuracy of `model` on `rows` of `ds`, or `None` if there are none.
pub fn accuracy_on(
    model: &Model,
    ds: &SSLDataset,
    rows: &[usize],
    labels: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<Option<(f64, Vec<usize>)>, CliError> {
    if rows.is_empty() {
        return Ok(None);
    }
    let preds: Vec<usize> = classify_batch(&model.prior, &model.encoder, &ds.gather(rows), n_mc, seed)?
        .into_iter()
        .map(|(_, y)| y)
        .collect();
    Ok(Some((accuracy(&preds, labels)?, preds)))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Metrics {
    grid: Option<QuadratureGrid>,
    lab: (Vec<usize>, Vec<usize>),
    val: (Vec<usize>, Vec<usize>),
    n_mc: usize,
    seed: u64,
}

impl Metrics {
    fn row(&self, model: &Model, ds: &SSLDataset, r: &StepReport, wallclock: f64) -> Result<String, CliError> {
        // log Z by quadrature in low dimension; otherwise the bound is reported
        // without it.
        let log_z = match &self.grid {
            Some(g) => quadrature_log_z(&model.prior, g)?,
            None => 0.0,
        };
        let lab = accuracy_on(model, ds, &self.lab.0, &self.lab.1, self.n_mc, self.seed)?.map(|a| a.0);
        let val = accuracy_on(model, ds, &self.val.0, &self.val.1, self.n_mc, self.seed)?.map(|a| a.0);
        Ok(format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            r.iteration,
            r.psi_objective - log_z,
            r.recon,
            r.kl,
            r.energy_pos,
            r.energy_neg,
            fmt_opt(lab),
            fmt_opt(val),
            wallclock
        ))
    }
}

/// Keeps the header and rows up to `iteration` from an earlier run.
fn truncate_metrics(path: &Path, iteration: u64) -> Result<String, CliError> {
    let mut out = format!("{METRICS_HEADER}\n");
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            match line.split(',').next().and_then(|f| f.parse::<u64>().ok()) {
                Some(it) if it <= iteration => {
                    out.push_str(line);
                    out.push('\n');
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

fn learning_curve(metrics: &str) -> String {
    let rows: Vec<Vec<&str>> = metrics.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let col = |k: usize| -> Vec<f64> {
        rows.iter().map(|r| r.get(k).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)).collect()
    };
    svg::line_chart(&col(0), &[("labeled accuracy", col(6)), ("validation accuracy", col(7))], "accuracy")
}

fn checkpoint_of(state: &TrainState, stream: &BatchStream, ds: &SSLDataset, cfg: &RunConfig) -> Checkpoint {
    Checkpoint {
        state: state.clone(),
        batches: Some(stream.state()),
        standardization: ds.standardization().cloned(),
        extra: json!({ "config": cfg.fingerprint() }),
    }
}

/// Trains according to `cfg`, writing everything under `cfg.cli.out_dir`.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary, CliError> {
    let start = Instant::now();
    let data = prepare(cfg)?;
    let ds = &data.train;
    let spec = cfg.nets.spec(ds.classes(), ds.dim());
    let out = &cfg.cli.out_dir;
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| CliError::io(&ck_dir, e))?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;

    let labeled = ds.labeled_train().len();
    let m = cfg.trainer.batch_unlabeled;
    let n = cfg.trainer.batch_labeled.min(labeled);
    let (mut state, mut stream) = match &opts.resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            if ck.extra.get("config") != Some(&cfg.fingerprint()) {
                return Err(CliError::Config(format!("{} was written with a different configuration", path.display())));
            }
            if ck.standardization.as_ref() != ds.standardization() {
                return Err(CliError::Config("checkpoint standardization does not match the data".into()));
            }
            let mut state = ck.state;
            state.config.iterations = cfg.trainer.iterations;
            let stream = BatchStream::resume(ds, m, n, cfg.seed, ck.batches.unwrap_or_default())?;
            log::info!("resuming from {} at iteration {}", path.display(), state.iteration);
            (state, stream)
        }
        None => (TrainState::new(&spec, cfg.trainer.clone(), cfg.seed)?, BatchStream::new(ds, m, n, cfg.seed)?),
    };

    let metrics_path = out.join(METRICS_FILE);
    let mut metrics_text = match opts.resume {
        Some(_) => truncate_metrics(&metrics_path, state.iteration)?,
        None => format!("{METRICS_HEADER}\n"),
    };
    write_file(&metrics_path, metrics_text.as_bytes())?;
    let mut metrics_file =
        fs::OpenOptions::new().append(true).open(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;

    let metrics = Metrics {
        grid: (spec.latent_dim <= 2).then(|| QuadratureGrid::default_for(spec.latent_dim)).transpose()?,
        lab: (ds.labeled_train(), ds.labeled_train().iter().map(|&i| ds.label(i).expect("labeled")).collect()),
        val: truth_rows(ds, Split::Val),
        n_mc: cfg.eval.n_mc,
        seed: cfg.seed,
    };
    let target = opts.stop_at.map_or(cfg.trainer.iterations, |s| s.min(cfg.trainer.iterations));
    while state.iteration < target {
        let (u, l) = stream.next_batches(ds);
        let report =
            state.step(&u.x, &l.x, &l.labels).inspect_err(|e| log::error!("iteration {}: {e}", state.iteration + 1))?;
        if !report.diverged.is_empty() {
            log::warn!("iteration {}: {} chains diverged and were redrawn", report.iteration, report.diverged.len());
        }
        if !report.skipped.is_empty() {
            log::warn!("iteration {}: skipped updates for {:?}", report.iteration, report.skipped);
        }
        if report.iteration % cfg.eval.eval_interval == 0 || report.iteration == cfg.trainer.iterations {
            let line = metrics.row(&state.model, ds, &report, start.elapsed().as_secs_f64())?;
            log::info!("{line}");
            writeln!(metrics_file, "{line}").map_err(|e| CliError::io(&metrics_path, e))?;
            metrics_text.push_str(&line);
            metrics_text.push('\n');
        }
        if cfg.cli.checkpoint_interval > 0 && report.iteration % cfg.cli.checkpoint_interval == 0 {
            let path = ck_dir.join(format!("iter_{:08}.ckpt", report.iteration));
            checkpoint::save(&path, &checkpoint_of(&state, &stream, ds, cfg))?;
        }
    }
    checkpoint::save(&out.join(FINAL_CHECKPOINT), &checkpoint_of(&state, &stream, ds, cfg))?;
    write_file(&out.join("learning_curve.svg"), learning_curve(&metrics_text).as_bytes())?;

    let finished = state.iteration >= cfg.trainer.iterations;
    let mut summary =
        TrainSummary { iteration: state.iteration, finished, test_accuracy: None, test_per_class: None, test_size: 0 };
    if let (true, Some(test)) = (finished, &data.test) {
        let (rows, labels) = truth_rows(test, Split::Test);
        if let Some((acc, preds)) = accuracy_on(&state.model, test, &rows, &labels, cfg.eval.n_mc, cfg.seed)? {
            summary.test_accuracy = Some(acc);
            summary.test_per_class = Some(per_class_accuracy(&preds, &labels, test.classes()));
            summary.test_size = rows.len();
            log::info!("test accuracy {acc:.4} on {} rows", rows.len());
        }
    }
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializes").as_bytes())?;
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "parallel": cfg!(feature = "parallel"),
        "threads": crate::threads(),
        "config": CONFIG_FILE,
        "checkpoint": FINAL_CHECKPOINT,
        "iteration": state.iteration,
        "resumed_from": opts.resume.as_ref().map(|p| p.display().to_string()),
    });
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("serializes").as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_truncation_keeps_earlier_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, format!("{METRICS_HEADER}\n10,1,,,,,,,0.1\n20,2,,,,,,,0.2\n30,3,,,,,,,0.3\n")).unwrap();
        let t = truncate_metrics(&p, 20).unwrap();
        assert_eq!(t.lines().count(), 3);
        assert!(t.ends_with("20,2,,,,,,,0.2\n"));
        assert_eq!(truncate_metrics(&dir.path().join("none"), 5).unwrap(), format!("{METRICS_HEADER}\n"));
    }
}
