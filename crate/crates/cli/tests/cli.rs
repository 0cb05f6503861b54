use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[data]
kind = "two_moons"
n = 210
test_n = 100

[nets]
latent_dim = 4
prior_hidden = [16]
encoder_hidden = [16]
decoder_hidden = [16]

[trainer]
iterations = 100
batch_unlabeled = 50
chains = 100
langevin_steps = 5

[eval]
n_mc = 5
eval_interval = 20

[eval.diagnose]
ula_chains = 300
tv_chains = 500
tv_burn_in = 200
tv_samples = 20
tv_thin = 50
"#;

fn symvec(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_symvec"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn symvec")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn trained(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, SMALL);
    let out = dir.join("run");
    let o = symvec(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    for f in ["config.toml", "metrics.csv", "final.ckpt", "manifest.json", "summary.json", "learning_curve.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,elbo_est,recon,kl_q_p0,f_alpha_mean,chain_energy_mean,lab_acc,val_acc,wallclock_s"
    );
    assert_eq!(lines.count(), 100 / 20);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    // The resolved config reproduces the run.
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    let again = dir.path().join("again");
    let cfg = write_config(dir.path(), &resolved);
    let o = symvec(&["train", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()], &[]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("final.ckpt")).unwrap(), fs::read(again.join("final.ckpt")).unwrap());
    roxmltree::Document::parse(&fs::read_to_string(out.join("learning_curve.svg")).unwrap()).unwrap();
}

#[test]
fn config_errors_exit_2_with_the_key_or_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[trainer]\nitertions = 5\n");
    let o = symvec(&["train", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("itertions"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "[data]\nsource = \"csv\"\npath = \"/no/such/file.csv\"\nclasses = 2\n");
    let o = symvec(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/file.csv"), "{}", stderr(&o));

    let o = symvec(&["train", "--config", "/no/such/config.toml"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = symvec(
        &["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[("SYMVEC_TRAINER__ITERATIONS", "40")],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iteration"], 40);
}

#[test]
fn eval_reports_and_checks_versions() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let ck = out.join("final.ckpt");
    let report_path = dir.path().join("report.json");
    let o = symvec(
        &["eval", "--checkpoint", ck.to_str().unwrap(), "--n-mc", "7", "--out", report_path.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    for key in ["checkpoint", "iteration", "n", "n_mc", "seed", "accuracy", "per_class", "confusion"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(report["n"], 100);
    assert_eq!(report["n_mc"], 7);
    assert_eq!(report["per_class"].as_array().unwrap().len(), 2);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // Deterministic given the seed.
    let o2 = symvec(&["eval", "--checkpoint", ck.to_str().unwrap(), "--n-mc", "7"], &[]);
    let again: serde_json::Value = serde_json::from_slice(&o2.stdout).unwrap();
    assert_eq!(again["accuracy"], report["accuracy"]);

    let mut bytes = fs::read(&ck).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    let bad = dir.path().join("future.ckpt");
    fs::write(&bad, bytes).unwrap();
    let o = symvec(&["eval", "--checkpoint", bad.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "f0,f1,label\n").unwrap();
    let o = symvec(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", empty.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sample_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let ck = out.join("final.ckpt");
    let s = |name: &str, count: &str| {
        let dest = dir.path().join(name);
        let o = symvec(
            &[
                "sample",
                "--checkpoint",
                ck.to_str().unwrap(),
                "--count",
                count,
                "--steps",
                "30",
                "--seed",
                "5",
                "--out",
                dest.to_str().unwrap(),
            ],
            &[],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        dest
    };
    let empty = s("empty", "0");
    assert_eq!(fs::read_to_string(empty.join("samples.csv")).unwrap(), "z0,z1,z2,z3,x0,x1\n");

    let a = s("a", "50");
    let b = s("b", "50");
    let text = fs::read_to_string(a.join("samples.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert_eq!(text, fs::read_to_string(b.join("samples.csv")).unwrap());
    let svg = fs::read_to_string(a.join("samples.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 50);
}

#[test]
fn diagnose_passes_fresh_models_and_catches_injected_faults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let report = dir.path().join("diag.json");
    let o = symvec(&["diagnose", "--config", cfg.to_str().unwrap(), "--out", report.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(records.iter().all(|r| r["pass"] == true));
    assert!(records.iter().any(|r| r["check"] == "sampler/ula_stationary_variance"));

    let o = symvec(&["diagnose", "--config", cfg.to_str().unwrap(), "--inject-fault"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gradient/unsup_psi_objective"), "{}", stderr(&o));

    let o = symvec(&["diagnose", "--config", cfg.to_str().unwrap()], &[("SYMVEC_INJECT_FAULT", "1")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn resume_continues_the_iteration_counter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let c = cfg.to_str().unwrap();
    let o = symvec(&["train", "--config", c, "--out", out.to_str().unwrap(), "--stop-at", "60"], &[]);
    assert!(o.status.success());
    let ck = out.join("final.ckpt");
    let saved = dir.path().join("mid.ckpt");
    fs::copy(&ck, &saved).unwrap();
    let o =
        symvec(&["train", "--config", c, "--out", out.to_str().unwrap(), "--checkpoint", saved.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iteration"], 100);
    let whole = trained(&dir.path().join("w").tap_mkdir());
    assert_eq!(fs::read(whole.join("final.ckpt")).unwrap(), fs::read(&ck).unwrap());

    // A different configuration is refused.
    let other = write_config(dir.path(), &SMALL.replace("langevin_steps = 5", "langevin_steps = 6"));
    let o = symvec(
        &[
            "train",
            "--config",
            other.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--checkpoint",
            saved.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

trait TapMkdir {
    fn tap_mkdir(self) -> Self;
}

impl TapMkdir for PathBuf {
    fn tap_mkdir(self) -> Self {
        fs::create_dir_all(&self).unwrap();
        self
    }
}
