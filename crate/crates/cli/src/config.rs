//! Run configuration: a TOML file whose sections mirror the library modules.
//!
//! Environment variables `SYMVEC_<SECTION>__<KEY>` override keys after the
//! file is read (`SYMVEC_SEED` for top-level keys); values are parsed as TOML
//! scalars and fall back to strings. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symvec_core::data::SyntheticKind;
use symvec_core::eval::diagnostics::DiagnoseOptions;
use symvec_core::eval::DEFAULT_N_MC;
use symvec_core::nets::{DecoderKind, ModelSpec};
use symvec_core::trainer::TrainConfig;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "SYMVEC_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Csv,
    Unigram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: Source,
    /// `two_moons`, `gauss_mixture` or `pinwheel`.
    pub kind: String,
    pub n: usize,
    pub noise: f64,
    /// Mixture components for `gauss_mixture`.
    pub components: usize,
    /// Synthetic test-set size (drawn with an independent seed).
    pub test_n: usize,
    /// Labels kept for training; `None` keeps the file's labels as they are.
    pub n_labeled: Option<usize>,
    pub validation_fraction: f64,
    pub standardize: bool,
    pub path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub classes: Option<usize>,
    pub triplets: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_triplets: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: Source::Synthetic,
            kind: "two_moons".into(),
            n: 1010,
            noise: 0.1,
            components: 8,
            test_n: 1000,
            n_labeled: Some(10),
            validation_fraction: 0.1,
            standardize: true,
            path: None,
            test_path: None,
            label_column: None,
            classes: None,
            triplets: None,
            vocab: None,
            labels: None,
            test_triplets: None,
            test_labels: None,
        }
    }
}

impl DataSection {
    pub fn synthetic_kind(&self) -> Result<SyntheticKind, CliError> {
        let kind: SyntheticKind = self
            .kind
            .parse()
            .map_err(|_| CliError::Config(format!("data.kind: unknown synthetic kind {:?}", self.kind)))?;
        Ok(match kind {
            SyntheticKind::GaussMixture { .. } => SyntheticKind::GaussMixture { components: self.components },
            k => k,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderVariant {
    Gaussian,
    Multinomial,
}

/// Architecture; `classes` and `data_dim` come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetsSection {
    pub latent_dim: usize,
    pub prior_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub decoder: DecoderVariant,
    pub sigma2: f64,
}

impl Default for NetsSection {
    fn default() -> Self {
        NetsSection {
            latent_dim: 8,
            prior_hidden: vec![200, 200],
            encoder_hidden: vec![200, 200],
            decoder_hidden: vec![200, 200],
            decoder: DecoderVariant::Gaussian,
            sigma2: 0.25,
        }
    }
}

impl NetsSection {
    pub fn spec(&self, classes: usize, data_dim: usize) -> ModelSpec {
        ModelSpec {
            latent_dim: self.latent_dim,
            classes,
            data_dim,
            prior_hidden: self.prior_hidden.clone(),
            encoder_hidden: self.encoder_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            decoder: match self.decoder {
                DecoderVariant::Gaussian => DecoderKind::Gaussian { sigma2: self.sigma2 },
                DecoderVariant::Multinomial => DecoderKind::Multinomial,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_mc: usize,
    /// Iterations between metrics rows.
    pub eval_interval: u64,
    pub diagnose: DiagnoseOptions,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { n_mc: DEFAULT_N_MC, eval_interval: 100, diagnose: DiagnoseOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliSection {
    pub out_dir: PathBuf,
    /// Iterations between numbered checkpoints; 0 disables them (the final
    /// checkpoint is always written).
    pub checkpoint_interval: u64,
}

impl Default for CliSection {
    fn default() -> Self {
        CliSection { out_dir: PathBuf::from("runs/default"), checkpoint_interval: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub nets: NetsSection,
    pub trainer: TrainConfig,
    pub eval: EvalSection,
    pub cli: CliSection,
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `(name, value)` pairs of the form `SYMVEC_SECTION__KEY` (and
/// `SYMVEC_SEED`). Other `SYMVEC_` variables belong to the test harness and
/// fault injection and are ignored.
pub fn apply_overrides<I>(table: &mut toml::Table, vars: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        if rest != "SEED" && !rest.contains("__") {
            continue;
        }
        let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("malformed override {name}")));
        }
        let mut cur = &mut *table;
        for seg in &path[..path.len() - 1] {
            let entry = cur.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("override {name}: {seg} is not a section")))?;
        }
        cur.insert(path[path.len() - 1].clone(), parse_scalar(&raw));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: Vec<(String, String)>) -> Result<Self, CliError> {
        // Deserializing the text directly keeps line/column in error messages.
        toml::from_str::<RunConfig>(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, std::env::vars().collect())
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.trainer.validate().map_err(|e| CliError::Config(format!("trainer: {e}")))?;
        if self.eval.eval_interval == 0 {
            return Err(CliError::Config("eval.eval_interval must be positive".into()));
        }
        if self.eval.n_mc == 0 {
            return Err(CliError::Config("eval.n_mc must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(CliError::Config("data.validation_fraction must be in [0, 1)".into()));
        }
        if self.nets.latent_dim == 0 {
            return Err(CliError::Config("nets.latent_dim must be positive".into()));
        }
        match self.data.source {
            Source::Synthetic => {
                self.data.synthetic_kind()?;
            }
            Source::Csv => {
                if self.data.path.is_none() || self.data.classes.is_none() {
                    return Err(CliError::Config("csv data needs data.path and data.classes".into()));
                }
            }
            Source::Unigram => {
                if self.data.triplets.is_none() || self.data.vocab.is_none() || self.data.classes.is_none() {
                    return Err(CliError::Config(
                        "unigram data needs data.triplets, data.vocab and data.classes".into(),
                    ));
                }
                if self.nets.decoder != DecoderVariant::Multinomial {
                    return Err(CliError::Config("unigram data needs nets.decoder = \"multinomial\"".into()));
                }
            }
        }
        Ok(())
    }

    /// The configuration as embedded in checkpoints: everything that affects
    /// the trajectory, without the output location.
    pub fn fingerprint(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.cli.out_dir = PathBuf::new();
        c.trainer.iterations = 0;
        serde_json::to_value(c).expect("config serializes")
    }
}
