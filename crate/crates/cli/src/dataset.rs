//! Turns the `[data]` section into a training set (with masked labels and a
//! validation split) and an optional test set.

use symvec_core::data::{
    apply_standardization, load_csv, load_unigram, make_synthetic, ssl_split, standardize, CsvSchema, SSLDataset,
    Split, Standardization,
};
use symvec_core::rng::mix;

use crate::config::{RunConfig, Source};
use crate::error::CliError;

/// Key for the synthetic test-set seed, kept apart from the training draw.
const TEST_SEED_KEY: u64 = 0x7465_7374;

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: SSLDataset,
    pub test: Option<SSLDataset>,
}

fn csv_schema(cfg: &RunConfig) -> CsvSchema {
    CsvSchema { label_column: cfg.data.label_column.clone(), classes: cfg.data.classes.unwrap_or(0) }
}

/// Raw training rows (labels as loaded) and the raw test set.
fn load_raw(cfg: &RunConfig) -> Result<(SSLDataset, Option<SSLDataset>), CliError> {
    let d = &cfg.data;
    Ok(match d.source {
        Source::Synthetic => {
            let kind = d.synthetic_kind()?;
            let train = make_synthetic(kind, d.n, d.noise, cfg.seed)?;
            let test = (d.test_n > 0)
                .then(|| make_synthetic(kind, d.test_n, d.noise, mix(cfg.seed, TEST_SEED_KEY)))
                .transpose()?;
            (train, test)
        }
        Source::Csv => {
            let schema = csv_schema(cfg);
            let train = load_csv(d.path.as_ref().expect("validated"), &schema)?;
            let test = d.test_path.as_ref().map(|p| load_csv(p, &schema)).transpose()?;
            (train, test)
        }
        Source::Unigram => {
            let classes = d.classes.expect("validated");
            let vocab = d.vocab.as_ref().expect("validated");
            let train = load_unigram(d.triplets.as_ref().expect("validated"), vocab, d.labels.as_deref(), classes)?;
            let test = d
                .test_triplets
                .as_ref()
                .map(|t| load_unigram(t, vocab, d.test_labels.as_deref(), classes))
                .transpose()?;
            (train, test)
        }
    })
}

/// The configured test set before standardization.
pub fn load_test(cfg: &RunConfig) -> Result<Option<SSLDataset>, CliError> {
    Ok(load_raw(cfg)?.1)
}

/// Test rows get the training standardization; `None` leaves them raw.
pub fn prepare_test(test: SSLDataset, params: Option<&Standardization>) -> Result<SSLDataset, CliError> {
    let mut test = match params {
        Some(p) => apply_standardization(&test, p)?,
        None => test,
    };
    test.set_split(Split::Test);
    Ok(test)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let (raw, test) = load_raw(cfg)?;
    let mut train = match cfg.data.n_labeled {
        Some(n) => ssl_split(&raw, n, cfg.seed)?,
        None => raw,
    };
    if train.labeled_train().is_empty() {
        return Err(CliError::Config("training data has no labeled rows".into()));
    }
    train.hold_out_validation(cfg.data.validation_fraction, cfg.seed)?;
    if cfg.data.standardize && !train.is_counts() {
        train = standardize(&train)?;
    }
    let test = test.map(|t| prepare_test(t, train.standardization())).transpose()?;
    if let Some(t) = &test {
        if t.dim() != train.dim() {
            return Err(CliError::Config(format!("test data has {} features, training data {}", t.dim(), train.dim())));
        }
    }
    Ok(Prepared { train, test })
}

/// Rows of `ds` in `split` that carry a ground-truth label, with the labels.
pub fn truth_rows(ds: &SSLDataset, split: Split) -> (Vec<usize>, Vec<usize>) {
    ds.rows_where(|i| ds.split(i) == split).into_iter().filter_map(|i| ds.true_label(i).map(|y| (i, y))).unzip()
}
