//! Datasets for semi-supervised training.
//!
//! Labels are stored with `-1` marking unlabeled rows; the only way to read a
//! label as a class index is [`SSLDataset::label`], which returns `None` for
//! the sentinel. Ground-truth labels of masked rows are kept separately so
//! held-out accuracy can be measured.

mod batches;
mod io;
mod synthetic;

pub use batches::{Batch, BatchState, BatchStream};
pub use io::{load_csv, load_unigram, write_csv, CsvSchema};
pub use synthetic::{make_synthetic, SyntheticKind};

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, stream};

pub const UNLABELED: i64 = -1;
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SSLDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<i64>,
    truth: Vec<i64>,
    classes: usize,
    split: Vec<Split>,
    standardization: Option<Standardization>,
    counts: bool,
}

impl SSLDataset {
    /// `labels` may contain `-1`; those rows have no ground truth either.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<i64>, classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::InvalidShape(format!(
                "{} feature values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("dataset features".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y < UNLABELED || y >= classes as i64) {
            return Err(Error::InvalidLabel { label: bad, classes });
        }
        let n = labels.len();
        Ok(SSLDataset {
            features,
            dim,
            truth: labels.clone(),
            labels,
            classes,
            split: vec![Split::Train; n],
            standardization: None,
            counts: false,
        })
    }

    /// Marks the features as count vectors (unigram data).
    pub fn with_counts(mut self) -> Result<Self> {
        if self.features.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("count features must be non-negative".into()));
        }
        self.counts = true;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn is_counts(&self) -> bool {
        self.counts
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Visible label of row `i`, `None` when unlabeled.
    pub fn label(&self, i: usize) -> Option<usize> {
        usize::try_from(self.labels[i]).ok()
    }

    /// Ground-truth label of row `i` (survives masking), when known.
    pub fn true_label(&self, i: usize) -> Option<usize> {
        usize::try_from(self.truth[i]).ok()
    }

    /// Raw visible labels including the `-1` sentinel.
    pub fn raw_labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn split(&self, i: usize) -> Split {
        self.split[i]
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn rows_where(&self, f: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| f(i)).collect()
    }

    /// Training rows carrying a visible label.
    pub fn labeled_train(&self) -> Vec<usize> {
        self.rows_where(|i| self.split[i] == Split::Train && self.label(i).is_some())
    }

    /// Training rows without a visible label.
    pub fn unlabeled_train(&self) -> Vec<usize> {
        self.rows_where(|i| self.split[i] == Split::Train && self.label(i).is_none())
    }

    /// Features of `rows`, row-major.
    pub fn gather(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect()
    }

    /// Moves a random `fraction` of the unlabeled training rows to the
    /// validation split.
    pub fn hold_out_validation(&mut self, fraction: f64, seed: u64) -> Result<usize> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let mut pool = self.unlabeled_train();
        pool.shuffle(&mut stream(seed, domain::DATA, 1));
        let k = (pool.len() as f64 * fraction).round() as usize;
        for &i in &pool[..k] {
            self.split[i] = Split::Val;
        }
        Ok(k)
    }

    pub fn set_split(&mut self, split: Split) {
        self.split.iter_mut().for_each(|s| *s = split);
    }
}

/// Keeps exactly `n_labeled` labels, spread over the classes as evenly as the
/// data allow, and masks the rest with `-1`.
pub fn ssl_split(ds: &SSLDataset, n_labeled: usize, seed: u64) -> Result<SSLDataset> {
    let k = ds.classes;
    if n_labeled < k {
        return Err(Error::InsufficientLabels { needed: k, got: n_labeled });
    }
    let mut rng = stream(seed, domain::DATA, 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..ds.len() {
        if let Some(y) = ds.true_label(i) {
            by_class[y].push(i);
        }
    }
    let available: usize = by_class.iter().map(Vec::len).sum();
    if available < n_labeled {
        return Err(Error::InsufficientLabels { needed: n_labeled, got: available });
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("class {c} has no examples to label")));
    }
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
    }
    // Water-filling: one label per class per round until the budget is spent.
    let mut quota = vec![0usize; k];
    let mut left = n_labeled;
    while left > 0 {
        for c in 0..k {
            if left > 0 && quota[c] < by_class[c].len() {
                quota[c] += 1;
                left -= 1;
            }
        }
    }
    let mut out = ds.clone();
    out.labels.iter_mut().for_each(|y| *y = UNLABELED);
    for (c, rows) in by_class.iter().enumerate() {
        for &i in &rows[..quota[c]] {
            out.labels[i] = c as i64;
        }
    }
    Ok(out)
}

/// Fits per-column mean and std on the training rows.
pub fn fit_standardization(ds: &SSLDataset) -> Result<Standardization> {
    let rows = ds.rows_where(|i| ds.split[i] == Split::Train);
    if rows.is_empty() {
        return Err(Error::InvalidInput("no training rows to fit standardization".into()));
    }
    let d = ds.dim;
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &rows {
        mean.iter_mut().zip(ds.row(i)).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; d];
    for &i in &rows {
        var.iter_mut().zip(ds.row(i)).zip(&mean).for_each(|((v, x), m)| *v += (x - m).powi(2) / n);
    }
    let std = var
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let s = v.sqrt();
            if s < STD_FLOOR {
                warn!("feature {j} is constant on the training split; std floored at {STD_FLOOR}");
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    Ok(Standardization { mean, std })
}

/// Standardizes with parameters fit on the training split. A dataset that is
/// already standardized is returned unchanged.
pub fn standardize(ds: &SSLDataset) -> Result<SSLDataset> {
    if ds.standardization.is_some() {
        return Ok(ds.clone());
    }
    let params = fit_standardization(ds)?;
    apply_standardization(ds, &params)
}

/// Applies stored parameters (e.g. training-split statistics to a test set).
pub fn apply_standardization(ds: &SSLDataset, params: &Standardization) -> Result<SSLDataset> {
    if ds.counts {
        return Err(Error::InvalidInput("count features are not standardized".into()));
    }
    if ds.standardization.is_some() {
        return Err(Error::InvalidInput("dataset is already standardized".into()));
    }
    if params.mean.len() != ds.dim || params.std.len() != ds.dim {
        return Err(Error::InvalidShape("standardization parameters do not match feature dimension".into()));
    }
    let mut out = ds.clone();
    for row in out.features.chunks_mut(ds.dim) {
        for ((x, m), s) in row.iter_mut().zip(&params.mean).zip(&params.std) {
            *x = (*x - m) / s;
        }
    }
    out.standardization = Some(params.clone());
    Ok(out)
}
