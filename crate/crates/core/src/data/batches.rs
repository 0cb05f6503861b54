use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SSLDataset;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Row-major features.
    pub x: Vec<f64>,
    /// Class indices; empty for unlabeled batches.
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Position of both streams; enough to resume mid-epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchState {
    pub unlabeled_epoch: u64,
    pub unlabeled_pos: usize,
    pub labeled_epoch: u64,
    pub labeled_pos: usize,
}

/// Epoch-shuffled unlabeled stream and an independently cycling labeled
/// stream. Each epoch's order is a pure function of `(seed, epoch)`, so the
/// stream state is just two counters per stream.
///
/// The unlabeled stream walks the unlabeled training rows; the last batch of
/// an epoch may be short, so every epoch partitions the set. When the
/// dataset has no unlabeled rows the labeled training rows are used instead.
/// The labeled stream wraps into a freshly shuffled epoch mid-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStream {
    seed: u64,
    m: usize,
    n: usize,
    unlabeled: Vec<usize>,
    labeled: Vec<usize>,
    unl_order: Vec<usize>,
    lab_order: Vec<usize>,
    state: BatchState,
}

impl BatchStream {
    pub fn new(ds: &SSLDataset, m: usize, n: usize, seed: u64) -> Result<Self> {
        Self::resume(ds, m, n, seed, BatchState::default())
    }

    pub fn resume(ds: &SSLDataset, m: usize, n: usize, seed: u64, state: BatchState) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("unlabeled batch size must be positive".into()));
        }
        let labeled = ds.labeled_train();
        let mut unlabeled = ds.unlabeled_train();
        if unlabeled.is_empty() {
            unlabeled = labeled.clone();
        }
        if unlabeled.is_empty() {
            return Err(Error::InvalidInput("dataset has no training rows".into()));
        }
        if state.unlabeled_pos > unlabeled.len() || state.labeled_pos > labeled.len() {
            return Err(Error::InvalidInput("batch stream state does not match dataset".into()));
        }
        let mut s = BatchStream {
            seed,
            m,
            n: if labeled.is_empty() { 0 } else { n },
            unl_order: Vec::new(),
            lab_order: Vec::new(),
            unlabeled,
            labeled,
            state,
        };
        s.unl_order = s.order(&s.unlabeled, 2 * state.unlabeled_epoch);
        s.lab_order = s.order(&s.labeled, 2 * state.labeled_epoch + 1);
        Ok(s)
    }

    fn order(&self, rows: &[usize], key: u64) -> Vec<usize> {
        let mut o = rows.to_vec();
        o.shuffle(&mut stream(self.seed, domain::BATCH, key));
        o
    }

    pub fn state(&self) -> BatchState {
        self.state
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn labeled_len(&self) -> usize {
        self.labeled.len()
    }

    /// Next unlabeled indices (up to `m`, never crossing an epoch boundary).
    pub fn next_unlabeled(&mut self) -> Vec<usize> {
        if self.state.unlabeled_pos == self.unl_order.len() {
            self.state.unlabeled_epoch += 1;
            self.state.unlabeled_pos = 0;
            self.unl_order = self.order(&self.unlabeled, 2 * self.state.unlabeled_epoch);
        }
        let start = self.state.unlabeled_pos;
        let end = (start + self.m).min(self.unl_order.len());
        self.state.unlabeled_pos = end;
        self.unl_order[start..end].to_vec()
    }

    /// Next `n` labeled indices, wrapping into new epochs as needed.
    pub fn next_labeled(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n);
        while out.len() < self.n {
            if self.state.labeled_pos == self.lab_order.len() {
                self.state.labeled_epoch += 1;
                self.state.labeled_pos = 0;
                self.lab_order = self.order(&self.labeled, 2 * self.state.labeled_epoch + 1);
            }
            let take = (self.n - out.len()).min(self.lab_order.len() - self.state.labeled_pos);
            let start = self.state.labeled_pos;
            out.extend_from_slice(&self.lab_order[start..start + take]);
            self.state.labeled_pos += take;
        }
        out
    }

    /// `(unlabeled, labeled)` batches materialized from `ds`.
    pub fn next_batches(&mut self, ds: &SSLDataset) -> (Batch, Batch) {
        let u = self.next_unlabeled();
        let l = self.next_labeled();
        let unl = Batch { x: ds.gather(&u), indices: u, labels: Vec::new() };
        let lab = Batch {
            x: ds.gather(&l),
            labels: l.iter().map(|&i| ds.label(i).expect("labeled stream holds labeled rows")).collect(),
            indices: l,
        };
        (unl, lab)
    }
}

#[cfg(test)]
mod tests {
    use super::super::ssl_split;
    use super::*;
    use proptest::prelude::*;

    fn ds(n: usize, labeled: usize) -> SSLDataset {
        let full = SSLDataset::new((0..n).map(|i| i as f64).collect(), 1, (0..n).map(|i| (i % 2) as i64).collect(), 2)
            .unwrap();
        ssl_split(&full, labeled, 0).unwrap()
    }

    proptest! {
        #[test]
        fn one_epoch_partitions_unlabeled_rows(n in 20usize..120, m in 1usize..40, seed in 0u64..500) {
            let d = ds(n, 4);
            let mut bs = BatchStream::new(&d, m, 2, seed).unwrap();
            let mut seen = Vec::new();
            while seen.len() < bs.unlabeled_len() {
                let b = bs.next_unlabeled();
                prop_assert!(!b.is_empty() && b.len() <= m);
                seen.extend(b);
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, d.unlabeled_train());
            prop_assert_eq!(bs.state().unlabeled_epoch, 0);
        }

        #[test]
        fn labeled_stream_covers_every_point(labeled in 2usize..30, n in 1usize..50, seed in 0u64..500) {
            let d = ds(60, labeled);
            let mut bs = BatchStream::new(&d, 5, n, seed).unwrap();
            let window = labeled.div_ceil(n) + 1;
            let mut seen = std::collections::BTreeSet::new();
            for _ in 0..window {
                let b = bs.next_labeled();
                prop_assert_eq!(b.len(), n);
                seen.extend(b);
            }
            prop_assert_eq!(seen.into_iter().collect::<Vec<_>>(), d.labeled_train());
        }

        #[test]
        fn resume_continues_identically(steps in 0usize..30, seed in 0u64..100) {
            let d = ds(50, 6);
            let mut a = BatchStream::new(&d, 7, 4, seed).unwrap();
            for _ in 0..steps {
                a.next_batches(&d);
            }
            let mut b = BatchStream::resume(&d, 7, 4, seed, a.state()).unwrap();
            for _ in 0..10 {
                prop_assert_eq!(a.next_batches(&d), b.next_batches(&d));
            }
        }
    }

    #[test]
    fn epochs_reshuffle() {
        let d = ds(40, 4);
        let mut bs = BatchStream::new(&d, 36, 1, 3).unwrap();
        let first = bs.next_unlabeled();
        let second = bs.next_unlabeled();
        assert_eq!(bs.state().unlabeled_epoch, 1);
        assert_eq!(first.len(), 36);
        let mut a = first.clone();
        let mut b = second.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_ne!(first, second);
    }

    #[test]
    fn labels_come_with_rows() {
        let d = ds(30, 10);
        let mut bs = BatchStream::new(&d, 4, 6, 1).unwrap();
        let (u, l) = bs.next_batches(&d);
        assert_eq!(u.x.len(), 4);
        for ((&i, &y), &x) in l.indices.iter().zip(&l.labels).zip(&l.x) {
            assert_eq!(Some(y), d.label(i));
            assert_eq!(x, i as f64);
        }
        assert!(u.indices.iter().all(|&i| d.label(i).is_none()));
    }
}
