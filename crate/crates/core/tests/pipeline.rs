use proptest::prelude::*;
use symvec_core::checkpoint::{self, Checkpoint};
use symvec_core::data::{make_synthetic, ssl_split, standardize, BatchStream, SyntheticKind};
use symvec_core::eval::classify_batch;
use symvec_core::nets::{DecoderKind, EbmPrior, ModelSpec};
use symvec_core::rng::{domain, stream};
use symvec_core::trainer::{TrainConfig, TrainState};

fn small_spec() -> ModelSpec {
    ModelSpec {
        latent_dim: 3,
        classes: 2,
        data_dim: 2,
        prior_hidden: vec![12],
        encoder_hidden: vec![12],
        decoder_hidden: vec![12],
        decoder: DecoderKind::Gaussian { sigma2: 0.25 },
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        iterations: 30,
        batch_unlabeled: 20,
        batch_labeled: 4,
        chains: 40,
        langevin_steps: 5,
        ..TrainConfig::default()
    }
}

fn run(state: &mut TrainState, stream_: &mut BatchStream, ds: &symvec_core::data::SSLDataset, until: u64) {
    while state.iteration < until {
        let (u, l) = stream_.next_batches(ds);
        let r = state.step(&u.x, &l.x, &l.labels).unwrap();
        assert!(r.psi_objective.is_finite());
    }
}

fn dataset() -> symvec_core::data::SSLDataset {
    let raw = make_synthetic(SyntheticKind::TwoMoons, 120, 0.1, 7).unwrap();
    standardize(&ssl_split(&raw, 4, 7).unwrap()).unwrap()
}

#[test]
fn checkpoint_resume_matches_an_unbroken_run() {
    let ds = dataset();
    let cfg = small_config();
    let mut whole = TrainState::new(&small_spec(), cfg.clone(), 11).unwrap();
    let mut whole_batches = BatchStream::new(&ds, 20, 4, 11).unwrap();
    run(&mut whole, &mut whole_batches, &ds, 30);

    let mut first = TrainState::new(&small_spec(), cfg, 11).unwrap();
    let mut batches = BatchStream::new(&ds, 20, 4, 11).unwrap();
    run(&mut first, &mut batches, &ds, 13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let ck = Checkpoint {
        state: first,
        batches: Some(batches.state()),
        standardization: ds.standardization().cloned(),
        extra: serde_json::json!({"note": "mid"}),
    };
    checkpoint::save(&path, &ck).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);

    let mut resumed = back.state;
    let mut batches = BatchStream::resume(&ds, 20, 4, 11, back.batches.unwrap()).unwrap();
    run(&mut resumed, &mut batches, &ds, 30);
    assert_eq!(resumed, whole);
}

#[test]
fn classification_is_deterministic_and_normalized() {
    let ds = dataset();
    let state = TrainState::new(&small_spec(), small_config(), 2).unwrap();
    let m = &state.model;
    let a = classify_batch(&m.prior, &m.encoder, ds.features(), 5, 9).unwrap();
    let b = classify_batch(&m.prior, &m.encoder, ds.features(), 5, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), ds.len());
    for (probs, label) in &a {
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p <= probs[*label]));
    }
}

#[cfg(feature = "parallel")]
#[test]
fn chain_updates_do_not_depend_on_thread_count() {
    let prior = EbmPrior::new(4, 3, &[16], &mut stream(1, domain::INIT, 0)).unwrap();
    let chains = symvec_core::sampler::PersistentChains::new(200, 4, 5, 0.6, 10).unwrap();
    let in_pool = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut c = chains.clone();
            c.update_all(&prior).unwrap();
            c
        })
    };
    assert_eq!(in_pool(1), in_pool(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn class_posterior_is_a_distribution(seed in any::<u64>(), z in prop::collection::vec(-5.0f64..5.0, 3)) {
        let prior = EbmPrior::new(3, 4, &[8], &mut stream(seed, domain::INIT, 0)).unwrap();
        let p = prior.class_posterior(&z).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let logits = prior.ebm_logits(&z).unwrap();
        let f = prior.marginal_energy(&z).unwrap();
        prop_assert!(logits.iter().all(|&l| l <= f + 1e-12));
    }

    #[test]
    fn labeled_split_is_balanced(n_labeled in 2usize..40, seed in any::<u64>()) {
        let raw = make_synthetic(SyntheticKind::TwoMoons, 100, 0.1, 3).unwrap();
        let ds = ssl_split(&raw, n_labeled, seed).unwrap();
        let rows = ds.labeled_train();
        prop_assert_eq!(rows.len(), n_labeled);
        let ones = rows.iter().filter(|&&i| ds.label(i) == Some(1)).count();
        prop_assert!((ones as i64 * 2 - n_labeled as i64).abs() <= 1);
        for &i in &rows {
            prop_assert_eq!(ds.label(i), ds.true_label(i));
        }
    }

    #[test]
    fn batches_cover_unlabeled_rows_once_per_epoch(seed in any::<u64>()) {
        let ds = dataset();
        let mut s = BatchStream::new(&ds, 20, 4, seed).unwrap();
        let total = s.unlabeled_len();
        let mut seen = Vec::new();
        while seen.len() < total {
            seen.extend(s.next_unlabeled());
        }
        seen.truncate(total);
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), total);
    }
}
