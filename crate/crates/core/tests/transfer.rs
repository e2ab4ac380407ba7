use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use tmascore::forest::train_forest;
use tmascore::transfer::{run_experiment, split, tma_score, tma_transfer, AuxSet, SplitOptions, TransferConfig};
use tmascore::{seed, ForestParams, LabeledInstance, Score};

fn score(c: usize) -> Score {
    Score::new(c as i64).unwrap()
}

/// Four Gaussian-ish clusters in `p` dimensions.
fn clusters(rng: &mut impl Rng, n: usize, p: usize, noise: f64, prefix: &str) -> Vec<LabeledInstance> {
    (0..n)
        .map(|i| {
            let c = rng.random_range(0..4);
            let f: Vec<f64> = (0..p)
                .map(|j| if j % 4 == c { 1.0 } else { 0.0 } + noise * (rng.random::<f64>() - 0.5))
                .collect();
            LabeledInstance::new(format!("{prefix}{i}"), f, score(c), prefix)
        })
        .collect()
}

fn config(trees: usize, seed: u64) -> TransferConfig {
    TransferConfig {
        forest: ForestParams {
            trees,
            seed,
            ..ForestParams::default()
        },
        ..TransferConfig::default()
    }
}

fn ids(xs: &[LabeledInstance]) -> BTreeSet<String> {
    xs.iter().map(|x| x.id.clone()).collect()
}

#[test]
fn empty_aux_gives_equal_arms() {
    let mut rng = seed::rng(1);
    let train = clusters(&mut rng, 40, 4, 2.0, "t");
    let test = clusters(&mut rng, 40, 4, 2.0, "q");
    for aux in [vec![], vec![AuxSet::new("empty", vec![])]] {
        let r = tma_score(&train, &aux, &test, &config(30, 5)).unwrap();
        assert_eq!(r.accuracy_with_transfer, r.accuracy_without_transfer);
        assert_eq!(r.transferred, 0);
        assert_eq!(r.rho_before, r.rho_after);
    }
}

#[test]
fn unanimity_threshold_only_keeps_unanimous_votes() {
    let mut rng = seed::rng(2);
    let train = clusters(&mut rng, 60, 4, 1.5, "t");
    let aux = clusters(&mut rng, 60, 4, 1.5, "a");
    let model = train_forest(&train, &ForestParams { trees: 25, ..ForestParams::default() }).unwrap();
    let f = tma_transfer(&model, &aux, 25, 1.0).unwrap();
    assert!(f.confidences.iter().all(|&c| c == 1.0));
    for x in &f.instances {
        assert_eq!(model.predict_votes(&x.features).unwrap().get(x.label), 25);
    }
    assert!(tma_transfer(&model, &aux, 24, 0.1).is_err());
    assert!(tma_transfer(&model, &aux, 25, 1.5).is_err());
}

#[test]
fn transferred_set_is_reverifiable() {
    let mut rng = seed::rng(3);
    let train = clusters(&mut rng, 60, 5, 2.0, "t");
    let aux = clusters(&mut rng, 80, 5, 2.5, "a");
    let model = train_forest(&train, &ForestParams { trees: 31, ..ForestParams::default() }).unwrap();
    let f = tma_transfer(&model, &aux, 31, 0.1).unwrap();
    assert!(!f.is_empty());
    assert!(f.verify(&model, 0.1).unwrap().is_empty());
    // Output follows input order.
    let pos: Vec<usize> = f.instances.iter().map(|x| aux.iter().position(|a| a.id == x.id).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn test_images_never_enter_training() {
    let mut rng = seed::rng(4);
    let train = clusters(&mut rng, 30, 4, 2.0, "t");
    let test = clusters(&mut rng, 30, 4, 2.0, "q");
    let leaked = AuxSet::new("leak", vec![test[3].clone()]);
    assert!(tma_score(&train, &[leaked], &test, &config(10, 0)).is_err());
    let overlap = vec![train[0].clone()];
    assert!(tma_score(&train, &[], &overlap, &config(10, 0)).is_err());
}

#[test]
fn shared_aux_image_counts_once_for_first_source() {
    let mut rng = seed::rng(5);
    let train = clusters(&mut rng, 60, 4, 1.0, "t");
    let test = clusters(&mut rng, 40, 4, 1.0, "q");
    let a = clusters(&mut rng, 30, 4, 1.0, "a");
    let b: Vec<_> = a.iter().take(10).cloned().chain(clusters(&mut rng, 10, 4, 1.0, "b")).collect();
    let r = tma_score(&train, &[AuxSet::new("A", a), AuxSet::new("B", b)], &test, &config(30, 1)).unwrap();
    assert_eq!(r.sources[0].candidates, 30);
    assert_eq!(r.sources[1].candidates, 10);
    assert_eq!(r.transferred, r.sources[0].transferred + r.sources[1].transferred);
}

#[test]
fn pooled_arm_is_reported_when_requested() {
    let mut rng = seed::rng(6);
    let train = clusters(&mut rng, 40, 4, 2.0, "t");
    let test = clusters(&mut rng, 40, 4, 2.0, "q");
    let aux = vec![AuxSet::new("A", clusters(&mut rng, 40, 4, 2.0, "a"))];
    let mut cfg = config(20, 2);
    assert!(tma_score(&train, &aux, &test, &cfg).unwrap().accuracy_pooled.is_none());
    cfg.pooled_baseline = true;
    let r = tma_score(&train, &aux, &test, &cfg).unwrap();
    assert!(r.accuracy_pooled.is_some());
    assert!(r.sources[0].accuracy_source_only.is_some());
}

#[test]
fn splits_are_seeded_and_disjoint() {
    let mut rng = seed::rng(7);
    let data = clusters(&mut rng, 41, 3, 1.0, "x");
    let (tr, te) = split(&data, &SplitOptions::default(), 9).unwrap();
    assert_eq!(tr.len() + te.len(), 41);
    assert!(ids(&tr).is_disjoint(&ids(&te)));
    assert_eq!(split(&data, &SplitOptions::default(), 9).unwrap().0, tr);
    assert_ne!(split(&data, &SplitOptions::default(), 10).unwrap().0, tr);
    let strat = SplitOptions {
        stratified: true,
        ..SplitOptions::default()
    };
    let (tr, _) = split(&data, &strat, 9).unwrap();
    for c in 0..4 {
        let total = data.iter().filter(|x| x.label == score(c)).count();
        let kept = tr.iter().filter(|x| x.label == score(c)).count();
        assert!(kept.abs_diff(total / 2) <= 1, "class {c}: {kept} of {total}");
    }
    let bad = SplitOptions {
        train_fraction: 1.0,
        ..SplitOptions::default()
    };
    assert!(split(&data, &bad, 0).is_err());
}

#[test]
fn experiment_runs_use_distinct_splits_and_repeat_exactly() {
    let mut rng = seed::rng(8);
    let primary = clusters(&mut rng, 60, 4, 2.0, "p");
    let aux = vec![AuxSet::new("A", clusters(&mut rng, 40, 4, 2.0, "a"))];
    let cfg = config(20, 3);
    let a = run_experiment(&primary, &aux, &cfg, &SplitOptions::default(), 2).unwrap();
    let b = run_experiment(&primary, &aux, &cfg, &SplitOptions::default(), 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.runs, 2);
    assert_ne!(a.run_records[0].test_ids, a.run_records[1].test_ids);
    assert_ne!(a.run_records[0].seed, a.run_records[1].seed);
    assert!(run_experiment(&primary, &aux, &cfg, &SplitOptions::default(), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn higher_beta_gives_subset(s in any::<u64>(), b1 in 0.0f64..1.0, b2 in 0.0f64..1.0) {
        let (lo, hi) = (b1.min(b2), b1.max(b2));
        let mut rng = seed::rng(s);
        let train = clusters(&mut rng, 40, 4, 2.0, "t");
        let aux = clusters(&mut rng, 40, 4, 2.5, "a");
        let model = train_forest(&train, &ForestParams { trees: 20, seed: s, ..ForestParams::default() }).unwrap();
        let f_lo = tma_transfer(&model, &aux, 20, lo).unwrap();
        let f_hi = tma_transfer(&model, &aux, 20, hi).unwrap();
        prop_assert!(ids(&f_hi.instances).is_subset(&ids(&f_lo.instances)));
        prop_assert!(f_lo.verify(&model, lo).unwrap().is_empty());
    }

    #[test]
    fn membership_ignores_aux_order(s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let train = clusters(&mut rng, 40, 4, 2.0, "t");
        let mut aux = clusters(&mut rng, 40, 4, 2.5, "a");
        let model = train_forest(&train, &ForestParams { trees: 20, seed: s, ..ForestParams::default() }).unwrap();
        let before = ids(&tma_transfer(&model, &aux, 20, 0.1).unwrap().instances);
        aux.shuffle(&mut rng);
        let after = ids(&tma_transfer(&model, &aux, 20, 0.1).unwrap().instances);
        prop_assert_eq!(before, after);
    }
}
