use std::collections::BTreeSet;

use pkws::adapt::{alpha_grid, scm_combine, scm_frr, scm_grid_search, GateKind, TrmConfig, TrmModule};
use pkws::autodiff::{cosine, norm, normalized, softmax_in_place, Checkpoint, ParamStore, Tensor};
use pkws::dataset::{mix_seed, MtlBatchSampler, Synthesizer, SyntheticConfig, TrmBatchSampler, TrmMode};
use pkws::eval::{eer, far_at_frr, far_frr_curve, frr_at_far, ScoreSet};
use pkws::features::{frame_count, FeatureConfig, FeatureExtractor, Waveform};
use pkws::model::CosineClassifier;
use pkws::verify::{brute_eer, brute_far_at_frr, brute_frr_at_far};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so ties are common.
fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![(-20i32..20).prop_map(|v| v as f64 / 10.0), -3.0f64..3.0],
        1..max,
    )
}

fn score_set() -> impl Strategy<Value = ScoreSet> {
    (scores(60), scores(60)).prop_map(|(p, n)| ScoreSet::new(p, n).unwrap())
}

fn rate() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(0.01),
        Just(0.05),
        Just(0.1),
        Just(0.5),
        Just(1.0),
        0.0f64..1.0
    ]
}

proptest! {
    #[test]
    fn curve_is_monotone(s in score_set()) {
        let c = far_frr_curve(&s);
        for w in c.windows(2) {
            prop_assert!(w[0].delta < w[1].delta);
            prop_assert!(w[1].far <= w[0].far);
            prop_assert!(w[1].frr >= w[0].frr);
        }
        for p in &c {
            prop_assert_eq!(p.far, s.far(p.delta));
            prop_assert_eq!(p.frr, s.frr(p.delta));
        }
    }

    #[test]
    fn reported_operating_points_lie_on_the_curve(s in score_set(), r in rate()) {
        let c = far_frr_curve(&s);
        let on = |delta: f64| c.iter().find(|p| p.delta == delta).copied();
        let (e, d) = eer(&s);
        let p = on(d).expect("eer threshold is a candidate");
        prop_assert_eq!(e, (p.far + p.frr) / 2.0);
        let (frr, d) = frr_at_far(&s, r);
        let p = on(d).expect("frr threshold is a candidate");
        prop_assert!(p.far <= r);
        prop_assert_eq!(frr, p.frr);
        let (far, d) = far_at_frr(&s, r);
        let p = on(d).expect("far threshold is a candidate");
        prop_assert!(p.frr <= r);
        prop_assert_eq!(far, p.far);
    }

    #[test]
    fn sweeps_match_brute_force(s in score_set(), r in rate()) {
        prop_assert_eq!(eer(&s), brute_eer(&s));
        prop_assert_eq!(frr_at_far(&s, r), brute_frr_at_far(&s, r));
        prop_assert_eq!(far_at_frr(&s, r), brute_far_at_frr(&s, r));
    }

    /// FAR at an FRR budget equals FRR at the same FAR budget once classes
    /// are swapped and scores negated. The thresholds differ (strict vs.
    /// non-strict acceptance), the rates do not.
    #[test]
    fn mirror_symmetry(s in score_set(), r in rate()) {
        prop_assert_eq!(far_at_frr(&s, r).0, frr_at_far(&s.mirrored(), r).0);
        prop_assert_eq!(frr_at_far(&s, r).0, far_at_frr(&s.mirrored(), r).0);
        // EER ties may resolve to different points; the closest gap is shared.
        let gap = |s: &ScoreSet| far_frr_curve(s).iter().map(|p| (p.far - p.frr).abs()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(gap(&s), gap(&s.mirrored()));
    }

    #[test]
    fn shifting_all_scores_keeps_rates(s in score_set(), shift in -5.0f64..5.0, r in rate()) {
        // Dyadic shift keeps the score order exact.
        let shift = (shift * 8.0).round() / 8.0;
        let moved = ScoreSet::new(
            s.positives.iter().map(|v| v + shift).collect(),
            s.negatives.iter().map(|v| v + shift).collect(),
        ).unwrap();
        prop_assert_eq!(eer(&s).0, eer(&moved).0);
        prop_assert_eq!(frr_at_far(&s, r).0, frr_at_far(&moved, r).0);
    }

    #[test]
    fn blend_is_affine_and_monotone(k in -1.0f64..1.0, s in -1.0f64..1.0, a in 0.0f64..=1.0, dk in 0.0f64..1.0, ds in 0.0f64..1.0) {
        let v = scm_combine(k, s, a).unwrap();
        prop_assert!((v - (s + a * (k - s))).abs() < 1e-12);
        prop_assert!(v >= k.min(s) - 1e-12 && v <= k.max(s) + 1e-12);
        prop_assert!(scm_combine(k + dk, s, a).unwrap() >= v - 1e-12);
        prop_assert!(scm_combine(k, s + ds, a).unwrap() >= v - 1e-12);
    }

    #[test]
    fn blend_rejects_alpha_outside_unit_interval(a in prop_oneof![-5.0f64..-1e-9, 1.0f64 + 1e-9..5.0]) {
        prop_assert!(scm_combine(0.1, 0.2, a).is_err());
    }

    /// The searched α is a minimizer over the whole grid, and the largest one.
    #[test]
    fn grid_search_is_optimal(
        seed in any::<u64>(),
        n in 4usize..80,
        c in prop_oneof![Just(0.01), Just(0.1), 0.0f64..0.5],
        step in prop_oneof![Just(0.01), Just(0.05), Just(0.1), Just(0.25)],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<(f64, f64, bool)> = (0..n)
            .map(|_| {
                let label = rng.random_bool(0.4);
                let shift = if label { 0.3 } else { 0.0 };
                (rng.random_range(-1.0..1.0) + shift, rng.random_range(-1.0..1.0) + shift, label)
            })
            .collect();
        samples.push((0.0, 0.0, true));
        samples.push((0.0, 0.0, false));
        let (alpha, frr) = scm_grid_search(&samples, c, step).unwrap();
        let grid = alpha_grid(step).unwrap();
        let all: Vec<f64> = grid.iter().map(|&a| scm_frr(&samples, a, c).unwrap()).collect();
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(frr, min);
        let last = grid.iter().zip(&all).filter(|(_, f)| **f == min).map(|(a, _)| *a).last().unwrap();
        prop_assert_eq!(alpha, last);
    }

    #[test]
    fn softmax_rows_are_distributions(row in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let mut p = row.clone();
        softmax_in_place(&mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = row.iter().map(|v| v + 7.0).collect();
        let mut q = shifted;
        softmax_in_place(&mut q);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_gives_unit_norm(v in prop::collection::vec(-10.0f64..10.0, 1..30), c in 0.01f64..100.0) {
        prop_assume!(norm(&v) > 1e-6);
        prop_assert!((norm(&normalized(&v)) - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert!((cosine(&v, &scaled) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classifier_outputs_are_scale_free_distributions(
        seed in any::<u64>(),
        classes in 2usize..8,
        d in 2usize..6,
        c in 0.01f64..100.0,
        w in -10.0f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Tensor::new(vec![d, classes], (0..d * classes).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let clf = CosineClassifier::new(weight, w, rng.random_range(-5.0..5.0)).unwrap();
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
        let p = clf.classify(&z).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let zc: Vec<f64> = z.iter().map(|x| x * c).collect();
        for (a, b) in p.iter().zip(clf.classify(&zc).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let loss = clf.loss(&z, 0).unwrap();
        prop_assert!(loss >= 0.0 && (loss + p[0].ln()).abs() < 1e-12);
    }

    #[test]
    fn frame_count_matches_window_enumeration(n in 0usize..5000, window in 1usize..600, shift in 1usize..300) {
        let brute = (0..).take_while(|t| t * shift + window <= n).count();
        prop_assert_eq!(frame_count(n, window, shift), brute);
    }

    #[test]
    fn extracted_frames_follow_the_formula(n in 480usize..20000, seed in any::<u64>()) {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform { samples: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), sample_rate: 16000 };
        let f = ex.log_mel(&w).unwrap();
        prop_assert_eq!(f.frames, frame_count(n, 480, 160));
        prop_assert_eq!(f.data.len(), f.frames * 40);
        prop_assert!(f.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_sampler_is_a_reproducible_permutation(n in 1usize..300, b in 1usize..64, seed in any::<u64>()) {
        let b = b.min(n);
        let mut s1 = MtlBatchSampler::new(n, b, seed).unwrap();
        let mut s2 = MtlBatchSampler::new(n, b, seed).unwrap();
        for _ in 0..3 {
            let e1 = s1.epoch();
            prop_assert_eq!(&e1, &s2.epoch());
            prop_assert_eq!(e1.len(), s1.batches_per_epoch());
            let seen: BTreeSet<usize> = e1.iter().flatten().copied().collect();
            prop_assert_eq!(seen.len(), n);
            prop_assert_eq!(e1.iter().map(Vec::len).sum::<usize>(), n);
        }
    }

    #[test]
    fn attention_gate_lies_in_unit_interval(seed in any::<u64>(), d in 1usize..8, per_embedding in any::<bool>()) {
        let mut cfg = TrmConfig::new(TrmMode::To, d, seed);
        if per_embedding {
            cfg.gate = GateKind::PerEmbedding;
        }
        let mut m = TrmModule::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[1]));
        for (id, name, t) in m.params().clone().iter() {
            if !name.starts_with("loss.") {
                let v = (0..t.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
                *m.params_mut().get_mut(id) = Tensor::new(t.shape().to_vec(), v).unwrap();
            }
        }
        let zk: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zs: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assume!(norm(&zk) > 1e-3 && norm(&zs) > 1e-3);
        let u = m.forward(&zk, &zs).unwrap();
        prop_assert_eq!(u.len(), 2 * d);
        let gate = m.gate(&pkws::adapt::trm_input(&zk, &zs).unwrap());
        prop_assert!(gate.iter().all(|&a| a > 0.0 && a < 1.0));
        if per_embedding {
            prop_assert!(gate[..d].iter().all(|&a| a == gate[0]));
            prop_assert!(gate[d..].iter().all(|&a| a == gate[d]));
        }
        let s = m.score((&zk, &zs), (&zk, &zs)).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoints_round_trip(values in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 1..20), 1..6)) {
        let mut params = ParamStore::new();
        for (i, v) in values.iter().enumerate() {
            params.insert(&format!("p{i}"), Tensor::vector(v.clone())).unwrap();
        }
        let ck = Checkpoint { config: "{\"x\":1}".into(), params };
        let back = Checkpoint::from_bytes(&ck.to_bytes(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, ck);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_sampler_is_reproducible_and_well_formed(seed in any::<u64>(), rows in 2usize..6, to in any::<bool>()) {
        let mut cfg = SyntheticConfig::new(10, 6, 2, seed % 1000);
        cfg.unknown_words = 1;
        let utts = Synthesizer::new(cfg).unwrap().utterances();
        let mode = if to { TrmMode::To } else { TrmMode::Tb };
        let mut a = TrmBatchSampler::new(&utts, rows, mode, 0.5, seed).unwrap();
        let mut b = TrmBatchSampler::new(&utts, rows, mode, 0.5, seed).unwrap();
        for _ in 0..20 {
            let x = a.sample();
            prop_assert_eq!(&x, &b.sample());
            prop_assert_eq!(x.len(), rows);
            let mut kws: Vec<&str> = x.iter().map(|&i| utts[i].keyword.as_str()).collect();
            prop_assert!(x.iter().all(|&i| utts[i].is_anchor_keyword() && utts[i].speaker.is_some()));
            kws.sort_unstable();
            kws.dedup();
            prop_assert_eq!(kws.len(), a.group_sizes().len());
            if !to {
                prop_assert_eq!(kws.len(), rows);
            }
        }
    }
}
