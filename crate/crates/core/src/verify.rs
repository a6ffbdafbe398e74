//! Self-check suites: finite-difference gradients, metric sweeps against a
//! brute-force count, pair/batch protocol rules and scoring invariances.
//!
//! Each suite returns a [`SuiteOutcome`] instead of panicking so callers can
//! report every check.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adapt::{scm_combine, TrmConfig, TrmModule};
use crate::autodiff::{gradcheck, Graph, NodeId, ParamStore, Tensor};
use crate::dataset::{
    make_pair_splits, make_sv_splits, mix_seed, KeywordVocab, LabeledUtterance, PairCategory, SpeakerVocab,
    Synthesizer, SyntheticConfig, TrmBatchSampler, TrmMode,
};
use crate::error::Result;
use crate::eval::{eer, far_at_frr, far_frr_curve, frr_at_far, ScoreSet};
use crate::features::FeatureConfig;
use crate::model::{CosineClassifier, EncoderConfig, ModelConfig, MtlModel};

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn outcome(name: &'static str, start: Instant, failures: Vec<String>, ok_detail: String) -> SuiteOutcome {
    SuiteOutcome {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            ok_detail
        } else {
            failures.join("; ")
        },
        elapsed: start.elapsed(),
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .expect("shape")
}

/// Normal draws pushed at least `gap` away from zero (keeps ReLU kinks out
/// of the finite-difference window).
fn randn_away(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = randn(rng, shape);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap };
        }
    }
    t
}

const STEP: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

type Build = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>;

/// Gradient check of `build` over parameters `inputs`, reduced to a scalar
/// by a fixed random weighting of its output.
fn check_primitive(weight_seed: u64, inputs: Vec<Tensor>, build: &Build) -> Result<f64> {
    let mut store = ParamStore::new();
    for (i, t) in inputs.into_iter().enumerate() {
        store.insert(&format!("p{i}"), t)?;
    }
    let shape = {
        let mut g = Graph::new();
        let nodes: Vec<NodeId> = store.ids().map(|id| g.param(&store, id)).collect();
        let out = build(&mut g, &nodes)?;
        g.value(out).shape().to_vec()
    };
    let weights = randn(&mut ChaCha8Rng::seed_from_u64(weight_seed), &shape);
    let r = gradcheck::check(&store, STEP, |g, s| {
        let nodes: Vec<NodeId> = s.ids().map(|id| g.param(s, id)).collect();
        let out = build(g, &nodes)?;
        let w = g.constant(weights.clone());
        let m = g.mul(out, w)?;
        Ok(g.sum(m))
    })?;
    Ok(r.max_rel_error)
}

fn primitive_instance(rng: &mut ChaCha8Rng, op: &str) -> Result<f64> {
    let b = rng.random_range(1..5);
    let (m, n, k) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
    match op {
        "affine" => check_primitive(
            rng.random(),
            vec![randn(rng, &[b, m]), randn(rng, &[m, n]), randn(rng, &[n])],
            &|g, p| g.affine(p[0], p[1], p[2]),
        ),
        "matmul" => check_primitive(rng.random(), vec![randn(rng, &[m, k]), randn(rng, &[k, n])], &|g, p| {
            g.matmul(p[0], p[1])
        }),
        "transpose" => check_primitive(rng.random(), vec![randn(rng, &[m, n])], &|g, p| g.transpose(p[0])),
        "conv1d" => {
            let kernel = rng.random_range(1..4);
            let stride = rng.random_range(1..3);
            let t = kernel + rng.random_range(0..5);
            let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
            check_primitive(
                rng.random(),
                vec![
                    randn(rng, &[b, t, cin]),
                    randn(rng, &[kernel * cin, cout]),
                    randn(rng, &[cout]),
                ],
                &move |g, p| g.conv1d(p[0], p[1], p[2], kernel, stride),
            )
        }
        "relu" => check_primitive(rng.random(), vec![randn_away(rng, &[b, n], 1e-3)], &|g, p| {
            Ok(g.relu(p[0]))
        }),
        "sigmoid" => check_primitive(rng.random(), vec![randn(rng, &[b, n])], &|g, p| Ok(g.sigmoid(p[0]))),
        "mean_pool_time" => check_primitive(rng.random(), vec![randn(rng, &[b, m, n])], &|g, p| {
            g.mean_pool_time(p[0])
        }),
        "l2_normalize" => check_primitive(rng.random(), vec![randn_away(rng, &[b, n], 0.1)], &|g, p| {
            Ok(g.l2_normalize(p[0]))
        }),
        "concat" => check_primitive(rng.random(), vec![randn(rng, &[b, m]), randn(rng, &[b, n])], &|g, p| {
            g.concat(p[0], p[1])
        }),
        "mul" => check_primitive(rng.random(), vec![randn(rng, &[b, n]), randn(rng, &[b, n])], &|g, p| {
            g.mul(p[0], p[1])
        }),
        "add" => check_primitive(rng.random(), vec![randn(rng, &[b, n]), randn(rng, &[b, n])], &|g, p| {
            g.add(p[0], p[1])
        }),
        "scale_shift" => check_primitive(
            rng.random(),
            vec![randn(rng, &[b, n]), randn(rng, &[1]), randn(rng, &[1])],
            &|g, p| g.scale_shift(p[0], p[1], p[2]),
        ),
        "scale_const" => {
            let c: f64 = rng.sample(StandardNormal);
            check_primitive(rng.random(), vec![randn(rng, &[b, n])], &move |g, p| {
                Ok(g.scale_const(p[0], c))
            })
        }
        "softmax" => check_primitive(rng.random(), vec![randn(rng, &[b, n])], &|g, p| Ok(g.softmax(p[0]))),
        "nll" => {
            let classes = n.max(2);
            let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            let probs = Tensor::new(
                vec![b, classes],
                (0..b * classes).map(|_| rng.random_range(0.1..1.0)).collect(),
            )?;
            check_primitive(rng.random(), vec![probs], &move |g, p| g.nll(p[0], &targets))
        }
        "softmax_cross_entropy" => {
            let classes = n.max(2);
            let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            check_primitive(rng.random(), vec![randn(rng, &[b, classes])], &move |g, p| {
                g.softmax_cross_entropy(p[0], &targets)
            })
        }
        "select_rows" => {
            let rows: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..b)).collect();
            check_primitive(rng.random(), vec![randn(rng, &[b, n])], &move |g, p| {
                g.select_rows(p[0], &rows)
            })
        }
        "sum" => check_primitive(rng.random(), vec![randn(rng, &[b, n])], &|g, p| Ok(g.sum(p[0]))),
        "cosine_matrix" => {
            let d = n.max(2);
            check_primitive(
                rng.random(),
                vec![randn_away(rng, &[b, d], 0.1), randn_away(rng, &[m, d], 0.1)],
                &|g, p| g.cosine_matrix(p[0], p[1]),
            )
        }
        other => unreachable!("unknown primitive {other}"),
    }
}

pub const PRIMITIVES: [&str; 19] = [
    "affine",
    "matmul",
    "transpose",
    "conv1d",
    "relu",
    "sigmoid",
    "mean_pool_time",
    "l2_normalize",
    "concat",
    "mul",
    "add",
    "scale_shift",
    "scale_const",
    "softmax",
    "nll",
    "softmax_cross_entropy",
    "select_rows",
    "sum",
    "cosine_matrix",
];

/// A tiny model (3 features × 9 frames, 2 channels, 3-dim embeddings) with
/// randomized vocabularies, for gradient checks of the full losses.
pub fn tiny_model(rng: &mut ChaCha8Rng) -> Result<MtlModel> {
    let features = FeatureConfig {
        n_mels: 3,
        n_coeffs: 3,
        clip_secs: 0.11,
        ..FeatureConfig::default()
    };
    let kws = rng.random_range(2..5);
    let keywords = KeywordVocab {
        commands: (0..kws).map(|i| format!("kw{i}")).collect(),
        unknown: rng.random_bool(0.5),
        silence: rng.random_bool(0.5),
    };
    let spk = rng.random_range(2..5);
    let utts: Vec<LabeledUtterance> = (0..spk)
        .map(|s| LabeledUtterance {
            id: format!("u{s}"),
            source: crate::dataset::AudioSource::File("x.wav".into()),
            keyword: "kw0".into(),
            speaker: Some(format!("s{s}")),
            split: crate::dataset::Split::Train,
        })
        .collect();
    let mut cfg = ModelConfig::new(features, keywords, SpeakerVocab::from_utterances(&utts), rng.random());
    cfg.encoder = EncoderConfig::small(3, 2, 3);
    let mut model = MtlModel::new(cfg)?;
    // Nonzero biases keep embeddings off the origin when both ReLU channels
    // die, where normalization is singular.
    for (id, name, t) in model.params().clone().iter() {
        if name.ends_with(".b") {
            *model.params_mut().get_mut(id) = randn_away(rng, t.shape(), 0.2);
        }
    }
    // Random classifier scale/bias so the check does not sit at the defaults.
    for name in [
        "keyword_clf.scale",
        "keyword_clf.bias",
        "speaker_clf.scale",
        "speaker_clf.bias",
    ] {
        let id = model.params().id(name).expect("classifier scalar");
        *model.params_mut().get_mut(id) = Tensor::scalar(rng.random_range(-5.0..10.0));
    }
    Ok(model)
}

fn with_params(model: &MtlModel, store: &ParamStore) -> MtlModel {
    let mut m = model.clone();
    *m.params_mut() = store.clone();
    m
}

/// Keyword cross-entropy of the cosine classifier, every model parameter.
fn keyword_loss_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let model = tiny_model(rng)?;
    let b = rng.random_range(1..5);
    let x = randn(rng, &[b, 9, 3]);
    let keyword: Vec<usize> = (0..b)
        .map(|_| rng.random_range(0..model.config().keywords.len()))
        .collect();
    let r = gradcheck::check(model.params(), STEP, |g, s| {
        let m = with_params(&model, s);
        let xn = g.constant(x.clone());
        let (zk, _) = m.forward(g, xn, true)?;
        let logits = m.logits(g, "keyword", zk, true)?;
        g.softmax_cross_entropy(logits, &keyword)
    })?;
    Ok(r.max_rel_error)
}

/// `L_k + λ·L_s` with some speakerless rows.
fn multitask_loss_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let model = tiny_model(rng)?;
    let b = rng.random_range(1..5);
    let x = randn(rng, &[b, 9, 3]);
    let keyword: Vec<usize> = (0..b)
        .map(|_| rng.random_range(0..model.config().keywords.len()))
        .collect();
    let speaker: Vec<Option<usize>> = (0..b)
        .map(|_| {
            rng.random_bool(0.75)
                .then(|| rng.random_range(0..model.config().speakers.len()))
        })
        .collect();
    let lambda = rng.random_range(0.0..1.0);
    let r = gradcheck::check(model.params(), STEP, |g, s| {
        let m = with_params(&model, s);
        let xn = g.constant(x.clone());
        Ok(m.mtl_loss(g, xn, &keyword, &speaker, lambda)?.total)
    })?;
    Ok(r.max_rel_error)
}

/// Angular prototypical loss of the attention module.
fn prototypical_loss_instance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = rng.random_range(2..5);
    let mode = if rng.random_bool(0.5) { TrmMode::Tb } else { TrmMode::To };
    let mut cfg = TrmConfig::new(mode, d, rng.random());
    if rng.random_bool(0.5) {
        cfg.gate = crate::adapt::GateKind::PerEmbedding;
    }
    let mut m = TrmModule::new(cfg)?;
    // Non-zero excitation so the gate is not constant.
    for (_, name, _) in m.params().clone().iter() {
        if name.starts_with("loss.") {
            continue;
        }
        let id = m.params().id(name).expect("own parameter");
        let shape = m.params().get(id).shape().to_vec();
        *m.params_mut().get_mut(id) = randn(rng, &shape);
    }
    let n = rng.random_range(2..6);
    let q = randn_away(rng, &[n, 2 * d], 0.1);
    let p = randn_away(rng, &[n, 2 * d], 0.1);
    let r = gradcheck::check(m.params(), STEP, |g, s| {
        let mut mm = m.clone();
        *mm.params_mut() = s.clone();
        mm.loss_node(g, q.clone(), p.clone())
    })?;
    Ok(r.max_rel_error)
}

/// Every primitive and the three composed losses on `instances` random
/// cases each; passes when every relative error is below 1e-4.
pub fn gradient_suite(instances: usize, seed: u64) -> SuiteOutcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    type Inst = fn(&mut ChaCha8Rng) -> Result<f64>;
    let mut cases: Vec<(String, Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>)> = PRIMITIVES
        .iter()
        .map(|&op| {
            (
                op.to_string(),
                Box::new(move |r: &mut ChaCha8Rng| primitive_instance(r, op))
                    as Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>,
            )
        })
        .collect();
    for (name, f) in [
        ("keyword-loss", keyword_loss_instance as Inst),
        ("multitask-loss", multitask_loss_instance as Inst),
        ("prototypical-loss", prototypical_loss_instance as Inst),
    ] {
        cases.push((name.to_string(), Box::new(f)));
    }
    for (ci, (name, f)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[ci as u64]));
        let mut case_worst: f64 = 0.0;
        for _ in 0..instances {
            match f(&mut rng) {
                Ok(e) => case_worst = case_worst.max(e),
                Err(e) => {
                    failures.push(format!("{name}: {e}"));
                    break;
                }
            }
        }
        if case_worst >= GRADIENT_TOLERANCE || case_worst.is_nan() {
            failures.push(format!("{name}: max rel err {case_worst:.2e}"));
        }
        worst = worst.max(case_worst);
    }
    let n = cases.len();
    outcome(
        "gradients",
        start,
        failures,
        format!("{n} checks x {instances} instances, max rel err {worst:.2e}"),
    )
}

/// Brute-force sweep: rates by direct counting at every candidate threshold.
fn brute_rates(s: &ScoreSet) -> Vec<(f64, f64, f64)> {
    let mut deltas: Vec<f64> = s.positives.iter().chain(&s.negatives).copied().collect();
    deltas.push(f64::NEG_INFINITY);
    deltas.push(f64::INFINITY);
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    deltas
        .into_iter()
        .map(|d| {
            let fa = s.negatives.iter().filter(|&&x| x > d).count() as f64 / s.negatives.len() as f64;
            let fr = s.positives.iter().filter(|&&x| x <= d).count() as f64 / s.positives.len() as f64;
            (d, fa, fr)
        })
        .collect()
}

pub fn brute_eer(s: &ScoreSet) -> (f64, f64) {
    let rates = brute_rates(s);
    let gap = rates.iter().map(|r| (r.1 - r.2).abs()).fold(f64::INFINITY, f64::min);
    let r = rates.iter().find(|r| (r.1 - r.2).abs() == gap).expect("non-empty");
    ((r.1 + r.2) / 2.0, r.0)
}

pub fn brute_frr_at_far(s: &ScoreSet, c: f64) -> (f64, f64) {
    let r = brute_rates(s)
        .into_iter()
        .find(|r| r.1 <= c)
        .expect("+inf accepts nothing");
    (r.2, r.0)
}

pub fn brute_far_at_frr(s: &ScoreSet, target: f64) -> (f64, f64) {
    let r = brute_rates(s)
        .into_iter()
        .rev()
        .find(|r| r.2 <= target)
        .expect("-inf rejects nothing");
    (r.1, r.0)
}

/// Random score set: sizes 2–500 in total, values drawn from a small grid
/// half the time so ties are common.
pub fn random_score_set(rng: &mut ChaCha8Rng) -> ScoreSet {
    let total = rng.random_range(2..=500);
    let np = rng.random_range(1..total);
    let tied = rng.random_bool(0.5);
    let mut draw = |shift: f64| {
        if tied {
            rng.random_range(0..8) as f64 / 8.0 + if rng.random_bool(0.3) { 0.125 } else { 0.0 }
        } else {
            rng.sample::<f64, _>(StandardNormal) + shift
        }
    };
    let positives: Vec<f64> = (0..np).map(|_| draw(1.0)).collect();
    let negatives: Vec<f64> = (0..total - np).map(|_| draw(0.0)).collect();
    ScoreSet::new(positives, negatives).expect("non-empty finite")
}

/// `eer`, `frr_at_far` and `far_at_frr` against [`brute_eer`] and friends,
/// exact equality of both the rate and the threshold.
pub fn metric_oracle_suite(sets: usize, seed: u64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for i in 0..sets {
        let s = random_score_set(&mut rng);
        let c = [0.0, 0.01, 0.1, 0.25, 0.5, rng.random_range(0.0..1.0)][i % 6];
        let checks = [
            ("eer", eer(&s), brute_eer(&s)),
            ("frr_at_far", frr_at_far(&s, c), brute_frr_at_far(&s, c)),
            ("far_at_frr", far_at_frr(&s, c), brute_far_at_frr(&s, c)),
        ];
        for (name, got, want) in checks {
            if got != want {
                failures.push(format!("set {i}: {name} {got:?} != oracle {want:?}"));
            }
        }
        if failures.len() > 5 {
            break;
        }
    }
    outcome("metric-oracle", start, failures, format!("{sets} random score sets"))
}

/// Pair splits over synthetic corpora from `seeds` seeds: every pair's
/// category matches its labels, anchors are command words with a speaker,
/// each anchor contributes one pair of each keyword category, and speaker
/// pairs are balanced. Then `batches` TB batches must hold no pair of rows
/// sharing a keyword (no nts-tk negatives).
pub fn protocol_suite(seeds: usize, batches: usize) -> SuiteOutcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[900]));
        let mut cfg = SyntheticConfig::new(
            rng.random_range(6..14),
            rng.random_range(2..6),
            rng.random_range(2..4),
            seed,
        );
        cfg.unknown_words = rng.random_range(0..3);
        cfg.silence = rng.random_bool(0.5);
        let utts = match Synthesizer::new(cfg) {
            Ok(s) => s.utterances(),
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let splits = match make_pair_splits(&utts, 2, 4 * rng.random_range(1..30), seed) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        for split in &splits {
            for quad in split.pairs.chunks(4) {
                let anchor = &utts[quad[0].anchor];
                if !anchor.is_anchor_keyword() || anchor.speaker.is_none() {
                    failures.push(format!(
                        "seed {seed}: anchor {} is not a command word with a speaker",
                        anchor.id
                    ));
                }
                let cats: HashSet<PairCategory> = quad.iter().map(|p| p.category).collect();
                if quad.iter().any(|p| p.anchor != quad[0].anchor) || cats.len() != 4 {
                    failures.push(format!("seed {seed}: anchor {} lacks one pair per category", anchor.id));
                }
                for p in quad {
                    let t = &utts[p.test];
                    let same_spk = t.speaker.is_some() && t.speaker == anchor.speaker;
                    let same_kw = t.keyword == anchor.keyword;
                    let want = match (same_spk, same_kw) {
                        (true, true) => PairCategory::TsTk,
                        (false, true) => PairCategory::NtsTk,
                        (true, false) => PairCategory::TsNtk,
                        (false, false) => PairCategory::NtsNtk,
                    };
                    if p.test == p.anchor || want != p.category {
                        failures.push(format!("seed {seed}: ({}, {}) labeled {}", anchor.id, t.id, p.category));
                    }
                }
            }
        }
        match make_sv_splits(&utts, 1, 2 * rng.random_range(1..30), seed) {
            Ok(sv) => {
                for p in &sv[0].pairs {
                    let (a, t) = (&utts[p.anchor], &utts[p.test]);
                    let same = a.speaker.is_some() && a.speaker == t.speaker;
                    if p.anchor == p.test || same != (p.category == PairCategory::SameSpeaker) || t.speaker.is_none() {
                        failures.push(format!("seed {seed}: bad speaker pair ({}, {})", a.id, t.id));
                    }
                }
                let same = sv[0]
                    .pairs
                    .iter()
                    .filter(|p| p.category == PairCategory::SameSpeaker)
                    .count();
                if 2 * same != sv[0].pairs.len() {
                    failures.push(format!("seed {seed}: unbalanced speaker pairs"));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
        if failures.len() > 5 {
            break;
        }
    }

    let mut cfg = SyntheticConfig::new(12, 6, 2, 1);
    cfg.unknown_words = 2;
    cfg.silence = true;
    let utts = Synthesizer::new(cfg).expect("valid").utterances();
    let mut nts_tk = 0usize;
    match TrmBatchSampler::new(&utts, 6, TrmMode::Tb, 0.5, 3) {
        Ok(mut s) => {
            for _ in 0..batches {
                let b = s.sample();
                for (i, &x) in b.iter().enumerate() {
                    for &y in &b[i + 1..] {
                        if utts[x].keyword == utts[y].keyword {
                            nts_tk += 1;
                        }
                    }
                }
            }
        }
        Err(e) => failures.push(format!("TB sampler: {e}")),
    }
    if nts_tk > 0 {
        failures.push(format!("{nts_tk} same-keyword negatives in TB batches"));
    }
    outcome(
        "protocol",
        start,
        failures,
        format!("{seeds} corpus seeds, {batches} TB batches, 0 nts-tk negatives"),
    )
}

/// Scale invariance of the cosine classifier, the α ∈ {0, 1} blend
/// identities, input-norm invariance of the attention module and
/// monotone FAR/FRR along the threshold sweep.
pub fn invariance_suite(cases: usize, seed: u64) -> SuiteOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let close = |a: &[f64], b: &[f64], tol: f64| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
    for i in 0..cases {
        let d = rng.random_range(2..8);
        let classes = rng.random_range(2..6);
        let clf = CosineClassifier::new(
            randn(&mut rng, &[d, classes]),
            rng.random_range(1.0..20.0),
            rng.random_range(-8.0..2.0),
        );
        let clf = match clf {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("classifier: {e}"));
                break;
            }
        };
        let z: Vec<f64> = randn_away(&mut rng, &[d], 0.1).into_data();
        let c = rng.random_range(1e-3..1e3);
        let zc: Vec<f64> = z.iter().map(|v| v * c).collect();
        match (clf.classify(&z), clf.classify(&zc)) {
            (Ok(a), Ok(b)) if close(&a, &b, 1e-12) => {}
            other => failures.push(format!("case {i}: classifier not scale invariant: {other:?}")),
        }

        let (pk, ps): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        match (scm_combine(pk, ps, 1.0), scm_combine(pk, ps, 0.0)) {
            (Ok(a), Ok(b)) if a == pk && b == ps => {}
            other => failures.push(format!("case {i}: blend identities fail: {other:?}")),
        }

        let mut m = TrmModule::new(TrmConfig::new(TrmMode::To, d, rng.random())).expect("valid config");
        for (_, name, _) in m.params().clone().iter() {
            let id = m.params().id(name).expect("own parameter");
            let shape = m.params().get(id).shape().to_vec();
            if !name.starts_with("loss.") {
                *m.params_mut().get_mut(id) = randn(&mut rng, &shape);
            }
        }
        let zk = randn_away(&mut rng, &[d], 0.1).into_data();
        let zs = randn_away(&mut rng, &[d], 0.1).into_data();
        let (a, b) = (rng.random_range(1e-2..1e2), rng.random_range(1e-2..1e2));
        let zka: Vec<f64> = zk.iter().map(|v| v * a).collect();
        let zsb: Vec<f64> = zs.iter().map(|v| v * b).collect();
        match (m.forward(&zk, &zs), m.forward(&zka, &zsb)) {
            (Ok(x), Ok(y)) if close(&x, &y, 1e-12) => {}
            other => failures.push(format!("case {i}: attention module depends on input norms: {other:?}")),
        }

        let s = random_score_set(&mut rng);
        let curve = far_frr_curve(&s);
        if curve
            .windows(2)
            .any(|w| w[1].delta <= w[0].delta || w[1].far > w[0].far || w[1].frr < w[0].frr)
        {
            failures.push(format!("case {i}: FAR/FRR not monotone in the threshold"));
        }
        if failures.len() > 5 {
            break;
        }
    }
    outcome("invariance", start, failures, format!("{cases} random cases"))
}
