//! Sequential vs. parallel execution of the data-parallel stages: embedding
//! extraction, pair scoring and metric sweeps.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pkws::dataset::{make_pair_splits, Split, Synthesizer, SyntheticConfig, Task};
use pkws::eval::{Metrics, ScoreSet};
use pkws::exec::Exec;
use pkws::features::{FeatureConfig, FeatureExtractor};
use pkws::model::EncoderConfig;
use pkws::system::{extract_features, new_model, Enrollment, PairContext, Scorer, SplitData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCHEDULES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn stages(c: &mut Criterion) {
    let mut cfg = SyntheticConfig::new(20, 6, 2, 0);
    cfg.validation_speakers = 0;
    cfg.test_speakers = 6;
    let synth = Synthesizer::new(cfg).unwrap();
    let utts = synth.utterances();
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let feats = extract_features(&utts, &synth, &ex, Exec::Parallel).unwrap();
    let model = new_model(
        &utts,
        FeatureConfig::default(),
        Some(EncoderConfig::small(40, 32, 64)),
        0,
    )
    .unwrap();
    let test = SplitData::take(&utts, &feats, Split::Test);
    let emb = model.embed_all(&test.features, Exec::Parallel).unwrap();
    let split = make_pair_splits(&test.utts, 1, 1600, 0).unwrap().remove(0);
    let ctx = PairContext::new(&model, &test.utts, &emb, Enrollment::Anchor).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sets: Vec<ScoreSet> = (0..64)
        .map(|_| {
            let mut draw = |n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            ScoreSet::new(draw(800), draw(2400)).unwrap()
        })
        .collect();

    let mut g = c.benchmark_group("embed");
    g.sample_size(10);
    for (name, exec) in SCHEDULES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| model.embed_all(black_box(&test.features), e).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("score-pairs");
    for (name, exec) in SCHEDULES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| {
                ctx.score_split(black_box(&split), Task::To, Scorer::Scm(0.5), e)
                    .unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("metric-sweep");
    for (name, exec) in SCHEDULES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| e.map(black_box(&sets), Metrics::compute))
        });
    }
    g.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
