//! End-to-end experiment on a synthetic corpus: features, multi-task
//! training, score blending and attention adaptation, pair and stream
//! evaluation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scoring::{Enrollment, PairContext, Scorer};
use crate::adapt::{
    scm_grid_search, train_trm, ScmParams, ScmProvenance, TrmConfig, TrmModule, TrmTrainConfig, TrmTrainLog,
    TrmValidation,
};
use crate::dataset::{
    make_pair_splits, make_sv_splits, mix_seed, AudioLoader, KeywordVocab, LabeledUtterance, PairCategory, PairSplit,
    SpeakerVocab, Split, Synthesizer, SyntheticConfig, Task, TrmMode,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_stream, evaluate_task, threshold_at_frr, DecisionThreshold, MetricReport, StreamMetrics, ThresholdRule,
};
use crate::exec::Exec;
use crate::features::{segment_stream, FeatureConfig, FeatureExtractor, FeatureMatrix, Waveform};
use crate::model::{Embeddings, EncoderConfig, ModelConfig, MtlData, MtlModel, TrainConfig, TrainLog, ValidationData};

/// Loads and featurizes every utterance.
pub fn extract_features(
    utts: &[LabeledUtterance],
    loader: &dyn AudioLoader,
    extractor: &FeatureExtractor,
    exec: Exec,
) -> Result<Vec<FeatureMatrix>> {
    exec.try_map(utts, |u| extractor.extract(&loader.load(&u.source)?))
}

/// A fresh model whose keyword classes come from all of `utts` and whose
/// speaker classes are the training speakers.
pub fn new_model(
    utts: &[LabeledUtterance],
    features: FeatureConfig,
    encoder: Option<EncoderConfig>,
    seed: u64,
) -> Result<MtlModel> {
    let keywords = KeywordVocab::from_utterances(utts);
    let speakers = SpeakerVocab::from_utterances(utts.iter().filter(|u| u.split == Split::Train));
    let mut cfg = ModelConfig::new(features, keywords, speakers, seed);
    if let Some(e) = encoder {
        cfg.encoder = e;
    }
    MtlModel::new(cfg)
}

/// Balanced same/different speaker pairs as `(a, b, same)` index triples.
pub fn sv_pairs(utts: &[LabeledUtterance], n: usize, seed: u64) -> Result<Vec<(usize, usize, bool)>> {
    let split = make_sv_splits(utts, 1, n, seed)?.remove(0);
    Ok(split
        .pairs
        .iter()
        .map(|p| (p.anchor, p.test, p.category == PairCategory::SameSpeaker))
        .collect())
}

/// Grid-searched blend weight for `task` on a validation keyword split.
pub fn tune_scm(
    ctx: &PairContext<'_>,
    split: &PairSplit,
    task: Task,
    target_far: f64,
    step: f64,
    exec: Exec,
) -> Result<ScmParams> {
    let samples = ctx.scm_samples(split, task, exec)?;
    let (alpha, _) = scm_grid_search(&samples, target_far, step)?;
    Ok(ScmParams {
        task,
        alpha,
        target_far,
        grid_step: step,
        provenance: ScmProvenance::GridSearch,
        validation_split: Some(split.id),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: SyntheticConfig,
    pub features: FeatureConfig,
    pub channels: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub trm_epochs: usize,
    pub trm_rows: usize,
    pub same_keyword_target: f64,
    /// Chance that an attention batch row reuses a speaker already in the batch.
    pub speaker_reuse: f64,
    pub test_splits: usize,
    pub pairs_per_split: usize,
    pub sv_pairs_per_split: usize,
    pub validation_pairs: usize,
    pub target_far: f64,
    pub grid_step: f64,
    pub enrollment: Enrollment,
    pub stream_segments: usize,
    pub stream_speakers: usize,
    pub stream_frr_targets: Vec<f64>,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Small synthetic setup that trains in well under a minute.
    pub fn desk(seed: u64) -> Self {
        let mut data = SyntheticConfig::new(80, 6, 3, seed);
        data.unknown_words = 2;
        data.silence = true;
        Self {
            data,
            features: FeatureConfig::default(),
            channels: 32,
            embed_dim: 64,
            epochs: 30,
            batch_size: 32,
            lambda: 0.1,
            trm_epochs: 50,
            trm_rows: 6,
            same_keyword_target: 0.5,
            speaker_reuse: 0.5,
            test_splits: 10,
            pairs_per_split: 1600,
            sv_pairs_per_split: 1600,
            validation_pairs: 1600,
            target_far: 0.01,
            grid_step: 0.01,
            enrollment: Enrollment::Anchor,
            stream_segments: 300,
            stream_speakers: 8,
            stream_frr_targets: vec![0.01, 0.05],
            seed,
        }
    }
}

/// Stream results of one mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamRun {
    pub mechanism: String,
    pub metrics: Vec<StreamMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub reports: Vec<MetricReport>,
    pub scm_tb: ScmParams,
    pub scm_to: ScmParams,
    pub stream: Vec<StreamRun>,
    pub train_log: TrainLog,
    pub trm_tb_log: TrmTrainLog,
    pub trm_to_log: TrmTrainLog,
    /// The trained networks, for analyses beyond the reports.
    #[serde(skip)]
    pub model: MtlModel,
    #[serde(skip)]
    pub trm_tb: TrmModule,
    #[serde(skip)]
    pub trm_to: TrmModule,
}

impl ExperimentResult {
    pub fn report(&self, task: Task, mechanism: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.task == task && r.mechanism == mechanism)
    }

    pub fn stream_far(&self, mechanism: &str, frr: f64) -> Option<f64> {
        self.stream
            .iter()
            .find(|s| s.mechanism == mechanism)?
            .metrics
            .iter()
            .find(|m| m.target_frr == frr)
            .map(|m| m.far)
    }
}

/// Embeddings of one split plus its utterances.
pub struct SplitData {
    pub utts: Vec<LabeledUtterance>,
    pub features: Vec<FeatureMatrix>,
}

impl SplitData {
    pub fn take(utts: &[LabeledUtterance], feats: &[FeatureMatrix], split: Split) -> Self {
        let idx: Vec<usize> = (0..utts.len()).filter(|&i| utts[i].split == split).collect();
        Self {
            utts: idx.iter().map(|&i| utts[i].clone()).collect(),
            features: idx.iter().map(|&i| feats[i].clone()).collect(),
        }
    }
}

/// Table-1 style rows: every task with every applicable mechanism.
pub fn evaluate_pairs(
    ctx: &PairContext<'_>,
    kws: &[PairSplit],
    sv: &[PairSplit],
    scm: &[(Task, f64, &str)],
    trm_tb: Option<&TrmModule>,
    trm_to: Option<&TrmModule>,
    exec: Exec,
) -> Result<Vec<MetricReport>> {
    let run = |task: Task, scorer: Scorer<'_>, name: &str, splits: &[PairSplit]| -> Result<MetricReport> {
        let scored = splits
            .iter()
            .map(|s| ctx.score_split(s, task, scorer, exec))
            .collect::<Result<Vec<_>>>()?;
        evaluate_task(&scored, task, name)
    };
    let mut out = vec![run(Task::CKws, Scorer::KeywordOnly, "keyword", kws)?];
    for (task, trm) in [(Task::Tb, trm_tb), (Task::To, trm_to)] {
        out.push(run(task, Scorer::KeywordOnly, "keyword", kws)?);
        for &(t, alpha, name) in scm {
            if t == task {
                out.push(run(task, Scorer::Scm(alpha), name, kws)?);
            }
        }
        if let Some(m) = trm {
            out.push(run(task, Scorer::Trm(m), "trm", kws)?);
        }
    }
    if !sv.is_empty() {
        out.push(run(Task::Sv, Scorer::Speaker, "speaker", sv)?);
    }
    Ok(out)
}

/// One target per command keyword: an enrollment speaker embedding drawn
/// from `ctx`'s utterances of that keyword.
pub fn stream_enrollments(ctx: &PairContext<'_>, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
    let vocab = &ctx.model.config().keywords;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[300]));
    let mut out = Vec::new();
    for class in 0..vocab.commands.len() {
        let cands: Vec<usize> = (0..ctx.utts.len())
            .filter(|&i| ctx.utts[i].keyword == vocab.commands[class] && ctx.utts[i].speaker.is_some())
            .collect();
        if cands.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no enrollment clip for `{}`",
                vocab.commands[class]
            )));
        }
        let a = cands[rng.random_range(0..cands.len())];
        let pair = crate::dataset::EvalPair {
            anchor: a,
            test: usize::MAX,
            category: PairCategory::TsTk,
        };
        out.push((class, ctx.enroll(&pair)?));
    }
    Ok(out)
}

/// Stream FAR per mechanism. Thresholds come from the TO positives (ts-tk)
/// of the validation split under the same mechanism.
pub fn evaluate_streams(
    model: &MtlModel,
    segments: &Embeddings,
    enrollments: &[(usize, Vec<f64>)],
    val_ctx: &PairContext<'_>,
    val_split: &PairSplit,
    scorers: &[(Scorer<'_>, String)],
    frr_targets: &[f64],
    exec: Exec,
) -> Result<Vec<StreamRun>> {
    if segments.is_empty() {
        return Err(Error::InsufficientData("empty stream".into()));
    }
    let vocab = &model.config().keywords;
    scorers
        .iter()
        .map(|(scorer, name)| {
            let positives: Vec<f64> = val_ctx
                .score_split(val_split, Task::To, *scorer, exec)?
                .into_iter()
                .filter(|(c, _)| *c == PairCategory::TsTk)
                .map(|(_, s)| s)
                .collect();
            if positives.is_empty() {
                return Err(Error::InsufficientData("validation split has no ts-tk pairs".into()));
            }
            let per_kw: Vec<(String, Vec<f64>)> = enrollments
                .iter()
                .map(|(class, enroll)| {
                    let scores = exec.try_map_range(segments.len(), |i| {
                        super::scoring::task_score(
                            model,
                            (&segments.keyword[i], &segments.speaker[i]),
                            *class,
                            Some(enroll),
                            Task::To,
                            *scorer,
                        )
                    })?;
                    Ok((vocab.commands[*class].clone(), scores))
                })
                .collect::<Result<_>>()?;
            let metrics = frr_targets
                .iter()
                .map(|&r| {
                    let t = DecisionThreshold {
                        delta: threshold_at_frr(&positives, r),
                        rule: ThresholdRule::FrrConstrained(r),
                        source: Split::Validation,
                        source_id: Some(val_split.id),
                    };
                    evaluate_stream(&per_kw, t, r)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StreamRun {
                mechanism: name.clone(),
                metrics,
            })
        })
        .collect()
}

/// Runs the whole experiment on a synthetic corpus.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentResult> {
    let synth = Synthesizer::new(cfg.data.clone())?;
    let utts = synth.utterances();
    let extractor = FeatureExtractor::new(cfg.features.clone())?;
    let feats = extract_features(&utts, &synth, &extractor, exec)?;
    let train = SplitData::take(&utts, &feats, Split::Train);
    let val = SplitData::take(&utts, &feats, Split::Validation);
    let test = SplitData::take(&utts, &feats, Split::Test);

    let encoder = EncoderConfig::small(cfg.features.dim(), cfg.channels, cfg.embed_dim);
    let mut model = new_model(&utts, cfg.features.clone(), Some(encoder), cfg.seed)?;
    model.fit_normalization(&train.features)?;
    let data = MtlData::new(&model, &train.features, &train.utts)?;
    let val_sv = sv_pairs(&val.utts, cfg.validation_pairs, mix_seed(cfg.seed, &[1]))?;
    let vdata = ValidationData::new(&model, val.features.clone(), &val.utts, val_sv)?;
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: 1e-3,
        lambda: cfg.lambda,
        seed: cfg.seed,
    };
    let train_log = crate::model::train_mtl(&mut model, &data, Some(&vdata), &tcfg, exec)?;

    let train_emb = model.embed_all(&train.features, exec)?;
    let val_emb = model.embed_all(&val.features, exec)?;
    let test_emb = model.embed_all(&test.features, exec)?;
    let val_ctx = PairContext::new(&model, &val.utts, &val_emb, cfg.enrollment)?;
    let test_ctx = PairContext::new(&model, &test.utts, &test_emb, cfg.enrollment)?;

    let val_split = make_pair_splits(&val.utts, 1, cfg.validation_pairs, mix_seed(cfg.seed, &[2]))?.remove(0);
    let scm_tb = tune_scm(&val_ctx, &val_split, Task::Tb, cfg.target_far, cfg.grid_step, exec)?;
    let scm_to = tune_scm(&val_ctx, &val_split, Task::To, cfg.target_far, cfg.grid_step, exec)?;

    let trm_val = TrmValidation {
        pairs: val_ctx.trm_pairs(&val_split)?,
    };
    let mut trms = Vec::new();
    for (i, mode) in [TrmMode::Tb, TrmMode::To].into_iter().enumerate() {
        let mut m = TrmModule::new(TrmConfig::new(mode, cfg.embed_dim, mix_seed(cfg.seed, &[3, i as u64])))?;
        let tc = TrmTrainConfig {
            epochs: cfg.trm_epochs,
            rows: cfg.trm_rows,
            same_keyword_target: cfg.same_keyword_target,
            speaker_reuse: cfg.speaker_reuse,
            seed: mix_seed(cfg.seed, &[4, i as u64]),
            ..TrmTrainConfig::default()
        };
        let log = train_trm(&mut m, &model, &train.utts, &train_emb, Some(&trm_val), &tc)?;
        trms.push((m, log));
    }
    let (trm_to, trm_to_log) = trms.pop().expect("two modules");
    let (trm_tb, trm_tb_log) = trms.pop().expect("two modules");

    let kws = make_pair_splits(
        &test.utts,
        cfg.test_splits,
        cfg.pairs_per_split,
        mix_seed(cfg.seed, &[5]),
    )?;
    let sv = make_sv_splits(
        &test.utts,
        cfg.test_splits,
        cfg.sv_pairs_per_split,
        mix_seed(cfg.seed, &[6]),
    )?;
    let scm = [
        (Task::Tb, 0.5, "scm-manual"),
        (Task::Tb, scm_tb.alpha, "scm-grid"),
        (Task::To, 0.5, "scm-manual"),
        (Task::To, scm_to.alpha, "scm-grid"),
    ];
    let reports = evaluate_pairs(&test_ctx, &kws, &sv, &scm, Some(&trm_tb), Some(&trm_to), exec)?;

    let (wave, _) = synth.stream(cfg.stream_segments, cfg.stream_speakers, mix_seed(cfg.seed, &[7]))?;
    let seg_feats = stream_features(&wave, &extractor, exec)?;
    let seg_emb = model.embed_all(&seg_feats, exec)?;
    let enrollments = stream_enrollments(&test_ctx, cfg.seed)?;
    let scorers = [
        (Scorer::KeywordOnly, "keyword".to_string()),
        (Scorer::Scm(scm_to.alpha), "scm-grid".to_string()),
        (Scorer::Trm(&trm_to), "trm".to_string()),
    ];
    let stream = evaluate_streams(
        &model,
        &seg_emb,
        &enrollments,
        &val_ctx,
        &val_split,
        &scorers,
        &cfg.stream_frr_targets,
        exec,
    )?;
    Ok(ExperimentResult {
        reports,
        scm_tb,
        scm_to,
        stream,
        train_log,
        trm_tb_log,
        trm_to_log,
        model,
        trm_tb,
        trm_to,
    })
}

/// One-second segments of a stream, featurized.
pub fn stream_features(wave: &Waveform, extractor: &FeatureExtractor, exec: Exec) -> Result<Vec<FeatureMatrix>> {
    let segs = segment_stream(wave, extractor.config().clip_secs);
    if segs.is_empty() {
        return Err(Error::InsufficientData("stream shorter than one segment".into()));
    }
    exec.try_map(&segs, |s| extractor.extract(s))
}

/// Table-1 shaped text of pair reports.
pub fn pairs_report_text(reports: &[MetricReport]) -> String {
    let mut out = String::from("# pair evaluation: rates are fractions; mean and std over test splits\n");
    for r in reports {
        out.push_str(&r.to_text());
    }
    out
}

/// Table-2 shaped text of stream results.
pub fn stream_report_text(runs: &[StreamRun]) -> String {
    let mut out =
        String::from("# stream evaluation: FAR of one-second segments at thresholds set on validation positives\n");
    for r in runs {
        out.push_str(&crate::eval::stream_text(&r.mechanism, &r.metrics));
    }
    out
}

/// Compact summary lines of an experiment.
pub fn summary_text(r: &ExperimentResult) -> String {
    let mut s = String::new();
    for rep in &r.reports {
        let (e, _) = rep.eer();
        let (f1, _) = rep.frr_at_far(0.01);
        let _ = writeln!(
            s,
            "{:5} {:12} eer={:.4} frr@far1%={:.4}",
            rep.task.to_string(),
            rep.mechanism,
            e,
            f1
        );
    }
    for run in &r.stream {
        for m in &run.metrics {
            let _ = writeln!(s, "stream {:10} far@frr{}={:.4}", run.mechanism, m.target_frr, m.far);
        }
    }
    let _ = writeln!(s, "alpha tb={} to={}", r.scm_tb.alpha, r.scm_to.alpha);
    s
}
