use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pkws::adapt::{train_trm, GateKind, ScmParams, ScmProvenance, TrmConfig, TrmModule, TrmTrainConfig, TrmValidation};
use pkws::dataset::{
    filter_split, ingest_gsc as ingest, make_pair_splits, make_sv_splits, mix_seed, read_manifest, read_pairs,
    write_manifest, write_pairs, AudioLoader, AudioSource, FileLoader, LabeledUtterance, PairSplit, PairTask, Split,
    Synthesizer, SyntheticConfig, Task, TrmMode,
};
use pkws::exec::Exec;
use pkws::features::{read_wav, write_wav, FeatureConfig, FeatureExtractor, FeatureKind};
use pkws::model::{
    enrollment_embedding, train_mtl, Embeddings, EncoderConfig, MtlData, MtlModel, TrainConfig, ValidationData,
};
use pkws::system::{
    evaluate_pairs, evaluate_streams, extract_features, new_model, pairs_report_text, stream_enrollments,
    stream_features, stream_report_text, sv_pairs, tune_scm as tune, Enrollment, PairContext, Scorer,
};

use crate::config::write_run_config;
use crate::error::{require, CliError, CliResult};
use crate::{
    AdaptTrmArgs, EnrollArgs, EnrollmentArg, EvalArgs, EvalStreamArgs, FeatureArg, GateArg, IngestArgs, ModelInfoArgs,
    PairsArgs, SplitArg, SynthArgs, TaskArg, TrainArgs, TuneScmArgs,
};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const STREAM_FILE: &str = "stream.wav";
pub const MODEL_FILE: &str = "model.ckpt";
pub const KWS_PAIRS_FILE: &str = "kws_pairs.tsv";
pub const SV_PAIRS_FILE: &str = "sv_pairs.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const STREAM_REPORT_FILE: &str = "stream_report.txt";
pub const ENROLLMENT_FILE: &str = "enrollment.json";

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

impl TaskArg {
    fn task(self) -> Task {
        match self {
            TaskArg::Tb => Task::Tb,
            TaskArg::To => Task::To,
        }
    }

    fn mode(self) -> TrmMode {
        match self {
            TaskArg::Tb => TrmMode::Tb,
            TaskArg::To => TrmMode::To,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            TaskArg::Tb => "tb",
            TaskArg::To => "to",
        }
    }
}

fn enrollment(kind: EnrollmentArg, clips: usize) -> CliResult<Enrollment> {
    match kind {
        EnrollmentArg::Anchor => Ok(Enrollment::Anchor),
        EnrollmentArg::Separate if clips == 0 => Err(CliError::Config("--enrollment-clips must be at least 1".into())),
        EnrollmentArg::Separate => Ok(Enrollment::Separate { clips }),
    }
}

fn out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| pkws::Error::io(format!("creating {}", dir.display()), e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| pkws::Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Manifest utterances and a loader resolving their relative paths.
fn load_manifest(path: &Path) -> CliResult<(Vec<LabeledUtterance>, FileLoader)> {
    require("manifest", path)?;
    let utts = read_manifest(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((utts, FileLoader::new(base)))
}

fn load_model(path: &Path) -> CliResult<MtlModel> {
    require("checkpoint", path)?;
    Ok(MtlModel::load(path)?)
}

fn load_trm(path: &Path, task: TaskArg) -> CliResult<TrmModule> {
    require("checkpoint", path)?;
    let m = TrmModule::load(path)?;
    if m.config().task != task.mode() {
        return Err(CliError::Config(format!(
            "{} holds a {:?} module, expected {:?}",
            path.display(),
            m.config().task,
            task.mode()
        )));
    }
    Ok(m)
}

fn load_scm(path: &Path, task: TaskArg) -> CliResult<ScmParams> {
    require("scm parameters", path)?;
    let text = fs::read_to_string(path).map_err(|e| pkws::Error::io(format!("reading {}", path.display()), e))?;
    let p = ScmParams::parse(&text, path)?;
    if p.task != task.task() {
        return Err(CliError::Config(format!(
            "{} was tuned for {}, expected {}",
            path.display(),
            p.task,
            task.task()
        )));
    }
    Ok(p)
}

/// Utterances of one split with their embeddings under `model`.
fn embed_split(
    model: &MtlModel,
    utts: &[LabeledUtterance],
    loader: &dyn AudioLoader,
    split: Split,
    exec: Exec,
) -> CliResult<(Vec<LabeledUtterance>, Embeddings)> {
    let part = filter_split(utts, split);
    if part.is_empty() {
        return Err(pkws::Error::InsufficientData(format!("manifest has no {split} utterances")).into());
    }
    let extractor = FeatureExtractor::new(model.config().features.clone())?;
    let feats = extract_features(&part, loader, &extractor, exec)?;
    let emb = model.embed_all(&feats, exec)?;
    Ok((part, emb))
}

fn pair_splits(path: &Path, utts: &[LabeledUtterance], task: PairTask) -> CliResult<Vec<PairSplit>> {
    require("pair file", path)?;
    let splits: Vec<PairSplit> = read_pairs(path, utts)?.into_iter().filter(|s| s.task == task).collect();
    if splits.is_empty() {
        return Err(pkws::Error::InsufficientData(format!("{} has no {task} splits", path.display())).into());
    }
    Ok(splits)
}

pub fn synth(a: SynthArgs, exec: Exec) -> CliResult<()> {
    let mut cfg = SyntheticConfig::new(a.speakers, a.keywords, a.utterances_per_pair, a.seed);
    cfg.unknown_words = a.unknown_words;
    cfg.silence = !a.no_silence;
    cfg.noise_level = a.noise_level;
    if let Some(v) = a.validation_speakers {
        cfg.validation_speakers = v;
    }
    if let Some(t) = a.test_speakers {
        cfg.test_speakers = t;
    }
    let synth = Synthesizer::new(cfg)?;
    let audio = a.out.join("audio");
    out_dir(&audio)?;
    let utts: Vec<LabeledUtterance> = exec.try_map(&synth.utterances(), |u| -> pkws::Result<_> {
        let rel = PathBuf::from("audio").join(format!("{}.wav", u.id));
        write_wav(&a.out.join(&rel), &synth.load(&u.source)?)?;
        Ok(LabeledUtterance {
            source: AudioSource::File(rel),
            ..u.clone()
        })
    })?;
    write_manifest(&a.out.join(MANIFEST_FILE), &utts)?;
    if a.stream_segments > 0 {
        let (wave, labels) = synth.stream(a.stream_segments, a.stream_speakers, a.seed)?;
        write_wav(&a.out.join(STREAM_FILE), &wave)?;
        let mut text = String::from("# second\tword\tspeaker\n");
        for (i, (w, s)) in labels.iter().enumerate() {
            let _ = writeln!(text, "{i}\t{w}\t{s}");
        }
        write_text(&a.out.join("stream_labels.tsv"), &text)?;
    }
    write_run_config(&a.out, "synth", &a)?;
    println!("wrote {} utterances to {}", utts.len(), a.out.display());
    Ok(())
}

pub fn ingest_gsc(a: IngestArgs, _exec: Exec) -> CliResult<()> {
    let root = fs::canonicalize(&a.root).map_err(|_| CliError::Missing {
        artifact: "dataset",
        path: a.root.clone(),
    })?;
    let r = ingest(&root)?;
    out_dir(&a.out)?;
    write_manifest(&a.out.join(MANIFEST_FILE), &r.utterances)?;
    let mut text = String::new();
    let _ = writeln!(text, "words={}", r.word_count);
    let _ = writeln!(text, "silence={}", r.silence_count);
    for (split, n) in r.split_counts() {
        let _ = writeln!(text, "split.{split}={n}");
    }
    write_text(&a.out.join("ingest_summary.txt"), &text)?;
    write_run_config(&a.out, "ingest-gsc", &a)?;
    print!("{text}");
    Ok(())
}

pub fn pairs(a: PairsArgs, _exec: Exec) -> CliResult<()> {
    let (utts, _) = load_manifest(&a.manifest)?;
    let part = filter_split(&utts, a.split.into());
    out_dir(&a.out)?;
    let kws = make_pair_splits(&part, a.splits, a.pairs_per_split, mix_seed(a.seed, &[20]))?;
    write_pairs(&a.out.join(KWS_PAIRS_FILE), &part, &kws)?;
    if a.sv_pairs_per_split > 0 {
        let sv = make_sv_splits(&part, a.splits, a.sv_pairs_per_split, mix_seed(a.seed, &[21]))?;
        write_pairs(&a.out.join(SV_PAIRS_FILE), &part, &sv)?;
    }
    write_run_config(&a.out, "pairs", &a)?;
    println!(
        "wrote {} {} pair splits to {}",
        a.splits,
        Split::from(a.split),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs, exec: Exec) -> CliResult<()> {
    let (utts, loader) = load_manifest(&a.manifest)?;
    let features = FeatureConfig {
        kind: match a.features {
            FeatureArg::LogMel => FeatureKind::LogMel,
            FeatureArg::Mfcc => FeatureKind::Mfcc,
        },
        ..FeatureConfig::default()
    };
    let extractor = FeatureExtractor::new(features.clone())?;
    let train = filter_split(&utts, Split::Train);
    let train_feats = extract_features(&train, &loader, &extractor, exec)?;
    let encoder = EncoderConfig::small(features.dim(), a.channels, a.embed_dim);
    let mut model = new_model(&utts, features, Some(encoder), a.seed)?;
    model.fit_normalization(&train_feats)?;
    let data = MtlData::new(&model, &train_feats, &train)?;
    let val = filter_split(&utts, Split::Validation);
    let vdata = if a.validation_pairs > 0 && !val.is_empty() {
        let feats = extract_features(&val, &loader, &extractor, exec)?;
        let pairs = sv_pairs(&val, a.validation_pairs, mix_seed(a.seed, &[1]))?;
        Some(ValidationData::new(&model, feats, &val, pairs)?)
    } else {
        None
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        lambda: a.lambda,
        seed: a.seed,
    };
    out_dir(&a.out)?;
    write_run_config(&a.out, "train", &a)?;
    let log = train_mtl(&mut model, &data, vdata.as_ref(), &cfg, exec)?;
    model.save(&a.out.join(MODEL_FILE))?;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    let mut text = format!(
        "# best_epoch={}\n# epoch\tloss\tkeyword_loss\tspeaker_loss\tval_keyword_acc\tval_sv_eer\n",
        log.best_epoch
    );
    for e in &log.epochs {
        let _ = writeln!(
            text,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            e.epoch,
            e.loss,
            e.keyword_loss,
            e.speaker_loss,
            opt(e.val_keyword_accuracy),
            opt(e.val_speaker_eer)
        );
    }
    write_text(&a.out.join("train_log.tsv"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn tune_scm(a: TuneScmArgs, exec: Exec) -> CliResult<()> {
    let model = load_model(&a.checkpoint)?;
    let (utts, loader) = load_manifest(&a.manifest)?;
    let (val, emb) = embed_split(&model, &utts, &loader, Split::Validation, exec)?;
    // Resolving ids against the validation split keeps test pairs out.
    let splits = pair_splits(&a.pairs, &val, PairTask::KwsPairs)?;
    let ctx = PairContext::new(&model, &val, &emb, enrollment(a.enrollment, a.enrollment_clips)?)?;
    let params = tune(&ctx, &splits[0], a.task.task(), a.target_far, a.grid_step, exec)?;
    out_dir(&a.out)?;
    write_text(&a.out.join(format!("scm_{}.txt", a.task.tag())), &params.to_text())?;
    write_run_config(&a.out, "tune-scm", &a)?;
    print!("{}", params.to_text());
    Ok(())
}

pub fn adapt_trm(a: AdaptTrmArgs, exec: Exec) -> CliResult<()> {
    let model = load_model(&a.checkpoint)?;
    let (utts, loader) = load_manifest(&a.manifest)?;
    let (train, emb) = embed_split(&model, &utts, &loader, Split::Train, exec)?;
    let val = match &a.val_pairs {
        Some(path) => {
            let (vutts, vemb) = embed_split(&model, &utts, &loader, Split::Validation, exec)?;
            let splits = pair_splits(path, &vutts, PairTask::KwsPairs)?;
            let ctx = PairContext::new(&model, &vutts, &vemb, enrollment(a.enrollment, a.enrollment_clips)?)?;
            Some(TrmValidation {
                pairs: ctx.trm_pairs(&splits[0])?,
            })
        }
        None => None,
    };
    let mut cfg = TrmConfig::new(a.task.mode(), model.embed_dim(), mix_seed(a.seed, &[3]));
    cfg.reduction = a.reduction;
    cfg.gate = match a.gate {
        GateArg::PerDimension => GateKind::PerDimension,
        GateArg::PerEmbedding => GateKind::PerEmbedding,
    };
    let mut m = TrmModule::new(cfg)?;
    let tc = TrmTrainConfig {
        epochs: a.epochs,
        rows: a.rows,
        learning_rate: a.learning_rate,
        same_keyword_target: a.same_keyword_target,
        speaker_reuse: a.speaker_reuse,
        seed: mix_seed(a.seed, &[4]),
    };
    out_dir(&a.out)?;
    write_run_config(&a.out, "adapt-trm", &a)?;
    let log = train_trm(&mut m, &model, &train, &emb, val.as_ref(), &tc)?;
    m.save(&a.out.join(format!("trm_{}.ckpt", a.task.tag())))?;
    let mut text = format!("# best_epoch={}\n# epoch\tloss\tval_eer\n", log.best_epoch);
    for e in &log.epochs {
        let eer = e.val_eer.map_or("-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(text, "{}\t{:.6}\t{eer}", e.epoch, e.loss);
    }
    write_text(&a.out.join(format!("trm_{}_log.tsv", a.task.tag())), &text)?;
    print!("{text}");
    Ok(())
}

/// Stored reference embedding of one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub speaker: String,
    pub clips: Vec<String>,
    pub embedding: Vec<f64>,
}

pub fn enroll(a: EnrollArgs, exec: Exec) -> CliResult<()> {
    let model = load_model(&a.checkpoint)?;
    let (utts, loader) = load_manifest(&a.manifest)?;
    for id in &a.clips {
        match utts.iter().find(|u| &u.id == id) {
            None => return Err(pkws::Error::InvalidInput(format!("unknown utterance `{id}`")).into()),
            Some(u) if u.speaker.as_deref() != Some(a.speaker.as_str()) => {
                return Err(pkws::Error::InvalidInput(format!("`{id}` is not spoken by `{}`", a.speaker)).into())
            }
            Some(_) => {}
        }
    }
    let mut chosen: Vec<LabeledUtterance> = utts
        .iter()
        .filter(|u| u.speaker.as_deref() == Some(a.speaker.as_str()))
        .filter(|u| a.clips.is_empty() || a.clips.contains(&u.id))
        .cloned()
        .collect();
    if let Some(n) = a.max_clips {
        chosen.truncate(n);
    }
    if chosen.is_empty() {
        return Err(pkws::Error::InsufficientData(format!("no clips of speaker `{}`", a.speaker)).into());
    }
    let extractor = FeatureExtractor::new(model.config().features.clone())?;
    let feats = extract_features(&chosen, &loader, &extractor, exec)?;
    let emb = model.embed_all(&feats, exec)?;
    let refs: Vec<&[f64]> = emb.speaker.iter().map(Vec::as_slice).collect();
    let record = EnrollmentRecord {
        speaker: a.speaker.clone(),
        clips: chosen.iter().map(|u| u.id.clone()).collect(),
        embedding: enrollment_embedding(&refs)?,
    };
    out_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&record).expect("plain record serializes");
    write_text(&a.out.join(ENROLLMENT_FILE), &json)?;
    write_run_config(&a.out, "enroll", &a)?;
    println!("enrolled `{}` from {} clip(s)", record.speaker, record.clips.len());
    Ok(())
}

pub fn eval(a: EvalArgs, exec: Exec) -> CliResult<()> {
    let model = load_model(&a.checkpoint)?;
    let (utts, loader) = load_manifest(&a.manifest)?;
    let (test, emb) = embed_split(&model, &utts, &loader, Split::Test, exec)?;
    let kws = pair_splits(&a.pairs, &test, PairTask::KwsPairs)?;
    let sv = match &a.sv_pairs {
        Some(p) => pair_splits(p, &test, PairTask::SvPairs)?,
        None => Vec::new(),
    };
    let mut header = String::new();
    let mut scm: Vec<(Task, f64, &str)> = vec![
        (Task::Tb, a.manual_alpha, "scm-manual"),
        (Task::To, a.manual_alpha, "scm-manual"),
    ];
    let _ = writeln!(header, "# scm-manual alpha={}", a.manual_alpha);
    for (path, task) in [(&a.scm_tb, TaskArg::Tb), (&a.scm_to, TaskArg::To)] {
        if let Some(path) = path {
            let p = load_scm(path, task)?;
            let name = match p.provenance {
                ScmProvenance::GridSearch => "scm-grid",
                ScmProvenance::Manual => "scm-file",
            };
            let _ = writeln!(header, "# {name} {} alpha={}", p.task, p.alpha);
            scm.push((p.task, p.alpha, name));
        }
    }
    let trm_tb = a.trm_tb.as_deref().map(|p| load_trm(p, TaskArg::Tb)).transpose()?;
    let trm_to = a.trm_to.as_deref().map(|p| load_trm(p, TaskArg::To)).transpose()?;
    let ctx = PairContext::new(&model, &test, &emb, enrollment(a.enrollment, a.enrollment_clips)?)?;
    let reports = evaluate_pairs(&ctx, &kws, &sv, &scm, trm_tb.as_ref(), trm_to.as_ref(), exec)?;
    let text = header + &pairs_report_text(&reports);
    out_dir(&a.out)?;
    write_text(&a.out.join(REPORT_FILE), &text)?;
    write_run_config(&a.out, "eval", &a)?;
    print!("{text}");
    Ok(())
}

pub fn eval_stream(a: EvalStreamArgs, exec: Exec) -> CliResult<()> {
    let model = load_model(&a.checkpoint)?;
    let (utts, loader) = load_manifest(&a.manifest)?;
    require("stream", &a.stream)?;
    let wave = read_wav(&a.stream)?;
    let extractor = FeatureExtractor::new(model.config().features.clone())?;
    let seg_emb = model.embed_all(&stream_features(&wave, &extractor, exec)?, exec)?;

    let enroll_mode = enrollment(a.enrollment, a.enrollment_clips)?;
    let (val, val_emb) = embed_split(&model, &utts, &loader, Split::Validation, exec)?;
    let val_split = pair_splits(&a.val_pairs, &val, PairTask::KwsPairs)?.remove(0);
    let val_ctx = PairContext::new(&model, &val, &val_emb, enroll_mode)?;
    let enrollments = match &a.enrollment_file {
        Some(path) => {
            require("enrollment", path)?;
            let text =
                fs::read_to_string(path).map_err(|e| pkws::Error::io(format!("reading {}", path.display()), e))?;
            let rec: EnrollmentRecord = serde_json::from_str(&text).map_err(|e| pkws::Error::Format {
                kind: "enrollment",
                path: path.clone(),
                reason: e.to_string(),
            })?;
            if rec.embedding.len() != model.embed_dim() {
                return Err(pkws::Error::InvalidInput(format!(
                    "enrollment has dimension {}, model embeds to {}",
                    rec.embedding.len(),
                    model.embed_dim()
                ))
                .into());
            }
            (0..model.config().keywords.commands.len())
                .map(|c| (c, rec.embedding.clone()))
                .collect()
        }
        None => {
            let (test, test_emb) = embed_split(&model, &utts, &loader, Split::Test, exec)?;
            let ctx = PairContext::new(&model, &test, &test_emb, enroll_mode)?;
            stream_enrollments(&ctx, a.seed)?
        }
    };
    let scm = a.scm_to.as_deref().map(|p| load_scm(p, TaskArg::To)).transpose()?;
    let trm = a.trm_to.as_deref().map(|p| load_trm(p, TaskArg::To)).transpose()?;
    let mut scorers = vec![(Scorer::KeywordOnly, "keyword".to_string())];
    if let Some(p) = &scm {
        scorers.push((Scorer::Scm(p.alpha), "scm-grid".to_string()));
    }
    if let Some(m) = &trm {
        scorers.push((Scorer::Trm(m), "trm".to_string()));
    }
    let runs = evaluate_streams(
        &model,
        &seg_emb,
        &enrollments,
        &val_ctx,
        &val_split,
        &scorers,
        &a.frr_targets,
        exec,
    )?;
    let text = format!("# segments={} keywords={}\n", seg_emb.len(), enrollments.len()) + &stream_report_text(&runs);
    out_dir(&a.out)?;
    write_text(&a.out.join(STREAM_REPORT_FILE), &text)?;
    write_run_config(&a.out, "eval-stream", &a)?;
    print!("{text}");
    Ok(())
}

pub fn model_info(a: ModelInfoArgs, _exec: Exec) -> CliResult<()> {
    let model = load_model(&a.checkpoint)?;
    let c = model.param_counts();
    let mut text = String::new();
    let _ = writeln!(text, "params.shared={}", c.shared);
    let _ = writeln!(text, "params.keyword_head={}", c.keyword_head);
    let _ = writeln!(text, "params.speaker_head={}", c.speaker_head);
    let _ = writeln!(text, "params.keyword_classifier={}", c.keyword_classifier);
    let _ = writeln!(text, "params.speaker_classifier={}", c.speaker_classifier);
    let _ = writeln!(text, "params.encoder={}", c.encoder());
    let _ = writeln!(text, "params.total={}", c.total());
    let _ = writeln!(text, "embed_dim={}", model.embed_dim());
    let _ = writeln!(text, "keywords={}", model.config().keywords.len());
    let _ = writeln!(text, "speakers={}", model.config().speakers.len());
    for path in &a.trms {
        require("checkpoint", path)?;
        let m = TrmModule::load(path)?;
        let n: usize = m.params().iter().map(|(_, _, t)| t.len()).sum();
        let _ = writeln!(text, "params.trm[{}]={n}", path.display());
    }
    if let Some(out) = &a.out {
        out_dir(out)?;
        write_text(&out.join("model_info.txt"), &text)?;
        write_run_config(out, "model-info", &a)?;
    }
    print!("{text}");
    Ok(())
}
