use serde::Serialize;

use super::{MtlModel, KEYWORD, SPEAKER};
use crate::autodiff::{cosine, Graph, NodeId, Optimizer, OptimizerKind, ParamStore, Tensor};
use crate::dataset::{LabeledUtterance, MtlBatchSampler};
use crate::error::{Error, Result};
use crate::eval::{eer, ScoreSet};
use crate::exec::Exec;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the speaker loss.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be a non-negative number, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Normalized training inputs with class targets; `speaker` is `None` for
/// clips without a speaker (silence), which then skip the speaker loss.
#[derive(Debug, Clone)]
pub struct MtlData {
    pub inputs: Vec<Vec<f64>>,
    pub frames: usize,
    pub keyword: Vec<usize>,
    pub speaker: Vec<Option<usize>>,
}

fn check_lengths(feats: &[FeatureMatrix], n: usize) -> Result<usize> {
    if feats.len() != n || feats.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} feature matrices for {n} labels",
            feats.len()
        )));
    }
    let frames = feats[0].frames;
    if feats.iter().any(|f| f.frames != frames) {
        return Err(Error::InvalidInput("training clips must share one length".into()));
    }
    Ok(frames)
}

impl MtlData {
    pub fn new(model: &MtlModel, feats: &[FeatureMatrix], utts: &[LabeledUtterance]) -> Result<Self> {
        let frames = check_lengths(feats, utts.len())?;
        let cfg = model.config();
        let mut keyword = Vec::with_capacity(utts.len());
        let mut speaker = Vec::with_capacity(utts.len());
        for u in utts {
            keyword.push(cfg.keywords.class_of(&u.keyword).ok_or_else(|| {
                Error::InvalidInput(format!("{}: keyword `{}` not in the vocabulary", u.id, u.keyword))
            })?);
            speaker.push(match &u.speaker {
                None => None,
                Some(s) => Some(
                    cfg.speakers
                        .class_of(s)
                        .ok_or_else(|| Error::InvalidInput(format!("{}: speaker `{s}` not in the vocabulary", u.id)))?,
                ),
            });
        }
        Ok(Self {
            inputs: feats.iter().map(|f| model.normalize(f)).collect::<Result<_>>()?,
            frames,
            keyword,
            speaker,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>, Vec<Option<usize>>)> {
        let dim = self.inputs[0].len() / self.frames;
        let mut data = Vec::with_capacity(idx.len() * self.inputs[0].len());
        for &i in idx {
            data.extend_from_slice(&self.inputs[i]);
        }
        Ok((
            Tensor::new(vec![idx.len(), self.frames, dim], data)?,
            idx.iter().map(|&i| self.keyword[i]).collect(),
            idx.iter().map(|&i| self.speaker[i]).collect(),
        ))
    }
}

/// Held-out clips for model selection: keyword accuracy over all clips and
/// speaker-verification EER over `sv_pairs` (`true` = same speaker).
#[derive(Debug, Clone)]
pub struct ValidationData {
    pub features: Vec<FeatureMatrix>,
    pub keyword: Vec<usize>,
    pub sv_pairs: Vec<(usize, usize, bool)>,
}

impl ValidationData {
    pub fn new(
        model: &MtlModel,
        feats: Vec<FeatureMatrix>,
        utts: &[LabeledUtterance],
        sv_pairs: Vec<(usize, usize, bool)>,
    ) -> Result<Self> {
        check_lengths(&feats, utts.len())?;
        let keyword = utts
            .iter()
            .map(|u| {
                model.config().keywords.class_of(&u.keyword).ok_or_else(|| {
                    Error::InvalidInput(format!("{}: keyword `{}` not in the vocabulary", u.id, u.keyword))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            features: feats,
            keyword,
            sv_pairs,
        })
    }

    /// (keyword accuracy, speaker EER if there are pairs of both kinds).
    pub fn evaluate(&self, model: &MtlModel, exec: Exec) -> Result<(f64, Option<f64>)> {
        let emb = model.embed_all(&self.features, exec)?;
        let clf = model.keyword_classifier();
        let mut correct = 0;
        for (z, &k) in emb.keyword.iter().zip(&self.keyword) {
            let cos = clf.cosines(z)?;
            let best = (0..cos.len())
                .max_by(|&a, &b| cos[a].total_cmp(&cos[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            correct += usize::from(best == k);
        }
        let acc = correct as f64 / self.keyword.len().max(1) as f64;
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for &(a, b, same) in &self.sv_pairs {
            let s = cosine(&emb.speaker[a], &emb.speaker[b]);
            if same {
                pos.push(s)
            } else {
                neg.push(s)
            }
        }
        let sv = ScoreSet::new(pos, neg).ok().map(|s| eer(&s).0);
        Ok((acc, sv))
    }
}

/// Loss nodes of one batch.
#[derive(Debug, Clone, Copy)]
pub struct MtlLoss {
    pub total: NodeId,
    pub keyword: NodeId,
    pub speaker: NodeId,
}

impl MtlModel {
    /// `L = L_k + λ·L_s` on a batch `x [B, T, D]`. Rows without a speaker
    /// only enter `L_k`.
    pub fn mtl_loss(
        &self,
        g: &mut Graph,
        x: NodeId,
        keyword: &[usize],
        speaker: &[Option<usize>],
        lambda: f64,
    ) -> Result<MtlLoss> {
        let (zk, zs) = self.forward(g, x, true)?;
        let lk_logits = self.logits(g, KEYWORD, zk, true)?;
        let lk = g.softmax_cross_entropy(lk_logits, keyword)?;
        let rows: Vec<usize> = (0..speaker.len()).filter(|&i| speaker[i].is_some()).collect();
        let ls = if rows.is_empty() {
            // Keep every parameter in the graph with an exactly zero gradient.
            let logits = self.logits(g, SPEAKER, zs, true)?;
            let s = g.sum(logits);
            g.scale_const(s, 0.0)
        } else {
            let targets: Vec<usize> = rows.iter().map(|&i| speaker[i].expect("filtered")).collect();
            let sel = g.select_rows(zs, &rows)?;
            let logits = self.logits(g, SPEAKER, sel, true)?;
            g.softmax_cross_entropy(logits, &targets)?
        };
        let weighted = g.scale_const(ls, lambda);
        let total = g.add(lk, weighted)?;
        Ok(MtlLoss {
            total,
            keyword: lk,
            speaker: ls,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub keyword_loss: f64,
    pub speaker_loss: f64,
    pub val_keyword_accuracy: Option<f64>,
    pub val_speaker_eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// Validation ranking: lower keyword error plus speaker EER. Missing
/// measurements count as worst case.
fn improves(new: (Option<f64>, Option<f64>), old: (Option<f64>, Option<f64>)) -> bool {
    let cost = |v: (Option<f64>, Option<f64>)| (1.0 - v.0.unwrap_or(0.0)) + v.1.unwrap_or(1.0);
    cost(new) < cost(old)
}

/// Trains with Adam on shuffled mini-batches. The parameters of the best
/// validation epoch (the last epoch without validation data) are kept. A
/// non-finite loss or gradient restores the last good parameters and
/// returns a numerical error.
pub fn train_mtl(
    model: &mut MtlModel,
    data: &MtlData,
    val: Option<&ValidationData>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut sampler = MtlBatchSampler::new(data.len(), cfg.batch_size.min(data.len()), cfg.seed)?;
    let mut opt = Optimizer::new(
        OptimizerKind::adam(),
        cfg.learning_rate,
        model.params(),
        model.trainable_ids(),
    )?;
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(ParamStore, (Option<f64>, Option<f64>))> = None;
    let mut last_good = model.params().clone();

    for epoch in 1..=cfg.epochs {
        let (mut tot, mut lk, mut ls, mut n) = (0.0, 0.0, 0.0, 0usize);
        for idx in sampler.epoch() {
            let (x, kw, spk) = data.batch(&idx)?;
            let mut g = Graph::new();
            let xn = g.constant(x);
            let loss = model.mtl_loss(&mut g, xn, &kw, &spk, cfg.lambda)?;
            let value = g.value(loss.total).item();
            let step = if value.is_finite() {
                g.backward(loss.total)
                    .and_then(|grads| opt.step(model.params_mut(), &grads))
            } else {
                Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")))
            };
            if let Err(e) = step {
                let restore = best.map(|b| b.0).unwrap_or(last_good);
                model.params_mut().load_from(&restore)?;
                return Err(match e {
                    Error::NonFiniteGradient(p) => {
                        Error::Numerical(format!("non-finite gradient for {p} at epoch {epoch}"))
                    }
                    other => other,
                });
            }
            let b = idx.len();
            tot += value * b as f64;
            lk += g.value(loss.keyword).item() * b as f64;
            ls += g.value(loss.speaker).item() * b as f64;
            n += b;
        }
        last_good = model.params().clone();
        let (acc, sv) = match val {
            Some(v) => {
                let (a, s) = v.evaluate(model, exec)?;
                (Some(a), s)
            }
            None => (None, None),
        };
        log.epochs.push(EpochLog {
            epoch,
            loss: tot / n as f64,
            keyword_loss: lk / n as f64,
            speaker_loss: ls / n as f64,
            val_keyword_accuracy: acc,
            val_speaker_eer: sv,
        });
        if val.is_none() || best.as_ref().is_none_or(|b| improves((acc, sv), b.1)) {
            best = Some((model.params().clone(), (acc, sv)));
            log.best_epoch = epoch;
        }
    }
    if let Some((params, _)) = best {
        model.params_mut().load_from(&params)?;
    }
    Ok(log)
}
