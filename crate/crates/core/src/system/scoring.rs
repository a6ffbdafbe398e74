//! Pair scoring with frozen models over precomputed embeddings.

use serde::{Deserialize, Serialize};

use crate::adapt::{scm_combine, trm_input, TrmModule};
use crate::autodiff::{cosine, normalized};
use crate::dataset::{EvalPair, LabeledUtterance, PairCategory, PairSplit, Task};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{enrollment_embedding, Embeddings, MtlModel};

/// Which clip(s) provide the target speaker's reference embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Enrollment {
    /// The anchor utterance itself.
    Anchor,
    /// Up to `clips` other utterances of the anchor's speaker (never the
    /// test utterance), first in corpus order.
    Separate { clips: usize },
}

/// How a detection score is formed.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    KeywordOnly,
    Scm(f64),
    Trm(&'a TrmModule),
    /// Speaker cosine alone (speaker verification).
    Speaker,
}

impl Scorer<'_> {
    pub fn name(&self) -> String {
        match self {
            Scorer::KeywordOnly => "keyword".into(),
            Scorer::Scm(a) => format!("scm-{a:.2}"),
            Scorer::Trm(_) => "trm".into(),
            Scorer::Speaker => "speaker".into(),
        }
    }
}

/// Scores `(test, target keyword, enrollment)` triples.
///
/// C-KWS always uses the keyword score; TB/TO need an enrollment.
pub fn task_score(
    model: &MtlModel,
    test: (&[f64], &[f64]),
    target: usize,
    enrollment: Option<&[f64]>,
    task: Task,
    scorer: Scorer<'_>,
) -> Result<f64> {
    let psi_k = model.keyword_score(test.0, target)?;
    if task == Task::CKws {
        return Ok(psi_k);
    }
    let enroll = enrollment.ok_or_else(|| Error::InvalidInput(format!("{task} scoring needs an enrollment")))?;
    match scorer {
        Scorer::KeywordOnly => Ok(psi_k),
        Scorer::Speaker => Ok(cosine(test.1, enroll)),
        Scorer::Scm(alpha) => scm_combine(psi_k, cosine(test.1, enroll), alpha),
        Scorer::Trm(m) => Ok(cosine(
            &m.apply(&trm_input(test.0, test.1)?),
            &m.apply(&trm_input(&model.keyword_prototype(target)?, enroll)?),
        )),
    }
}

/// Embeddings of one utterance set plus what pair scoring needs.
pub struct PairContext<'a> {
    pub model: &'a MtlModel,
    pub utts: &'a [LabeledUtterance],
    pub emb: &'a Embeddings,
    pub enrollment: Enrollment,
    by_speaker: std::collections::HashMap<&'a str, Vec<usize>>,
}

impl<'a> PairContext<'a> {
    pub fn new(
        model: &'a MtlModel,
        utts: &'a [LabeledUtterance],
        emb: &'a Embeddings,
        enrollment: Enrollment,
    ) -> Result<Self> {
        if emb.len() != utts.len() {
            return Err(Error::InvalidInput(format!(
                "{} embeddings for {} utterances",
                emb.len(),
                utts.len()
            )));
        }
        let mut by_speaker: std::collections::HashMap<&str, Vec<usize>> = Default::default();
        for (i, u) in utts.iter().enumerate() {
            if let Some(s) = u.speaker.as_deref() {
                by_speaker.entry(s).or_default().push(i);
            }
        }
        Ok(Self {
            model,
            utts,
            emb,
            enrollment,
            by_speaker,
        })
    }

    fn target(&self, p: &EvalPair) -> Result<usize> {
        let a = &self.utts[p.anchor];
        self.model
            .config()
            .keywords
            .class_of(&a.keyword)
            .ok_or_else(|| Error::InvalidInput(format!("anchor keyword `{}` unknown to the model", a.keyword)))
    }

    /// Reference speaker embedding for the pair's anchor.
    pub fn enroll(&self, p: &EvalPair) -> Result<Vec<f64>> {
        match self.enrollment {
            Enrollment::Anchor => Ok(normalized(&self.emb.speaker[p.anchor])),
            Enrollment::Separate { clips } => {
                let spk = self.utts[p.anchor].speaker.as_deref().unwrap_or_default();
                let refs: Vec<&[f64]> = self
                    .by_speaker
                    .get(spk)
                    .into_iter()
                    .flatten()
                    .filter(|&&i| i != p.anchor && i != p.test)
                    .take(clips.max(1))
                    .map(|&i| self.emb.speaker[i].as_slice())
                    .collect();
                if refs.is_empty() {
                    return Err(Error::InsufficientData(format!(
                        "no separate enrollment clip for speaker `{spk}`"
                    )));
                }
                enrollment_embedding(&refs)
            }
        }
    }

    /// `(ψᵏ, ψˢ)` of a keyword pair.
    pub fn psi(&self, p: &EvalPair) -> Result<(f64, f64)> {
        let t = p.test;
        Ok((
            self.model.keyword_score(&self.emb.keyword[t], self.target(p)?)?,
            cosine(&self.emb.speaker[t], &self.enroll(p)?),
        ))
    }

    pub fn score(&self, p: &EvalPair, task: Task, scorer: Scorer<'_>) -> Result<f64> {
        if task == Task::Sv {
            return Ok(cosine(&self.emb.speaker[p.anchor], &self.emb.speaker[p.test]));
        }
        let t = p.test;
        let enroll = self.enroll(p)?;
        task_score(
            self.model,
            (&self.emb.keyword[t], &self.emb.speaker[t]),
            self.target(p)?,
            Some(&enroll),
            task,
            scorer,
        )
    }

    pub fn score_split(
        &self,
        split: &PairSplit,
        task: Task,
        scorer: Scorer<'_>,
        exec: Exec,
    ) -> Result<Vec<(PairCategory, f64)>> {
        let needed = task.pair_task();
        if split.task != needed {
            return Err(Error::InvalidInput(format!(
                "{task} needs {needed} splits, got {}",
                split.task
            )));
        }
        exec.try_map(&split.pairs, |p| Ok((p.category, self.score(p, task, scorer)?)))
    }

    /// `(ψᵏ, ψˢ, positive)` samples of a keyword split under `task`
    /// (excluded categories dropped).
    pub fn scm_samples(&self, split: &PairSplit, task: Task, exec: Exec) -> Result<Vec<(f64, f64, bool)>> {
        let rows = exec.try_map(&split.pairs, |p| {
            Ok(match task.label(p.category) {
                Some(label) => {
                    let (k, s) = self.psi(p)?;
                    Some((k, s, label))
                }
                None => None,
            })
        })?;
        Ok(rows.into_iter().flatten().collect())
    }

    /// Prepared attention-module inputs of a keyword split.
    pub fn trm_pairs(&self, split: &PairSplit) -> Result<Vec<(Vec<f64>, Vec<f64>, PairCategory)>> {
        split
            .pairs
            .iter()
            .map(|p| {
                let t = p.test;
                let q = trm_input(&self.emb.keyword[t], &self.emb.speaker[t])?;
                let proto = trm_input(&self.model.keyword_prototype(self.target(p)?)?, &self.enroll(p)?)?;
                Ok((q, proto, p.category))
            })
            .collect()
    }
}
