//! Per-task evaluation, aggregation over splits and text exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{eer, far_at_frr, far_frr_curve, frr_at_far, ScoreSet};
use crate::dataset::{PairCategory, Split, Task};
use crate::error::{Error, Result};

pub const FAR_TARGETS: [f64; 2] = [0.01, 0.10];
pub const FRR_TARGETS: [f64; 2] = [0.01, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    EerPoint,
    FarConstrained(f64),
    FrrConstrained(f64),
}

/// A threshold together with where it was selected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThreshold {
    pub delta: f64,
    pub rule: ThresholdRule,
    pub source: Split,
    pub source_id: Option<usize>,
}

impl DecisionThreshold {
    pub fn select(scores: &ScoreSet, rule: ThresholdRule, source: Split, source_id: Option<usize>) -> Self {
        let delta = match rule {
            ThresholdRule::EerPoint => eer(scores).1,
            ThresholdRule::FarConstrained(c) => frr_at_far(scores, c).1,
            ThresholdRule::FrrConstrained(r) => far_at_frr(scores, r).1,
        };
        Self {
            delta,
            rule,
            source,
            source_id,
        }
    }

    /// The threshold for use on test data; refuses one selected on test data.
    pub fn for_test(&self) -> Result<f64> {
        if self.source == Split::Test {
            return Err(Error::Config("threshold was selected on the test split".into()));
        }
        Ok(self.delta)
    }
}

/// Every metric of one score set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub eer: f64,
    pub eer_delta: f64,
    /// (target FAR, FRR, δ)
    pub frr_at_far: Vec<(f64, f64, f64)>,
    /// (target FRR, FAR, δ)
    pub far_at_frr: Vec<(f64, f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

impl Metrics {
    pub fn compute(s: &ScoreSet) -> Self {
        let (e, d) = eer(s);
        Self {
            eer: e,
            eer_delta: d,
            frr_at_far: FAR_TARGETS
                .iter()
                .map(|&c| {
                    let (frr, d) = frr_at_far(s, c);
                    (c, frr, d)
                })
                .collect(),
            far_at_frr: FRR_TARGETS
                .iter()
                .map(|&r| {
                    let (far, d) = far_at_frr(s, r);
                    (r, far, d)
                })
                .collect(),
            positives: s.positives.len(),
            negatives: s.negatives.len(),
        }
    }

    pub fn frr_at(&self, far: f64) -> Option<f64> {
        self.frr_at_far.iter().find(|t| t.0 == far).map(|t| t.1)
    }

    pub fn far_at(&self, frr: f64) -> Option<f64> {
        self.far_at_frr.iter().find(|t| t.0 == frr).map(|t| t.1)
    }
}

/// Builds the task's score set from categorized pair scores.
pub fn task_score_set(scored: &[(PairCategory, f64)], task: Task) -> Result<ScoreSet> {
    let needed: Vec<PairCategory> = if task == Task::Sv {
        vec![PairCategory::SameSpeaker, PairCategory::DifferentSpeaker]
    } else {
        PairCategory::KWS
            .into_iter()
            .filter(|&c| task.label(c).is_some())
            .collect()
    };
    if let Some(missing) = needed.iter().find(|&&c| !scored.iter().any(|p| p.0 == c)) {
        return Err(Error::InsufficientData(format!(
            "{task} evaluation needs {missing} pairs, none found"
        )));
    }
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for &(c, s) in scored {
        match task.label(c) {
            Some(true) => pos.push(s),
            Some(false) => neg.push(s),
            None => {}
        }
    }
    ScoreSet::new(pos, neg)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    // Sample standard deviation; zero for a single split.
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Metrics of one task/mechanism over several splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub mechanism: String,
    pub splits: Vec<Metrics>,
}

impl MetricReport {
    pub fn new(task: Task, mechanism: impl Into<String>, splits: Vec<Metrics>) -> Result<Self> {
        if splits.is_empty() {
            return Err(Error::InsufficientData("report needs at least one split".into()));
        }
        Ok(Self {
            task,
            mechanism: mechanism.into(),
            splits,
        })
    }

    pub fn eer(&self) -> (f64, f64) {
        mean_std(&self.splits.iter().map(|m| m.eer).collect::<Vec<_>>())
    }

    pub fn frr_at_far(&self, c: f64) -> (f64, f64) {
        mean_std(
            &self
                .splits
                .iter()
                .map(|m| m.frr_at(c).unwrap_or(f64::NAN))
                .collect::<Vec<_>>(),
        )
    }

    pub fn far_at_frr(&self, r: f64) -> (f64, f64) {
        mean_std(
            &self
                .splits
                .iter()
                .map(|m| m.far_at(r).unwrap_or(f64::NAN))
                .collect::<Vec<_>>(),
        )
    }

    /// `key=value` lines; rates as fractions.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: String, (m, s): (f64, f64)| {
            let _ = writeln!(out, "{k}.mean={m:.6}");
            let _ = writeln!(out, "{k}.std={s:.6}");
        };
        line(format!("{}.{}.eer", self.task, self.mechanism), self.eer());
        for c in FAR_TARGETS {
            line(
                format!("{}.{}.frr_at_far_{c}", self.task, self.mechanism),
                self.frr_at_far(c),
            );
        }
        for r in FRR_TARGETS {
            line(
                format!("{}.{}.far_at_frr_{r}", self.task, self.mechanism),
                self.far_at_frr(r),
            );
        }
        let _ = writeln!(out, "{}.{}.splits={}", self.task, self.mechanism, self.splits.len());
        let _ = writeln!(
            out,
            "{}.{}.pairs={}+{}",
            self.task, self.mechanism, self.splits[0].positives, self.splits[0].negatives
        );
        out
    }
}

/// Evaluates `task` on every split of categorized scores.
pub fn evaluate_task(splits: &[Vec<(PairCategory, f64)>], task: Task, mechanism: &str) -> Result<MetricReport> {
    let metrics = splits
        .iter()
        .map(|s| task_score_set(s, task).map(|set| Metrics::compute(&set)))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::new(task, mechanism, metrics)
}

/// General-negative stream result for one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub target_frr: f64,
    pub threshold: DecisionThreshold,
    /// (keyword, FAR over the stream segments)
    pub per_keyword: Vec<(String, f64)>,
    pub far: f64,
}

/// FAR of stream segments per target keyword at a threshold chosen on
/// positives, macro-averaged over keywords.
pub fn evaluate_stream(
    segment_scores: &[(String, Vec<f64>)],
    threshold: DecisionThreshold,
    target_frr: f64,
) -> Result<StreamMetrics> {
    let delta = threshold.for_test()?;
    if segment_scores.is_empty() || segment_scores.iter().any(|(_, s)| s.is_empty()) {
        return Err(Error::InsufficientData(
            "stream evaluation needs at least one segment per keyword".into(),
        ));
    }
    let per_keyword: Vec<(String, f64)> = segment_scores
        .iter()
        .map(|(k, s)| {
            (
                k.clone(),
                s.iter().filter(|&&x| x > delta).count() as f64 / s.len() as f64,
            )
        })
        .collect();
    let far = per_keyword.iter().map(|p| p.1).sum::<f64>() / per_keyword.len() as f64;
    Ok(StreamMetrics {
        target_frr,
        threshold,
        per_keyword,
        far,
    })
}

/// Aggregates stream results of several runs.
pub fn stream_text(mechanism: &str, runs: &[StreamMetrics]) -> String {
    let mut out = String::new();
    let mut by_target: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        by_target.entry(format!("{}", r.target_frr)).or_default().push(r.far);
    }
    for (t, fars) in by_target {
        let (m, s) = mean_std(&fars);
        let _ = writeln!(out, "stream.{mechanism}.far_at_frr_{t}.mean={m:.6}");
        let _ = writeln!(out, "stream.{mechanism}.far_at_frr_{t}.std={s:.6}");
    }
    for r in runs {
        for (k, far) in &r.per_keyword {
            let _ = writeln!(out, "stream.{mechanism}.far_at_frr_{}.{k}={far:.6}", r.target_frr);
        }
    }
    out
}

/// DET data: `delta far frr` per candidate threshold.
pub fn det_text(s: &ScoreSet) -> String {
    let mut out = String::from("# delta\tfar\tfrr\n");
    for p in far_frr_curve(s) {
        let _ = writeln!(out, "{}\t{:.8}\t{:.8}", p.delta, p.far, p.frr);
    }
    out
}

/// Score histogram per pair category over [-1, 1] with `bins` bins; each
/// line carries the raw count and log10(1 + count).
pub fn histogram_text(scored: &[(PairCategory, f64)], bins: usize) -> String {
    let bins = bins.max(1);
    let mut counts: BTreeMap<PairCategory, Vec<usize>> = BTreeMap::new();
    for &(c, s) in scored {
        let b = (((s.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        counts.entry(c).or_insert_with(|| vec![0; bins])[b] += 1;
    }
    let mut out = String::from("# category\tbin_low\tbin_high\tcount\tlog10_count\n");
    for (c, v) in counts {
        for (i, n) in v.iter().enumerate() {
            let lo = -1.0 + 2.0 * i as f64 / bins as f64;
            let hi = lo + 2.0 / bins as f64;
            let _ = writeln!(out, "{c}\t{lo:.4}\t{hi:.4}\t{n}\t{:.6}", (1.0 + *n as f64).log10());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use PairCategory::*;

    fn scored() -> Vec<(PairCategory, f64)> {
        vec![(TsTk, 0.9), (NtsTk, 0.8), (TsNtk, 0.3), (NtsNtk, 0.1)]
    }

    #[test]
    fn task_partitions() {
        let tb = task_score_set(&scored(), Task::Tb).unwrap();
        assert_eq!((tb.positives.clone(), tb.negatives.len()), (vec![0.9], 2));
        assert!(!tb.negatives.contains(&0.8));
        let to = task_score_set(&scored(), Task::To).unwrap();
        assert!(to.negatives.contains(&0.8));
        let c = task_score_set(&scored(), Task::CKws).unwrap();
        assert_eq!(c.positives.len(), 2);
        let err = task_score_set(&scored()[..3], Task::To).unwrap_err();
        assert!(err.to_string().contains("nts-ntk"));
    }

    #[test]
    fn report_aggregates() {
        let r = evaluate_task(&[scored(), scored()], Task::To, "keyword").unwrap();
        assert_eq!(r.eer(), (0.0, 0.0));
        let text = r.to_text();
        assert!(text.contains("to.keyword.eer.mean=0.000000"));
        assert!(text.contains("to.keyword.splits=2"));
    }

    #[test]
    fn test_split_thresholds_are_refused() {
        let s = ScoreSet::new(vec![1.0], vec![0.0]).unwrap();
        let t = DecisionThreshold::select(&s, ThresholdRule::EerPoint, Split::Test, None);
        assert!(t.for_test().is_err());
        let t = DecisionThreshold {
            source: Split::Validation,
            ..t
        };
        let m = evaluate_stream(&[("yes".into(), vec![0.5, -1.0]), ("no".into(), vec![-1.0])], t, 0.01).unwrap();
        assert_eq!(m.per_keyword[0].1, 0.5);
        assert_eq!(m.far, 0.25);
    }

    #[test]
    fn histogram_bins() {
        let h = histogram_text(&[(TsTk, 1.0), (TsTk, -1.0)], 4);
        assert!(h.contains("ts-tk\t-1.0000\t-0.5000\t1\t"));
        assert!(h.contains("ts-tk\t0.5000\t1.0000\t1\t"));
    }
}
