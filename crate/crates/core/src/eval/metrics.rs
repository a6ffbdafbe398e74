//! Threshold sweeps over a set of positive and negative scores.
//!
//! A score is accepted iff `score > δ`. Candidate thresholds are every
//! distinct observed score plus the two infinities, which is exhaustive for
//! finite data: any other δ behaves like the nearest candidate below it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn decide(score: f64, delta: f64) -> bool {
    score > delta
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl ScoreSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::InsufficientData(format!(
                "score set needs positives and negatives, got {} and {}",
                positives.len(),
                negatives.len()
            )));
        }
        if let Some(bad) = positives.iter().chain(&negatives).find(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score {bad}")));
        }
        Ok(Self { positives, negatives })
    }

    /// Swaps the roles of the two classes and negates every score.
    pub fn mirrored(&self) -> Self {
        Self {
            positives: self.negatives.iter().map(|s| -s).collect(),
            negatives: self.positives.iter().map(|s| -s).collect(),
        }
    }

    pub fn far(&self, delta: f64) -> f64 {
        self.negatives.iter().filter(|&&s| decide(s, delta)).count() as f64 / self.negatives.len() as f64
    }

    pub fn frr(&self, delta: f64) -> f64 {
        self.positives.iter().filter(|&&s| !decide(s, delta)).count() as f64 / self.positives.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: f64,
    pub far: f64,
    pub frr: f64,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// (δ, FAR, FRR) at every candidate threshold, δ ascending.
pub fn far_frr_curve(s: &ScoreSet) -> Vec<CurvePoint> {
    let (pos, neg) = (sorted(&s.positives), sorted(&s.negatives));
    let mut deltas: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut out = Vec::with_capacity(deltas.len() + 2);
    out.push(CurvePoint {
        delta: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    });
    // Pointers count scores <= δ on each side.
    let (mut ip, mut ineg) = (0, 0);
    for d in deltas {
        while ip < pos.len() && pos[ip] <= d {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] <= d {
            ineg += 1;
        }
        out.push(CurvePoint {
            delta: d,
            far: (nn - ineg as f64) / nn,
            frr: ip as f64 / np,
        });
    }
    out.push(CurvePoint {
        delta: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    out
}

/// (EER, δ): mean of FAR and FRR where |FAR − FRR| is smallest, smallest δ on ties.
pub fn eer(s: &ScoreSet) -> (f64, f64) {
    let mut best: Option<CurvePoint> = None;
    for p in far_frr_curve(s) {
        if best.is_none_or(|b| (p.far - p.frr).abs() < (b.far - b.frr).abs()) {
            best = Some(p);
        }
    }
    let b = best.expect("curve has sentinels");
    ((b.far + b.frr) / 2.0, b.delta)
}

/// (FRR, δ) at the smallest δ whose FAR is at most `c`.
pub fn frr_at_far(s: &ScoreSet, c: f64) -> (f64, f64) {
    let p = far_frr_curve(s)
        .into_iter()
        .find(|p| p.far <= c)
        .expect("+inf sentinel has FAR 0");
    (p.frr, p.delta)
}

/// (FAR, δ) at the largest δ whose FRR is at most `r`.
pub fn far_at_frr(s: &ScoreSet, r: f64) -> (f64, f64) {
    let p = far_frr_curve(s)
        .into_iter()
        .rev()
        .find(|p| p.frr <= r)
        .expect("-inf sentinel has FRR 0");
    (p.far, p.delta)
}

/// Largest candidate δ (positive scores plus sentinels) rejecting at most a
/// fraction `r` of `positives`.
pub fn threshold_at_frr(positives: &[f64], r: f64) -> f64 {
    let pos = sorted(positives);
    let n = pos.len() as f64;
    let mut best = f64::NEG_INFINITY;
    let mut i = 0;
    let mut deltas = pos.clone();
    deltas.dedup();
    for d in deltas {
        while i < pos.len() && pos[i] <= d {
            i += 1;
        }
        if i as f64 / n <= r {
            best = d;
        } else {
            break;
        }
    }
    best
}
