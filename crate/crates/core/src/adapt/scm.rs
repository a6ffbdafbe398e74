use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::eval::{frr_at_far, ScoreSet};

/// `α·ψᵏ + (1−α)·ψˢ`.
pub fn scm_combine(psi_k: f64, psi_s: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(alpha * psi_k + (1.0 - alpha) * psi_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScmProvenance {
    Manual,
    GridSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmParams {
    pub task: Task,
    pub alpha: f64,
    pub target_far: f64,
    pub grid_step: f64,
    pub provenance: ScmProvenance,
    /// Validation pair split the search ran on.
    pub validation_split: Option<usize>,
}

impl ScmParams {
    pub fn manual(task: Task, alpha: f64) -> Result<Self> {
        scm_combine(0.0, 0.0, alpha)?;
        Ok(Self {
            task,
            alpha,
            target_far: f64::NAN,
            grid_step: f64::NAN,
            provenance: ScmProvenance::Manual,
            validation_split: None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task={}", self.task);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "target_far={}", self.target_far);
        let _ = writeln!(s, "grid_step={}", self.grid_step);
        let _ = writeln!(
            s,
            "provenance={}",
            match self.provenance {
                ScmProvenance::Manual => "manual",
                ScmProvenance::GridSearch => "grid-search",
            }
        );
        let _ = writeln!(
            s,
            "validation_split={}",
            self.validation_split.map_or("-".to_string(), |v| v.to_string())
        );
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Format {
            kind: "scm parameters",
            path: path.to_path_buf(),
            reason: m,
        };
        let get = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::trim)
                .ok_or_else(|| bad(format!("missing `{key}`")))
        };
        let num = |key: &str| -> Result<f64> { get(key)?.parse().map_err(|_| bad(format!("bad `{key}`"))) };
        let p = Self {
            task: get("task")?.parse().map_err(|e: Error| bad(e.to_string()))?,
            alpha: num("alpha")?,
            target_far: num("target_far")?,
            grid_step: num("grid_step")?,
            provenance: match get("provenance")? {
                "manual" => ScmProvenance::Manual,
                "grid-search" => ScmProvenance::GridSearch,
                other => return Err(bad(format!("unknown provenance `{other}`"))),
            },
            validation_split: match get("validation_split")? {
                "-" => None,
                v => Some(v.parse().map_err(|_| bad("bad `validation_split`".into()))?),
            },
        };
        scm_combine(0.0, 0.0, p.alpha).map_err(|e| bad(e.to_string()))?;
        Ok(p)
    }
}

/// The grid `0, step, 2·step, …, 1`.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// FRR at FAR ≤ `c` of the blend at `alpha` over `(ψᵏ, ψˢ, positive)` samples.
pub fn scm_frr(samples: &[(f64, f64, bool)], alpha: f64, c: f64) -> Result<f64> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for &(k, s, label) in samples {
        let v = scm_combine(k, s, alpha)?;
        if label {
            pos.push(v)
        } else {
            neg.push(v)
        }
    }
    Ok(frr_at_far(&ScoreSet::new(pos, neg)?, c).0)
}

/// Grid α minimizing FRR at FAR ≤ `c`; the larger α wins ties.
/// Returns `(α, FRR)`.
pub fn scm_grid_search(samples: &[(f64, f64, bool)], c: f64, step: f64) -> Result<(f64, f64)> {
    if !samples.iter().any(|s| !s.2) {
        return Err(Error::InsufficientData("grid search needs negative pairs".into()));
    }
    if !samples.iter().any(|s| s.2) {
        return Err(Error::InsufficientData("grid search needs positive pairs".into()));
    }
    let mut best = (f64::NAN, f64::INFINITY);
    for alpha in alpha_grid(step)? {
        let frr = scm_frr(samples, alpha, c)?;
        if frr <= best.1 {
            best = (alpha, frr);
        }
    }
    Ok(best)
}
