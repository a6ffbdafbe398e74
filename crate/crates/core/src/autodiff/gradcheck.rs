//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the check is independent of
//! the reverse pass it validates.

use super::graph::{Gradients, Graph, NodeId};
use super::params::ParamStore;
use crate::error::Result;

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// `max |a - n| / max(1, |a|, |n|)` over every checked entry.
    pub max_rel_error: f64,
    pub entries: usize,
}

/// Builds the loss via `build`, differentiates it, and compares every
/// parameter entry against `(f(p + h) - f(p - h)) / 2h`.
pub fn check<F>(store: &ParamStore, step: f64, mut build: F) -> Result<GradCheck>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let analytic: Gradients = g.backward(loss)?;

    let mut work = store.clone();
    let mut max_rel: f64 = 0.0;
    let mut entries = 0;
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let up = eval(&mut build, &work)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let down = eval(&mut build, &work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            max_rel = max_rel.max(rel);
            entries += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        entries,
    })
}

fn eval<F>(build: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let l = build(&mut g, store)?;
    Ok(g.value(l).item())
}
