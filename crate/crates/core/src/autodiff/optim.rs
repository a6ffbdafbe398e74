use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer over a fixed set of parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    params: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    /// Adam with lr 1e-3 and the usual decay constants over every parameter
    /// in `store`.
    pub fn adam_default(store: &ParamStore) -> Self {
        Self::new(OptimizerKind::adam(), 1e-3, store, store.ids().collect()).expect("default lr")
    }

    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore, params: Vec<ParamId>) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let zeros = |id: &ParamId| Tensor::zeros(store.get(*id).shape());
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (params.iter().map(zeros).collect(), params.iter().map(zeros).collect()),
        };
        Ok(Self {
            kind,
            lr,
            step: 0,
            params,
            first,
            second,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. All gradients are validated before any parameter
    /// is touched, so a rejected step leaves the store unchanged.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for &id in &self.params {
            let g = grads
                .get(id)
                .ok_or_else(|| Error::MissingGradient(store.name(id).to_string()))?;
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for (slot, &id) in self.params.iter().enumerate() {
            let g = grads.get(id).expect("checked").data();
            let p = store.get_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self.first[slot].data_mut();
                    let v = self.second[slot].data_mut();
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn plain_gradient_descent() {
        let (mut s, id) = one_param(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &s, vec![id]).unwrap();
        let mut g = Gradients::default();
        g.insert(id, Tensor::scalar(2.0));
        opt.step(&mut s, &g).unwrap();
        assert!((s.get(id).item() - 0.8).abs() < 1e-15);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            let (mut s, id) = one_param(0.25);
            let mut opt = Optimizer::new(kind, 0.1, &s, vec![id]).unwrap();
            let mut g = Gradients::default();
            g.insert(id, Tensor::scalar(0.0));
            opt.step(&mut s, &g).unwrap();
            assert_eq!(s.get(id).item(), 0.25);
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the first update is lr * g / (|g| + eps).
        let (mut s, id) = one_param(1.0);
        let mut opt = Optimizer::adam_default(&s);
        let mut g = Gradients::default();
        g.insert(id, Tensor::scalar(1.0));
        opt.step(&mut s, &g).unwrap();
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((s.get(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected_with_name() {
        let (mut s, id) = one_param(1.0);
        let mut opt = Optimizer::adam_default(&s);
        let mut g = Gradients::default();
        g.insert(id, Tensor::scalar(f64::NAN));
        match opt.step(&mut s, &g) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "p"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.get(id).item(), 1.0);
        assert_eq!(opt.steps(), 0);
    }
}
