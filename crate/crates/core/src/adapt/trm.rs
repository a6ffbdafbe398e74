//! Attention-gated fusion of keyword and speaker embeddings, trained with
//! an angular prototypical loss.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    cosine, lecun_normal, norm, normalized, sigmoid, Checkpoint, Graph, NodeId, Optimizer, OptimizerKind, ParamStore,
    Tensor,
};
use crate::dataset::{mix_seed, LabeledUtterance, PairCategory, Task, TrmBatchSampler, TrmMode};
use crate::error::{Error, Result};
use crate::eval::{eer, task_score_set};
use crate::model::{Embeddings, MtlModel, DEFAULT_BIAS, DEFAULT_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateKind {
    /// One sigmoid gate per input dimension.
    PerDimension,
    /// One gate per embedding, broadcast over its dimensions.
    PerEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrmConfig {
    pub task: TrmMode,
    /// Per-head embedding size `d`; the module works on `2d` inputs.
    pub embed_dim: usize,
    pub reduction: usize,
    pub gate: GateKind,
    pub seed: u64,
}

impl TrmConfig {
    pub fn new(task: TrmMode, embed_dim: usize, seed: u64) -> Self {
        Self {
            task,
            embed_dim,
            reduction: 2,
            gate: GateKind::PerDimension,
            seed,
        }
    }

    fn gate_width(&self) -> usize {
        match self.gate {
            GateKind::PerDimension => 2 * self.embed_dim,
            GateKind::PerEmbedding => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrmModule {
    config: TrmConfig,
    params: ParamStore,
}

/// `concat(zᵏ/‖zᵏ‖, zˢ/‖zˢ‖)`.
pub fn trm_input(zk: &[f64], zs: &[f64]) -> Result<Vec<f64>> {
    if norm(zk) == 0.0 || norm(zs) == 0.0 {
        return Err(Error::InvalidInput("zero embedding has no direction".into()));
    }
    let mut u = normalized(zk);
    u.extend(normalized(zs));
    Ok(u)
}

impl TrmModule {
    pub fn new(config: TrmConfig) -> Result<Self> {
        if config.embed_dim == 0 || config.reduction == 0 {
            return Err(Error::Config("attention module needs positive sizes".into()));
        }
        let (w2, r, g) = (2 * config.embed_dim, config.reduction, config.gate_width());
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[200]));
        let mut params = ParamStore::new();
        params.insert("squeeze.w", lecun_normal(&mut rng, &[w2, r], w2))?;
        params.insert("squeeze.b", Tensor::zeros(&[r]))?;
        params.insert("excite.w", lecun_normal(&mut rng, &[r, g], r))?;
        params.insert("excite.b", Tensor::zeros(&[g]))?;
        params.insert("loss.scale", Tensor::scalar(DEFAULT_SCALE))?;
        params.insert("loss.bias", Tensor::scalar(DEFAULT_BIAS))?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &TrmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params.by_name(name).expect("attention parameter")
    }

    /// Gate values for a prepared input `u`, expanded to `2d`.
    pub fn gate(&self, u: &[f64]) -> Vec<f64> {
        let (sw, sb, ew, eb) = (
            self.p("squeeze.w"),
            self.p("squeeze.b"),
            self.p("excite.w"),
            self.p("excite.b"),
        );
        let r = sb.len();
        let h: Vec<f64> = (0..r)
            .map(|j| (sb.data()[j] + u.iter().enumerate().map(|(i, x)| x * sw.data()[i * r + j]).sum::<f64>()).max(0.0))
            .collect();
        let g = eb.len();
        let a: Vec<f64> = (0..g)
            .map(|k| sigmoid(eb.data()[k] + h.iter().enumerate().map(|(j, x)| x * ew.data()[j * g + k]).sum::<f64>()))
            .collect();
        match self.config.gate {
            GateKind::PerDimension => a,
            GateKind::PerEmbedding => {
                let d = self.config.embed_dim;
                (0..2 * d).map(|i| a[i / d]).collect()
            }
        }
    }

    /// `u ⊙ gate(u)` for a prepared input.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.gate(u)).map(|(x, a)| x * a).collect()
    }

    pub fn forward(&self, zk: &[f64], zs: &[f64]) -> Result<Vec<f64>> {
        if zk.len() != self.config.embed_dim || zs.len() != self.config.embed_dim {
            return Err(Error::InvalidInput(format!(
                "attention module expects {}-dim embeddings",
                self.config.embed_dim
            )));
        }
        Ok(self.apply(&trm_input(zk, zs)?))
    }

    /// Cosine between the gated query and prototype.
    pub fn score(&self, query: (&[f64], &[f64]), prototype: (&[f64], &[f64])) -> Result<f64> {
        Ok(cosine(
            &self.forward(query.0, query.1)?,
            &self.forward(prototype.0, prototype.1)?,
        ))
    }

    /// Graph version of [`TrmModule::apply`] on rows of `u [N, 2d]`.
    pub fn forward_node(&self, g: &mut Graph, u: NodeId) -> Result<NodeId> {
        let node = |g: &mut Graph, n: &str| g.param(&self.params, self.params.id(n).expect("attention parameter"));
        let (sw, sb, ew, eb) = (
            node(g, "squeeze.w"),
            node(g, "squeeze.b"),
            node(g, "excite.w"),
            node(g, "excite.b"),
        );
        let h = g.affine(u, sw, sb)?;
        let h = g.relu(h);
        let a = g.affine(h, ew, eb)?;
        let mut a = g.sigmoid(a);
        if self.config.gate == GateKind::PerEmbedding {
            let d = self.config.embed_dim;
            let mut e = vec![0.0; 2 * 2 * d];
            for i in 0..2 * d {
                e[(i / d) * 2 * d + i] = 1.0;
            }
            let expand = g.constant(Tensor::new(vec![2, 2 * d], e)?);
            a = g.matmul(a, expand)?;
        }
        g.mul(u, a)
    }

    /// Angular prototypical loss over rows of prepared queries and prototypes:
    /// `−(1/N) Σᵢ log softmaxᵢ(w·ψᵢⱼ + b)` with `ψ` the gated cosine matrix.
    pub fn loss_node(&self, g: &mut Graph, queries: Tensor, prototypes: Tensor) -> Result<NodeId> {
        let n = queries.rows();
        if prototypes.rows() != n {
            return Err(Error::InvalidInput(format!(
                "{n} queries but {} prototypes",
                prototypes.rows()
            )));
        }
        let q = g.constant(queries);
        let p = g.constant(prototypes);
        let qo = self.forward_node(g, q)?;
        let po = self.forward_node(g, p)?;
        let psi = g.cosine_matrix(qo, po)?;
        let w = g.param(&self.params, self.params.id("loss.scale").expect("scale"));
        let b = g.param(&self.params, self.params.id("loss.bias").expect("bias"));
        let logits = g.scale_shift(psi, w, b)?;
        let targets: Vec<usize> = (0..n).collect();
        g.softmax_cross_entropy(logits, &targets)
    }

    pub fn loss(&self, queries: Tensor, prototypes: Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.loss_node(&mut g, queries, prototypes)?;
        Ok(g.value(l).item())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config: serde_json::to_string(&self.config)
                .map_err(|e| Error::InvalidInput(format!("serializing attention config: {e}")))?,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "attention checkpoint",
            path: path.to_path_buf(),
            reason,
        };
        let config: TrmConfig = serde_json::from_str(&ck.config).map_err(|e| bad(format!("config: {e}")))?;
        let mut m = Self::new(config)?;
        m.params.load_from(&ck.params).map_err(|e| bad(e.to_string()))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrmTrainConfig {
    pub epochs: usize,
    pub rows: usize,
    pub learning_rate: f64,
    /// Target share of same-keyword off-diagonal entries in TO batches.
    pub same_keyword_target: f64,
    pub speaker_reuse: f64,
    pub seed: u64,
}

impl Default for TrmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            rows: 8,
            learning_rate: 1e-3,
            same_keyword_target: 0.5,
            speaker_reuse: 0.5,
            seed: 0,
        }
    }
}

/// Prepared validation pairs: (query input, prototype input, category).
#[derive(Debug, Clone, Default)]
pub struct TrmValidation {
    pub pairs: Vec<(Vec<f64>, Vec<f64>, PairCategory)>,
}

impl TrmValidation {
    /// Task EER of `m` on these pairs.
    pub fn eer(&self, m: &TrmModule, task: Task) -> Result<f64> {
        let scored: Vec<(PairCategory, f64)> = self
            .pairs
            .iter()
            .map(|(q, p, c)| (*c, cosine(&m.apply(q), &m.apply(p))))
            .collect();
        Ok(eer(&task_score_set(&scored, task)?).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrmEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrmTrainLog {
    pub epochs: Vec<TrmEpochLog>,
    pub best_epoch: usize,
}

fn mode_task(mode: TrmMode) -> Task {
    match mode {
        TrmMode::Tb => Task::Tb,
        TrmMode::To => Task::To,
    }
}

/// Trains `m` on precomputed embeddings of `utts` from a frozen `model`.
/// Queries are the utterances' embeddings; prototypes are the classifier
/// columns of their keyword and speaker. One epoch visits about as many rows
/// as there are eligible utterances.
pub fn train_trm(
    m: &mut TrmModule,
    model: &MtlModel,
    utts: &[LabeledUtterance],
    emb: &Embeddings,
    val: Option<&TrmValidation>,
    cfg: &TrmTrainConfig,
) -> Result<TrmTrainLog> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if emb.len() != utts.len() {
        return Err(Error::InvalidInput(format!(
            "{} embeddings for {} utterances",
            emb.len(),
            utts.len()
        )));
    }
    let mcfg = model.config();
    let (kclf, sclf) = (model.keyword_classifier(), model.speaker_classifier());
    // Prepared query and prototype inputs of every eligible utterance.
    let mut prepared: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; utts.len()];
    for (i, u) in utts.iter().enumerate() {
        let (Some(k), Some(s)) = (
            mcfg.keywords
                .class_of(&u.keyword)
                .filter(|&k| mcfg.keywords.is_command(k)),
            u.speaker.as_deref().and_then(|s| mcfg.speakers.class_of(s)),
        ) else {
            continue;
        };
        let q = trm_input(&emb.keyword[i], &emb.speaker[i])?;
        let p = trm_input(&kclf.column(k), &sclf.column(s))?;
        prepared[i] = Some((q, p));
    }
    let eligible = prepared.iter().filter(|p| p.is_some()).count();
    let pool: Vec<LabeledUtterance> = utts
        .iter()
        .zip(&prepared)
        .map(|(u, p)| {
            let mut u = u.clone();
            if p.is_none() {
                // Hide utterances the classifiers cannot prototype.
                u.speaker = None;
            }
            u
        })
        .collect();
    let mut sampler = TrmBatchSampler::new(&pool, cfg.rows, m.config.task, cfg.same_keyword_target, cfg.seed)?
        .with_speaker_reuse(cfg.speaker_reuse);
    let per_epoch = eligible.div_ceil(cfg.rows).max(1);
    let trainable: Vec<_> = m.params.ids().collect();
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.learning_rate, &m.params, trainable)?;
    let d2 = 2 * m.config.embed_dim;
    let task = mode_task(m.config.task);
    let mut log = TrmTrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(ParamStore, f64)> = None;
    let mut last_good = m.params.clone();
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for _ in 0..per_epoch {
            let rows = sampler.sample();
            let (mut q, mut p) = (Vec::with_capacity(rows.len() * d2), Vec::with_capacity(rows.len() * d2));
            for &i in &rows {
                let (qi, pi) = prepared[i].as_ref().expect("sampler only returns eligible rows");
                q.extend_from_slice(qi);
                p.extend_from_slice(pi);
            }
            let mut g = Graph::new();
            let loss = m.loss_node(
                &mut g,
                Tensor::new(vec![rows.len(), d2], q)?,
                Tensor::new(vec![rows.len(), d2], p)?,
            )?;
            let value = g.value(loss).item();
            let step = if value.is_finite() {
                g.backward(loss).and_then(|grads| opt.step(&mut m.params, &grads))
            } else {
                Err(Error::Numerical(format!("non-finite attention loss at epoch {epoch}")))
            };
            if let Err(e) = step {
                m.params.load_from(&best.map(|b| b.0).unwrap_or(last_good))?;
                return Err(match e {
                    Error::NonFiniteGradient(p) => {
                        Error::Numerical(format!("non-finite gradient for {p} at epoch {epoch}"))
                    }
                    other => other,
                });
            }
            total += value;
        }
        last_good = m.params.clone();
        let val_eer = val.map(|v| v.eer(m, task)).transpose()?;
        log.epochs.push(TrmEpochLog {
            epoch,
            loss: total / per_epoch as f64,
            val_eer,
        });
        // Ties go to the later, longer-trained epoch.
        let key = val_eer.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| val.is_none() || key <= b.1) {
            best = Some((m.params.clone(), key));
            log.best_epoch = epoch;
        }
    }
    if let Some((params, _)) = best {
        m.params.load_from(&params)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn module(gate: GateKind) -> TrmModule {
        let mut c = TrmConfig::new(TrmMode::To, 3, 1);
        c.gate = gate;
        TrmModule::new(c).unwrap()
    }

    #[test]
    fn zero_excitation_halves_input() {
        let mut m = module(GateKind::PerDimension);
        let id = m.params.id("excite.w").unwrap();
        *m.params.get_mut(id) = Tensor::zeros(&[2, 6]);
        let zk = [1.0, 2.0, 2.0];
        let zs = [0.0, 3.0, 4.0];
        let out = m.forward(&zk, &zs).unwrap();
        let u = trm_input(&zk, &zs).unwrap();
        for (o, x) in out.iter().zip(&u) {
            assert!((o - 0.5 * x).abs() < 1e-15);
        }
        assert_eq!(out.len(), 6);
        assert!(m.forward(&[0.0; 3], &zs).is_err());
    }

    #[test]
    fn input_scale_invariance_and_symmetry() {
        for gate in [GateKind::PerDimension, GateKind::PerEmbedding] {
            let m = module(gate);
            let (a, b) = ([0.3, -1.0, 2.0], [1.0, 0.5, -0.2]);
            let a5: Vec<f64> = a.iter().map(|x| 5.0 * x).collect();
            let o1 = m.forward(&a, &b).unwrap();
            let o2 = m.forward(&a5, &b).unwrap();
            assert!(o1.iter().zip(&o2).all(|(x, y)| (x - y).abs() < 1e-12));
            let (c, d) = ([0.1, 0.1, 1.0], [-1.0, 0.2, 0.3]);
            let s1 = m.score((&a, &b), (&c, &d)).unwrap();
            let s2 = m.score((&c, &d), (&a, &b)).unwrap();
            assert!((s1 - s2).abs() < 1e-15);
            assert!((m.score((&a, &b), (&a, &b)).unwrap() - 1.0).abs() < 1e-12);
            let g = m.gate(&trm_input(&a, &b).unwrap());
            assert!(g.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn graph_forward_matches_direct() {
        for gate in [GateKind::PerDimension, GateKind::PerEmbedding] {
            let m = module(gate);
            let u = trm_input(&[0.3, -1.0, 2.0], &[1.0, 0.5, -0.2]).unwrap();
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![1, 6], u.clone()).unwrap());
            let o = m.forward_node(&mut g, x).unwrap();
            let direct = m.apply(&u);
            assert!(g
                .value(o)
                .data()
                .iter()
                .zip(&direct)
                .all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }
}
