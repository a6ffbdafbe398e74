//! The multi-task keyword/speaker network.

mod classifier;
mod encoder;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use classifier::{CosineClassifier, DEFAULT_BIAS, DEFAULT_SCALE};
pub use encoder::{EncoderConfig, LayerSpec};
pub use train::{train_mtl, EpochLog, MtlData, TrainConfig, TrainLog, ValidationData};

use crate::autodiff::{cosine, he_normal, lecun_normal, normalized, Checkpoint, Graph, NodeId, ParamStore, Tensor};
use crate::dataset::{mix_seed, KeywordVocab, SpeakerVocab};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{FeatureConfig, FeatureMatrix};
use encoder::{apply_layers, Binder};

pub(crate) const KEYWORD: &str = "keyword";
pub(crate) const SPEAKER: &str = "speaker";

/// Everything needed to rebuild a model; stored inside its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub features: FeatureConfig,
    pub keywords: KeywordVocab,
    pub speakers: SpeakerVocab,
    pub classifier_scale: f64,
    pub classifier_bias: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(features: FeatureConfig, keywords: KeywordVocab, speakers: SpeakerVocab, seed: u64) -> Self {
        Self {
            encoder: EncoderConfig::small(features.dim(), 32, 64),
            features,
            keywords,
            speakers,
            classifier_scale: DEFAULT_SCALE,
            classifier_bias: DEFAULT_BIAS,
            seed,
        }
    }
}

/// Keyword and speaker embeddings of a batch, one row per input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Embeddings {
    pub keyword: Vec<Vec<f64>>,
    pub speaker: Vec<Vec<f64>>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.keyword.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyword.is_empty()
    }
}

/// Scalar parameter counts per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub shared: usize,
    pub keyword_head: usize,
    pub speaker_head: usize,
    pub keyword_classifier: usize,
    pub speaker_classifier: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.shared + self.keyword_head + self.speaker_head + self.keyword_classifier + self.speaker_classifier
    }

    /// The embedding network alone (shared trunk and both heads).
    pub fn encoder(&self) -> usize {
        self.shared + self.keyword_head + self.speaker_head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlModel {
    config: ModelConfig,
    params: ParamStore,
}

impl MtlModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.encoder.validate(config.features.frames_per_clip())?;
        if config.encoder.input_dim != config.features.dim() {
            return Err(Error::Config(format!(
                "encoder expects {} input dims, features produce {}",
                config.encoder.input_dim,
                config.features.dim()
            )));
        }
        if config.keywords.len() < 2 {
            return Err(Error::Config("need at least two keyword classes".into()));
        }
        if config.speakers.len() < 2 {
            return Err(Error::Config("need at least two training speakers".into()));
        }
        let mut model = Self {
            params: ParamStore::new(),
            config,
        };
        let enc = &model.config.encoder;
        let d = enc.embed_dim;
        let mut shapes = enc.param_shapes("shared", 0, enc.shared_layers());
        shapes.extend(enc.param_shapes(KEYWORD, enc.split, enc.head_layers()));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(model.config.seed, &[100]));
        for (name, shape, fan_in) in shapes {
            let t = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                he_normal(&mut rng, &shape, fan_in)
            };
            model.params.insert(&name, t)?;
        }
        let k = model.config.keywords.len();
        model
            .params
            .insert("keyword_clf.w", lecun_normal(&mut rng, &[d, k], d))?;
        model.add_classifier_scalars(KEYWORD)?;
        model.init_speaker_side(mix_seed(model.config.seed, &[101]))?;
        let dim = model.config.features.dim();
        model.params.insert("norm.mean", Tensor::zeros(&[dim]))?;
        model.params.insert("norm.std", Tensor::filled(&[dim], 1.0))?;
        Ok(model)
    }

    fn add_classifier_scalars(&mut self, head: &str) -> Result<()> {
        self.params.insert(
            &format!("{head}_clf.scale"),
            Tensor::scalar(self.config.classifier_scale),
        )?;
        self.params
            .insert(&format!("{head}_clf.bias"), Tensor::scalar(self.config.classifier_bias))?;
        Ok(())
    }

    fn init_speaker_side(&mut self, seed: u64) -> Result<()> {
        let enc = self.config.encoder.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = enc.embed_dim;
        let s = self.config.speakers.len();
        let mut vals = Vec::new();
        for (name, shape, fan_in) in enc.param_shapes(SPEAKER, enc.split, enc.head_layers()) {
            let t = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                he_normal(&mut rng, &shape, fan_in)
            };
            vals.push((name, t));
        }
        vals.push(("speaker_clf.w".into(), lecun_normal(&mut rng, &[d, s], d)));
        for (name, t) in vals {
            match self.params.id(&name) {
                Some(id) => *self.params.get_mut(id) = t,
                None => {
                    self.params.insert(&name, t)?;
                }
            }
        }
        if self.params.id("speaker_clf.scale").is_none() {
            self.add_classifier_scalars(SPEAKER)?;
        }
        Ok(())
    }

    /// Re-draws the speaker head and classifier from `seed`.
    pub fn reinit_speaker_side(&mut self, seed: u64) -> Result<()> {
        self.init_speaker_side(seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.config.encoder.embed_dim
    }

    /// Parameters updated by training (everything but the input normalization).
    pub fn trainable_ids(&self) -> Vec<crate::autodiff::ParamId> {
        self.params
            .iter()
            .filter(|(_, n, _)| !n.starts_with("norm."))
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Sets the per-dimension input normalization from training features.
    pub fn fit_normalization(&mut self, feats: &[FeatureMatrix]) -> Result<()> {
        let dim = self.config.features.dim();
        let (mut sum, mut sq, mut n) = (vec![0.0; dim], vec![0.0; dim], 0usize);
        for f in feats {
            self.check_dim(f)?;
            for row in f.data.chunks(dim) {
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData(
                "no frames to fit the input normalization".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        *self.param_mut("norm.mean") = Tensor::vector(mean);
        *self.param_mut("norm.std") = Tensor::vector(std);
        Ok(())
    }

    fn param(&self, name: &str) -> &Tensor {
        self.params.by_name(name).expect("model parameter")
    }

    fn param_mut(&mut self, name: &str) -> &mut Tensor {
        let id = self.params.id(name).expect("model parameter");
        self.params.get_mut(id)
    }

    fn check_dim(&self, f: &FeatureMatrix) -> Result<()> {
        if f.dim != self.config.encoder.input_dim {
            return Err(Error::InvalidInput(format!(
                "features have {} dims, model expects {}",
                f.dim, self.config.encoder.input_dim
            )));
        }
        Ok(())
    }

    /// Normalized copy of the feature data.
    pub fn normalize(&self, f: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_dim(f)?;
        let (mean, std) = (self.param("norm.mean").data(), self.param("norm.std").data());
        Ok(f.data
            .chunks(f.dim)
            .flat_map(|row| row.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s))
            .collect())
    }

    /// Runs the encoder on `x [B, T, D]`; returns the keyword and speaker
    /// embedding nodes `[B, d]`.
    pub fn forward(&self, g: &mut Graph, x: NodeId, trainable: bool) -> Result<(NodeId, NodeId)> {
        let bind = Binder {
            store: &self.params,
            trainable,
        };
        let enc = &self.config.encoder;
        let h = apply_layers(g, &bind, "shared", 0, enc.shared_layers(), x)?;
        let zk = apply_layers(g, &bind, KEYWORD, enc.split, enc.head_layers(), h)?;
        let zs = apply_layers(g, &bind, SPEAKER, enc.split, enc.head_layers(), h)?;
        Ok((zk, zs))
    }

    /// Logit node of one head's classifier.
    pub(crate) fn logits(&self, g: &mut Graph, head: &str, z: NodeId, trainable: bool) -> Result<NodeId> {
        let bind = Binder {
            store: &self.params,
            trainable,
        };
        let w = bind.node(g, &format!("{head}_clf.w"))?;
        let s = bind.node(g, &format!("{head}_clf.scale"))?;
        let b = bind.node(g, &format!("{head}_clf.bias"))?;
        classifier::logits_node(g, z, w, s, b)
    }

    fn batch_tensor(&self, xs: &[&[f64]], frames: usize) -> Result<Tensor> {
        let dim = self.config.encoder.input_dim;
        let mut data = Vec::with_capacity(xs.len() * frames * dim);
        for x in xs {
            if x.len() != frames * dim {
                return Err(Error::InvalidInput(format!(
                    "batch mixes lengths: {} values, expected {}",
                    x.len(),
                    frames * dim
                )));
            }
            data.extend_from_slice(x);
        }
        Tensor::new(vec![xs.len(), frames, dim], data)
    }

    /// Embeddings of already-normalized inputs of `frames` frames each.
    pub fn embed_normalized(&self, xs: &[&[f64]], frames: usize) -> Result<Embeddings> {
        if xs.is_empty() {
            return Ok(Embeddings::default());
        }
        let mut g = Graph::new();
        let x = g.constant(self.batch_tensor(xs, frames)?);
        let (zk, zs) = self.forward(&mut g, x, false)?;
        let rows = |t: &Tensor| (0..t.rows()).map(|r| t.row(r).to_vec()).collect::<Vec<_>>();
        let out = Embeddings {
            keyword: rows(g.value(zk)),
            speaker: rows(g.value(zs)),
        };
        if out.keyword.iter().chain(&out.speaker).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        Ok(out)
    }

    /// `(zᵏ, zˢ)` of one feature matrix; the trunk runs once for both.
    pub fn embed(&self, f: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.normalize(f)?;
        let mut e = self.embed_normalized(&[&x], f.frames)?;
        Ok((e.keyword.remove(0), e.speaker.remove(0)))
    }

    /// Embeddings of many inputs, batched and fanned out over `exec`.
    pub fn embed_all(&self, feats: &[FeatureMatrix], exec: Exec) -> Result<Embeddings> {
        const CHUNK: usize = 32;
        let chunks: Vec<&[FeatureMatrix]> = feats.chunks(CHUNK).collect();
        let parts = exec.try_map(&chunks, |chunk| {
            let xs = chunk.iter().map(|f| self.normalize(f)).collect::<Result<Vec<_>>>()?;
            let frames = chunk[0].frames;
            if chunk.iter().any(|f| f.frames != frames) {
                // Ragged lengths: embed one at a time.
                let mut e = Embeddings::default();
                for (f, x) in chunk.iter().zip(&xs) {
                    let one = self.embed_normalized(&[x], f.frames)?;
                    e.keyword.extend(one.keyword);
                    e.speaker.extend(one.speaker);
                }
                return Ok(e);
            }
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            self.embed_normalized(&refs, frames)
        })?;
        let mut out = Embeddings::default();
        for p in parts {
            out.keyword.extend(p.keyword);
            out.speaker.extend(p.speaker);
        }
        Ok(out)
    }

    fn classifier(&self, head: &str) -> CosineClassifier {
        CosineClassifier {
            weight: self.param(&format!("{head}_clf.w")).clone(),
            scale: self.param(&format!("{head}_clf.scale")).item(),
            bias: self.param(&format!("{head}_clf.bias")).item(),
        }
    }

    pub fn keyword_classifier(&self) -> CosineClassifier {
        self.classifier(KEYWORD)
    }

    pub fn speaker_classifier(&self) -> CosineClassifier {
        self.classifier(SPEAKER)
    }

    /// Classifier column of a command keyword.
    pub fn keyword_prototype(&self, class: usize) -> Result<Vec<f64>> {
        if !self.config.keywords.is_command(class) {
            return Err(Error::InvalidInput(format!(
                "`{}` cannot be a target keyword",
                self.config.keywords.label(class)
            )));
        }
        Ok(self.keyword_classifier().column(class))
    }

    /// `ψᵏ = cos(zᵏ, W_target)`.
    pub fn keyword_score(&self, zk: &[f64], class: usize) -> Result<f64> {
        Ok(cosine(zk, &self.keyword_prototype(class)?))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::to_string(&self.config)
            .map_err(|e| Error::InvalidInput(format!("serializing model config: {e}")))?;
        Ok(Checkpoint {
            config,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&ck.config).map_err(|e| Error::Format {
            kind: "model checkpoint",
            path: path.to_path_buf(),
            reason: format!("config: {e}"),
        })?;
        let mut model = Self::new(config)?;
        model.params.load_from(&ck.params).map_err(|e| Error::Format {
            kind: "model checkpoint",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }

    pub fn param_counts(&self) -> ParamCounts {
        let mut c = ParamCounts {
            shared: 0,
            keyword_head: 0,
            speaker_head: 0,
            keyword_classifier: 0,
            speaker_classifier: 0,
        };
        for (_, name, t) in self.params.iter() {
            let slot = match name.split('.').next().unwrap_or_default() {
                "shared" => &mut c.shared,
                KEYWORD => &mut c.keyword_head,
                SPEAKER => &mut c.speaker_head,
                "keyword_clf" => &mut c.keyword_classifier,
                "speaker_clf" => &mut c.speaker_classifier,
                _ => continue,
            };
            *slot += t.len();
        }
        c
    }
}

/// `ψˢ = cos(zˢ, enrollment)`.
pub fn speaker_score(zs: &[f64], enrollment: &[f64]) -> f64 {
    cosine(zs, enrollment)
}

/// Mean of the normalized reference embeddings, re-normalized.
pub fn enrollment_embedding(refs: &[&[f64]]) -> Result<Vec<f64>> {
    let first = refs
        .first()
        .ok_or_else(|| Error::InvalidInput("enrollment needs at least one clip".into()))?;
    let mut acc = vec![0.0; first.len()];
    for r in refs {
        if r.len() != acc.len() {
            return Err(Error::InvalidInput(
                "enrollment clips have different embedding sizes".into(),
            ));
        }
        for (a, v) in acc.iter_mut().zip(normalized(r)) {
            *a += v;
        }
    }
    Ok(normalized(&acc))
}
