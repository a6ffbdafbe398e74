use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::{Error, Result};

/// One layer of the encoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Valid convolution over time; input and output are `[B, T, C]`.
    Conv1d {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    Affine {
        out: usize,
    },
    Relu,
    /// `[B, T, C] -> [B, C]`.
    MeanPoolTime,
}

/// Layers `[..split]` form the shared trunk; layers `[split..]` are
/// instantiated twice, once per head, and must end in an affine projection
/// to `embed_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub split: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::small(40, 32, 64)
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Seq(usize, usize),
    Flat(usize),
}

impl EncoderConfig {
    /// Two conv layers of `channels`, mean pooling, one affine layer per head.
    pub fn small(input_dim: usize, channels: usize, embed_dim: usize) -> Self {
        Self {
            input_dim,
            layers: vec![
                LayerSpec::Conv1d {
                    channels,
                    kernel: 5,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Conv1d {
                    channels,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MeanPoolTime,
                LayerSpec::Affine { out: embed_dim },
            ],
            split: 5,
            embed_dim,
        }
    }

    pub fn shared_layers(&self) -> &[LayerSpec] {
        &self.layers[..self.split]
    }

    pub fn head_layers(&self) -> &[LayerSpec] {
        &self.layers[self.split..]
    }

    /// Checks the stack against inputs of `frames` frames.
    pub fn validate(&self, frames: usize) -> Result<()> {
        let bad = |m: String| Error::Config(format!("encoder: {m}"));
        if self.split >= self.layers.len() {
            return Err(bad(format!("split {} leaves no head layers", self.split)));
        }
        if self.head_layers().last() != Some(&LayerSpec::Affine { out: self.embed_dim }) {
            return Err(bad(format!("heads must end in an affine layer to {}", self.embed_dim)));
        }
        if self.input_dim == 0 || self.embed_dim == 0 {
            return Err(bad("zero input or embedding dimension".into()));
        }
        let mut shape = Shape::Seq(frames, self.input_dim);
        for (i, l) in self.layers.iter().enumerate() {
            shape = match (*l, shape) {
                (
                    LayerSpec::Conv1d {
                        channels,
                        kernel,
                        stride,
                    },
                    Shape::Seq(t, _),
                ) => {
                    if channels == 0 || kernel == 0 || stride == 0 || t < kernel {
                        return Err(bad(format!("layer {i}: conv1d k={kernel} s={stride} on {t} frames")));
                    }
                    Shape::Seq((t - kernel) / stride + 1, channels)
                }
                (LayerSpec::MeanPoolTime, Shape::Seq(_, c)) => Shape::Flat(c),
                (LayerSpec::Affine { out }, Shape::Flat(_)) if out > 0 => Shape::Flat(out),
                (LayerSpec::Relu, s) => s,
                (l, _) => return Err(bad(format!("layer {i} ({l:?}) does not fit its input"))),
            };
        }
        match shape {
            Shape::Flat(d) if d == self.embed_dim => Ok(()),
            _ => Err(bad("stack does not end in a flat embedding".into())),
        }
    }

    /// Parameter names and shapes for the layers at `offset..` under `prefix`.
    pub(crate) fn param_shapes(
        &self,
        prefix: &str,
        offset: usize,
        layers: &[LayerSpec],
    ) -> Vec<(String, Vec<usize>, usize)> {
        let mut width = self.width_before(offset);
        let mut out = Vec::new();
        for (j, l) in layers.iter().enumerate() {
            let i = offset + j;
            match *l {
                LayerSpec::Conv1d { channels, kernel, .. } => {
                    out.push((
                        format!("{prefix}.{i}.w"),
                        vec![kernel * width, channels],
                        kernel * width,
                    ));
                    out.push((format!("{prefix}.{i}.b"), vec![channels], 0));
                    width = channels;
                }
                LayerSpec::Affine { out: o } => {
                    out.push((format!("{prefix}.{i}.w"), vec![width, o], width));
                    out.push((format!("{prefix}.{i}.b"), vec![o], 0));
                    width = o;
                }
                LayerSpec::Relu | LayerSpec::MeanPoolTime => {}
            }
        }
        out
    }

    /// Channel width entering layer `i`.
    fn width_before(&self, i: usize) -> usize {
        self.layers[..i].iter().fold(self.input_dim, |w, l| match *l {
            LayerSpec::Conv1d { channels, .. } => channels,
            LayerSpec::Affine { out } => out,
            _ => w,
        })
    }
}

/// Parameter leaves enter the graph either trainable or frozen.
pub(crate) struct Binder<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl Binder<'_> {
    pub fn node(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter `{name}`")))?;
        Ok(if self.trainable {
            g.param(self.store, id)
        } else {
            g.frozen(self.store, id)
        })
    }
}

pub(crate) fn apply_layers(
    g: &mut Graph,
    bind: &Binder<'_>,
    prefix: &str,
    offset: usize,
    layers: &[LayerSpec],
    mut x: NodeId,
) -> Result<NodeId> {
    for (j, l) in layers.iter().enumerate() {
        let i = offset + j;
        x = match *l {
            LayerSpec::Conv1d { kernel, stride, .. } => {
                let w = bind.node(g, &format!("{prefix}.{i}.w"))?;
                let b = bind.node(g, &format!("{prefix}.{i}.b"))?;
                g.conv1d(x, w, b, kernel, stride)?
            }
            LayerSpec::Affine { .. } => {
                let w = bind.node(g, &format!("{prefix}.{i}.w"))?;
                let b = bind.node(g, &format!("{prefix}.{i}.b"))?;
                g.affine(x, w, b)?
            }
            LayerSpec::Relu => g.relu(x),
            LayerSpec::MeanPoolTime => g.mean_pool_time(x)?,
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stack_is_valid() {
        let c = EncoderConfig::default();
        c.validate(98).unwrap();
        assert_eq!(c.shared_layers().len(), 5);
        assert!(c.validate(4).is_err());
        let shapes = c.param_shapes("kw", c.split, c.head_layers());
        assert_eq!(shapes[0].1, vec![32, 64]);
    }

    #[test]
    fn malformed_stacks_rejected() {
        let mut c = EncoderConfig::default();
        c.split = 6;
        assert!(c.validate(98).is_err());
        let mut c = EncoderConfig::default();
        c.layers.swap(4, 5);
        assert!(c.validate(98).is_err());
        let mut c = EncoderConfig::default();
        c.embed_dim = 32;
        assert!(c.validate(98).is_err());
    }
}
