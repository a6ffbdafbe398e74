//! Labeled corpora (synthetic or Speech Commands), manifests, evaluation
//! pair protocols and training batch samplers.

mod gsc;
mod labels;
mod manifest;
mod pairs;
mod sampler;
mod synth;

use std::path::{Path, PathBuf};

pub use gsc::{hash_split, ingest_gsc, parse_gsc_filename, GscIngest, BACKGROUND_DIR};
pub use labels::{
    AudioSource, KeywordVocab, LabeledUtterance, SpeakerVocab, Split, GSC_COMMANDS, GSC_OTHER_WORDS, SILENCE, UNKNOWN,
};
pub use manifest::{format_manifest, parse_manifest, read_manifest, write_manifest, MANIFEST_HEADER};
pub use pairs::{
    format_pairs, make_pair_splits, make_sv_splits, parse_pairs, read_pairs, verify_pairs, write_pairs, EvalPair,
    PairCategory, PairSplit, PairTask, Task,
};
pub use sampler::{MtlBatchSampler, TrmBatchSampler, TrmMode};
pub use synth::{
    generate_synthetic, mix_seed, speaker_splits, SpeakerTraits, Synthesizer, SyntheticConfig, WordPattern,
};

use crate::error::{Error, Result};
use crate::features::{read_wav, Waveform};

/// Produces the waveform behind an [`AudioSource`].
pub trait AudioLoader: Sync {
    fn load(&self, source: &AudioSource) -> Result<Waveform>;
}

/// Reads WAV files; relative paths resolve against `base`.
#[derive(Debug, Clone, Default)]
pub struct FileLoader {
    pub base: PathBuf,
}

impl FileLoader {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self { base: base.into() }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

impl AudioLoader for FileLoader {
    fn load(&self, source: &AudioSource) -> Result<Waveform> {
        match source {
            AudioSource::File(p) => read_wav(&self.resolve(p)),
            AudioSource::FileSegment { path, start, len } => {
                let path = self.resolve(path);
                let w = read_wav(&path)?;
                if start + len > w.len() {
                    return Err(Error::AudioFormat {
                        path,
                        reason: format!("segment {start}+{len} beyond {} samples", w.len()),
                    });
                }
                Ok(w.slice(*start, *len))
            }
            AudioSource::Synthetic { .. } => Err(Error::InvalidInput(format!(
                "synthetic source `{source}` needs the synthetic generator"
            ))),
        }
    }
}

impl AudioLoader for Synthesizer {
    fn load(&self, source: &AudioSource) -> Result<Waveform> {
        match source {
            AudioSource::Synthetic { speaker, word, seed } => self.render(*speaker, *word, *seed),
            other => FileLoader::default().load(other),
        }
    }
}

/// Utterances of one split, in corpus order.
pub fn filter_split(utts: &[LabeledUtterance], split: Split) -> Vec<LabeledUtterance> {
    utts.iter().filter(|u| u.split == split).cloned().collect()
}
