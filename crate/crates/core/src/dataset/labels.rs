use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNKNOWN: &str = "Unknown";
pub const SILENCE: &str = "Silence";

/// The ten command words of the 12-class Speech Commands setting.
pub const GSC_COMMANDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];

/// The remaining Speech Commands v1 words, all mapped to `Unknown`.
pub const GSC_OTHER_WORDS: [&str; 20] = [
    "bed", "bird", "cat", "dog", "eight", "five", "four", "happy", "house", "marvin", "nine", "one", "seven", "sheila",
    "six", "three", "tree", "two", "wow", "zero",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

/// Where an utterance's audio comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AudioSource {
    File(PathBuf),
    /// `len` samples starting at `start` inside a longer file.
    FileSegment {
        path: PathBuf,
        start: usize,
        len: usize,
    },
    /// Rendered on demand by the synthetic generator.
    Synthetic {
        speaker: Option<usize>,
        word: Option<usize>,
        seed: u64,
    },
}

impl fmt::Display for AudioSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |o: &Option<usize>| o.map_or("-".to_string(), |v| v.to_string());
        match self {
            AudioSource::File(p) => write!(f, "{}", p.display()),
            AudioSource::FileSegment { path, start, len } => write!(f, "{}#{start}+{len}", path.display()),
            AudioSource::Synthetic { speaker, word, seed } => {
                write!(f, "synth:{}:{}:{seed}", opt(speaker), opt(word))
            }
        }
    }
}

impl FromStr for AudioSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unparsable audio source `{s}`"));
        if let Some(rest) = s.strip_prefix("synth:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let opt = |p: &str| -> Result<Option<usize>> {
                if p == "-" {
                    Ok(None)
                } else {
                    p.parse().map(Some).map_err(|_| bad())
                }
            };
            return Ok(AudioSource::Synthetic {
                speaker: opt(parts[0])?,
                word: opt(parts[1])?,
                seed: parts[2].parse().map_err(|_| bad())?,
            });
        }
        if let Some((path, range)) = s.rsplit_once('#') {
            if let Some((a, b)) = range.split_once('+') {
                if let (Ok(start), Ok(len)) = (a.parse(), b.parse()) {
                    return Ok(AudioSource::FileSegment {
                        path: PathBuf::from(path),
                        start,
                        len,
                    });
                }
            }
        }
        Ok(AudioSource::File(PathBuf::from(s)))
    }
}

/// One labeled audio clip: keyword label (a command word, `Unknown` or
/// `Silence`) and an optional speaker label (`None` for silence).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledUtterance {
    pub id: String,
    pub source: AudioSource,
    pub keyword: String,
    pub speaker: Option<String>,
    pub split: Split,
}

impl LabeledUtterance {
    /// Whether this utterance may define a target keyword.
    pub fn is_anchor_keyword(&self) -> bool {
        self.keyword != UNKNOWN && self.keyword != SILENCE
    }
}

/// Keyword classes: the command words, then `Unknown` and `Silence` when present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordVocab {
    pub commands: Vec<String>,
    pub unknown: bool,
    pub silence: bool,
}

impl KeywordVocab {
    pub fn gsc() -> Self {
        Self {
            commands: GSC_COMMANDS.iter().map(|s| s.to_string()).collect(),
            unknown: true,
            silence: true,
        }
    }

    /// Commands in first-seen order of the labels; `Unknown`/`Silence` flagged.
    pub fn from_utterances(utts: &[LabeledUtterance]) -> Self {
        let mut commands: Vec<String> = Vec::new();
        let (mut unknown, mut silence) = (false, false);
        for u in utts {
            match u.keyword.as_str() {
                UNKNOWN => unknown = true,
                SILENCE => silence = true,
                k if !commands.iter().any(|c| c == k) => commands.push(k.to_string()),
                _ => {}
            }
        }
        // Keep the canonical command order when the labels are GSC words.
        commands.sort_by_key(|c| GSC_COMMANDS.iter().position(|g| g == c).unwrap_or(usize::MAX));
        Self {
            commands,
            unknown,
            silence,
        }
    }

    pub fn len(&self) -> usize {
        self.commands.len() + self.unknown as usize + self.silence as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_of(&self, label: &str) -> Option<usize> {
        match label {
            UNKNOWN if self.unknown => Some(self.commands.len()),
            SILENCE if self.silence => Some(self.commands.len() + self.unknown as usize),
            _ => self.commands.iter().position(|c| c == label),
        }
    }

    pub fn label(&self, class: usize) -> &str {
        if class < self.commands.len() {
            &self.commands[class]
        } else if self.unknown && class == self.commands.len() {
            UNKNOWN
        } else {
            SILENCE
        }
    }

    pub fn is_command(&self, class: usize) -> bool {
        class < self.commands.len()
    }
}

/// Speaker labels of a training set mapped to class indices (sorted order).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpeakerVocab {
    pub speakers: Vec<String>,
}

impl SpeakerVocab {
    pub fn from_utterances<'a>(utts: impl IntoIterator<Item = &'a LabeledUtterance>) -> Self {
        let set: BTreeMap<&str, ()> = utts
            .into_iter()
            .filter_map(|u| u.speaker.as_deref().map(|s| (s, ())))
            .collect();
        Self {
            speakers: set.keys().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn class_of(&self, speaker: &str) -> Option<usize> {
        self.speakers.binary_search_by(|s| s.as_str().cmp(speaker)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_round_trip() {
        for s in [
            AudioSource::File("a/b.wav".into()),
            AudioSource::FileSegment {
                path: "noise/x.wav".into(),
                start: 16000,
                len: 16000,
            },
            AudioSource::Synthetic {
                speaker: Some(3),
                word: None,
                seed: 99,
            },
        ] {
            assert_eq!(s.to_string().parse::<AudioSource>().unwrap(), s);
        }
    }

    #[test]
    fn gsc_vocab_has_twelve_classes() {
        let v = KeywordVocab::gsc();
        assert_eq!(v.len(), 12);
        assert_eq!(v.class_of("yes"), Some(0));
        assert_eq!(v.class_of(UNKNOWN), Some(10));
        assert_eq!(v.class_of(SILENCE), Some(11));
        assert_eq!(v.label(11), SILENCE);
        assert!(!v.is_command(10));
    }
}
