//! Plain-text manifest: one utterance per line, tab-separated
//! `id  source  keyword  speaker  split`, speaker `-` when absent.
//! Lines starting with `#` are comments.

use std::fs;
use std::path::Path;

use super::labels::{AudioSource, LabeledUtterance};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "# id\tsource\tkeyword\tspeaker\tsplit";

pub fn format_manifest(utts: &[LabeledUtterance]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for u in utts {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            u.id,
            u.source,
            u.keyword,
            u.speaker.as_deref().unwrap_or("-"),
            u.split
        ));
    }
    out
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<LabeledUtterance>> {
    let bad = |line: usize, reason: String| Error::Format {
        kind: "manifest",
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        out.push(LabeledUtterance {
            id: f[0].to_string(),
            source: f[1].parse::<AudioSource>().map_err(|e| bad(i + 1, e.to_string()))?,
            keyword: f[2].to_string(),
            speaker: (f[3] != "-").then(|| f[3].to_string()),
            split: f[4].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, utts: &[LabeledUtterance]) -> Result<()> {
    fs::write(path, format_manifest(utts)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<LabeledUtterance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_manifest(&text, path)
}

#[cfg(test)]
mod tests {
    use super::super::labels::Split;
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let utts = vec![
            LabeledUtterance {
                id: "a".into(),
                source: AudioSource::File("yes/a_nohash_0.wav".into()),
                keyword: "yes".into(),
                speaker: Some("a".into()),
                split: Split::Test,
            },
            LabeledUtterance {
                id: "s0".into(),
                source: AudioSource::Synthetic {
                    speaker: None,
                    word: None,
                    seed: 4,
                },
                keyword: "Silence".into(),
                speaker: None,
                split: Split::Train,
            },
        ];
        let text = format_manifest(&utts);
        assert_eq!(parse_manifest(&text, Path::new("m")).unwrap(), utts);
        assert!(parse_manifest("a\tb\tc\n", Path::new("m")).is_err());
        assert!(parse_manifest("a\tb\tc\td\tnowhere\n", Path::new("m")).is_err());
    }
}
