//! Google Speech Commands ingestion (12-class setting).
//!
//! Layout: one folder per word holding `<speaker>_nohash_<n>.wav`, plus
//! `_background_noise_/` whose recordings are cut into one-second `Silence`
//! clips. Splits come from `validation_list.txt` / `testing_list.txt` when
//! present, otherwise from the dataset's SHA-1 bucket rule (10% / 10%).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha1::{Digest, Sha1};

use super::labels::{AudioSource, LabeledUtterance, Split, GSC_COMMANDS, SILENCE, UNKNOWN};
use crate::error::{Error, Result};
use crate::features::read_wav;

pub const BACKGROUND_DIR: &str = "_background_noise_";
const MAX_NUM_WAVS_PER_CLASS: u64 = (1 << 27) - 1;

/// Result of a successful ingest.
#[derive(Debug, Clone)]
pub struct GscIngest {
    pub utterances: Vec<LabeledUtterance>,
    /// Word utterances (everything except generated silence clips).
    pub word_count: usize,
    pub silence_count: usize,
}

impl GscIngest {
    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut m = BTreeMap::new();
        for u in &self.utterances {
            *m.entry(u.split).or_insert(0) += 1;
        }
        m
    }
}

/// Speaker prefix of `<speaker>_nohash_<n>.wav`.
pub fn parse_gsc_filename(name: &str) -> Option<&str> {
    let stem = name.strip_suffix(".wav")?;
    let (speaker, n) = stem.split_once("_nohash_")?;
    if speaker.is_empty() || n.is_empty() || !n.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(speaker)
}

/// The dataset's stable hash partition for a file name.
pub fn hash_split(file_name: &str, validation_pct: f64, testing_pct: f64) -> Split {
    let base = match file_name.find("_nohash_") {
        Some(i) => &file_name[..i],
        None => file_name,
    };
    let digest = Sha1::digest(base.as_bytes());
    // int(hexdigest, 16) mod 2^27 keeps the low 27 bits of the big-endian value.
    let tail = u64::from(u32::from_be_bytes(digest[16..20].try_into().expect("4 bytes")));
    let bucket = tail % (MAX_NUM_WAVS_PER_CLASS + 1);
    let pct = bucket as f64 * (100.0 / MAX_NUM_WAVS_PER_CLASS as f64);
    if pct < validation_pct {
        Split::Validation
    } else if pct < validation_pct + testing_pct {
        Split::Test
    } else {
        Split::Train
    }
}

fn read_list(path: &Path) -> Result<Option<std::collections::HashSet<String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(Some(
        text.lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect(),
    ))
}

pub fn ingest_gsc(root: &Path) -> Result<GscIngest> {
    if !root.is_dir() {
        return Err(Error::Ingest(vec![format!("{} is not a directory", root.display())]));
    }
    let mut issues = Vec::new();
    for cmd in GSC_COMMANDS {
        if !root.join(cmd).is_dir() {
            issues.push(format!("missing command folder `{cmd}`"));
        }
    }
    if !root.join(BACKGROUND_DIR).is_dir() {
        issues.push(format!("missing `{BACKGROUND_DIR}` folder (needed for Silence)"));
    }
    let val_list = read_list(&root.join("validation_list.txt"))?;
    let test_list = read_list(&root.join("testing_list.txt"))?;

    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(format!("listing {}", root.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut utterances = Vec::new();
    for dir in &dirs {
        let word = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if word == BACKGROUND_DIR || word.starts_with('.') {
            continue;
        }
        let label = if GSC_COMMANDS.contains(&word.as_str()) {
            word.clone()
        } else {
            UNKNOWN.to_string()
        };
        let mut files: Vec<String> = fs::read_dir(dir)
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .filter_map(|e| e.ok().and_then(|e| e.file_name().to_str().map(String::from)))
            .filter(|n| n.ends_with(".wav"))
            .collect();
        files.sort();
        for name in files {
            let Some(speaker) = parse_gsc_filename(&name) else {
                issues.push(format!("unparsable file name {word}/{name}"));
                continue;
            };
            let rel = format!("{word}/{name}");
            let split = match (&val_list, &test_list) {
                (Some(v), Some(t)) => {
                    if v.contains(&rel) {
                        Split::Validation
                    } else if t.contains(&rel) {
                        Split::Test
                    } else {
                        Split::Train
                    }
                }
                _ => hash_split(&name, 10.0, 10.0),
            };
            utterances.push(LabeledUtterance {
                id: rel.trim_end_matches(".wav").to_string(),
                source: AudioSource::File(dir.join(&name)),
                keyword: label.clone(),
                speaker: Some(speaker.to_string()),
                split,
            });
        }
    }
    let word_count = utterances.len();

    let bg = root.join(BACKGROUND_DIR);
    let mut silence_count = 0;
    if bg.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&bg)
            .map_err(|e| Error::io(format!("listing {}", bg.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .collect();
        files.sort();
        for path in files {
            let wave = match read_wav(&path) {
                Ok(w) => w,
                Err(e) => {
                    issues.push(e.to_string());
                    continue;
                }
            };
            let seg = wave.sample_rate as usize;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("noise").to_string();
            for i in 0..wave.len() / seg {
                let id = format!("{BACKGROUND_DIR}/{stem}_{i}");
                utterances.push(LabeledUtterance {
                    split: hash_split(&id, 10.0, 10.0),
                    id,
                    source: AudioSource::FileSegment {
                        path: path.clone(),
                        start: i * seg,
                        len: seg,
                    },
                    keyword: SILENCE.to_string(),
                    speaker: None,
                });
                silence_count += 1;
            }
        }
    }

    if !issues.is_empty() {
        return Err(Error::Ingest(issues));
    }
    if word_count == 0 {
        return Err(Error::Ingest(vec!["no word utterances found".into()]));
    }
    Ok(GscIngest {
        utterances,
        word_count,
        silence_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{write_wav, Waveform};

    #[test]
    fn filename_grammar() {
        assert_eq!(parse_gsc_filename("abc123_nohash_0.wav"), Some("abc123"));
        assert_eq!(parse_gsc_filename("abc123_0.wav"), None);
        assert_eq!(parse_gsc_filename("_nohash_1.wav"), None);
        assert_eq!(parse_gsc_filename("abc_nohash_x.wav"), None);
    }

    #[test]
    fn hash_rule_ignores_instance_suffix() {
        let a = hash_split("0a7c2a8d_nohash_0.wav", 10.0, 10.0);
        let b = hash_split("0a7c2a8d_nohash_3.wav", 10.0, 10.0);
        assert_eq!(a, b);
        // Roughly 10/10/80 over many speakers.
        let mut counts = BTreeMap::new();
        for i in 0..5000 {
            *counts
                .entry(hash_split(&format!("{i:08x}_nohash_0.wav"), 10.0, 10.0))
                .or_insert(0) += 1;
        }
        assert!((counts[&Split::Train] as f64 / 5000.0 - 0.8).abs() < 0.03);
    }

    fn fake_root() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let clip = Waveform::silence(1.0, 16_000);
        for w in GSC_COMMANDS.iter().chain(["bed"].iter()) {
            fs::create_dir(dir.path().join(w)).unwrap();
            write_wav(&dir.path().join(w).join("abc123_nohash_0.wav"), &clip).unwrap();
        }
        fs::create_dir(dir.path().join(BACKGROUND_DIR)).unwrap();
        write_wav(
            &dir.path().join(BACKGROUND_DIR).join("white.wav"),
            &Waveform::silence(2.5, 16_000),
        )
        .unwrap();
        dir
    }

    #[test]
    fn ingest_small_tree() {
        let root = fake_root();
        let g = ingest_gsc(root.path()).unwrap();
        assert_eq!(g.word_count, 11);
        assert_eq!(g.silence_count, 2);
        let yes = g.utterances.iter().find(|u| u.id == "yes/abc123_nohash_0").unwrap();
        assert_eq!((yes.keyword.as_str(), yes.speaker.as_deref()), ("yes", Some("abc123")));
        let bed = g.utterances.iter().find(|u| u.id.starts_with("bed/")).unwrap();
        assert_eq!(bed.keyword, UNKNOWN);
        assert!(g
            .utterances
            .iter()
            .filter(|u| u.keyword == SILENCE)
            .all(|u| u.speaker.is_none()));
    }

    #[test]
    fn issues_are_itemized() {
        let root = fake_root();
        fs::remove_dir_all(root.path().join("go")).unwrap();
        fs::write(root.path().join("yes").join("broken.wav"), b"").unwrap();
        match ingest_gsc(root.path()) {
            Err(Error::Ingest(issues)) => {
                assert_eq!(issues.len(), 2, "{issues:?}");
                assert!(issues.iter().any(|i| i.contains("`go`")));
                assert!(issues.iter().any(|i| i.contains("broken.wav")));
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }
}
