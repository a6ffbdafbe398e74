//! Anchor/test pair protocols.
//!
//! Keyword pairs: every anchor (a command-word utterance) contributes one
//! pair of each category, in the order ts-tk, nts-tk, ts-ntk, nts-ntk.
//! Speaker pairs: alternating same-speaker / different-speaker pairs.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::LabeledUtterance;
use super::synth::mix_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairCategory {
    TsTk,
    NtsTk,
    TsNtk,
    NtsNtk,
    SameSpeaker,
    DifferentSpeaker,
}

impl PairCategory {
    pub const KWS: [PairCategory; 4] = [
        PairCategory::TsTk,
        PairCategory::NtsTk,
        PairCategory::TsNtk,
        PairCategory::NtsNtk,
    ];

    /// Category of `test` relative to `anchor` under the keyword protocol.
    pub fn classify(anchor: &LabeledUtterance, test: &LabeledUtterance) -> PairCategory {
        let same_kw = anchor.keyword == test.keyword;
        let same_spk = anchor.speaker.is_some() && anchor.speaker == test.speaker;
        match (same_spk, same_kw) {
            (true, true) => PairCategory::TsTk,
            (false, true) => PairCategory::NtsTk,
            (true, false) => PairCategory::TsNtk,
            (false, false) => PairCategory::NtsNtk,
        }
    }

    pub fn is_kws(self) -> bool {
        !matches!(self, PairCategory::SameSpeaker | PairCategory::DifferentSpeaker)
    }
}

impl fmt::Display for PairCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairCategory::TsTk => "ts-tk",
            PairCategory::NtsTk => "nts-tk",
            PairCategory::TsNtk => "ts-ntk",
            PairCategory::NtsNtk => "nts-ntk",
            PairCategory::SameSpeaker => "same-speaker",
            PairCategory::DifferentSpeaker => "different-speaker",
        })
    }
}

impl FromStr for PairCategory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ts-tk" => PairCategory::TsTk,
            "nts-tk" => PairCategory::NtsTk,
            "ts-ntk" => PairCategory::TsNtk,
            "nts-ntk" => PairCategory::NtsNtk,
            "same-speaker" => PairCategory::SameSpeaker,
            "different-speaker" => PairCategory::DifferentSpeaker,
            other => return Err(Error::InvalidInput(format!("unknown pair category `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairTask {
    KwsPairs,
    SvPairs,
}

impl fmt::Display for PairTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairTask::KwsPairs => "kws-pairs",
            PairTask::SvPairs => "sv-pairs",
        })
    }
}

impl FromStr for PairTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kws-pairs" => Ok(PairTask::KwsPairs),
            "sv-pairs" => Ok(PairTask::SvPairs),
            other => Err(Error::InvalidInput(format!("unknown pair task `{other}`"))),
        }
    }
}

/// Detection task: which pair categories count as positives, which as
/// negatives and which are left out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Conventional keyword spotting: any speaker saying the keyword.
    CKws,
    /// Target-user-biased: the target user's keyword; other speakers'
    /// keyword utterances are excluded from scoring.
    Tb,
    /// Target-user-only: other speakers saying the keyword are negatives.
    To,
    /// Speaker verification.
    Sv,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::CKws, Task::Tb, Task::To, Task::Sv];

    /// `Some(true)` positive, `Some(false)` negative, `None` excluded.
    pub fn label(self, cat: PairCategory) -> Option<bool> {
        use PairCategory::*;
        match (self, cat) {
            (Task::Sv, SameSpeaker) => Some(true),
            (Task::Sv, DifferentSpeaker) => Some(false),
            (Task::Sv, _) | (_, SameSpeaker | DifferentSpeaker) => None,
            (_, TsTk) => Some(true),
            (Task::CKws, NtsTk) => Some(true),
            (Task::Tb, NtsTk) => None,
            _ => Some(false),
        }
    }

    pub fn pair_task(self) -> PairTask {
        if self == Task::Sv {
            PairTask::SvPairs
        } else {
            PairTask::KwsPairs
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::CKws => "c-kws",
            Task::Tb => "tb",
            Task::To => "to",
            Task::Sv => "sv",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task `{s}` (expected c-kws, tb, to or sv)")))
    }
}

/// Indices refer to the utterance slice the pairs were generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalPair {
    pub anchor: usize,
    pub test: usize,
    pub category: PairCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSplit {
    pub id: usize,
    pub task: PairTask,
    pub pairs: Vec<EvalPair>,
}

struct PairIndex<'a> {
    utts: &'a [LabeledUtterance],
    by_kw: HashMap<&'a str, Vec<usize>>,
    by_spk: HashMap<&'a str, Vec<usize>>,
    by_spk_kw: HashMap<(&'a str, &'a str), Vec<usize>>,
}

impl<'a> PairIndex<'a> {
    fn new(utts: &'a [LabeledUtterance]) -> Self {
        let mut idx = PairIndex {
            utts,
            by_kw: HashMap::new(),
            by_spk: HashMap::new(),
            by_spk_kw: HashMap::new(),
        };
        for (i, u) in utts.iter().enumerate() {
            idx.by_kw.entry(u.keyword.as_str()).or_default().push(i);
            if let Some(s) = u.speaker.as_deref() {
                idx.by_spk.entry(s).or_default().push(i);
                idx.by_spk_kw.entry((s, u.keyword.as_str())).or_default().push(i);
            }
        }
        idx
    }

    fn candidates(&self, anchor: usize, cat: PairCategory) -> Vec<usize> {
        let a = &self.utts[anchor];
        let pool: &[usize] = match cat {
            PairCategory::TsTk => self
                .by_spk_kw
                .get(&(a.speaker.as_deref().unwrap_or(""), a.keyword.as_str()))
                .map_or(&[], Vec::as_slice),
            PairCategory::NtsTk => self.by_kw.get(a.keyword.as_str()).map_or(&[], Vec::as_slice),
            PairCategory::TsNtk => self
                .by_spk
                .get(a.speaker.as_deref().unwrap_or(""))
                .map_or(&[], Vec::as_slice),
            _ => {
                return (0..self.utts.len())
                    .filter(|&j| j != anchor && PairCategory::classify(a, &self.utts[j]) == cat)
                    .collect()
            }
        };
        pool.iter()
            .copied()
            .filter(|&j| j != anchor && PairCategory::classify(a, &self.utts[j]) == cat)
            .collect()
    }

    /// Uniform draw among utterances of category `cat` for `anchor`.
    fn draw(&self, rng: &mut ChaCha8Rng, anchor: usize, cat: PairCategory) -> Option<usize> {
        let a = &self.utts[anchor];
        if cat == PairCategory::NtsNtk {
            // Rejection sampling over the whole set; the category is the bulk.
            for _ in 0..64 {
                let j = rng.random_range(0..self.utts.len());
                if j != anchor && PairCategory::classify(a, &self.utts[j]) == cat {
                    return Some(j);
                }
            }
        }
        let c = self.candidates(anchor, cat);
        (!c.is_empty()).then(|| c[rng.random_range(0..c.len())])
    }

    fn realizable(&self, anchor: usize, cat: PairCategory) -> bool {
        let a = &self.utts[anchor];
        match cat {
            PairCategory::TsTk => {
                self.by_spk_kw
                    .get(&(a.speaker.as_deref().unwrap_or(""), a.keyword.as_str()))
                    .map_or(0, Vec::len)
                    >= 2
            }
            PairCategory::NtsTk => self.by_kw[a.keyword.as_str()]
                .iter()
                .any(|&j| self.utts[j].speaker.is_some() && self.utts[j].speaker != a.speaker),
            PairCategory::TsNtk => self.by_spk[a.speaker.as_deref().expect("anchor speaker")]
                .iter()
                .any(|&j| self.utts[j].keyword != a.keyword),
            _ => self
                .utts
                .iter()
                .any(|u| u.keyword != a.keyword && (u.speaker.is_none() || u.speaker != a.speaker)),
        }
    }
}

/// Keyword-protocol pair splits over `utts` (normally the test split).
pub fn make_pair_splits(
    utts: &[LabeledUtterance],
    n_splits: usize,
    pairs_per_split: usize,
    seed: u64,
) -> Result<Vec<PairSplit>> {
    if pairs_per_split == 0 || pairs_per_split % 4 != 0 {
        return Err(Error::Config(format!(
            "pairs per split must be a positive multiple of 4, got {pairs_per_split}"
        )));
    }
    let index = PairIndex::new(utts);
    let candidates: Vec<usize> = (0..utts.len())
        .filter(|&i| utts[i].is_anchor_keyword() && utts[i].speaker.is_some())
        .collect();
    let mut missing: Option<PairCategory> = None;
    let anchors: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(
            |&i| match PairCategory::KWS.into_iter().find(|&c| !index.realizable(i, c)) {
                Some(c) => {
                    missing.get_or_insert(c);
                    false
                }
                None => true,
            },
        )
        .collect();
    if anchors.is_empty() {
        let what = match (candidates.is_empty(), missing) {
            (true, _) => "no utterance can serve as an anchor (need a command word with a speaker)".to_string(),
            (false, Some(c)) => format!("no anchor can realize category {c}"),
            (false, None) => "no eligible anchors".to_string(),
        };
        return Err(Error::InsufficientData(what));
    }

    (0..n_splits)
        .map(|split| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[10, split as u64]));
            let mut pairs = Vec::with_capacity(pairs_per_split);
            for _ in 0..pairs_per_split / 4 {
                let anchor = anchors[rng.random_range(0..anchors.len())];
                for cat in PairCategory::KWS {
                    let test = index.draw(&mut rng, anchor, cat).expect("realizable by construction");
                    pairs.push(EvalPair {
                        anchor,
                        test,
                        category: cat,
                    });
                }
            }
            Ok(PairSplit {
                id: split,
                task: PairTask::KwsPairs,
                pairs,
            })
        })
        .collect()
}

/// Speaker-verification pair splits, balanced same/different speaker.
pub fn make_sv_splits(
    utts: &[LabeledUtterance],
    n_splits: usize,
    pairs_per_split: usize,
    seed: u64,
) -> Result<Vec<PairSplit>> {
    if pairs_per_split == 0 || pairs_per_split % 2 != 0 {
        return Err(Error::Config(format!(
            "pairs per split must be a positive even number, got {pairs_per_split}"
        )));
    }
    let index = PairIndex::new(utts);
    if index.by_spk.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "speaker pairs need at least two speakers, found {}",
            index.by_spk.len()
        )));
    }
    let with_speaker: Vec<usize> = (0..utts.len()).filter(|&i| utts[i].speaker.is_some()).collect();
    let pos_anchors: Vec<usize> = with_speaker
        .iter()
        .copied()
        .filter(|&i| index.by_spk[utts[i].speaker.as_deref().expect("speaker")].len() >= 2)
        .collect();
    if pos_anchors.is_empty() {
        return Err(Error::InsufficientData("no speaker has two utterances".into()));
    }
    (0..n_splits)
        .map(|split| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[11, split as u64]));
            let mut pairs = Vec::with_capacity(pairs_per_split);
            for _ in 0..pairs_per_split / 2 {
                let a = pos_anchors[rng.random_range(0..pos_anchors.len())];
                let same = &index.by_spk[utts[a].speaker.as_deref().expect("speaker")];
                let b = loop {
                    let j = same[rng.random_range(0..same.len())];
                    if j != a {
                        break j;
                    }
                };
                pairs.push(EvalPair {
                    anchor: a,
                    test: b,
                    category: PairCategory::SameSpeaker,
                });
                let a = with_speaker[rng.random_range(0..with_speaker.len())];
                let b = loop {
                    let j = with_speaker[rng.random_range(0..with_speaker.len())];
                    if utts[j].speaker != utts[a].speaker {
                        break j;
                    }
                };
                pairs.push(EvalPair {
                    anchor: a,
                    test: b,
                    category: PairCategory::DifferentSpeaker,
                });
            }
            Ok(PairSplit {
                id: split,
                task: PairTask::SvPairs,
                pairs,
            })
        })
        .collect()
}

/// Checks every pair's category against the labels and the anchor rule.
pub fn verify_pairs(utts: &[LabeledUtterance], split: &PairSplit) -> Result<()> {
    for p in &split.pairs {
        let (a, t) = (&utts[p.anchor], &utts[p.test]);
        if p.anchor == p.test {
            return Err(Error::InvalidInput(format!("pair uses {} twice", a.id)));
        }
        let ok = match p.category {
            PairCategory::SameSpeaker => a.speaker.is_some() && a.speaker == t.speaker,
            PairCategory::DifferentSpeaker => a.speaker.is_some() && t.speaker.is_some() && a.speaker != t.speaker,
            cat => a.is_anchor_keyword() && a.speaker.is_some() && PairCategory::classify(a, t) == cat,
        };
        if !ok {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) is not a valid {} pair",
                a.id, t.id, p.category
            )));
        }
    }
    Ok(())
}

/// One line per pair: `anchor_id  test_id  category  split_id  task`.
pub fn format_pairs(utts: &[LabeledUtterance], splits: &[PairSplit]) -> String {
    let mut out = String::from("# anchor\ttest\tcategory\tsplit\ttask\n");
    for s in splits {
        for p in &s.pairs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                utts[p.anchor].id, utts[p.test].id, p.category, s.id, s.task
            ));
        }
    }
    out
}

pub fn parse_pairs(text: &str, utts: &[LabeledUtterance], path: &Path) -> Result<Vec<PairSplit>> {
    let bad = |line: usize, reason: String| Error::Format {
        kind: "pair split",
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let ids: HashMap<&str, usize> = utts.iter().enumerate().map(|(i, u)| (u.id.as_str(), i)).collect();
    let mut splits: Vec<PairSplit> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(n + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let look = |id: &str| {
            ids.get(id)
                .copied()
                .ok_or_else(|| bad(n + 1, format!("unknown utterance `{id}`")))
        };
        let pair = EvalPair {
            anchor: look(f[0])?,
            test: look(f[1])?,
            category: f[2].parse().map_err(|e: Error| bad(n + 1, e.to_string()))?,
        };
        let id: usize = f[3]
            .parse()
            .map_err(|_| bad(n + 1, format!("bad split id `{}`", f[3])))?;
        let task: PairTask = f[4].parse().map_err(|e: Error| bad(n + 1, e.to_string()))?;
        match splits.iter_mut().find(|s| s.id == id && s.task == task) {
            Some(s) => s.pairs.push(pair),
            None => splits.push(PairSplit {
                id,
                task,
                pairs: vec![pair],
            }),
        }
    }
    Ok(splits)
}

pub fn write_pairs(path: &Path, utts: &[LabeledUtterance], splits: &[PairSplit]) -> Result<()> {
    fs::write(path, format_pairs(utts, splits)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_pairs(path: &Path, utts: &[LabeledUtterance]) -> Result<Vec<PairSplit>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_pairs(&text, utts, path)
}

#[cfg(test)]
mod tests {
    use super::super::labels::{AudioSource, Split, SILENCE, UNKNOWN};
    use super::*;

    pub(crate) fn utt(id: &str, kw: &str, spk: Option<&str>) -> LabeledUtterance {
        LabeledUtterance {
            id: id.into(),
            source: AudioSource::File(format!("{id}.wav").into()),
            keyword: kw.into(),
            speaker: spk.map(String::from),
            split: Split::Test,
        }
    }

    fn small_set() -> Vec<LabeledUtterance> {
        let mut v = Vec::new();
        for s in ["a", "b", "c"] {
            for k in ["yes", "no", UNKNOWN] {
                for i in 0..2 {
                    v.push(utt(&format!("{s}_{k}_{i}"), k, Some(s)));
                }
            }
        }
        v.push(utt("sil0", SILENCE, None));
        v
    }

    #[test]
    fn sixteen_pairs_are_four_anchors() {
        let utts = small_set();
        let splits = make_pair_splits(&utts, 2, 16, 3).unwrap();
        assert_eq!(splits.len(), 2);
        for s in &splits {
            assert_eq!(s.pairs.len(), 16);
            verify_pairs(&utts, s).unwrap();
            for chunk in s.pairs.chunks(4) {
                assert!(chunk.iter().all(|p| p.anchor == chunk[0].anchor));
                let cats: Vec<_> = chunk.iter().map(|p| p.category).collect();
                assert_eq!(cats, PairCategory::KWS);
                assert!(utts[chunk[0].anchor].is_anchor_keyword());
            }
            for p in s.pairs.iter().filter(|p| p.category == PairCategory::NtsTk) {
                assert_eq!(utts[p.anchor].keyword, utts[p.test].keyword);
                assert_ne!(utts[p.anchor].speaker, utts[p.test].speaker);
            }
        }
        assert_eq!(splits, make_pair_splits(&utts, 2, 16, 3).unwrap());
    }

    #[test]
    fn missing_category_named() {
        // One utterance per (speaker, keyword): ts-tk is impossible.
        let utts = vec![
            utt("a1", "yes", Some("a")),
            utt("a2", "no", Some("a")),
            utt("b1", "yes", Some("b")),
            utt("b2", "no", Some("b")),
        ];
        let err = make_pair_splits(&utts, 1, 4, 0).unwrap_err();
        assert!(err.to_string().contains("ts-tk"), "{err}");
        assert!(make_pair_splits(&small_set(), 1, 6, 0).is_err());
    }

    #[test]
    fn sv_pairs_are_balanced() {
        let utts = small_set();
        let s = &make_sv_splits(&utts, 1, 8, 5).unwrap()[0];
        assert_eq!(
            s.pairs
                .iter()
                .filter(|p| p.category == PairCategory::SameSpeaker)
                .count(),
            4
        );
        assert_eq!(
            s.pairs
                .iter()
                .filter(|p| p.category == PairCategory::DifferentSpeaker)
                .count(),
            4
        );
        verify_pairs(&utts, s).unwrap();
        let one = vec![utt("a1", "yes", Some("a")), utt("a2", "no", Some("a"))];
        assert!(make_sv_splits(&one, 1, 8, 5).is_err());
    }

    #[test]
    fn task_labels() {
        use PairCategory::*;
        let row = |t: Task| [TsTk, NtsTk, TsNtk, NtsNtk].map(|c| t.label(c));
        assert_eq!(row(Task::CKws), [Some(true), Some(true), Some(false), Some(false)]);
        assert_eq!(row(Task::Tb), [Some(true), None, Some(false), Some(false)]);
        assert_eq!(row(Task::To), [Some(true), Some(false), Some(false), Some(false)]);
        assert_eq!(row(Task::Sv), [None; 4]);
        assert_eq!("TO".parse::<Task>().unwrap(), Task::To);
    }

    #[test]
    fn pair_file_round_trip() {
        let utts = small_set();
        let mut splits = make_pair_splits(&utts, 2, 8, 1).unwrap();
        splits.extend(make_sv_splits(&utts, 1, 4, 1).unwrap());
        let text = format_pairs(&utts, &splits);
        assert_eq!(parse_pairs(&text, &utts, Path::new("p")).unwrap(), splits);
    }
}
