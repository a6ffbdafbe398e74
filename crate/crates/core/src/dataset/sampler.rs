//! Training batch samplers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::LabeledUtterance;
use crate::error::{Error, Result};

/// Shuffled mini-batches over `n` items; the last batch may be short.
#[derive(Debug, Clone)]
pub struct MtlBatchSampler {
    n: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl MtlBatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if batch_size > n {
            return Err(Error::Config(format!(
                "batch size {batch_size} exceeds the {n} available training utterances"
            )));
        }
        Ok(Self {
            n,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// A fresh permutation cut into batches.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Batch composition for the attention-module training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrmMode {
    /// Every row has a different keyword.
    Tb,
    /// Rows come in keyword groups, so a row also meets same-keyword rows of
    /// other speakers as negatives.
    To,
}

/// Draws `rows` utterances with pairwise distinct (keyword, speaker) labels.
///
/// Rows of one keyword group always have distinct speakers; across groups a
/// speaker already in the batch is reused with probability `speaker_reuse`,
/// which is what supplies same-speaker / other-keyword negatives.
#[derive(Debug, Clone)]
pub struct TrmBatchSampler {
    /// keyword -> speaker -> utterance indices
    inventory: BTreeMap<String, BTreeMap<String, Vec<usize>>>,
    rows: usize,
    mode: TrmMode,
    speaker_reuse: f64,
    group_sizes: Vec<usize>,
    rng: ChaCha8Rng,
}

/// Near-equal sizes of `groups` groups summing to `rows`, largest first.
fn split_sizes(rows: usize, groups: usize) -> Vec<usize> {
    (0..groups)
        .map(|g| rows / groups + usize::from(g < rows % groups))
        .collect()
}

/// Fraction of off-diagonal batch entries whose two rows share a keyword.
pub(crate) fn same_keyword_fraction(sizes: &[usize]) -> f64 {
    let n: usize = sizes.iter().sum();
    if n < 2 {
        return 0.0;
    }
    sizes.iter().map(|&g| (g * g.saturating_sub(1)) as f64).sum::<f64>() / (n * (n - 1)) as f64
}

impl TrmBatchSampler {
    /// `utts` are the candidates (normally training utterances); only
    /// command-word utterances with a speaker are used. For [`TrmMode::To`]
    /// the number of keyword groups is the one whose same-keyword fraction
    /// is closest to `same_keyword_target` (fewer groups on ties).
    pub fn new(
        utts: &[LabeledUtterance],
        rows: usize,
        mode: TrmMode,
        same_keyword_target: f64,
        seed: u64,
    ) -> Result<Self> {
        if rows < 2 {
            return Err(Error::Config(format!(
                "attention batches need at least 2 rows, got {rows}"
            )));
        }
        let mut inventory: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        for (i, u) in utts.iter().enumerate() {
            if let (true, Some(s)) = (u.is_anchor_keyword(), u.speaker.as_ref()) {
                inventory
                    .entry(u.keyword.clone())
                    .or_default()
                    .entry(s.clone())
                    .or_default()
                    .push(i);
            }
        }
        let n_kw = inventory.len();
        let max_speakers = inventory.values().map(BTreeMap::len).max().unwrap_or(0);
        let group_sizes = match mode {
            TrmMode::Tb => {
                if n_kw < rows {
                    return Err(Error::InsufficientData(format!(
                        "a {rows}-row TB batch needs {rows} distinct keywords, found {n_kw}"
                    )));
                }
                vec![1; rows]
            }
            TrmMode::To => {
                // Any group count works as long as the largest group fits in
                // the speaker inventory of some keyword.
                let feasible: Vec<usize> = (1..=rows.min(n_kw))
                    .filter(|&g| {
                        let sizes = split_sizes(rows, g);
                        let mut caps: Vec<usize> = inventory.values().map(BTreeMap::len).collect();
                        caps.sort_unstable_by(|a, b| b.cmp(a));
                        sizes.iter().zip(&caps).all(|(s, c)| s <= c)
                    })
                    .collect();
                let best = feasible.iter().copied().min_by(|&a, &b| {
                    let da = (same_keyword_fraction(&split_sizes(rows, a)) - same_keyword_target).abs();
                    let db = (same_keyword_fraction(&split_sizes(rows, b)) - same_keyword_target).abs();
                    da.total_cmp(&db).then(a.cmp(&b))
                });
                match best {
                    Some(g) => split_sizes(rows, g),
                    None => {
                        return Err(Error::InsufficientData(format!(
                            "cannot form a {rows}-row TO batch from {n_kw} keywords with at most {max_speakers} speakers each"
                        )))
                    }
                }
            }
        };
        Ok(Self {
            inventory,
            rows,
            mode,
            speaker_reuse: 0.5,
            group_sizes,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_speaker_reuse(mut self, p: f64) -> Self {
        self.speaker_reuse = p.clamp(0.0, 1.0);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn mode(&self) -> TrmMode {
        self.mode
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// One batch of utterance indices, rows in random order.
    pub fn sample(&mut self) -> Vec<usize> {
        let rng = &mut self.rng;
        let mut keywords: Vec<&String> = self.inventory.keys().collect();
        keywords.shuffle(rng);
        let mut used_speakers: Vec<&String> = Vec::new();
        let mut batch = Vec::with_capacity(self.rows);
        let mut spare = keywords.iter().copied().collect::<Vec<_>>();
        for &size in &self.group_sizes {
            // Pick the first remaining keyword with enough speakers.
            let pos = spare
                .iter()
                .position(|k| self.inventory[*k].len() >= size)
                .expect("group sizes checked against the inventory");
            let kw = spare.remove(pos);
            let speakers = &self.inventory[kw];
            let mut names: Vec<&String> = speakers.keys().collect();
            names.shuffle(rng);
            let mut chosen: Vec<&String> = Vec::with_capacity(size);
            for _ in 0..size {
                let reusable: Vec<&String> = used_speakers
                    .iter()
                    .copied()
                    .filter(|s| speakers.contains_key(*s) && !chosen.contains(s))
                    .collect();
                let spk = if !reusable.is_empty() && rng.random_bool(self.speaker_reuse) {
                    reusable[rng.random_range(0..reusable.len())]
                } else {
                    match names
                        .iter()
                        .copied()
                        .find(|s| !chosen.contains(s) && !used_speakers.contains(s))
                    {
                        Some(s) => s,
                        None => *names.iter().find(|s| !chosen.contains(*s)).expect("group fits"),
                    }
                };
                chosen.push(spk);
            }
            for spk in chosen {
                let list = &speakers[spk];
                batch.push(list[rng.random_range(0..list.len())]);
                if !used_speakers.contains(&spk) {
                    used_speakers.push(spk);
                }
            }
        }
        batch.shuffle(rng);
        batch
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::super::labels::{AudioSource, Split, UNKNOWN};
    use super::*;

    fn corpus(speakers: usize, keywords: usize, per: usize) -> Vec<LabeledUtterance> {
        let mut v = Vec::new();
        for s in 0..speakers {
            for k in 0..keywords {
                for i in 0..per {
                    v.push(LabeledUtterance {
                        id: format!("s{s}_k{k}_{i}"),
                        source: AudioSource::File("x.wav".into()),
                        keyword: format!("kw{k}"),
                        speaker: Some(format!("s{s}")),
                        split: Split::Train,
                    });
                }
            }
            v.push(LabeledUtterance {
                id: format!("s{s}_unk"),
                source: AudioSource::File("x.wav".into()),
                keyword: UNKNOWN.into(),
                speaker: Some(format!("s{s}")),
                split: Split::Train,
            });
        }
        v
    }

    #[test]
    fn mtl_epochs_cover_everything() {
        let mut s = MtlBatchSampler::new(10, 4, 1).unwrap();
        let e = s.epoch();
        assert_eq!(e.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        let mut all: Vec<usize> = e.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_ne!(s.epoch(), e);
        assert!(MtlBatchSampler::new(3, 4, 1).is_err());
    }

    #[test]
    fn to_group_count_targets_half() {
        assert!((same_keyword_fraction(&[4, 4]) - 24.0 / 56.0).abs() < 1e-12);
        let utts = corpus(6, 5, 2);
        let s = TrmBatchSampler::new(&utts, 8, TrmMode::To, 0.5, 0).unwrap();
        assert_eq!(s.group_sizes(), [4, 4]);
    }

    #[test]
    fn batches_have_distinct_labels() {
        let utts = corpus(6, 5, 2);
        for mode in [TrmMode::Tb, TrmMode::To] {
            let mut s = TrmBatchSampler::new(&utts, 4, mode, 0.5, 9).unwrap();
            for _ in 0..50 {
                let b = s.sample();
                assert_eq!(b.len(), 4);
                let labels: HashSet<_> = b.iter().map(|&i| (&utts[i].keyword, &utts[i].speaker)).collect();
                assert_eq!(labels.len(), 4);
                assert!(b.iter().all(|&i| utts[i].keyword != UNKNOWN));
                if mode == TrmMode::Tb {
                    let kws: HashSet<_> = b.iter().map(|&i| &utts[i].keyword).collect();
                    assert_eq!(kws.len(), 4);
                }
            }
        }
    }

    #[test]
    fn too_small_inventory_is_rejected() {
        let utts = corpus(2, 3, 1);
        assert!(TrmBatchSampler::new(&utts, 4, TrmMode::Tb, 0.5, 0).is_err());
        assert!(TrmBatchSampler::new(&utts, 8, TrmMode::To, 0.5, 0).is_err());
        assert!(TrmBatchSampler::new(&utts, 6, TrmMode::To, 0.5, 0).is_ok());
    }
}
