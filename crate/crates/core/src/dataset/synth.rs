//! Deterministic synthetic speech-like corpus.
//!
//! Speakers and keywords are factorized the way a source-filter model
//! factorizes voice and phonetic content:
//!
//! * a speaker owns a fundamental frequency, a spectral tilt, a vocal-tract
//!   scale on formant frequencies and one fixed resonance;
//! * a word owns two formant trajectories and an optional fricative burst.
//!
//! An utterance renders the word's trajectories on the speaker's harmonic
//! source with small per-instance jitter in timing, pitch, formants and
//! level, then adds white noise. Everything is a pure function of the
//! configuration seed and the utterance indices.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{AudioSource, LabeledUtterance, Split, GSC_COMMANDS, GSC_OTHER_WORDS, SILENCE, UNKNOWN};
use crate::error::{Error, Result};
use crate::features::{add_noise, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub speakers: usize,
    /// Command keyword classes.
    pub keywords: usize,
    /// Extra words rendered with the `Unknown` label.
    pub unknown_words: usize,
    /// Adds noise-only `Silence` clips (one word's worth per split).
    pub silence: bool,
    pub utterances_per_pair: usize,
    pub validation_speakers: usize,
    pub test_speakers: usize,
    pub seed: u64,
    /// Standard deviation of the additive white noise.
    pub noise_level: f64,
    pub sample_rate: u32,
    pub duration: f64,
}

impl SyntheticConfig {
    /// Command words only, with 20% / 10% of the speakers held out for
    /// test / validation.
    pub fn new(speakers: usize, keywords: usize, utterances_per_pair: usize, seed: u64) -> Self {
        let (test, val) = if speakers >= 3 {
            (
                ((speakers as f64 * 0.2).round() as usize).max(1),
                ((speakers as f64 * 0.1).round() as usize).max(1),
            )
        } else {
            (0, 0)
        };
        Self {
            speakers,
            keywords,
            unknown_words: 0,
            silence: false,
            utterances_per_pair,
            validation_speakers: val,
            test_speakers: test,
            seed,
            noise_level: 0.003,
            sample_rate: 16_000,
            duration: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.keywords == 0 || self.utterances_per_pair == 0 {
            return Err(Error::Config(
                "speaker, keyword and utterance counts must be >= 1".into(),
            ));
        }
        if self.validation_speakers + self.test_speakers >= self.speakers {
            return Err(Error::Config(format!(
                "{} held-out speakers leave no training speakers out of {}",
                self.validation_speakers + self.test_speakers,
                self.speakers
            )));
        }
        if self.sample_rate == 0 || !(self.duration > 0.0) || self.noise_level < 0.0 {
            return Err(Error::Config(
                "sample rate, duration and noise level must be positive".into(),
            ));
        }
        if self.keywords + self.unknown_words > MAX_WORDS {
            return Err(Error::Config(format!(
                "at most {MAX_WORDS} distinct words are supported"
            )));
        }
        Ok(())
    }

    pub fn word_count(&self) -> usize {
        self.keywords + self.unknown_words
    }

    pub fn word_name(&self, word: usize) -> String {
        if word < self.keywords {
            GSC_COMMANDS
                .get(word)
                .map_or_else(|| format!("kw{word}"), |s| s.to_string())
        } else {
            let j = word - self.keywords;
            GSC_OTHER_WORDS
                .get(j)
                .map_or_else(|| format!("unk{j}"), |s| s.to_string())
        }
    }

    pub fn word_label(&self, word: usize) -> String {
        if word < self.keywords {
            self.word_name(word)
        } else {
            UNKNOWN.to_string()
        }
    }
}

const MAX_WORDS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerTraits {
    pub f0: f64,
    pub tilt: f64,
    pub formant_scale: f64,
    pub resonance_hz: f64,
    pub resonance_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordPattern {
    pub f1: (f64, f64),
    pub f2: (f64, f64),
    /// Fricative band center and whether it precedes the voiced part.
    pub fricative: Option<(f64, bool)>,
}

/// SplitMix64 finalizer used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = z
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Renders synthetic utterances for one configuration.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    cfg: SyntheticConfig,
    words: Vec<WordPattern>,
}

impl Synthesizer {
    pub fn new(cfg: SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let words = word_patterns(cfg.seed, cfg.word_count());
        Ok(Self { cfg, words })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    pub fn word_pattern(&self, word: usize) -> WordPattern {
        self.words[word]
    }

    pub fn speaker_traits(&self, speaker: usize) -> SpeakerTraits {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, &[1, speaker as u64]));
        SpeakerTraits {
            f0: rng.random_range(85f64.ln()..280f64.ln()).exp(),
            tilt: rng.random_range(0.4..1.6),
            formant_scale: rng.random_range(0.92..1.08),
            resonance_hz: rng.random_range(1800.0..3800.0),
            resonance_gain: rng.random_range(0.2..1.2),
        }
    }

    pub fn speaker_label(speaker: usize) -> String {
        format!("spk{speaker:03}")
    }

    /// Renders one clip. `word`/`speaker` of `None` produce noise only.
    pub fn render(&self, speaker: Option<usize>, word: Option<usize>, seed: u64) -> Result<Waveform> {
        let sr = self.cfg.sample_rate as f64;
        let n = (self.cfg.duration * sr).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = vec![0.0; n];
        if let (Some(s), Some(w)) = (speaker, word) {
            let pat = *self
                .words
                .get(w)
                .ok_or_else(|| Error::InvalidInput(format!("word index {w} out of range")))?;
            self.render_word(&mut samples, &self.speaker_traits(s), &pat, &mut rng);
        }
        let mut wave = Waveform::new(samples, self.cfg.sample_rate)?;
        let level = if word.is_none() {
            self.cfg.noise_level * rng.random_range(0.5..2.0)
        } else {
            self.cfg.noise_level
        };
        add_noise(&mut wave, level, &mut rng);
        Ok(wave)
    }

    fn render_word(&self, out: &mut [f64], spk: &SpeakerTraits, pat: &WordPattern, rng: &mut ChaCha8Rng) {
        let sr = self.cfg.sample_rate as f64;
        let n = out.len();
        let dur = n as f64 / sr;
        let len_s = rng.random_range(0.45..0.6f64).min(dur * 0.7);
        let lead = 0.12f64.min(dur * 0.1);
        let onset_s = rng.random_range(lead..(dur - len_s - 0.05).max(lead + 1e-3));
        let onset = (onset_s * sr) as usize;
        let len = ((len_s * sr) as usize).min(n.saturating_sub(onset));
        let f0 = spk.f0 * rng.random_range(0.96..1.04);
        let inton = rng.random_range(-0.08..0.08);
        let j1 = spk.formant_scale * rng.random_range(0.97..1.03);
        let j2 = spk.formant_scale * rng.random_range(0.97..1.03);
        let gain = rng.random_range(0.15..0.35);
        let max_h = ((7000.0 / (f0 * 1.1)) as usize).clamp(1, 80);

        let f0_at = |tau: f64| f0 * (1.0 + inton * (0.5 - tau));
        let amps_at = |tau: f64, buf: &mut Vec<f64>| {
            buf.clear();
            let fund = f0_at(tau);
            let ff1 = lerp(pat.f1, tau) * j1;
            let ff2 = lerp(pat.f2, tau) * j2;
            for h in 1..=max_h {
                let f = h as f64 * fund;
                let formants =
                    0.06 + resonance(f, ff1, 90.0 + 0.08 * ff1) + 0.7 * resonance(f, ff2, 120.0 + 0.06 * ff2);
                let fixed = 1.0 + spk.resonance_gain * resonance(f, spk.resonance_hz, 250.0);
                buf.push((h as f64).powf(-spk.tilt) * formants * fixed);
            }
        };

        const BLOCK: usize = 80;
        let mut voiced = vec![0.0; len];
        let (mut cur, mut next) = (Vec::with_capacity(max_h), Vec::with_capacity(max_h));
        let mut phase = 0.0f64;
        let mut start = 0;
        while start < len {
            let end = (start + BLOCK).min(len);
            amps_at(start as f64 / len as f64, &mut cur);
            amps_at(end as f64 / len as f64, &mut next);
            for i in start..end {
                let tau = i as f64 / len as f64;
                phase += 2.0 * PI * f0_at(tau) / sr;
                if phase > 2.0 * PI {
                    phase -= 2.0 * PI;
                }
                let frac = (i - start) as f64 / BLOCK as f64;
                let (s1, c) = phase.sin_cos();
                let (mut prev, mut curr) = (0.0, s1);
                let mut acc = 0.0;
                for h in 0..max_h {
                    let a = cur[h] + (next[h] - cur[h]) * frac;
                    acc += a * curr;
                    let nxt = 2.0 * c * curr - prev;
                    prev = curr;
                    curr = nxt;
                }
                voiced[i] = acc * envelope(i, len, sr);
            }
            start = end;
        }
        let peak = voiced.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            for (o, v) in out[onset..onset + len].iter_mut().zip(&voiced) {
                *o += v * gain / peak;
            }
        }

        if let Some((center, before)) = pat.fricative {
            let flen = (0.09 * sr) as usize;
            let fstart = if before {
                onset.saturating_sub(flen * 3 / 4)
            } else {
                (onset + len).saturating_sub(flen / 4).min(n.saturating_sub(flen))
            };
            let tones: Vec<(f64, f64)> = (0..24)
                .map(|_| {
                    (
                        center * j2 + rng.random_range(-500.0..500.0),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let level = 0.3 * gain / (tones.len() as f64).sqrt();
            for i in 0..flen.min(n - fstart) {
                let t = i as f64 / sr;
                let env = envelope(i, flen, sr);
                let s: f64 = tones.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum();
                out[fstart + i] += level * env * s;
            }
        }
    }

    /// All corpus utterances for the configuration, in speaker/word/instance
    /// order followed by silence clips.
    pub fn utterances(&self) -> Vec<LabeledUtterance> {
        let cfg = &self.cfg;
        let splits = speaker_splits(cfg);
        let mut out = Vec::new();
        for (spk, &split) in splits.iter().enumerate() {
            let spk_label = Self::speaker_label(spk);
            for word in 0..cfg.word_count() {
                for inst in 0..cfg.utterances_per_pair {
                    out.push(LabeledUtterance {
                        id: format!("{spk_label}_{}_{inst}", cfg.word_name(word)),
                        source: AudioSource::Synthetic {
                            speaker: Some(spk),
                            word: Some(word),
                            seed: mix_seed(cfg.seed, &[4, spk as u64, word as u64, inst as u64]),
                        },
                        keyword: cfg.word_label(word),
                        speaker: Some(spk_label.clone()),
                        split,
                    });
                }
            }
        }
        if cfg.silence {
            for split in [Split::Train, Split::Validation, Split::Test] {
                let n_spk = splits.iter().filter(|&&s| s == split).count();
                for i in 0..n_spk * cfg.utterances_per_pair {
                    out.push(LabeledUtterance {
                        id: format!("silence_{split}_{i}"),
                        source: AudioSource::Synthetic {
                            speaker: None,
                            word: None,
                            seed: mix_seed(cfg.seed, &[5, split as u64, i as u64]),
                        },
                        keyword: SILENCE.to_string(),
                        speaker: None,
                        split,
                    });
                }
            }
        }
        out
    }

    /// A continuous stream of one-second word renditions by `n_speakers`
    /// speakers that are not part of the corpus. Returns the stream and the
    /// (word label, speaker label) of each second.
    pub fn stream(&self, segments: usize, n_speakers: usize, seed: u64) -> Result<(Waveform, Vec<(String, String)>)> {
        if n_speakers == 0 {
            return Err(Error::Config("stream needs at least one speaker".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, &[6, seed]));
        let mut samples = Vec::new();
        let mut labels = Vec::with_capacity(segments);
        for i in 0..segments {
            let spk = self.cfg.speakers + rng.random_range(0..n_speakers);
            let word = rng.random_range(0..self.cfg.word_count());
            let w = self.render(Some(spk), Some(word), mix_seed(seed, &[7, i as u64]))?;
            samples.extend_from_slice(&w.samples);
            labels.push((self.cfg.word_label(word), format!("stream{spk:03}")));
        }
        Ok((Waveform::new(samples, self.cfg.sample_rate)?, labels))
    }
}

/// Split of every speaker index (held-out speakers chosen by seed).
pub fn speaker_splits(cfg: &SyntheticConfig) -> Vec<Split> {
    let mut order: Vec<usize> = (0..cfg.speakers).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[3]));
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut splits = vec![Split::Train; cfg.speakers];
    for (rank, &spk) in order.iter().enumerate() {
        if rank < cfg.test_speakers {
            splits[spk] = Split::Test;
        } else if rank < cfg.test_speakers + cfg.validation_speakers {
            splits[spk] = Split::Validation;
        }
    }
    splits
}

/// Generates the labeled corpus for `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<LabeledUtterance>> {
    Ok(Synthesizer::new(cfg.clone())?.utterances())
}

fn word_patterns(seed: u64, count: usize) -> Vec<WordPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[2]));
    let mut out: Vec<WordPattern> = Vec::with_capacity(count);
    let key = |p: &WordPattern| [p.f1.0 / 700.0, p.f1.1 / 700.0, p.f2.0 / 1800.0, p.f2.1 / 1800.0];
    let mut min_dist = 0.45;
    let mut attempts = 0;
    while out.len() < count {
        let fricative = match rng.random_range(0..3) {
            0 => None,
            k => Some((rng.random_range(2800.0..6500.0), k == 1)),
        };
        let cand = WordPattern {
            f1: (rng.random_range(250.0..950.0), rng.random_range(250.0..950.0)),
            f2: (rng.random_range(800.0..2600.0), rng.random_range(800.0..2600.0)),
            fricative,
        };
        let ck = key(&cand);
        let ok = out.iter().all(|p| {
            let pk = key(p);
            let d: f64 = pk.iter().zip(&ck).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let fric_differs = p.fricative.map(|f| f.1) != cand.fricative.map(|f| f.1);
            d + if fric_differs { 0.15 } else { 0.0 } >= min_dist
        });
        if ok {
            out.push(cand);
        }
        attempts += 1;
        if attempts % 2000 == 0 {
            min_dist *= 0.9;
        }
    }
    out
}

fn lerp((a, b): (f64, f64), t: f64) -> f64 {
    a + (b - a) * t
}

fn resonance(f: f64, center: f64, bw: f64) -> f64 {
    let z = (f - center) / bw;
    (-0.5 * z * z).exp()
}

/// Raised-cosine attack (30 ms) and release (50 ms).
fn envelope(i: usize, len: usize, sr: f64) -> f64 {
    let t = i as f64 / sr;
    let rem = (len - i) as f64 / sr;
    let a = (t / 0.03).min(1.0);
    let r = (rem / 0.05).min(1.0);
    let ramp = |x: f64| 0.5 - 0.5 * (PI * x).cos();
    ramp(a) * ramp(r)
}
