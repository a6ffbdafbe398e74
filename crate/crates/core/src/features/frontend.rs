use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wav::Waveform;
use crate::error::{Error, Result};

/// Floor added to filterbank energies before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    LogMel,
    Mfcc,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::LogMel => 0,
            FeatureKind::Mfcc => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FeatureKind::LogMel),
            1 => Some(FeatureKind::Mfcc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub sample_rate: u32,
    pub window_secs: f64,
    pub shift_secs: f64,
    pub n_mels: usize,
    /// Cepstral coefficients kept for MFCC; ignored for log-mel.
    pub n_coeffs: usize,
    /// Clips are zero-padded or truncated to this length before extraction.
    pub clip_secs: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            kind: FeatureKind::LogMel,
            sample_rate: 16_000,
            window_secs: 0.03,
            shift_secs: 0.01,
            n_mels: 40,
            n_coeffs: 40,
            clip_secs: 1.0,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_secs * self.sample_rate as f64).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.shift_secs * self.sample_rate as f64).round() as usize
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FeatureKind::LogMel => self.n_mels,
            FeatureKind::Mfcc => self.n_coeffs,
        }
    }

    /// Frames produced for a clip of `clip_secs`.
    pub fn frames_per_clip(&self) -> usize {
        let n = (self.clip_secs * self.sample_rate as f64).round() as usize;
        frame_count(n, self.window_samples(), self.shift_samples())
    }
}

/// `floor((n - window) / shift) + 1`, or 0 when `n < window`.
pub fn frame_count(n: usize, window: usize, shift: usize) -> usize {
    if n < window {
        0
    } else {
        (n - window) / shift + 1
    }
}

/// A `T x D` feature matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub shift_secs: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, centers equally spaced on the HTK mel
/// scale between 0 Hz and Nyquist. Returns `n_mels` rows of `n_fft/2 + 1`
/// weights and the center frequency of each filter.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let filters = (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect();
    (filters, edges[1..=n_mels].to_vec())
}

/// Precomputed window, FFT plan and filterbank for one configuration.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    filters: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("cfg", &self.cfg).finish()
    }
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        let win = cfg.window_samples();
        let shift = cfg.shift_samples();
        if win == 0 || shift == 0 || cfg.n_mels == 0 {
            return Err(Error::Config(format!("degenerate feature configuration {cfg:?}")));
        }
        if cfg.kind == FeatureKind::Mfcc && (cfg.n_coeffs == 0 || cfg.n_coeffs > cfg.n_mels) {
            return Err(Error::Config(format!(
                "n_coeffs must be in 1..={}, got {}",
                cfg.n_mels, cfg.n_coeffs
            )));
        }
        let n_fft = win.next_power_of_two();
        // Periodic Hann.
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let (filters, centers) = mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate);
        Ok(Self {
            cfg,
            window,
            n_fft,
            fft,
            filters,
            centers,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn mel_centers(&self) -> &[f64] {
        &self.centers
    }

    /// Log mel filterbank energies.
    pub fn log_mel(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let win = self.window.len();
        let shift = self.cfg.shift_samples();
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::InvalidInput(format!(
                "sample rate {} does not match configured {}",
                w.sample_rate, self.cfg.sample_rate
            )));
        }
        if w.len() < win {
            return Err(Error::InvalidInput(format!(
                "waveform of {} samples is shorter than one {win}-sample window",
                w.len()
            )));
        }
        let frames = frame_count(w.len(), win, shift);
        let n_mels = self.cfg.n_mels;
        let mut data = Vec::with_capacity(frames * n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        for t in 0..frames {
            let frame = &w.samples[t * shift..t * shift + win];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(if i < win { frame[i] * self.window[i] } else { 0.0 }, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for f in &self.filters {
                let e: f64 = f.iter().zip(&power).map(|(a, b)| a * b).sum();
                data.push((e + ENERGY_FLOOR).ln());
            }
        }
        Ok(FeatureMatrix {
            frames,
            dim: n_mels,
            data,
            shift_secs: self.cfg.shift_secs,
            kind: FeatureKind::LogMel,
        })
    }

    /// Log-mel followed by an orthonormal DCT-II, keeping `n_coeffs`.
    pub fn mfcc(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let lm = self.log_mel(w)?;
        let k = self.cfg.n_coeffs.min(lm.dim);
        let basis = dct_basis(lm.dim);
        let mut data = Vec::with_capacity(lm.frames * k);
        for t in 0..lm.frames {
            let row = lm.row(t);
            for b in basis.iter().take(k) {
                data.push(b.iter().zip(row).map(|(x, y)| x * y).sum());
            }
        }
        Ok(FeatureMatrix {
            frames: lm.frames,
            dim: k,
            data,
            shift_secs: lm.shift_secs,
            kind: FeatureKind::Mfcc,
        })
    }

    /// Features of the configured kind, after fitting the clip to `clip_secs`.
    pub fn extract(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let clip = w.fit_to(self.cfg.clip_secs);
        match self.cfg.kind {
            FeatureKind::LogMel => self.log_mel(&clip),
            FeatureKind::Mfcc => self.mfcc(&clip),
        }
    }
}

/// Rows of the orthonormal DCT-II matrix of size `n`.
pub fn dct_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let s = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II of `x`.
pub fn dct(x: &[f64]) -> Vec<f64> {
    dct_basis(x.len())
        .iter()
        .map(|b| b.iter().zip(x).map(|(u, v)| u * v).sum())
        .collect()
}

/// Inverse of [`dct`] (orthonormal DCT-III).
pub fn inverse_dct(c: &[f64]) -> Vec<f64> {
    let basis = dct_basis(c.len());
    (0..c.len())
        .map(|i| basis.iter().zip(c).map(|(b, ck)| b[i] * ck).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, secs: f64) -> Waveform {
        let n = (secs * 16_000.0) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
        .unwrap()
    }

    fn extractor(kind: FeatureKind) -> FeatureExtractor {
        FeatureExtractor::new(FeatureConfig {
            kind,
            ..FeatureConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let fx = extractor(FeatureKind::LogMel);
        assert_eq!(fx.n_fft(), 512);
        let m = fx.log_mel(&tone(440.0, 0.3, 1.0)).unwrap();
        assert_eq!((m.frames, m.dim), (98, 40));
        let c = extractor(FeatureKind::Mfcc).mfcc(&tone(440.0, 0.3, 1.0)).unwrap();
        assert_eq!((c.frames, c.dim), (98, 40));
        assert_eq!(FeatureConfig::default().frames_per_clip(), 98);
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let m = extractor(FeatureKind::LogMel)
            .log_mel(&Waveform::silence(0.5, 16_000))
            .unwrap();
        assert!(m.data.iter().all(|&v| v == ENERGY_FLOOR.ln()));
    }

    #[test]
    fn too_short_rejected() {
        let fx = extractor(FeatureKind::LogMel);
        assert!(fx.log_mel(&Waveform::silence(0.02, 16_000)).is_err());
        assert!(fx.mfcc(&Waveform::silence(0.02, 16_000)).is_err());
    }

    #[test]
    fn tone_peaks_in_its_mel_band() {
        let fx = extractor(FeatureKind::LogMel);
        let w = tone(1000.0, 0.5, 0.25);
        // Independent naive DFT of the first windowed frame locates the peak.
        let win = 480;
        let frame: Vec<f64> = (0..win)
            .map(|n| w.samples[n] * (0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos()))
            .collect();
        let peak_bin = (0..=256)
            .max_by(|&a, &b| {
                let mag = |k: usize| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, x) in frame.iter().enumerate() {
                        let ang = -2.0 * PI * k as f64 * n as f64 / 512.0;
                        re += x * ang.cos();
                        im += x * ang.sin();
                    }
                    re * re + im * im
                };
                mag(a).partial_cmp(&mag(b)).unwrap()
            })
            .unwrap();
        let peak_hz = peak_bin as f64 * 16_000.0 / 512.0;
        let expected = fx
            .mel_centers()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - peak_hz).abs().partial_cmp(&(b.1 - peak_hz).abs()).unwrap())
            .unwrap()
            .0;
        let m = fx.log_mel(&w).unwrap();
        for t in 0..m.frames {
            let row = m.row(t);
            let arg = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(arg, expected, "frame {t}");
        }
    }

    #[test]
    fn constant_rows_have_only_dc_cepstrum() {
        let c = dct(&[2.5; 40]);
        assert!((c[0] - 2.5 * 40f64.sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mfcc_inverts_to_log_mel() {
        let w = tone(700.0, 0.2, 0.2);
        let lm = extractor(FeatureKind::LogMel).log_mel(&w).unwrap();
        let cc = extractor(FeatureKind::Mfcc).mfcc(&w).unwrap();
        for t in 0..lm.frames {
            let back = inverse_dct(cc.row(t));
            for (a, b) in back.iter().zip(lm.row(t)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn polarity_and_gain() {
        let fx = extractor(FeatureKind::LogMel);
        let w = tone(1500.0, 0.1, 0.3);
        let neg = Waveform::new(w.samples.iter().map(|x| -x).collect(), 16_000).unwrap();
        assert_eq!(fx.log_mel(&w).unwrap(), fx.log_mel(&neg).unwrap());

        let c: f64 = 3.0;
        let loud = Waveform::new(w.samples.iter().map(|x| c * x).collect(), 16_000).unwrap();
        let (a, b) = (fx.log_mel(&w).unwrap(), fx.log_mel(&loud).unwrap());
        for (x, y) in a.data.iter().zip(&b.data) {
            if *x > 0.0 {
                assert!((y - x - 2.0 * c.ln()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }
}
