//! Waveform I/O, log-mel / MFCC extraction, stream segmentation and the
//! per-utterance feature cache.

mod cache;
mod frontend;
mod wav;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use cache::{read_feature_cache, write_feature_cache, FEATURE_MAGIC, FEATURE_VERSION};
pub use frontend::{
    dct, dct_basis, frame_count, hz_to_mel, inverse_dct, mel_filterbank, mel_to_hz, FeatureConfig, FeatureExtractor,
    FeatureKind, FeatureMatrix, ENERGY_FLOOR,
};
pub use wav::{quantize, read_wav, write_wav, Waveform, DEFAULT_SAMPLE_RATE};

/// Splits a stream into consecutive non-overlapping segments of `segment_secs`.
/// A trailing remainder shorter than one segment is dropped.
pub fn segment_stream(w: &Waveform, segment_secs: f64) -> Vec<Waveform> {
    let seg = (segment_secs * w.sample_rate as f64).round() as usize;
    if seg == 0 {
        return Vec::new();
    }
    (0..w.len() / seg).map(|i| w.slice(i * seg, seg)).collect()
}

/// Adds white Gaussian noise with standard deviation `level`.
pub fn add_noise<R: Rng>(w: &mut Waveform, level: f64, rng: &mut R) {
    if level <= 0.0 {
        return;
    }
    let dist = Normal::new(0.0, level).expect("positive level");
    for s in &mut w.samples {
        *s += dist.sample(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(secs: f64) -> Waveform {
        let n = (secs * 16_000.0) as usize;
        Waveform::new((0..n).map(|i| i as f64 / n as f64).collect(), 16_000).unwrap()
    }

    #[test]
    fn segmentation_drops_remainder() {
        let segs = segment_stream(&ramp(3.5), 1.0);
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.len() == 16_000));
        assert!(segment_stream(&ramp(0.9), 1.0).is_empty());
    }

    #[test]
    fn segments_concatenate_to_prefix() {
        let w = ramp(2.0);
        let segs = segment_stream(&w, 1.0);
        assert_eq!(segs.len(), 2);
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples.iter().copied()).collect();
        assert_eq!(joined, w.samples);
    }

    #[test]
    fn frame_formula_examples() {
        assert_eq!(frame_count(16_000, 480, 160), 98);
        assert_eq!(frame_count(480, 480, 160), 1);
        assert_eq!(frame_count(479, 480, 160), 0);
    }
}
