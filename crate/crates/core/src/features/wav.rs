use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        Self {
            samples: vec![0.0; n],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Zero-pads or truncates to exactly `seconds`.
    pub fn fit_to(&self, seconds: f64) -> Waveform {
        let n = (seconds * self.sample_rate as f64).round() as usize;
        let mut samples = self.samples.clone();
        samples.resize(n, 0.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a mono 16-bit PCM WAV file, scaling samples by 1/32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reject = |reason: String| Error::AudioFormat {
        path: path.to_path_buf(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    // Any failure past this point is a property of the file contents.
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| match e {
        hound::Error::IoError(io) => reject(format!("truncated or malformed header ({io})")),
        hound::Error::Unsupported => reject("unsupported encoding (only uncompressed PCM is accepted)".into()),
        other => reject(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(reject(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(reject(format!(
            "{:?} samples at {} bits, expected 16-bit integer PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| reject(format!("corrupt sample data: {e}")))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM; samples are scaled by 32768, rounded and clipped.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(format!("writing {}", path.display()), io),
        other => Error::AudioFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &w.samples {
        writer.write_sample(quantize(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

pub fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &Waveform::silence(1.0, 16_000)).unwrap();
        let w = read_wav(&p).unwrap();
        assert_eq!(w.len(), 16_000);
        assert_eq!(w.duration(), 1.0);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_negative_maps_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_wav(&p, &Waveform::new(vec![-1.0, 0.5, 2.0], 16_000).unwrap()).unwrap();
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples[0], -1.0);
        assert_eq!(w.samples[1], 0.5);
        assert_eq!(w.samples[2], 32767.0 / 32768.0);
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
    }

    #[test]
    fn float_and_garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::AudioFormat { .. })));

        let g = dir.path().join("g.wav");
        std::fs::write(&g, b"RIFF0000WAVEjunk").unwrap();
        assert!(matches!(read_wav(&g), Err(Error::AudioFormat { .. })));
    }
}
