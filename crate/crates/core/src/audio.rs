//! Audio input: 16-bit PCM WAV and the log-mel features fed to the
//! blendshape sampler.
//!
//! Two seconds of 16 kHz audio give 160 STFT frames (hop 200, the 161st
//! frame of the centered transform is dropped), which are cut into 50
//! overlapping chunks of 16 frames, one per video frame at 25 fps.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 800;
pub const HOP: usize = 200;
pub const N_MELS: usize = 80;
pub const F_MAX: f64 = 8000.0;
pub const LOG_FLOOR: f64 = 1e-5;
pub const CLIP_SAMPLES: usize = 32_000;
pub const CLIP_FRAMES: usize = 160;
pub const N_CHUNKS: usize = 50;
pub const CHUNK_FRAMES: usize = 16;
pub const VIDEO_FPS: usize = 25;
/// Audio samples per video frame.
pub const SAMPLES_PER_VIDEO_FRAME: usize = SAMPLE_RATE as usize / VIDEO_FPS;

/// Mono samples in `[-1, 1]` with their rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl Audio {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// `len` samples from `start`, zero-padded past the end.
    pub fn window(&self, start: usize, len: usize) -> Vec<f32> {
        (start..start + len)
            .map(|i| self.samples.get(i).copied().unwrap_or(0.0))
            .collect()
    }
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "expected mono audio, got {} channels",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format("expected 16-bit PCM audio".into()));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Audio {
        sample_rate: spec.sample_rate,
        samples,
    })
}

pub fn write_wav(path: &Path, audio: &Audio) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular filters on the Slaney mel scale, peak value 1, as
/// `n_mels x (n_fft / 2 + 1)`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, f_max: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let (m0, m1) = (hz_to_mel(0.0), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    let up = (f - lo) / (c - lo);
                    let down = (hi - f) / (hi - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Center frequencies of the filters of [`mel_filterbank`].
pub fn mel_centers(n_mels: usize, f_max: f64) -> Vec<f64> {
    let (m0, m1) = (hz_to_mel(0.0), hz_to_mel(f_max));
    (1..=n_mels)
        .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-mel frames `log(mel power + 1e-5)` of a centered STFT (zero padding
/// of `N_FFT / 2` on both sides). Returns `1 + len / HOP` frames.
pub fn log_mel_spectrogram(samples: &[f32]) -> Vec<[f32; N_MELS]> {
    let pad = N_FFT / 2;
    let n_frames = 1 + samples.len() / HOP;
    let window = periodic_hann(N_FFT);
    let bank = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, F_MAX);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut power = vec![0.0; N_FFT / 2 + 1];
    (0..n_frames)
        .map(|t| {
            for (i, b) in buf.iter_mut().enumerate() {
                let s = (t * HOP + i)
                    .checked_sub(pad)
                    .and_then(|j| samples.get(j))
                    .copied()
                    .unwrap_or(0.0);
                *b = Complex::new(s as f64 * window[i], 0.0);
            }
            fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            std::array::from_fn(|m| {
                let e: f64 = bank[m].iter().zip(&power).map(|(w, p)| w * p).sum();
                (e + LOG_FLOOR).ln() as f32
            })
        })
        .collect()
}

/// Start frame of chunk `i`: `round(i (160 - 16) / 49)`.
pub fn chunk_start(i: usize) -> usize {
    let span = (CLIP_FRAMES - CHUNK_FRAMES) as f64 / (N_CHUNKS - 1) as f64;
    (i as f64 * span).round() as usize
}

/// Fifty overlapping `16 x 80` log-mel chunks of a two-second clip.
#[derive(Clone, Debug, PartialEq)]
pub struct MelChunks {
    pub starts: Vec<usize>,
    /// `N_CHUNKS` chunks, each `CHUNK_FRAMES` rows of `N_MELS` values.
    pub chunks: Vec<Vec<[f32; N_MELS]>>,
}

impl MelChunks {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Mean log-mel energy of each chunk.
    pub fn chunk_energy(&self) -> Vec<f64> {
        self.chunks
            .iter()
            .map(|c| {
                c.iter().flatten().map(|&v| v as f64).sum::<f64>() / (CHUNK_FRAMES * N_MELS) as f64
            })
            .collect()
    }
}

pub fn mel_chunk(audio: &Audio) -> Result<MelChunks> {
    if audio.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidInput(format!(
            "expected {SAMPLE_RATE} Hz audio, got {} Hz",
            audio.sample_rate
        )));
    }
    mel_chunk_samples(&audio.samples)
}

pub fn mel_chunk_samples(samples: &[f32]) -> Result<MelChunks> {
    if samples.len() != CLIP_SAMPLES {
        return Err(Error::Dimension {
            what: "audio samples",
            expected: CLIP_SAMPLES,
            got: samples.len(),
        });
    }
    let mut frames = log_mel_spectrogram(samples);
    frames.truncate(CLIP_FRAMES);
    let starts: Vec<usize> = (0..N_CHUNKS).map(chunk_start).collect();
    let chunks = starts
        .iter()
        .map(|&s| frames[s..s + CHUNK_FRAMES].to_vec())
        .collect();
    Ok(MelChunks { starts, chunks })
}

/// Sine tone in `[-amp, amp]`.
pub fn tone(freq: f64, amp: f32, n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin() as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trip_and_anchor() {
        for hz in [0.0, 300.0, 999.0, 1000.0, 2500.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn silence_is_log_floor() {
        let c = mel_chunk_samples(&vec![0.0; CLIP_SAMPLES]).unwrap();
        let floor = (LOG_FLOOR).ln() as f32;
        assert!(c.chunks.iter().flatten().flatten().all(|&v| v == floor));
    }

    #[test]
    fn shape_and_starts() {
        let c = mel_chunk_samples(&tone(440.0, 0.5, CLIP_SAMPLES)).unwrap();
        assert_eq!(c.len(), 50);
        assert!(c.chunks.iter().all(|ch| ch.len() == 16));
        assert_eq!(c.starts[0], 0);
        assert_eq!(c.starts[49], 144);
        assert!(c.starts.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(log_mel_spectrogram(&vec![0.0; CLIP_SAMPLES]).len(), 161);
    }

    #[test]
    fn wrong_length_or_rate_rejected() {
        assert!(mel_chunk_samples(&[0.0; 100]).is_err());
        let a = Audio {
            sample_rate: 22_050,
            samples: vec![0.0; CLIP_SAMPLES],
        };
        assert!(mel_chunk(&a).is_err());
    }

    #[test]
    fn filters_peak_at_one() {
        let bank = mel_filterbank(SAMPLE_RATE, N_FFT, N_MELS, F_MAX);
        for row in &bank {
            let m = row.iter().cloned().fold(0.0, f64::max);
            assert!(m > 0.0 && m <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let a = Audio {
            sample_rate: SAMPLE_RATE,
            samples: tone(300.0, 0.4, 1600),
        };
        write_wav(&p, &a).unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.sample_rate, SAMPLE_RATE);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() < 1.0 / 16000.0);
        }
    }
}
