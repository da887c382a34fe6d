use crate::audio::{MelChunks, LOG_FLOOR, N_MELS};
use crate::error::{Error, Result};

use super::{BlendshapeClip, NoiseSchedule};

/// Everything a denoiser sees at one step. `noisy` holds the whole clip:
/// clean context rows followed by the noisy frames.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserInput<'a> {
    pub context: &'a BlendshapeClip,
    pub noisy: &'a BlendshapeClip,
    pub audio: &'a [Vec<f32>],
    pub style: Option<&'a BlendshapeClip>,
    pub step: usize,
    pub drop_audio: bool,
    pub drop_style: bool,
    pub drop_context: bool,
}

/// Predicts the clean clip, same shape as `noisy`. Must be deterministic.
pub trait Denoiser: Send + Sync {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<BlendshapeClip>;
}

/// Always returns the same clip.
#[derive(Clone, Debug)]
pub struct FixedDenoiser(pub BlendshapeClip);

impl Denoiser for FixedDenoiser {
    fn predict(&self, _: &DenoiserInput<'_>) -> Result<BlendshapeClip> {
        Ok(self.0.clone())
    }
}

/// Returns a window of a recorded sequence, starting at `frame_offset`.
/// Sampling with it reproduces the recording.
#[derive(Clone, Debug)]
pub struct EchoDenoiser {
    pub recorded: BlendshapeClip,
    pub frame_offset: usize,
}

impl Denoiser for EchoDenoiser {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<BlendshapeClip> {
        let n = input.noisy.frames;
        if self.frame_offset + n > self.recorded.frames {
            return Err(Error::InvalidInput(format!(
                "recorded clip has {} frames, window {}..{} requested",
                self.recorded.frames,
                self.frame_offset,
                self.frame_offset + n
            )));
        }
        Ok(self.recorded.slice(self.frame_offset, n))
    }
}

/// Optimal predictor for i.i.d. `N(mu, sigma^2)` data:
/// `E[x0 | x_n] = (sqrt(abar) sigma^2 x_n + (1 - abar) mu) / (abar sigma^2 + 1 - abar)`.
#[derive(Clone, Debug)]
pub struct GaussianToyDenoiser {
    pub alphas_cumprod: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianToyDenoiser {
    pub fn new(schedule: &NoiseSchedule, mu: f64, sigma: f64) -> Self {
        Self {
            alphas_cumprod: schedule.alphas_cumprod.clone(),
            mu,
            sigma,
        }
    }
}

impl Denoiser for GaussianToyDenoiser {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<BlendshapeClip> {
        let a = *self
            .alphas_cumprod
            .get(input.step)
            .ok_or_else(|| Error::InvalidInput(format!("step {} outside schedule", input.step)))?;
        let s2 = self.sigma * self.sigma;
        let den = a * s2 + 1.0 - a;
        let mut out = input.noisy.clone();
        out.data
            .iter_mut()
            .for_each(|x| *x = (a.sqrt() * s2 * *x + (1.0 - a) * self.mu) / den);
        Ok(out)
    }
}

/// Per-frame audio embedding: the chunk's log-mel rows averaged over time.
pub fn audio_embeddings(chunks: &MelChunks) -> Vec<Vec<f32>> {
    chunks
        .chunks
        .iter()
        .map(|c| {
            let inv = 1.0 / c.len().max(1) as f32;
            (0..N_MELS)
                .map(|m| c.iter().map(|row| row[m]).sum::<f32>() * inv)
                .collect()
        })
        .collect()
}

/// Hand-written stand-in for a trained network: mouth opening follows the
/// loudness of the audio chunk, on top of the style clip's mean pose.
#[derive(Clone, Debug)]
pub struct MockAudioDenoiser {
    /// Per-dimension response to loudness in `[0, 1]`.
    pub gains: Vec<f64>,
    /// Mean log-mel value mapped to full loudness, relative to the floor.
    pub loudness_range: f64,
}

impl MockAudioDenoiser {
    pub fn for_names<S: AsRef<str>>(names: &[S]) -> Self {
        let gains = names
            .iter()
            .map(|n| match n.as_ref() {
                "jawOpen" => 0.7,
                "mouthLowerDown_L" | "mouthLowerDown_R" | "mouthUpperUp_L" | "mouthUpperUp_R" => 0.3,
                "mouthFunnel" => 0.2,
                "mouthClose" => -0.1,
                _ => 0.0,
            })
            .collect();
        Self {
            gains,
            loudness_range: 8.0,
        }
    }
}

impl Denoiser for MockAudioDenoiser {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<BlendshapeClip> {
        let dims = input.noisy.dims;
        crate::error::check_len("mock denoiser gains", dims, self.gains.len())?;
        let base: Vec<f64> = match input.style {
            Some(s) if !input.drop_style && s.frames > 0 => (0..dims)
                .map(|k| (0..s.frames).map(|i| s.row(i)[k]).sum::<f64>() / s.frames as f64)
                .collect(),
            _ => vec![0.0; dims],
        };
        let floor = LOG_FLOOR.ln();
        let mut out = BlendshapeClip::zeros(input.noisy.frames, dims);
        for i in 0..out.frames {
            let loud = match input.audio.get(i) {
                Some(a) if !input.drop_audio && !a.is_empty() => {
                    let m = a.iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64;
                    ((m - floor) / self.loudness_range).clamp(0.0, 1.0)
                }
                _ => 0.0,
            };
            for (k, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (base[k] + self.gains[k] * loud).clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }
}
