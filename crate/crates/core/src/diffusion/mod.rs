//! Diffusion sampling of mouth blendshape clips.
//!
//! A clip is 50 frames at 25 fps. The first five frames are context: they
//! are given clean to the denoiser and copied to the output untouched. The
//! denoiser predicts the clean clip (x0 parametrization); each ancestral
//! step forms the posterior mean from the clipped prediction.

mod denoisers;
mod losses;

pub use denoisers::{
    audio_embeddings, Denoiser, DenoiserInput, EchoDenoiser, FixedDenoiser, GaussianToyDenoiser,
    MockAudioDenoiser,
};
pub use losses::{cosine_similarity, loss_simple, loss_smooth, loss_velocity, sync_loss, sync_loss_with, SYNC_TEMPERATURE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLIP_FRAMES: usize = 50;
pub const CONTEXT_FRAMES: usize = 5;
pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_STEPS: usize = 50;
pub const GUIDANCE_SCALE: f64 = 1.2;
pub const CLIP_RANGE: (f64, f64) = (-0.25, 1.25);

/// Row-major `frames x dims` clip of blendshape values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendshapeClip {
    pub frames: usize,
    pub dims: usize,
    pub data: Vec<f64>,
}

impl BlendshapeClip {
    pub fn zeros(frames: usize, dims: usize) -> Self {
        Self {
            frames,
            dims,
            data: vec![0.0; frames * dims],
        }
    }

    pub fn new(frames: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        crate::error::check_len("clip values", frames * dims, data.len())?;
        Ok(Self { frames, dims, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * dims);
        for r in rows {
            crate::error::check_len("clip row", dims, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            frames: rows.len(),
            dims,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.frames).map(|i| self.row(i).to_vec()).collect()
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            frames: len,
            dims: self.dims,
            data: self.data[start * self.dims..(start + len) * self.dims].to_vec(),
        }
    }

    fn check_same(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.frames != other.frames || self.dims != other.dims {
            return Err(Error::Dimension {
                what,
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced `beta_n` from `beta_1` to `beta_t`.
    pub fn linear(t: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if t < 2 || !(0.0 < beta_1 && beta_1 < beta_t && beta_t < 1.0) {
            return Err(Error::InvalidInput(format!(
                "need T >= 2 and 0 < beta_1 < beta_T < 1, got T={t}, {beta_1}, {beta_t}"
            )));
        }
        let betas: Vec<f64> = (0..t)
            .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (t - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self {
            betas,
            alphas_cumprod,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Visited steps for `steps` uniform strides, from noisiest to 0.
    pub fn timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let t = self.len();
        if steps == 0 || t % steps != 0 {
            return Err(Error::InvalidInput(format!(
                "{steps} sampling steps do not divide T = {t}"
            )));
        }
        let stride = t / steps;
        Ok((0..steps).rev().map(|i| i * stride).collect())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_T, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `sqrt(abar_n) b0 + sqrt(1 - abar_n) eps`.
pub fn add_noise(b0: &[f64], n: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    crate::error::check_len("noise", b0.len(), eps.len())?;
    let a = *schedule
        .alphas_cumprod
        .get(n)
        .ok_or_else(|| Error::InvalidInput(format!("step {n} outside the schedule")))?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(b0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

/// `uncond + scale (cond - uncond)`. Scale 1 returns `cond` bit for bit,
/// which the rounding of the general formula does not guarantee.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    crate::error::check_len("conditional prediction", uncond.len(), cond.len())?;
    if scale == 1.0 {
        return Ok(cond.to_vec());
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| u + scale * (c - u))
        .collect())
}

/// Independent guidance for audio and style:
/// `u + s (c_audio - u) + s (c_style - u)`.
pub fn cfg_combine2(cond_audio: &[f64], cond_style: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    crate::error::check_len("audio prediction", uncond.len(), cond_audio.len())?;
    crate::error::check_len("style prediction", uncond.len(), cond_style.len())?;
    Ok(uncond
        .iter()
        .zip(cond_audio)
        .zip(cond_style)
        .map(|((u, a), s)| u + scale * (a - u) + scale * (s - u))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `beta_tilde`, the forward-process posterior variance.
    Posterior,
    /// `beta_tilde + c0^2 Var[x0 | x_t]`, with the conditional variance
    /// from the denoiser Jacobian: `Var = (1 - abar)/sqrt(abar) dE[x0|x_t]/dx_t`.
    /// This is the exact marginal variance for a step of a Gaussian data
    /// model and matters when strides are large.
    #[default]
    TweedieCorrected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub clip_range: (f64, f64),
    pub variance: VarianceMode,
    /// `None` disables guidance (one denoiser call per evaluation).
    pub guidance_scale: Option<f64>,
    /// Finite-difference step of the Jacobian-diagonal probe.
    pub jacobian_step: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            clip_range: CLIP_RANGE,
            variance: VarianceMode::TweedieCorrected,
            guidance_scale: Some(GUIDANCE_SCALE),
            jacobian_step: 1e-3,
        }
    }
}

/// Conditions passed to the sampler.
#[derive(Clone, Copy, Debug)]
pub struct Conditions<'a> {
    /// `CONTEXT_FRAMES x dims`.
    pub context: &'a BlendshapeClip,
    /// One embedding per clip frame.
    pub audio: &'a [Vec<f32>],
    pub style: Option<&'a BlendshapeClip>,
}

fn predict(
    denoiser: &dyn Denoiser,
    cond: &Conditions<'_>,
    x: &BlendshapeClip,
    step: usize,
    guidance: Option<f64>,
) -> Result<Vec<f64>> {
    let call = |drop_audio: bool, drop_style: bool| -> Result<Vec<f64>> {
        let input = DenoiserInput {
            context: cond.context,
            noisy: x,
            audio: cond.audio,
            style: cond.style,
            step,
            drop_audio,
            drop_style,
            drop_context: false,
        };
        let out = denoiser.predict(&input)?;
        x.check_same(&out, "denoiser output")?;
        Ok(out.data)
    };
    match guidance {
        None => call(false, false),
        Some(s) => {
            let ca = call(false, true)?;
            let cs = call(true, false)?;
            let u = call(true, true)?;
            cfg_combine2(&ca, &cs, &u, s)
        }
    }
}

/// Ancestral x0-prediction sampling of frames `CONTEXT_FRAMES..`; the
/// context rows of the result are bit-identical to `cond.context`.
pub fn sample(
    denoiser: &dyn Denoiser,
    cond: &Conditions<'_>,
    frames: usize,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<BlendshapeClip> {
    let ctx = cond.context;
    if ctx.frames != CONTEXT_FRAMES {
        return Err(Error::Dimension {
            what: "context frames",
            expected: CONTEXT_FRAMES,
            got: ctx.frames,
        });
    }
    if frames <= CONTEXT_FRAMES {
        return Err(Error::InvalidInput(format!(
            "clip of {frames} frames leaves nothing to sample"
        )));
    }
    if cond.audio.len() != frames {
        return Err(Error::Dimension {
            what: "audio embeddings",
            expected: frames,
            got: cond.audio.len(),
        });
    }
    let dims = ctx.dims;
    let steps = schedule.timesteps(cfg.steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let head = CONTEXT_FRAMES * dims;
    let mut x = BlendshapeClip::zeros(frames, dims);
    x.data[..head].copy_from_slice(&ctx.data);
    x.data[head..].iter_mut().for_each(|v| *v = normal());
    let (lo, hi) = cfg.clip_range;

    for (k, &t) in steps.iter().enumerate() {
        let a_t = schedule.alphas_cumprod[t];
        let a_prev = steps.get(k + 1).map_or(1.0, |&p| schedule.alphas_cumprod[p]);
        let raw = predict(denoiser, cond, &x, t, cfg.guidance_scale)?;
        let x0: Vec<f64> = raw[head..].iter().map(|v| v.clamp(lo, hi)).collect();
        if k + 1 == steps.len() {
            x.data[head..].copy_from_slice(&x0);
            break;
        }
        let beta = 1.0 - a_t / a_prev;
        let c0 = a_prev.sqrt() * beta / (1.0 - a_t);
        let c1 = (a_t / a_prev).sqrt() * (1.0 - a_prev) / (1.0 - a_t);
        let beta_tilde = beta * (1.0 - a_prev) / (1.0 - a_t);

        let extra: Vec<f64> = match cfg.variance {
            VarianceMode::Posterior => vec![0.0; x0.len()],
            VarianceMode::TweedieCorrected => {
                let h = cfg.jacobian_step;
                let probe: Vec<f64> = (0..x0.len())
                    .map(|_| if normal() >= 0.0 { 1.0 } else { -1.0 })
                    .collect();
                let mut xp = x.clone();
                let mut xm = x.clone();
                for (i, p) in probe.iter().enumerate() {
                    xp.data[head + i] += h * p;
                    xm.data[head + i] -= h * p;
                }
                let fp = predict(denoiser, cond, &xp, t, cfg.guidance_scale)?;
                let fm = predict(denoiser, cond, &xm, t, cfg.guidance_scale)?;
                let scale = (1.0 - a_t) / a_t.sqrt();
                probe
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let diag = p * (fp[head + i] - fm[head + i]) / (2.0 * h);
                        c0 * c0 * (scale * diag).max(0.0)
                    })
                    .collect()
            }
        };
        for (i, v) in x.data[head..].iter_mut().enumerate() {
            let mean = c0 * x0[i] + c1 * *v;
            *v = mean + (beta_tilde + extra[i]).sqrt() * normal();
        }
    }
    // context rows are never written above; keep the contract explicit
    debug_assert_eq!(&x.data[..head], &ctx.data[..]);
    Ok(x)
}

#[cfg(test)]
mod tests;
