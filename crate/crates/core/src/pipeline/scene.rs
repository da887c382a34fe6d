//! Synthetic lip-sync input: the procedural head rendered over a static
//! background, with exact landmark labels and a syllable-like audio track.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{Audio, SAMPLES_PER_VIDEO_FRAME, SAMPLE_RATE};
use crate::camera::ProjectiveCamera;
use crate::error::Result;
use crate::facemodel::{FaceModel, FaceParams};
use crate::fit::{project_landmarks, LandmarkFrame};
use crate::image::Image;
use crate::maps::{foreground_image, render_p};
use crate::raster::rasterize;
use crate::synthetic::{
    background_color, head_texture, random_sequence, RandomParamsConfig, SyntheticHead,
    SyntheticHeadConfig,
};

use super::metrics::FaceBox;

#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub frames: usize,
    pub seed: u64,
    /// Border around the 256 x 256 face box, in pixels.
    pub margin: usize,
    pub head: SyntheticHeadConfig,
    pub motion: RandomParamsConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 50,
            seed: 0,
            margin: 32,
            head: SyntheticHeadConfig::standard(),
            motion: RandomParamsConfig {
                alpha_std: 0.5,
                head_angle_deg: 6.0,
                translation: 0.1,
                eye_angle_deg: 10.0,
            },
        }
    }
}

pub struct SyntheticScene {
    pub head: SyntheticHead,
    /// Full-frame camera; the face box crop of it is `head.camera`.
    pub camera: ProjectiveCamera,
    pub params: Vec<FaceParams>,
    pub frames: Vec<Image>,
    pub boxes: Vec<FaceBox>,
    /// Full-frame pixel coordinates.
    pub landmarks: Vec<LandmarkFrame>,
    pub audio: Audio,
}

/// Textured render: surface color from the mean-shape coordinate of each
/// covered pixel, `background(x, y)` elsewhere.
pub fn render_textured(
    model: &FaceModel,
    params: &FaceParams,
    camera: &ProjectiveCamera,
    texture: impl Fn([f32; 3]) -> [f32; 3] + Sync,
    background: impl Fn(f64, f64) -> [f32; 3] + Sync,
) -> Result<Image> {
    let v = model.evaluate(params)?;
    let frags = rasterize(&v, &model.triangles, camera);
    let p = render_p(&frags, &model.triangles, &model.mean);
    let fg = foreground_image(&frags);
    let (h, w) = (camera.height, camera.width);
    Ok(Image::from_fn(3, h, w, |c, y, x| {
        let i = y * w + x;
        if fg.data[i] > 0.0 {
            let n = h * w;
            texture([p.data[i], p.data[n + i], p.data[2 * n + i]])[c]
        } else {
            background(x as f64, y as f64)[c]
        }
    }))
}

/// Sum of a few harmonics under a 4 Hz syllable envelope.
pub fn syllable_audio(samples: usize, seed: u64) -> Audio {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0: f64 = rng.random_range(110.0..180.0);
    let phases: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let rate = rng.random_range(3.0..5.0);
    let sr = SAMPLE_RATE as f64;
    let samples = (0..samples)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.5 - 0.5 * (std::f64::consts::TAU * rate * t).cos();
            let voice: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, ph)| (std::f64::consts::TAU * f0 * (k + 1) as f64 * t + ph).sin() / (k + 1) as f64)
                .sum();
            (0.25 * env * voice) as f32
        })
        .collect();
    Audio {
        sample_rate: SAMPLE_RATE,
        samples,
    }
}

pub fn synthetic_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    let head = SyntheticHead::build(&cfg.head);
    let mut camera = head.camera.clone();
    let m = cfg.margin as f64;
    camera.cx += m;
    camera.cy += m;
    camera.width += 2 * cfg.margin;
    camera.height += 2 * cfg.margin;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = random_sequence(&head.model, &mut rng, cfg.frames, &cfg.motion);
    let frames = params
        .iter()
        .map(|p| render_textured(&head.model, p, &camera, head_texture, background_color))
        .collect::<Result<Vec<_>>>()?;
    let landmarks = params
        .iter()
        .map(|p| project_landmarks(&head.model, p, &camera))
        .collect::<Result<Vec<_>>>()?;
    let side = head.camera.width as f64;
    let face_box = FaceBox {
        y1: m,
        y2: m + side,
        x1: m,
        x2: m + side,
    };
    let audio = syllable_audio(cfg.frames * SAMPLES_PER_VIDEO_FRAME, cfg.seed ^ 0x5eed);
    Ok(SyntheticScene {
        head,
        camera,
        params,
        frames,
        boxes: vec![face_box; cfg.frames],
        landmarks,
        audio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_of_the_frame_matches_the_generation_camera() {
        let cfg = SceneConfig {
            frames: 2,
            head: SyntheticHeadConfig::small(),
            ..SceneConfig::default()
        };
        let s = synthetic_scene(&cfg).unwrap();
        let (y1, y2, x1, x2) = s.boxes[0].pixel_bounds();
        let crop = s.frames[1].crop(y1, y2, x1, x2);
        let direct = render_textured(
            &s.head.model,
            &s.params[1],
            &s.head.camera,
            head_texture,
            |x, y| background_color(x + cfg.margin as f64, y + cfg.margin as f64),
        )
        .unwrap();
        assert_eq!(crop, direct);
        assert_eq!(s.audio.samples.len(), 2 * SAMPLES_PER_VIDEO_FRAME);
        assert!(s.landmarks[0].visible.iter().filter(|v| **v).count() > 70);
    }
}
