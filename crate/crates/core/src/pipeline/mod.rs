//! Lip-sync by double reenactment.
//!
//! Each face crop is generated twice from the same driving parameters (the
//! fitted ones with the mouth blendshapes replaced by sampled ones): once
//! from the first frame (`I_FF`) and once from the current frame (`I_CF`).
//! The mouth region of `I_FF` is blended into `I_CF`, and the result is
//! pasted back at the face box. Only the mouth and the chin contour are
//! meant to change.

pub mod masks;
pub mod metrics;
pub mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{mel_chunk, read_wav, Audio, CLIP_SAMPLES, SAMPLES_PER_VIDEO_FRAME, VIDEO_FPS};
use crate::camera::{ProjectiveCamera, DEFAULT_FIT_FOCAL, FIT_RESOLUTION, GENERATION_RESOLUTION};
use crate::diffusion::{
    audio_embeddings, sample, BlendshapeClip, Conditions, Denoiser, EchoDenoiser,
    MockAudioDenoiser, NoiseSchedule, SamplerConfig, CLIP_FRAMES, CONTEXT_FRAMES,
};
use crate::error::{Error, Result};
use crate::facemodel::{extract_mouth, fuse_mouth, FaceModel, FaceParams, MouthIndexSet, N_FACE_LANDMARKS};
use crate::fit::{fit_sequence, rig_landmarks, FitConfig, LandmarkFrame, LandmarkTrack};
use crate::image::Image;
use crate::io::{load_clip, load_landmarks, load_model, save_params, ParamsFile};
use crate::maps::{render_maps, RenderMaps, SketchConfig};
use crate::warp::{composite_blend, locality_metric, warp_stable};

pub use masks::{boundary_ring, dilate, fill_polygon, mean_abs_outside, polyline_band};
pub use metrics::{delta_cl, DeltaCl, FaceBox};
pub use scene::{render_textured, synthetic_scene, syllable_audio, SceneConfig, SyntheticScene};

/// Frames advanced per sampled window; the remaining five frames of each
/// window are the context of the next one.
pub const WINDOW_STRIDE: usize = CLIP_FRAMES - CONTEXT_FRAMES;

/// Face generator: renders the reference identity under the driving
/// geometry described by `maps`. Must be deterministic.
pub trait Generator: Send + Sync {
    fn generate(&self, reference: &Image, maps: &RenderMaps) -> Result<Image>;
}

/// Stand-in generator: the reference warped along the 3D flow on the
/// driving foreground, background passed through.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockGenerator;

impl Generator for MockGenerator {
    fn generate(&self, reference: &Image, maps: &RenderMaps) -> Result<Image> {
        mock_generator(reference, maps)
    }
}

pub fn mock_generator(reference: &Image, maps: &RenderMaps) -> Result<Image> {
    if reference.height != maps.flow.height || reference.width != maps.flow.width {
        return Err(Error::InvalidInput(format!(
            "reference is {}x{}, maps are {}x{}",
            reference.width, reference.height, maps.flow.width, maps.flow.height
        )));
    }
    // flow points from the driving to the reference projection, which is
    // where the backward warp must read
    warp_stable(reference, &maps.flow, &maps.foreground)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    /// Loudness-driven analytic stand-in.
    #[default]
    Mock,
    /// Replays the fitted mouth blendshapes of the input video.
    Echo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LipsyncConfig {
    pub seed: u64,
    pub generation_resolution: usize,
    pub fit_resolution: usize,
    /// Focal length at the fit resolution.
    pub focal: f64,
    pub camera_distance: f64,
    /// Dilation of the inner-lip fill, in pixels at 256 x 256.
    pub mouth_dilation: f64,
    /// Half-width of the band around the jaw line where change is allowed,
    /// in pixels at 256 x 256.
    pub chin_band: f64,
    /// Half-width of the band around the face silhouette, in pixels at
    /// 256 x 256.
    pub silhouette_ring: f64,
    pub denoiser: DenoiserKind,
    pub sampler: SamplerConfig,
    pub fit: FitConfig,
    pub sketch: SketchConfig,
    /// Keep `I_FF`, `I_CF` and the masks of every frame in the output.
    #[serde(skip)]
    pub keep_intermediates: bool,
}

impl Default for LipsyncConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generation_resolution: GENERATION_RESOLUTION,
            fit_resolution: FIT_RESOLUTION,
            focal: DEFAULT_FIT_FOCAL,
            camera_distance: crate::synthetic::CAMERA_DISTANCE,
            mouth_dilation: 10.0,
            chin_band: 8.0,
            silhouette_ring: 2.0,
            denoiser: DenoiserKind::Mock,
            sampler: SamplerConfig::default(),
            fit: FitConfig::default(),
            sketch: SketchConfig::default(),
            keep_intermediates: false,
        }
    }
}

impl LipsyncConfig {
    pub fn fit_camera(&self) -> Result<ProjectiveCamera> {
        ProjectiveCamera::facing_origin(
            self.focal,
            self.fit_resolution,
            self.fit_resolution,
            self.camera_distance,
        )
    }

    pub fn generation_camera(&self) -> Result<ProjectiveCamera> {
        Ok(self
            .fit_camera()?
            .resized(self.generation_resolution, self.generation_resolution))
    }

    /// Pixel lengths given at 256 x 256, at the generation resolution.
    fn scaled(&self, px: f64) -> f64 {
        px * self.generation_resolution as f64 / GENERATION_RESOLUTION as f64
    }
}

/// Everything `lipsync_run` consumes, already in memory.
#[derive(Clone, Debug)]
pub struct LipsyncInput {
    pub frames: Vec<Image>,
    pub boxes: Vec<FaceBox>,
    /// Full-frame pixel coordinates, one row per model landmark.
    pub landmarks: Vec<LandmarkFrame>,
    pub audio: Audio,
    /// Overrides the sampling style clip (35 mouth columns).
    pub style: Option<BlendshapeClip>,
    /// Overrides the geometric mouth mask; one mask per frame at crop
    /// resolution or any size (resized).
    pub mouth_masks: Option<Vec<Image>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    /// `locality_metric(I_CF, crop, mouth ∪ chin band)`.
    pub locality: f64,
    /// Mean abs change of the output crop against the input crop over the
    /// pixels outside mouth, chin band and silhouette ring.
    pub outside_change: f64,
    pub delta_cl: f64,
    pub mouth_pixels: usize,
    pub landmark_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start: usize,
    pub seed: u64,
    /// Frames of the input sequence the style clip was taken from.
    pub style_frames: (usize, usize),
    /// Audio ran past the end of the track and was zero padded.
    pub audio_padded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipsyncReport {
    pub frames: Vec<FrameReport>,
    pub windows: Vec<WindowReport>,
    pub delta_cl_mean: f64,
    pub mean_locality: f64,
    pub max_outside_change: f64,
    pub fit_converged: bool,
    pub fit_iterations: usize,
    pub fit_landmark_rmse: f64,
    /// Conditions that make the output partial or approximate.
    pub flags: Vec<String>,
    pub config: LipsyncConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameIntermediates {
    pub crop: Image,
    pub i_ff: Image,
    pub i_cf: Image,
    pub mouth_mask: Image,
    /// Mouth mask, chin band and silhouette ring together.
    pub exclusion: Image,
    pub output_crop: Image,
}

#[derive(Clone, Debug)]
pub struct LipsyncOutput {
    pub frames: Vec<Image>,
    pub fitted: Vec<FaceParams>,
    pub driving: Vec<FaceParams>,
    /// Sampled mouth blendshapes, one row per frame.
    pub mouth: BlendshapeClip,
    pub report: LipsyncReport,
    pub intermediates: Option<Vec<FrameIntermediates>>,
}

fn check_input(input: &LipsyncInput) -> Result<()> {
    let n = input.frames.len();
    if n == 0 {
        return Err(Error::InvalidInput("no frames".into()));
    }
    for (what, len) in [("face boxes", input.boxes.len()), ("landmark frames", input.landmarks.len())] {
        if len != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if let Some(m) = &input.mouth_masks {
        if m.len() != n {
            return Err(Error::Dimension {
                what: "mouth masks",
                expected: n,
                got: m.len(),
            });
        }
    }
    for (i, b) in input.boxes.iter().enumerate() {
        b.validate(i)?;
    }
    let expected = input.audio.duration() * VIDEO_FPS as f64;
    if (n as f64 - expected).abs() > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{n} frames do not match {:.3} s of audio at {VIDEO_FPS} fps",
            input.audio.duration()
        )));
    }
    Ok(())
}

/// Crop-space landmarks at the fit resolution.
fn crop_landmarks(frame: &LandmarkFrame, b: &FaceBox, res: usize) -> LandmarkFrame {
    let (y1, y2, x1, x2) = b.pixel_bounds();
    let sx = res as f64 / (x2 - x1) as f64;
    let sy = res as f64 / (y2 - y1) as f64;
    let points: Vec<[f64; 2]> = frame
        .points
        .iter()
        .map(|p| [(p[0] - x1 as f64) * sx, (p[1] - y1 as f64) * sy])
        .collect();
    let visible = frame
        .visible
        .iter()
        .zip(&points)
        .map(|(&v, p)| v && p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= res as f64 && p[1] <= res as f64)
        .collect();
    LandmarkFrame { points, visible }
}

/// Frames of the style clip for a window: the next disjoint 50 frames, else
/// the previous ones, else the first 50 frames of the sequence.
fn style_range(n: usize, start: usize) -> (usize, usize, bool) {
    if start + 2 * CLIP_FRAMES <= n {
        (start + CLIP_FRAMES, start + 2 * CLIP_FRAMES, true)
    } else if start >= CLIP_FRAMES {
        (start - CLIP_FRAMES, start, true)
    } else {
        (0, n.min(CLIP_FRAMES), false)
    }
}

fn padded_rows(clip: &BlendshapeClip, frames: usize) -> BlendshapeClip {
    let mut out = BlendshapeClip::zeros(frames, clip.dims);
    for i in 0..frames {
        let src = i.min(clip.frames - 1);
        out.row_mut(i).copy_from_slice(clip.row(src));
    }
    out
}

/// Geometry-derived masks of one frame at the generation resolution.
struct FrameMasks {
    mouth: Image,
    chin: Image,
    ring: Image,
}

fn frame_masks(
    model: &FaceModel,
    fitted: &FaceParams,
    driving: &FaceParams,
    camera: &ProjectiveCamera,
    maps_fitted_fg: &Image,
    maps_driving_fg: &Image,
    cfg: &LipsyncConfig,
) -> Result<FrameMasks> {
    let res = camera.width;
    let screen = |p: &FaceParams| -> Result<Vec<[f64; 2]>> {
        Ok(camera
            .project(&model.evaluate(p)?)
            .iter()
            .map(|s| [s.x, s.y])
            .collect())
    };
    let sf = screen(fitted)?;
    let sd = screen(driving)?;
    let lip: Vec<[f64; 2]> = model.contours.inner_lip.iter().map(|&v| sd[v as usize]).collect();
    let mouth = dilate(&fill_polygon(&lip, res, res), cfg.scaled(cfg.mouth_dilation));
    let band = |s: &[[f64; 2]]| {
        let jaw: Vec<[f64; 2]> = model.contours.jawline.iter().map(|&v| s[v as usize]).collect();
        polyline_band(&jaw, false, cfg.scaled(cfg.chin_band), res, res)
    };
    let chin = masks::union(&[&band(&sf), &band(&sd)]);
    let r = cfg.scaled(cfg.silhouette_ring);
    let ring = masks::union(&[&boundary_ring(maps_fitted_fg, r), &boundary_ring(maps_driving_fg, r)]);
    Ok(FrameMasks { mouth, chin, ring })
}

/// Face box of the 68 face landmarks of `params`, in full-frame pixels.
fn landmark_box(
    model: &FaceModel,
    params: &FaceParams,
    camera: &ProjectiveCamera,
    face_box: &FaceBox,
) -> Result<FaceBox> {
    let (y1, y2, x1, x2) = face_box.pixel_bounds();
    let sx = (x2 - x1) as f64 / camera.width as f64;
    let sy = (y2 - y1) as f64 / camera.height as f64;
    let pts: Vec<[f64; 2]> = rig_landmarks(model, params, camera)?
        .into_iter()
        .take(N_FACE_LANDMARKS)
        .map(|p| [x1 as f64 + p[0] * sx, y1 as f64 + p[1] * sy])
        .collect();
    Ok(FaceBox::around(&pts))
}

/// Runs the whole pipeline. Frames are processed in parallel; the result is
/// bit-identical for identical inputs and configuration.
pub fn lipsync_run(
    input: &LipsyncInput,
    model: &FaceModel,
    generator: &dyn Generator,
    cfg: &LipsyncConfig,
) -> Result<LipsyncOutput> {
    check_input(input)?;
    let n = input.frames.len();
    let fit_cam = cfg.fit_camera()?;
    let gen_cam = cfg.generation_camera()?;
    let gres = cfg.generation_resolution;
    let mut flags = Vec::new();

    // (1) crops
    let crops: Vec<Image> = input
        .frames
        .par_iter()
        .zip(input.boxes.par_iter())
        .map(|(f, b)| {
            let (y1, y2, x1, x2) = b.pixel_bounds();
            f.crop(y1, y2, x1, x2).resize(gres, gres)
        })
        .collect();

    // (2) fit
    let track = LandmarkTrack::new(
        cfg.fit_resolution,
        cfg.fit_resolution,
        input
            .landmarks
            .iter()
            .zip(&input.boxes)
            .map(|(l, b)| crop_landmarks(l, b, cfg.fit_resolution))
            .collect(),
    );
    let fit = fit_sequence(&track, model, &fit_cam, None, &cfg.fit)?;
    if fit.flagged() {
        flags.push(format!(
            "fit stopped after {} iterations without converging",
            fit.diagnostics.iterations
        ));
    }
    let fitted = fit.params.clone();

    // (3) sample mouth blendshapes window by window
    let set = MouthIndexSet::from_prefixes(model)?;
    let recorded = BlendshapeClip::from_rows(
        &fitted.iter().map(|p| extract_mouth(p, &set)).collect::<Vec<_>>(),
    )?;
    let mut mouth = recorded.clone();
    let schedule = NoiseSchedule::default();
    let names: Vec<&str> = set
        .indices()
        .iter()
        .map(|&i| model.blendshape_names[i].as_str())
        .collect();
    let mock = MockAudioDenoiser::for_names(&names);
    let mut windows = Vec::new();
    let mut start = 0usize;
    while start == 0 || start + CONTEXT_FRAMES < n {
        let seed = cfg.seed.wrapping_add(windows.len() as u64);
        let s0 = start * SAMPLES_PER_VIDEO_FRAME;
        let audio_padded = s0 + CLIP_SAMPLES > input.audio.samples.len();
        let clip_audio = Audio {
            sample_rate: input.audio.sample_rate,
            samples: input.audio.window(s0, CLIP_SAMPLES),
        };
        let embeddings = audio_embeddings(&mel_chunk(&clip_audio)?);
        let context = padded_rows(&mouth.slice(start.min(n - 1), (n - start).min(CONTEXT_FRAMES)), CONTEXT_FRAMES);
        let (st0, st1, disjoint) = style_range(n, start);
        let style = match &input.style {
            Some(s) => s.clone(),
            None => recorded.slice(st0, st1 - st0),
        };
        if input.style.is_none() && !disjoint {
            flags.push(format!(
                "window at frame {start}: sequence too short for a disjoint style clip, frames {st0}..{st1} used"
            ));
        }
        let echo = EchoDenoiser {
            recorded: padded_rows(&recorded, start + CLIP_FRAMES),
            frame_offset: start,
        };
        let denoiser: &dyn Denoiser = match cfg.denoiser {
            DenoiserKind::Mock => &mock,
            DenoiserKind::Echo => &echo,
        };
        let cond = Conditions {
            context: &context,
            audio: &embeddings,
            style: Some(&style),
        };
        let out = sample(denoiser, &cond, CLIP_FRAMES, &schedule, &cfg.sampler, seed)?;
        for i in CONTEXT_FRAMES..CLIP_FRAMES {
            if start + i < n {
                mouth.row_mut(start + i).copy_from_slice(out.row(i));
            }
        }
        if audio_padded {
            flags.push(format!("window at frame {start}: audio zero padded past its end"));
        }
        windows.push(WindowReport {
            start,
            seed,
            style_frames: if input.style.is_some() { (0, 0) } else { (st0, st1) },
            audio_padded,
        });
        start += WINDOW_STRIDE;
    }

    // (4) driving parameters
    let driving: Vec<FaceParams> = fitted
        .iter()
        .enumerate()
        .map(|(t, p)| fuse_mouth(p, mouth.row(t), &set))
        .collect::<Result<_>>()?;

    // (5)-(8) per frame
    let per_frame: Vec<Result<(Image, FrameReport, FaceBox, FaceBox, Option<FrameIntermediates>)>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let maps_ff = render_maps(model, &fitted[0], &driving[t], &gen_cam, &cfg.sketch)?;
            let maps_cf = render_maps(model, &fitted[t], &driving[t], &gen_cam, &cfg.sketch)?;
            let i_ff = generator.generate(&crops[0], &maps_ff)?;
            let i_cf = generator.generate(&crops[t], &maps_cf)?;
            let fitted_fg = render_maps(model, &fitted[t], &fitted[t], &gen_cam, &cfg.sketch)?.foreground;
            let m = frame_masks(model, &fitted[t], &driving[t], &gen_cam, &fitted_fg, &maps_cf.foreground, cfg)?;
            let mouth_mask = match &input.mouth_masks {
                Some(ext) => {
                    let e = ext[t].resize(gres, gres);
                    let mut k = Image::zeros(1, gres, gres);
                    k.data.copy_from_slice(e.plane(0));
                    k
                }
                None => m.mouth,
            };
            let blended = composite_blend(&i_cf, &i_ff, &mouth_mask)?;
            let allowed = masks::union(&[&mouth_mask, &m.chin]);
            let exclusion = masks::union(&[&allowed, &m.ring]);
            let locality = locality_metric(&i_cf, &crops[t], &allowed)?;
            let outside_change = mean_abs_outside(&blended, &crops[t], &exclusion);

            let b = &input.boxes[t];
            let (y1, y2, x1, x2) = b.pixel_bounds();
            let mut frame = input.frames[t].clone();
            frame.paste(&blended.resize((y2 - y1) as usize, (x2 - x1) as usize), y1, x1);

            let orig_box = landmark_box(model, &fitted[t], &fit_cam, b)?;
            let sync_box = landmark_box(model, &driving[t], &fit_cam, b)?;
            let report = FrameReport {
                frame: t,
                locality,
                outside_change,
                delta_cl: 0.0,
                mouth_pixels: masks::count(&mouth_mask),
                landmark_rmse: fit.diagnostics.losses.frames[t].landmark_rmse,
            };
            let extra = cfg.keep_intermediates.then(|| FrameIntermediates {
                crop: crops[t].clone(),
                i_ff,
                i_cf,
                mouth_mask,
                exclusion,
                output_crop: blended,
            });
            Ok((frame, report, orig_box, sync_box, extra))
        })
        .collect();

    let mut frames = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    let mut orig_boxes = Vec::with_capacity(n);
    let mut sync_boxes = Vec::with_capacity(n);
    let mut extras = Vec::with_capacity(n);
    for r in per_frame {
        let (f, rep, ob, sb, ex) = r?;
        frames.push(f);
        reports.push(rep);
        orig_boxes.push(ob);
        sync_boxes.push(sb);
        extras.extend(ex);
    }
    let dcl = delta_cl(&orig_boxes, &sync_boxes)?;
    for (r, d) in reports.iter_mut().zip(&dcl.per_frame) {
        r.delta_cl = *d;
    }
    let report = LipsyncReport {
        delta_cl_mean: dcl.mean,
        mean_locality: reports.iter().map(|r| r.locality).sum::<f64>() / n as f64,
        max_outside_change: reports.iter().map(|r| r.outside_change).fold(0.0, f64::max),
        fit_converged: fit.diagnostics.converged,
        fit_iterations: fit.diagnostics.iterations,
        fit_landmark_rmse: fit.diagnostics.landmark_rmse(),
        frames: reports,
        windows,
        flags,
        config: cfg.clone(),
    };
    Ok(LipsyncOutput {
        frames,
        fitted,
        driving,
        mouth,
        report,
        intermediates: cfg.keep_intermediates.then_some(extras),
    })
}

/// Scene input for [`lipsync_run`].
impl SyntheticScene {
    pub fn input(&self) -> LipsyncInput {
        LipsyncInput {
            frames: self.frames.clone(),
            boxes: self.boxes.clone(),
            landmarks: self.landmarks.clone(),
            audio: self.audio.clone(),
            style: None,
            mouth_masks: None,
        }
    }
}

/// A lip-sync job described by files on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipsyncJob {
    /// PNG frames, processed in file-name order.
    pub frames_dir: PathBuf,
    /// JSON array of face boxes, one per frame.
    pub boxes: PathBuf,
    /// Landmark JSON lines in full-frame pixels.
    pub landmarks: PathBuf,
    /// Dubbing audio, 16 kHz mono WAV.
    pub audio: PathBuf,
    /// `FKT1` model.
    pub model: PathBuf,
    /// Optional `BSC1` style clip.
    #[serde(default)]
    pub style: Option<PathBuf>,
    /// Optional directory of mouth mask PNGs, one per frame.
    #[serde(default)]
    pub mouth_masks: Option<PathBuf>,
    /// Only `"mock"` is built in.
    #[serde(default = "default_generator")]
    pub generator: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub config: LipsyncConfig,
}

fn default_generator() -> String {
    "mock".into()
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Output frame file name: zero-padded index.
pub fn frame_file_name(i: usize) -> String {
    format!("{i:06}.png")
}

impl LipsyncJob {
    pub fn generator(&self) -> Result<Box<dyn Generator>> {
        match self.generator.as_str() {
            "mock" => Ok(Box::new(MockGenerator)),
            other => Err(Error::InvalidInput(format!("unknown generator {other:?}"))),
        }
    }

    pub fn load(&self) -> Result<(LipsyncInput, FaceModel)> {
        let frames = png_files(&self.frames_dir)?
            .iter()
            .map(|p| Image::load_png(p))
            .collect::<Result<Vec<_>>>()?;
        let boxes: Vec<FaceBox> = serde_json::from_slice(&fs::read(&self.boxes)?)?;
        let style = match &self.style {
            Some(p) => Some(load_clip(p)?.clip),
            None => None,
        };
        let mouth_masks = match &self.mouth_masks {
            Some(dir) => Some(
                png_files(dir)?
                    .iter()
                    .map(|p| {
                        let img = Image::load_png(p)?;
                        Ok(Image::new(1, img.height, img.width, img.plane(0).to_vec())?)
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let input = LipsyncInput {
            frames,
            boxes,
            landmarks: load_landmarks(&self.landmarks)?,
            audio: read_wav(&self.audio)?,
            style,
            mouth_masks,
        };
        Ok((input, load_model(&self.model)?))
    }

    /// Loads, runs and writes frames, fitted parameters and the report.
    pub fn run(&self) -> Result<LipsyncReport> {
        let (input, model) = self.load()?;
        let out = lipsync_run(&input, &model, self.generator()?.as_ref(), &self.config)?;
        write_output(&self.output_dir, &out, Some(&self.config.fit_camera()?))?;
        Ok(out.report)
    }
}

/// Frames as `frames/000000.png ...`, `params.json` and `report.json`.
pub fn write_output(dir: &Path, out: &LipsyncOutput, camera: Option<&ProjectiveCamera>) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for (i, f) in out.frames.iter().enumerate() {
        f.save_png(&frames_dir.join(frame_file_name(i)))?;
    }
    save_params(&dir.join("params.json"), &ParamsFile::from_params(&out.fitted, camera))?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&out.report)?)?;
    Ok(())
}
