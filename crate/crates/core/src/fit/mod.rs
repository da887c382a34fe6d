//! Fitting face-model parameters to 2D landmark tracks.
//!
//! A sequence is fitted by minimizing
//!
//! ```text
//! J = 1/F sum_f [ l_lm L_lm(f) + l_reg (|a|^2 + |b_f|^2) + l_c C(b_f) ]
//!     + l_smooth/F L_smooth + l_id/F L_id
//! ```
//!
//! with one identity shared by all frames (so `L_id` vanishes) unless the
//! per-frame identity mode is selected. Gradients are analytic and run
//! through the landmark embedding, the eye and head rotations and the
//! pinhole projection; the rasterizer is never involved.

mod lm;
mod rig;

use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::ProjectiveCamera;
use crate::error::{Error, Result};
use crate::facemodel::{constraint_violation, constraint_violation_grad, EyeSide, FaceModel, FaceParams};
use crate::rotation::{matrix_to_rot6d, rot6d_jacobian, rot6d_to_matrix, Rot6};

use rig::{FramePose, LandmarkRig};

pub const DEFAULT_FPS: f64 = 25.0;

/// Labels of one frame: one row per model landmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFrame {
    pub points: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl LandmarkFrame {
    pub fn all_visible(points: Vec<[f64; 2]>) -> Self {
        let visible = vec![true; points.len()];
        Self { points, visible }
    }

    pub fn n_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Every label moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            visible: self.visible.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTrack {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub frames: Vec<LandmarkFrame>,
}

impl LandmarkTrack {
    pub fn new(width: usize, height: usize, frames: Vec<LandmarkFrame>) -> Self {
        Self {
            width,
            height,
            fps: DEFAULT_FPS,
            frames,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row counts match and visible labels lie inside the image.
    pub fn validate(&self, n_landmarks: usize) -> Result<()> {
        for (f, fr) in self.frames.iter().enumerate() {
            if fr.points.len() != n_landmarks || fr.visible.len() != n_landmarks {
                return Err(Error::InvalidInput(format!(
                    "frame {f}: expected {n_landmarks} landmark rows, got {} points and {} flags",
                    fr.points.len(),
                    fr.visible.len()
                )));
            }
            for (p, &vis) in fr.points.iter().zip(&fr.visible) {
                let inside = p[0] >= 0.0
                    && p[1] >= 0.0
                    && p[0] <= self.width as f64
                    && p[1] <= self.height as f64;
                if vis && !inside {
                    return Err(Error::InvalidInput(format!(
                        "frame {f}: visible landmark {p:?} outside the {}x{} image",
                        self.width, self.height
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Projects the embedded landmarks of the posed model. Landmarks outside
/// the image or behind the camera are marked invisible.
pub fn project_landmarks(
    model: &FaceModel,
    params: &FaceParams,
    camera: &ProjectiveCamera,
) -> Result<LandmarkFrame> {
    let verts = model.evaluate(params)?;
    let mut points = Vec::with_capacity(model.landmarks.len());
    let mut visible = Vec::with_capacity(model.landmarks.len());
    for p in model.landmark_positions(&verts) {
        let s = camera.project_point(&p);
        let inside = s.in_front()
            && s.x >= 0.0
            && s.y >= 0.0
            && s.x <= camera.width as f64
            && s.y <= camera.height as f64;
        points.push([s.x, s.y]);
        visible.push(inside);
    }
    Ok(LandmarkFrame { points, visible })
}

/// Mean squared pixel distance between projected landmarks and the visible
/// labels.
pub fn landmark_loss(
    params: &FaceParams,
    frame: &LandmarkFrame,
    model: &FaceModel,
    camera: &ProjectiveCamera,
) -> Result<f64> {
    let n = model.landmarks.len();
    if frame.points.len() != n || frame.visible.len() != n {
        return Err(Error::Dimension {
            what: "landmark rows",
            expected: n,
            got: frame.points.len(),
        });
    }
    let n_vis = frame.n_visible();
    if n_vis == 0 {
        return Err(Error::NoVisibleLandmarks);
    }
    let verts = model.evaluate(params)?;
    let total: f64 = model
        .landmark_positions(&verts)
        .iter()
        .zip(&frame.points)
        .zip(&frame.visible)
        .filter(|(_, &v)| v)
        .map(|((p, l), _)| {
            let s = camera.project_point(p);
            (s.x - l[0]).powi(2) + (s.y - l[1]).powi(2)
        })
        .sum();
    Ok(total / n_vis as f64)
}

/// `|alpha|^2 + |beta|^2`.
pub fn regularizer(params: &FaceParams) -> f64 {
    params.alpha.iter().chain(&params.beta).map(|v| v * v).sum()
}

/// `|alpha_1 - alpha_2|^2`.
pub fn identity_consistency(alpha_1: &[f64], alpha_2: &[f64]) -> Result<f64> {
    if alpha_1.len() != alpha_2.len() {
        return Err(Error::Dimension {
            what: "alpha",
            expected: alpha_1.len(),
            got: alpha_2.len(),
        });
    }
    Ok(alpha_1.iter().zip(alpha_2).map(|(a, b)| (a - b).powi(2)).sum())
}

/// Sum over consecutive frames of the squared differences of expression,
/// head translation and the decoded head and eye rotation matrices.
pub fn param_smoothness(seq: &[FaceParams]) -> Result<f64> {
    let mut total = 0.0;
    for w in seq.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        total += a.beta.iter().zip(&b.beta).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        total += (0..3).map(|i| (a.trans_head[i] - b.trans_head[i]).powi(2)).sum::<f64>();
        total += (a.head_rotation()? - b.head_rotation()?).norm_squared();
        for side in EyeSide::BOTH {
            total += (a.eye_rotation(side)? - b.eye_rotation(side)?).norm_squared();
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// One identity vector for the whole sequence.
    #[default]
    Shared,
    /// One identity per frame, tied by the identity consistency term.
    PerFrame,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Damped Gauss-Newton on the squared terms, with the constraint
    /// entering through its subgradient.
    #[default]
    LevenbergMarquardt,
    /// Adam with a decaying step size.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda_lm: f64,
    pub lambda_reg: f64,
    pub lambda_id: f64,
    pub lambda_constraint: f64,
    pub lambda_smooth: f64,
    pub optimizer: Optimizer,
    /// Iteration budget. One iteration is one linear solve for
    /// Levenberg-Marquardt and one gradient step for Adam.
    pub iterations: usize,
    /// Adam only.
    pub learning_rate: f64,
    /// The step size decays geometrically to this value at the last
    /// iteration.
    pub final_learning_rate: f64,
    /// Relative loss decrease over the convergence window below which the
    /// fit counts as converged. The window is 100 iterations for Adam and
    /// 5 accepted steps for Levenberg-Marquardt.
    pub tolerance: f64,
    /// Adam only: step halvings tried before an iteration is rejected.
    pub max_halvings: usize,
    /// Levenberg-Marquardt only: blendshape weights that start inside
    /// `[0, 1]` stay there. Without it the constraint term alone pulls
    /// weights back, and at the default weights the regularizer can
    /// outweigh it for near-collinear blendshapes.
    pub keep_in_box: bool,
    pub alpha_mode: AlphaMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_lm: 80.0,
            lambda_reg: 0.025,
            lambda_id: 0.025,
            lambda_constraint: 0.2,
            lambda_smooth: 0.025,
            optimizer: Optimizer::LevenbergMarquardt,
            iterations: 3000,
            learning_rate: 0.02,
            final_learning_rate: 2e-5,
            tolerance: 1e-12,
            max_halvings: 6,
            keep_in_box: true,
            alpha_mode: AlphaMode::Shared,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.lambda_lm,
            self.lambda_reg,
            self.lambda_id,
            self.lambda_constraint,
            self.lambda_smooth,
        ];
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("loss weights must be finite and >= 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Landmark,
    Regularizer,
    Identity,
    Smoothness,
    Constraint,
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [
        LossTerm::Landmark,
        LossTerm::Regularizer,
        LossTerm::Identity,
        LossTerm::Smoothness,
        LossTerm::Constraint,
        LossTerm::Total,
    ];
}

impl FromStr for LossTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "landmark" => LossTerm::Landmark,
            "regularizer" => LossTerm::Regularizer,
            "identity" => LossTerm::Identity,
            "smoothness" => LossTerm::Smoothness,
            "constraint" => LossTerm::Constraint,
            "total" => LossTerm::Total,
            _ => return Err(Error::InvalidInput(format!("unknown loss term {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Coefficients {
    lm: f64,
    reg: f64,
    c: f64,
    smooth: f64,
    id: f64,
}

impl Coefficients {
    fn only(term: LossTerm, cfg: &FitConfig, frames: usize) -> Self {
        let z = Self {
            lm: 0.0,
            reg: 0.0,
            c: 0.0,
            smooth: 0.0,
            id: 0.0,
        };
        match term {
            LossTerm::Landmark => Self { lm: 1.0, ..z },
            LossTerm::Regularizer => Self { reg: 1.0, ..z },
            LossTerm::Constraint => Self { c: 1.0, ..z },
            LossTerm::Smoothness => Self { smooth: 1.0, ..z },
            LossTerm::Identity => Self { id: 1.0, ..z },
            LossTerm::Total => {
                let inv = 1.0 / frames as f64;
                Self {
                    lm: cfg.lambda_lm * inv,
                    reg: cfg.lambda_reg * inv,
                    c: cfg.lambda_constraint * inv,
                    smooth: cfg.lambda_smooth * inv,
                    id: cfg.lambda_id * inv,
                }
            }
        }
    }
}

/// Loss terms of one frame, unweighted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub landmark: f64,
    pub landmark_rmse: f64,
    pub regularizer: f64,
    pub constraint: f64,
}

/// All terms at a point, unweighted, plus the weighted objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub frames: Vec<FrameLoss>,
    pub smoothness: f64,
    pub identity_consistency: f64,
    pub total: f64,
}

/// Offsets of every parameter block in the flat optimization vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    mode: AlphaMode,
    na: usize,
    nb: usize,
    frames: usize,
}

impl Layout {
    const POSE: usize = 6 + 3 + 12;

    fn block(&self) -> usize {
        match self.mode {
            AlphaMode::Shared => self.nb + Self::POSE,
            AlphaMode::PerFrame => self.na + self.nb + Self::POSE,
        }
    }

    fn base(&self, f: usize) -> usize {
        match self.mode {
            AlphaMode::Shared => self.na + f * self.block(),
            AlphaMode::PerFrame => f * self.block() + self.na,
        }
    }

    fn len(&self) -> usize {
        match self.mode {
            AlphaMode::Shared => self.na + self.frames * self.block(),
            AlphaMode::PerFrame => self.frames * self.block(),
        }
    }

    fn alpha(&self, f: usize) -> std::ops::Range<usize> {
        match self.mode {
            AlphaMode::Shared => 0..self.na,
            AlphaMode::PerFrame => f * self.block()..f * self.block() + self.na,
        }
    }

    fn beta(&self, f: usize) -> std::ops::Range<usize> {
        let b = self.base(f);
        b..b + self.nb
    }

    fn rot_head(&self, f: usize) -> usize {
        self.base(f) + self.nb
    }

    fn trans(&self, f: usize) -> usize {
        self.rot_head(f) + 6
    }

    fn rot_eye(&self, f: usize, side: usize) -> usize {
        self.trans(f) + 3 + 6 * side
    }
}

fn rot6(x: &[f64], at: usize) -> Rot6 {
    std::array::from_fn(|i| x[at + i])
}

fn vec3(x: &[f64], at: usize) -> [f64; 3] {
    std::array::from_fn(|i| x[at + i])
}

/// A fitting problem: model, camera, labels and weights.
pub struct FitProblem<'a> {
    camera: ProjectiveCamera,
    track: &'a LandmarkTrack,
    cfg: FitConfig,
    rig: LandmarkRig,
    layout: Layout,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        model: &FaceModel,
        camera: &ProjectiveCamera,
        track: &'a LandmarkTrack,
        cfg: &FitConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        camera.validate()?;
        if track.is_empty() {
            return Err(Error::InvalidInput("landmark track has no frames".into()));
        }
        let rig = LandmarkRig::new(model)?;
        track.validate(rig.n_landmarks())?;
        if let Some(f) = track.frames.iter().position(|f| f.n_visible() == 0) {
            return Err(Error::InvalidInput(format!("frame {f} has no visible landmarks")));
        }
        let layout = Layout {
            mode: cfg.alpha_mode,
            na: rig.n_alpha,
            nb: rig.n_beta,
            frames: track.len(),
        };
        Ok(Self {
            camera: camera.clone(),
            track,
            cfg: cfg.clone(),
            rig,
            layout,
        })
    }

    pub fn n_variables(&self) -> usize {
        self.layout.len()
    }

    pub fn n_frames(&self) -> usize {
        self.layout.frames
    }

    pub fn camera(&self) -> &ProjectiveCamera {
        &self.camera
    }

    /// Flattens per-frame parameters. In shared mode the identity of the
    /// first frame is used.
    pub fn pack(&self, params: &[FaceParams]) -> Result<Vec<f64>> {
        let l = &self.layout;
        if params.len() != l.frames {
            return Err(Error::Dimension {
                what: "frames",
                expected: l.frames,
                got: params.len(),
            });
        }
        let mut x = vec![0.0; l.len()];
        for (f, p) in params.iter().enumerate() {
            crate::error::check_len("alpha", l.na, p.alpha.len())?;
            crate::error::check_len("beta", l.nb, p.beta.len())?;
            if f == 0 || l.mode == AlphaMode::PerFrame {
                x[l.alpha(f)].copy_from_slice(&p.alpha);
            }
            x[l.beta(f)].copy_from_slice(&p.beta);
            x[l.rot_head(f)..l.rot_head(f) + 6].copy_from_slice(&p.rot_head);
            x[l.trans(f)..l.trans(f) + 3].copy_from_slice(&p.trans_head);
            for s in 0..2 {
                x[l.rot_eye(f, s)..l.rot_eye(f, s) + 6].copy_from_slice(&p.rot_eyes[s]);
            }
        }
        Ok(x)
    }

    /// Inverse of [`pack`](Self::pack); rotations are re-orthonormalized
    /// so the stored 6D pairs are the first two columns of the decoded
    /// matrices.
    pub fn unpack(&self, x: &[f64]) -> Result<Vec<FaceParams>> {
        let l = &self.layout;
        let clean = |r: Rot6| rot6d_to_matrix(&r).map(|m| matrix_to_rot6d(&m));
        (0..l.frames)
            .map(|f| {
                Ok(FaceParams {
                    alpha: x[l.alpha(f)].to_vec(),
                    beta: x[l.beta(f)].to_vec(),
                    rot_head: clean(rot6(x, l.rot_head(f)))?,
                    trans_head: vec3(x, l.trans(f)),
                    rot_eyes: [
                        clean(rot6(x, l.rot_eye(f, 0)))?,
                        clean(rot6(x, l.rot_eye(f, 1)))?,
                    ],
                })
            })
            .collect()
    }

    fn frame_pose<'x>(&self, x: &'x [f64], f: usize) -> FramePose<'x> {
        let l = &self.layout;
        let r = |at: usize| -> &'x Rot6 { x[at..at + 6].try_into().expect("6 entries") };
        FramePose {
            beta: &x[l.beta(f)],
            rot_head: r(l.rot_head(f)),
            trans: x[l.trans(f)..l.trans(f) + 3].try_into().expect("3 entries"),
            rot_eyes: [r(l.rot_eye(f, 0)), r(l.rot_eye(f, 1))],
        }
    }

    /// Unweighted terms and the weighted total at `x`.
    pub fn breakdown(&self, x: &[f64]) -> Result<LossBreakdown> {
        let coef = Coefficients::only(LossTerm::Total, &self.cfg, self.n_frames());
        let (b, _) = self.evaluate(x, coef, false)?;
        Ok(b)
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.term_value(x, LossTerm::Total)
    }

    /// Value of one term summed over frames (or the weighted total).
    pub fn term_value(&self, x: &[f64], term: LossTerm) -> Result<f64> {
        let coef = Coefficients::only(term, &self.cfg, self.n_frames());
        Ok(self.evaluate(x, coef, false)?.0.total)
    }

    pub fn term_gradient(&self, x: &[f64], term: LossTerm) -> Result<Vec<f64>> {
        let coef = Coefficients::only(term, &self.cfg, self.n_frames());
        Ok(self.evaluate(x, coef, true)?.1.expect("gradient requested"))
    }

    fn evaluate(
        &self,
        x: &[f64],
        coef: Coefficients,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        let l = self.layout;
        if x.len() != l.len() {
            return Err(Error::Dimension {
                what: "fit variables",
                expected: l.len(),
                got: x.len(),
            });
        }
        let shared_z = match l.mode {
            AlphaMode::Shared => Some(self.rig.identity_offset(&x[l.alpha(0)])),
            AlphaMode::PerFrame => None,
        };
        let need_lm_grad = want_grad && coef.lm != 0.0;
        let per_frame: Vec<Result<(FrameLoss, Option<rig::FrameGrad>)>> = (0..l.frames)
            .into_par_iter()
            .map(|f| {
                let z_alpha = match &shared_z {
                    Some(z) => z.clone(),
                    None => self.rig.identity_offset(&x[l.alpha(f)]),
                };
                let pose = self.frame_pose(x, f);
                let z = self.rig.expression(&z_alpha, pose.beta);
                let fr = &self.track.frames[f];
                let (lm, g) = self.rig.landmark_term(
                    &z,
                    &pose,
                    &self.camera,
                    &fr.points,
                    &fr.visible,
                    need_lm_grad,
                )?;
                let alpha = &x[l.alpha(f)];
                Ok((
                    FrameLoss {
                        landmark: lm,
                        landmark_rmse: lm.sqrt(),
                        regularizer: alpha.iter().chain(pose.beta).map(|v| v * v).sum(),
                        constraint: constraint_violation(pose.beta),
                    },
                    g,
                ))
            })
            .collect();

        let mut grad = want_grad.then(|| vec![0.0; l.len()]);
        let mut frames = Vec::with_capacity(l.frames);
        let mut total = 0.0;
        let mut gz_shared: Option<nalgebra::DVector<f64>> = None;
        for (f, r) in per_frame.into_iter().enumerate() {
            let (fl, g) = r?;
            total += coef.lm * fl.landmark + coef.reg * fl.regularizer + coef.c * fl.constraint;
            if let Some(gr) = grad.as_mut() {
                let beta = &x[l.beta(f)];
                for (k, i) in l.beta(f).enumerate() {
                    gr[i] += 2.0 * coef.reg * beta[k];
                }
                if coef.c != 0.0 {
                    for (k, gc) in constraint_violation_grad(beta).into_iter().enumerate() {
                        gr[l.beta(f).start + k] += coef.c * gc;
                    }
                }
                for i in l.alpha(f) {
                    gr[i] += 2.0 * coef.reg * x[i];
                }
                if let Some(g) = g {
                    let s = coef.lm;
                    for (k, v) in g.beta.iter().enumerate() {
                        gr[l.beta(f).start + k] += s * v;
                    }
                    for k in 0..6 {
                        gr[l.rot_head(f) + k] += s * g.rot_head[k];
                        gr[l.rot_eye(f, 0) + k] += s * g.rot_eyes[0][k];
                        gr[l.rot_eye(f, 1) + k] += s * g.rot_eyes[1][k];
                    }
                    for k in 0..3 {
                        gr[l.trans(f) + k] += s * g.trans[k];
                    }
                    match l.mode {
                        AlphaMode::Shared => match gz_shared.as_mut() {
                            Some(acc) => *acc += &g.z * s,
                            None => gz_shared = Some(&g.z * s),
                        },
                        AlphaMode::PerFrame => {
                            let ga = self.rig.alpha_grad(&g.z);
                            for (k, i) in l.alpha(f).enumerate() {
                                gr[i] += s * ga[k];
                            }
                        }
                    }
                }
            }
            frames.push(fl);
        }
        if let (Some(gr), Some(gz)) = (grad.as_mut(), gz_shared) {
            for (k, v) in self.rig.alpha_grad(&gz).into_iter().enumerate() {
                gr[k] += v;
            }
        }

        let smoothness = self.smoothness(x, coef.smooth, grad.as_deref_mut())?;
        total += coef.smooth * smoothness;
        let identity = self.identity(x, coef.id, grad.as_deref_mut());
        total += coef.id * identity;
        Ok((
            LossBreakdown {
                frames,
                smoothness,
                identity_consistency: identity,
                total,
            },
            grad,
        ))
    }

    fn smoothness(&self, x: &[f64], scale: f64, mut grad: Option<&mut [f64]>) -> Result<f64> {
        let l = self.layout;
        let mut total = 0.0;
        let mut add_pair = |a: usize, b: usize, n: usize, grad: &mut Option<&mut [f64]>| {
            for k in 0..n {
                let d = x[a + k] - x[b + k];
                total += d * d;
                if let Some(g) = grad.as_deref_mut() {
                    g[a + k] += 2.0 * scale * d;
                    g[b + k] -= 2.0 * scale * d;
                }
            }
        };
        for f in 0..l.frames.saturating_sub(1) {
            add_pair(l.beta(f).start, l.beta(f + 1).start, l.nb, &mut grad);
            add_pair(l.trans(f), l.trans(f + 1), 3, &mut grad);
        }
        let mut rot_offsets = vec![];
        rot_offsets.push((0..l.frames).map(|f| l.rot_head(f)).collect::<Vec<_>>());
        for s in 0..2 {
            rot_offsets.push((0..l.frames).map(|f| l.rot_eye(f, s)).collect());
        }
        for offs in rot_offsets {
            let decoded: Vec<(Matrix3<f64>, [Matrix3<f64>; 6])> = offs
                .iter()
                .map(|&o| rot6d_jacobian(&rot6(x, o)))
                .collect::<Result<_>>()?;
            let mut gm = vec![Matrix3::zeros(); l.frames];
            for f in 0..l.frames.saturating_sub(1) {
                let d = decoded[f].0 - decoded[f + 1].0;
                total += d.norm_squared();
                gm[f] += d * (2.0 * scale);
                gm[f + 1] -= d * (2.0 * scale);
            }
            if let Some(g) = grad.as_deref_mut() {
                for f in 0..l.frames {
                    let r = crate::rotation::rot6d_backward(&decoded[f].1, &gm[f]);
                    for k in 0..6 {
                        g[offs[f] + k] += r[k];
                    }
                }
            }
        }
        Ok(total)
    }

    fn identity(&self, x: &[f64], scale: f64, mut grad: Option<&mut [f64]>) -> f64 {
        let l = self.layout;
        if l.mode == AlphaMode::Shared {
            return 0.0;
        }
        let mut total = 0.0;
        for f in 0..l.frames.saturating_sub(1) {
            let (a, b) = (l.alpha(f).start, l.alpha(f + 1).start);
            for k in 0..l.na {
                let d = x[a + k] - x[b + k];
                total += d * d;
                if let Some(g) = grad.as_deref_mut() {
                    g[a + k] += 2.0 * scale * d;
                    g[b + k] -= 2.0 * scale * d;
                }
            }
        }
        total
    }
}

/// Largest deviation between the analytic gradient of `term` and central
/// finite differences, relative to the largest gradient entry.
pub fn gradient_check(problem: &FitProblem<'_>, term: LossTerm, x: &[f64], eps: f64) -> Result<f64> {
    let analytic = problem.term_gradient(x, term)?;
    let mut xp = x.to_vec();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + eps;
        let fp = problem.term_value(&xp, term)?;
        xp[i] = orig - eps;
        let fm = problem.term_value(&xp, term)?;
        xp[i] = orig;
        numeric[i] = (fp - fm) / (2.0 * eps);
    }
    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let err = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    Ok(err / scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub converged: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: LossBreakdown,
    pub alpha_mode: AlphaMode,
    pub camera: ProjectiveCamera,
    /// Objective after every accepted step.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl FitDiagnostics {
    pub fn max_landmark_rmse(&self) -> f64 {
        self.losses
            .frames
            .iter()
            .map(|f| f.landmark_rmse)
            .fold(0.0, f64::max)
    }

    pub fn landmark_rmse(&self) -> f64 {
        let n = self.losses.frames.len().max(1) as f64;
        (self.losses.frames.iter().map(|f| f.landmark).sum::<f64>() / n).sqrt()
    }

    pub fn max_constraint_violation(&self) -> f64 {
        self.losses
            .frames
            .iter()
            .map(|f| f.constraint)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FaceParams>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    /// Best iterate reached within the budget without meeting the
    /// convergence test.
    pub fn flagged(&self) -> bool {
        !self.diagnostics.converged
    }
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CONVERGENCE_WINDOW: usize = 100;

/// Fits a parameter sequence to a landmark track. `init` defaults to the
/// neutral parameters for every frame.
pub fn fit_sequence(
    track: &LandmarkTrack,
    model: &FaceModel,
    camera: &ProjectiveCamera,
    init: Option<&[FaceParams]>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let problem = FitProblem::new(model, camera, track, cfg)?;
    let start = match init {
        Some(p) => problem.pack(p)?,
        None => problem.pack(&vec![FaceParams::neutral_for(model); track.len()])?,
    };
    match cfg.optimizer {
        Optimizer::LevenbergMarquardt => optimize_lm(&problem, start),
        Optimizer::Adam => optimize_adam(&problem, start),
    }
}

const LM_WINDOW: usize = 5;
const LM_MAX_DAMPING: f64 = 1e12;
/// Largest rotation of one step, radians.
const LM_MAX_ROTATION_STEP: f64 = 0.3;
const LM_PIN_ROUNDS: usize = 3;

/// Replaces every 6D pair with the first two columns of its decoded
/// matrix. The objective only sees decoded rotations, so it is unchanged.
fn clean_rotations(problem: &FitProblem<'_>, x: &mut [f64]) -> Result<()> {
    let l = problem.layout;
    for f in 0..l.frames {
        for at in [l.rot_head(f), l.rot_eye(f, 0), l.rot_eye(f, 1)] {
            let r = matrix_to_rot6d(&rot6d_to_matrix(&rot6(x, at))?);
            x[at..at + 6].copy_from_slice(&r);
        }
    }
    Ok(())
}

/// Shrinks every tangent rotation step longer than
/// `LM_MAX_ROTATION_STEP`. Undamped steps otherwise can flip an eye, which
/// few landmarks constrain, into a far local minimum.
fn limit_rotation_step(problem: &FitProblem<'_>, step: &mut [f64]) {
    let l = problem.layout;
    for f in 0..l.frames {
        for at in [l.rot_head(f), l.rot_eye(f, 0), l.rot_eye(f, 1)] {
            let w = &mut step[at..at + 3];
            let len = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > LM_MAX_ROTATION_STEP {
                let s = LM_MAX_ROTATION_STEP / len;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

fn betas<'p>(problem: &'p FitProblem<'_>) -> impl Iterator<Item = usize> + 'p {
    let l = problem.layout;
    (0..l.frames).flat_map(move |f| l.beta(f))
}

/// Levenberg-Marquardt. Each iteration solves the damped Gauss-Newton
/// system once, with rotations stepped in their tangent space, and takes
/// the step if it does not increase the objective. With `keep_in_box`,
/// weights that start inside `[0, 1]` are held there: weights on a face
/// of the box that the step would carry outward are pinned and the
/// system is solved again, and trial points are clipped to the box.
fn optimize_lm(problem: &FitProblem<'_>, mut x: Vec<f64>) -> Result<FitResult> {
    let cfg = &problem.cfg;
    let layout = problem.layout;
    let coef = Coefficients::only(LossTerm::Total, cfg, problem.n_frames());
    let eval = |x: &[f64], g: bool| problem.evaluate(x, coef, g);
    clean_rotations(problem, &mut x)?;
    let (b0, g0) = eval(&x, true)?;
    let initial = b0.total;
    if !initial.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            reason: "initial loss is not finite".into(),
        });
    }
    let mut loss = initial;
    let mut grad = g0.expect("gradient");
    let mut breakdown = b0;
    let mut history = vec![loss];
    let (mut accepted, mut rejected) = (0, 0);
    let mut converged = false;
    let (mut mu, mut nu) = (1e-3, 2.0);
    // Gauss-Newton system in tangent coordinates at the current point
    let linearize = |x: &[f64], grad: &[f64]| -> Result<(lm::Normal, Vec<f64>)> {
        let tangent = lm::Tangent::at(x, &layout)?;
        let mut normal = tangent.normal(problem.normal_matrix(x, coef)?, &layout);
        // the Gauss-Newton matrix approximates half the Hessian
        let mut half: Vec<f64> = tangent.gradient(grad, &layout).iter().map(|g| 0.5 * g).collect();
        if cfg.keep_in_box {
            // faces the steepest descent direction leaves are pinned up front
            let out: Vec<usize> = betas(problem)
                .filter(|&i| (x[i] == 0.0 && grad[i] > 0.0) || (x[i] == 1.0 && grad[i] < 0.0))
                .collect();
            for i in out {
                normal.pin(&layout, i);
                half[i] = 0.0;
            }
        }
        Ok((normal, half))
    };
    let (mut normal, mut half) = linearize(&x, &grad)?;
    let mut it = 0;
    while it < cfg.iterations {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                reason: "gradient is not finite".into(),
            });
        }
        it += 1;
        let mut step = normal.solve(&half, mu, &layout)?;
        let mut system = None;
        if cfg.keep_in_box {
            for _ in 0..LM_PIN_ROUNDS {
                let out: Vec<usize> = betas(problem)
                    .filter(|&i| (x[i] == 0.0 && step[i] > 0.0) || (x[i] == 1.0 && step[i] < 0.0))
                    .collect();
                if out.is_empty() {
                    break;
                }
                let (n, h) = system.get_or_insert_with(|| (normal.clone(), half.clone()));
                for &i in &out {
                    n.pin(&layout, i);
                    h[i] = 0.0;
                }
                step = n.solve(h, mu, &layout)?;
            }
        }
        limit_rotation_step(problem, &mut step);
        if cfg.keep_in_box {
            for i in betas(problem) {
                if (0.0..=1.0).contains(&x[i]) {
                    step[i] = x[i] - (x[i] - step[i]).clamp(0.0, 1.0);
                }
            }
        }
        // a degenerate rotation on a trial point is a failed trial
        let trial = lm::retract(&x, &step, &layout)
            .and_then(|c| eval(&c, false).map(|(b, _)| (c, b.total)))
            .ok();
        match trial {
            Some((cand, value)) if value <= loss && value.is_finite() => {
                // gain ratio against the Gauss-Newton model of the squared terms
                let lin: f64 = half.iter().zip(&step).map(|(g, s)| 2.0 * g * s).sum();
                let predicted = lin - normal.quadratic(&step, &layout);
                let rho = if predicted > 0.0 { (loss - value) / predicted } else { 0.0 };
                mu = (mu * (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0)).max(1e-12);
                nu = 2.0;
                let (b, g) = eval(&cand, true)?;
                x = cand;
                loss = value;
                grad = g.expect("gradient");
                breakdown = b;
                accepted += 1;
                history.push(loss);
                (normal, half) = linearize(&x, &grad)?;
            }
            _ => {
                rejected += 1;
                mu *= nu;
                nu *= 2.0;
                if mu > LM_MAX_DAMPING {
                    // no descent left along any damped direction
                    converged = true;
                    break;
                }
            }
        }
        if history.len() > LM_WINDOW {
            let old = history[history.len() - 1 - LM_WINDOW];
            if old - loss <= cfg.tolerance * loss.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    let params = problem.unpack(&x)?;
    Ok(FitResult {
        params,
        diagnostics: FitDiagnostics {
            iterations: it,
            accepted_steps: accepted,
            rejected_steps: rejected,
            converged,
            initial_loss: initial,
            final_loss: loss,
            losses: breakdown,
            alpha_mode: cfg.alpha_mode,
            camera: problem.camera.clone(),
            history,
        },
    })
}

fn optimize_adam(problem: &FitProblem<'_>, mut x: Vec<f64>) -> Result<FitResult> {
    let cfg = &problem.cfg;
    let coef = Coefficients::only(LossTerm::Total, cfg, problem.n_frames());
    let eval = |x: &[f64]| problem.evaluate(x, coef, true);
    let (b0, g0) = eval(&x)?;
    let initial = b0.total;
    if !initial.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            reason: "initial loss is not finite".into(),
        });
    }
    let mut loss = initial;
    let mut grad = g0.expect("gradient");
    let mut breakdown = b0;
    let n = x.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut history = vec![loss];
    let (mut accepted, mut rejected) = (0, 0);
    let mut converged = false;
    let iters = cfg.iterations;
    let decay = if iters > 1 {
        (cfg.final_learning_rate / cfg.learning_rate).ln() / (iters - 1) as f64
    } else {
        0.0
    };
    let mut it = 0;
    while it < iters {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                reason: "gradient is not finite".into(),
            });
        }
        let lr = cfg.learning_rate * (decay * it as f64).exp();
        let t = (it + 1) as i32;
        let (c1, c2) = (1.0 - ADAM_B1.powi(t), 1.0 - ADAM_B2.powi(t));
        let step: Vec<f64> = (0..n)
            .map(|i| {
                m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * grad[i];
                v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * grad[i] * grad[i];
                (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS)
            })
            .collect();
        it += 1;
        let mut scale = lr;
        let mut taken = false;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - scale * s).collect();
            // a degenerate rotation on a trial point is a failed trial
            if let Ok((b, Some(g))) = eval(&cand) {
                if b.total <= loss {
                    x = cand;
                    loss = b.total;
                    grad = g;
                    breakdown = b;
                    taken = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if taken {
            accepted += 1;
            history.push(loss);
        } else {
            rejected += 1;
        }
        if history.len() > CONVERGENCE_WINDOW {
            let old = history[history.len() - 1 - CONVERGENCE_WINDOW];
            if old - loss <= cfg.tolerance * loss.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    let params = problem.unpack(&x)?;
    Ok(FitResult {
        params,
        diagnostics: FitDiagnostics {
            iterations: it,
            accepted_steps: accepted,
            rejected_steps: rejected,
            converged,
            initial_loss: initial,
            final_loss: loss,
            losses: breakdown,
            alpha_mode: cfg.alpha_mode,
            camera: problem.camera.clone(),
            history,
        },
    })
}

/// Screen-space landmark positions of a fitted frame, through the rig.
pub fn rig_landmarks(
    model: &FaceModel,
    params: &FaceParams,
    camera: &ProjectiveCamera,
) -> Result<Vec<[f64; 2]>> {
    let rig = LandmarkRig::new(model)?;
    let z = rig.expression(&rig.identity_offset(&params.alpha), &params.beta);
    let eyes = [params.eye_rotation(EyeSide::Right)?, params.eye_rotation(EyeSide::Left)?];
    Ok(rig
        .positions(&z, &params.head_rotation()?, &params.trans_head, &eyes)
        .iter()
        .map(|p: &Vector3<f64>| {
            let s = camera.project_point(p);
            [s.x, s.y]
        })
        .collect())
}

#[cfg(test)]
mod tests;
