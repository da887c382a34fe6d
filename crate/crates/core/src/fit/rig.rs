//! Landmark rig: the model restricted to what the landmarks see, with the
//! forward map and its reverse-mode gradient.
//!
//! Every landmark splits into a face part and an optional eye part, each a
//! fixed linear combination of vertex rows. Collapsing the barycentric sums
//! up front leaves one `(3P x n)` matrix per basis, so a frame costs two
//! small matrix-vector products.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::camera::ProjectiveCamera;
use crate::error::{Error, Result};
use crate::facemodel::{EyeSide, FaceModel};
use crate::rotation::{rot6d_backward, rot6d_jacobian, Rot6};

#[derive(Clone, Debug)]
struct EyePart {
    side: EyeSide,
    part: usize,
    /// Sum of the barycentric weights on eye corners.
    weight: f64,
}

#[derive(Clone, Debug)]
struct RigLandmark {
    face: Option<usize>,
    eye: Option<EyePart>,
}

#[derive(Clone, Debug)]
pub(crate) struct LandmarkRig {
    pub n_alpha: usize,
    pub n_beta: usize,
    mean: DVector<f64>,
    ga: DMatrix<f64>,
    gb: DMatrix<f64>,
    landmarks: Vec<RigLandmark>,
    pivots: [Option<usize>; 2],
}

/// Per-frame pose inputs of the rig.
pub(crate) struct FramePose<'a> {
    pub beta: &'a [f64],
    pub rot_head: &'a Rot6,
    pub trans: &'a [f64; 3],
    pub rot_eyes: [&'a Rot6; 2],
}

/// Gradient of a per-frame landmark objective.
pub(crate) struct FrameGrad {
    /// W.r.t. the stacked part positions; `ga^T` of it gives the alpha part.
    pub z: DVector<f64>,
    pub beta: Vec<f64>,
    pub rot_head: Rot6,
    pub trans: [f64; 3],
    pub rot_eyes: [Rot6; 2],
}

struct Rows {
    mean: Vector3<f64>,
    alpha: Vec<[f64; 3]>,
    beta: Vec<[f64; 3]>,
}

impl Rows {
    fn zeros(na: usize, nb: usize) -> Self {
        Self {
            mean: Vector3::zeros(),
            alpha: vec![[0.0; 3]; na],
            beta: vec![[0.0; 3]; nb],
        }
    }

    fn add_vertex(&mut self, model: &FaceModel, v: usize, w: f64) {
        let m = model.mean[v];
        self.mean += Vector3::new(m[0] as f64, m[1] as f64, m[2] as f64) * w;
        for (k, a) in self.alpha.iter_mut().enumerate() {
            let d = model.identity.displacement(k, v);
            (0..3).for_each(|c| a[c] += w * d[c] as f64);
        }
        for (k, b) in self.beta.iter_mut().enumerate() {
            let d = model.blendshapes.displacement(k, v);
            (0..3).for_each(|c| b[c] += w * d[c] as f64);
        }
    }
}

impl LandmarkRig {
    pub fn new(model: &FaceModel) -> Result<Self> {
        if model.landmarks.is_empty() {
            return Err(Error::InvalidModel("model has no landmark embedding".into()));
        }
        let (na, nb) = (model.n_identity(), model.n_blendshapes());
        let mut parts: Vec<Rows> = Vec::new();
        let mut landmarks = Vec::with_capacity(model.landmarks.len());
        for lm in &model.landmarks {
            let tri = model.triangles[lm.triangle as usize];
            let mut face: Option<Rows> = None;
            let mut eye: Option<(EyeSide, Rows, f64)> = None;
            for (k, &v) in tri.iter().enumerate() {
                let w = lm.weights[k];
                let v = v as usize;
                match model.eye_of(v) {
                    None => face
                        .get_or_insert_with(|| Rows::zeros(na, nb))
                        .add_vertex(model, v, w),
                    Some(side) => {
                        let e = eye.get_or_insert_with(|| (side, Rows::zeros(na, nb), 0.0));
                        if e.0 != side {
                            return Err(Error::InvalidModel(
                                "landmark triangle spans both eyes".into(),
                            ));
                        }
                        e.1.add_vertex(model, v, w);
                        e.2 += w;
                    }
                }
            }
            let face = face.map(|r| {
                parts.push(r);
                parts.len() - 1
            });
            let eye = eye.map(|(side, r, weight)| {
                parts.push(r);
                EyePart {
                    side,
                    part: parts.len() - 1,
                    weight,
                }
            });
            landmarks.push(RigLandmark { face, eye });
        }
        let mut pivots = [None, None];
        for side in EyeSide::BOTH {
            let e = model.eyeball(side);
            if e.is_empty() {
                continue;
            }
            let mut r = Rows::zeros(na, nb);
            let w = 1.0 / (e.end - e.start) as f64;
            for v in e.range() {
                r.add_vertex(model, v, w);
            }
            parts.push(r);
            pivots[side.index()] = Some(parts.len() - 1);
        }
        let p3 = 3 * parts.len();
        let mut mean = DVector::zeros(p3);
        let mut ga = DMatrix::zeros(p3, na);
        let mut gb = DMatrix::zeros(p3, nb);
        for (p, r) in parts.iter().enumerate() {
            for c in 0..3 {
                mean[3 * p + c] = r.mean[c];
                for k in 0..na {
                    ga[(3 * p + c, k)] = r.alpha[k][c];
                }
                for k in 0..nb {
                    gb[(3 * p + c, k)] = r.beta[k][c];
                }
            }
        }
        Ok(Self {
            n_alpha: na,
            n_beta: nb,
            mean,
            ga,
            gb,
            landmarks,
            pivots,
        })
    }

    pub fn n_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    /// Part positions with the identity applied.
    pub fn identity_offset(&self, alpha: &[f64]) -> DVector<f64> {
        let mut z = self.mean.clone();
        z.gemv(1.0, &self.ga, &DVector::from_column_slice(alpha), 1.0);
        z
    }

    pub fn expression(&self, z_alpha: &DVector<f64>, beta: &[f64]) -> DVector<f64> {
        let mut z = z_alpha.clone();
        z.gemv(1.0, &self.gb, &DVector::from_column_slice(beta), 1.0);
        z
    }

    /// `ga^T g`, the alpha gradient of a part-position gradient.
    pub fn alpha_grad(&self, gz: &DVector<f64>) -> Vec<f64> {
        self.ga.tr_mul(gz).as_slice().to_vec()
    }

    fn part(z: &DVector<f64>, p: usize) -> Vector3<f64> {
        Vector3::new(z[3 * p], z[3 * p + 1], z[3 * p + 2])
    }

    fn add_part(g: &mut DVector<f64>, p: usize, v: &Vector3<f64>) {
        for c in 0..3 {
            g[3 * p + c] += v[c];
        }
    }

    /// Posed landmark positions in model space.
    pub fn positions(
        &self,
        z: &DVector<f64>,
        rot_head: &Matrix3<f64>,
        trans: &[f64; 3],
        eyes: &[Matrix3<f64>; 2],
    ) -> Vec<Vector3<f64>> {
        let t = Vector3::from(*trans);
        self.landmarks
            .iter()
            .map(|l| rot_head * self.local(z, l, eyes) + t)
            .collect()
    }

    fn local(&self, z: &DVector<f64>, l: &RigLandmark, eyes: &[Matrix3<f64>; 2]) -> Vector3<f64> {
        let mut x = l.face.map_or(Vector3::zeros(), |p| Self::part(z, p));
        if let Some(e) = &l.eye {
            let piv = self.pivots[e.side.index()].map_or(Vector3::zeros(), |p| Self::part(z, p));
            let r = &eyes[e.side.index()];
            x += r * (Self::part(z, e.part) - piv * e.weight) + piv * e.weight;
        }
        x
    }

    /// Reverse-mode pass of one landmark: gradient of `gu * u + gv * v`
    /// w.r.t. the part positions and the decoded rotations.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        z: &DVector<f64>,
        l: &RigLandmark,
        x: &Vector3<f64>,
        c: &Vector3<f64>,
        eyes: &[Matrix3<f64>; 2],
        rh: &Matrix3<f64>,
        rc: &Matrix3<f64>,
        f: f64,
        (gu, gv): (f64, f64),
        acc: &mut LocalGrad,
    ) {
        let iz = 1.0 / c.z;
        let gc = Vector3::new(gu * f * iz, gv * f * iz, -(gu * f * c.x + gv * f * c.y) * iz * iz);
        let gxw = rc.tr_mul(&gc);
        acc.t += gxw;
        acc.rh += gxw * x.transpose();
        let gx = rh.tr_mul(&gxw);
        if let Some(p) = l.face {
            acc.parts.push((p, gx));
        }
        if let Some(e) = &l.eye {
            let s = e.side.index();
            let piv = self.pivots[s].map_or(Vector3::zeros(), |p| Self::part(z, p));
            let rel = Self::part(z, e.part) - piv * e.weight;
            acc.re[s] += gx * rel.transpose();
            let g_lin = eyes[s].tr_mul(&gx);
            acc.parts.push((e.part, g_lin));
            if let Some(p) = self.pivots[s] {
                acc.parts.push((p, (gx - g_lin) * e.weight));
            }
        }
    }

    /// Mean squared pixel distance to the visible labels, and optionally its
    /// gradient.
    pub fn landmark_term(
        &self,
        z: &DVector<f64>,
        pose: &FramePose<'_>,
        camera: &ProjectiveCamera,
        points: &[[f64; 2]],
        visible: &[bool],
        want_grad: bool,
    ) -> Result<(f64, Option<FrameGrad>)> {
        let n_vis = visible.iter().filter(|&&v| v).count();
        if n_vis == 0 {
            return Err(Error::NoVisibleLandmarks);
        }
        let inv = 1.0 / n_vis as f64;
        let (rh, jh) = rot6d_jacobian(pose.rot_head)?;
        let (re0, je0) = rot6d_jacobian(pose.rot_eyes[0])?;
        let (re1, je1) = rot6d_jacobian(pose.rot_eyes[1])?;
        let eyes = [re0, re1];
        let rc = camera.rotation_matrix();
        let tc = Vector3::from(camera.translation);
        let t = Vector3::from(*pose.trans);
        let f = camera.focal;

        let mut loss = 0.0;
        let mut acc = LocalGrad::default();
        for (i, l) in self.landmarks.iter().enumerate() {
            if !visible[i] {
                continue;
            }
            let x = self.local(z, l, &eyes);
            let c = rc * (rh * x + t) + tc;
            let u = f * c.x / c.z + camera.cx;
            let v = f * c.y / c.z + camera.cy;
            let (du, dv) = (u - points[i][0], v - points[i][1]);
            loss += (du * du + dv * dv) * inv;
            if want_grad {
                let g = (2.0 * du * inv, 2.0 * dv * inv);
                self.backward(z, l, &x, &c, &eyes, &rh, &rc, f, g, &mut acc);
            }
        }
        if !want_grad {
            return Ok((loss, None));
        }
        let mut gz = DVector::zeros(z.len());
        for (p, g) in &acc.parts {
            Self::add_part(&mut gz, *p, g);
        }
        let beta = self.gb.tr_mul(&gz).as_slice().to_vec();
        Ok((
            loss,
            Some(FrameGrad {
                z: gz,
                beta,
                rot_head: rot6d_backward(&jh, &acc.rh),
                trans: acc.t.into(),
                rot_eyes: [rot6d_backward(&je0, &acc.re[0]), rot6d_backward(&je1, &acc.re[1])],
            }),
        ))
    }

    /// Jacobian rows of the visible landmarks' projections, one per image
    /// coordinate. Invisible landmarks give `None`.
    pub fn jacobian(
        &self,
        z: &DVector<f64>,
        pose: &FramePose<'_>,
        camera: &ProjectiveCamera,
        visible: &[bool],
    ) -> Result<Vec<Option<LandmarkJacobian>>> {
        let (rh, jh) = rot6d_jacobian(pose.rot_head)?;
        let (re0, je0) = rot6d_jacobian(pose.rot_eyes[0])?;
        let (re1, je1) = rot6d_jacobian(pose.rot_eyes[1])?;
        let eyes = [re0, re1];
        let rc = camera.rotation_matrix();
        let tc = Vector3::from(camera.translation);
        let t = Vector3::from(*pose.trans);
        let f = camera.focal;
        let (na, nb) = (self.n_alpha, self.n_beta);
        let rows = z.len();
        Ok(self
            .landmarks
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if !visible[i] {
                    return None;
                }
                let x = self.local(z, l, &eyes);
                let c = rc * (rh * x + t) + tc;
                let row = |g: (f64, f64)| {
                    let mut acc = LocalGrad::default();
                    self.backward(z, l, &x, &c, &eyes, &rh, &rc, f, g, &mut acc);
                    let mut alpha = vec![0.0; na];
                    let mut beta = vec![0.0; nb];
                    let (ga, gb) = (self.ga.as_slice(), self.gb.as_slice());
                    for (p, g) in &acc.parts {
                        for ch in 0..3 {
                            let r = 3 * p + ch;
                            if g[ch] == 0.0 {
                                continue;
                            }
                            for (k, a) in alpha.iter_mut().enumerate() {
                                *a += ga[k * rows + r] * g[ch];
                            }
                            for (k, b) in beta.iter_mut().enumerate() {
                                *b += gb[k * rows + r] * g[ch];
                            }
                        }
                    }
                    JacobianRow {
                        alpha,
                        beta,
                        rot_head: rot6d_backward(&jh, &acc.rh),
                        trans: acc.t.into(),
                        rot_eyes: [
                            rot6d_backward(&je0, &acc.re[0]),
                            rot6d_backward(&je1, &acc.re[1]),
                        ],
                    }
                };
                Some(LandmarkJacobian {
                    rows: [row((1.0, 0.0)), row((0.0, 1.0))],
                })
            })
            .collect())
    }
}

#[derive(Default)]
struct LocalGrad {
    parts: Vec<(usize, Vector3<f64>)>,
    rh: Matrix3<f64>,
    t: Vector3<f64>,
    re: [Matrix3<f64>; 2],
}

/// Derivatives of one projected coordinate.
pub(crate) struct JacobianRow {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub rot_head: Rot6,
    pub trans: [f64; 3],
    pub rot_eyes: [Rot6; 2],
}

pub(crate) struct LandmarkJacobian {
    pub rows: [JacobianRow; 2],
}
