//! FACS blendshape face model with eyeballs.
//!
//! Geometry is linear in the identity and expression coefficients:
//! `V = mean + sum_i alpha_i A_i + sum_j beta_j B_j`, after which each
//! eyeball sub-mesh is rotated about its centroid and the whole mesh is
//! moved by the rigid head transform.

mod gaze;
mod mouth;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use gaze::{
    angles_to_blendshapes, blendshapes_to_gaze, couple_gaze_blendshapes, gaze_rotation,
    gaze_to_blendshapes, rotation_gaze_angles, GazeAngles, GazeBlendshapes,
    DEFAULT_MAX_GAZE_DEG,
};
pub use mouth::{
    constraint_violation, constraint_violation_grad, extract_mouth, fuse_mouth, MouthIndexSet,
    MOUTH_PREFIXES, N_MOUTH,
};

use crate::error::{check_len, Error, Result};
use crate::rotation::{rot6d_to_matrix, Rot6, IDENTITY_6D};

pub const N_IDENTITY: usize = 50;
pub const N_BLENDSHAPES: usize = 55;
pub const N_FACE_LANDMARKS: usize = 68;
pub const N_IRIS_LANDMARKS: usize = 10;
pub const N_LANDMARKS: usize = N_FACE_LANDMARKS + N_IRIS_LANDMARKS;

/// Per-vertex displacement fields, stored component-major: `[k][v][xyz]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    n_components: usize,
    n_vertices: usize,
    data: Vec<f32>,
}

impl Basis {
    pub fn new(n_components: usize, n_vertices: usize, data: Vec<f32>) -> Result<Self> {
        check_len("basis data", n_components * n_vertices * 3, data.len())?;
        Ok(Self {
            n_components,
            n_vertices,
            data,
        })
    }

    pub fn zeros(n_components: usize, n_vertices: usize) -> Self {
        Self {
            n_components,
            n_vertices,
            data: vec![0.0; n_components * n_vertices * 3],
        }
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn component(&self, k: usize) -> &[f32] {
        let n = self.n_vertices * 3;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn component_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.n_vertices * 3;
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn displacement(&self, k: usize, v: usize) -> [f32; 3] {
        let o = (k * self.n_vertices + v) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Keeps only the listed vertices, in the given order.
    pub fn restrict(&self, kept: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.n_components * kept.len() * 3);
        for k in 0..self.n_components {
            let comp = self.component(k);
            for &v in kept {
                data.extend_from_slice(&comp[v * 3..v * 3 + 3]);
            }
        }
        Self {
            n_components: self.n_components,
            n_vertices: kept.len(),
            data,
        }
    }

    fn accumulate(&self, coeffs: &[f64], out: &mut [Vector3<f64>]) {
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (p, d) in out.iter_mut().zip(self.component(k).chunks_exact(3)) {
                p.x += c * d[0] as f64;
                p.y += c * d[1] as f64;
                p.z += c * d[2] as f64;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EyeSide {
    Right,
    Left,
}

impl EyeSide {
    pub const BOTH: [EyeSide; 2] = [EyeSide::Right, EyeSide::Left];

    pub fn index(self) -> usize {
        match self {
            EyeSide::Right => 0,
            EyeSide::Left => 1,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            EyeSide::Right => "_R",
            EyeSide::Left => "_L",
        }
    }
}

/// Contiguous vertex range `[start, end)` of one eyeball sub-mesh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eyeball {
    pub start: u32,
    pub end: u32,
}

impl Eyeball {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start as usize..self.end as usize
    }

    pub fn contains(&self, v: usize) -> bool {
        self.range().contains(&v)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// A point on the surface expressed as barycentric weights of a triangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkEmbedding {
    pub triangle: u32,
    pub weights: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub vertices: Vec<u32>,
    #[serde(default)]
    pub closed: bool,
}

/// Vertex polylines used for the sketch map and the mouth/chin masks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    /// Strokes of the face channel: outline, brows, eyes, nose, lips.
    pub strokes: Vec<Polyline>,
    /// Lower face outline, used for the chin band.
    pub jawline: Vec<u32>,
    /// Closed inner-lip loop, filled to form the mouth mask.
    pub inner_lip: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceModel {
    pub mean: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub identity: Basis,
    pub blendshapes: Basis,
    pub blendshape_names: Vec<String>,
    /// Indexed by [`EyeSide::index`].
    pub eyeballs: [Eyeball; 2],
    pub iris_rings: [Vec<u32>; 2],
    pub symmetry: Vec<u32>,
    pub landmarks: Vec<LandmarkEmbedding>,
    pub contours: ContourSet,
}

impl FaceModel {
    pub fn n_vertices(&self) -> usize {
        self.mean.len()
    }

    pub fn n_identity(&self) -> usize {
        self.identity.n_components()
    }

    pub fn n_blendshapes(&self) -> usize {
        self.blendshapes.n_components()
    }

    pub fn blendshape_index(&self, name: &str) -> Option<usize> {
        self.blendshape_names.iter().position(|n| n == name)
    }

    pub fn eyeball(&self, side: EyeSide) -> Eyeball {
        self.eyeballs[side.index()]
    }

    /// Eye the vertex belongs to, if any.
    pub fn eye_of(&self, v: usize) -> Option<EyeSide> {
        EyeSide::BOTH
            .into_iter()
            .find(|s| self.eyeball(*s).contains(v))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices();
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.identity.n_vertices() != n || self.blendshapes.n_vertices() != n {
            return bad("basis vertex count differs from mean shape".into());
        }
        if self.blendshape_names.len() != self.n_blendshapes() {
            return bad(format!(
                "{} blendshape names for {} blendshapes",
                self.blendshape_names.len(),
                self.n_blendshapes()
            ));
        }
        if let Some(t) = self
            .triangles
            .iter()
            .find(|t| t.iter().any(|&i| i as usize >= n))
        {
            return bad(format!("triangle {t:?} out of range"));
        }
        if self.symmetry.len() != n {
            return bad("symmetry map length differs from vertex count".into());
        }
        for (i, &j) in self.symmetry.iter().enumerate() {
            if j as usize >= n || self.symmetry[j as usize] as usize != i {
                return bad(format!("symmetry map is not an involution at vertex {i}"));
            }
        }
        for side in EyeSide::BOTH {
            let e = self.eyeball(side);
            if e.end < e.start || e.end as usize > n {
                return bad(format!("eyeball range {e:?} invalid"));
            }
            if self.iris_rings[side.index()]
                .iter()
                .any(|&v| v as usize >= n)
            {
                return bad("iris ring index out of range".into());
            }
        }
        if !self.landmarks.is_empty() && self.landmarks.len() != N_LANDMARKS {
            return bad(format!(
                "landmark embedding has {} entries, expected {N_LANDMARKS}",
                self.landmarks.len()
            ));
        }
        for (i, l) in self.landmarks.iter().enumerate() {
            if l.triangle as usize >= self.triangles.len() {
                return bad(format!("landmark {i} triangle out of range"));
            }
            let s: f64 = l.weights.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return bad(format!("landmark {i} weights sum to {s}"));
            }
        }
        let c = &self.contours;
        if c.strokes
            .iter()
            .flat_map(|p| p.vertices.iter())
            .chain(c.jawline.iter())
            .chain(c.inner_lip.iter())
            .any(|&v| v as usize >= n)
        {
            return bad("contour vertex out of range".into());
        }
        Ok(())
    }

    /// Centroid of an eyeball sub-mesh in the given (unposed) vertex array.
    pub fn eye_pivot(&self, side: EyeSide, vertices: &[Vector3<f64>]) -> Vector3<f64> {
        let e = self.eyeball(side);
        if e.is_empty() {
            return Vector3::zeros();
        }
        let sum: Vector3<f64> = vertices[e.range()].iter().sum();
        sum / (e.end - e.start) as f64
    }

    /// Linear part of the model: mean plus identity and expression offsets.
    pub fn evaluate_linear(&self, alpha: &[f64], beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
        check_len("alpha", self.n_identity(), alpha.len())?;
        check_len("beta", self.n_blendshapes(), beta.len())?;
        let mut out: Vec<Vector3<f64>> = self
            .mean
            .iter()
            .map(|m| Vector3::new(m[0] as f64, m[1] as f64, m[2] as f64))
            .collect();
        self.identity.accumulate(alpha, &mut out);
        self.blendshapes.accumulate(beta, &mut out);
        Ok(out)
    }

    /// Fully posed mesh for the given parameters.
    pub fn evaluate(&self, params: &FaceParams) -> Result<Vec<Vector3<f64>>> {
        let mut v = self.evaluate_linear(&params.alpha, &params.beta)?;
        for side in EyeSide::BOTH {
            let e = self.eyeball(side);
            if e.is_empty() {
                continue;
            }
            let r = rot6d_to_matrix(&params.rot_eyes[side.index()])?;
            let pivot = self.eye_pivot(side, &v);
            for p in &mut v[e.range()] {
                *p = r * (*p - pivot) + pivot;
            }
        }
        let rh = rot6d_to_matrix(&params.rot_head)?;
        let t = Vector3::from(params.trans_head);
        for p in &mut v {
            *p = rh * *p + t;
        }
        Ok(v)
    }

    pub fn mean_positions(&self) -> Vec<Vector3<f64>> {
        self.mean
            .iter()
            .map(|m| Vector3::new(m[0] as f64, m[1] as f64, m[2] as f64))
            .collect()
    }

    /// Position of every embedded landmark on the given vertex array.
    pub fn landmark_positions(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.landmarks
            .iter()
            .map(|l| {
                let t = self.triangles[l.triangle as usize];
                (0..3).fold(Vector3::zeros(), |acc, k| {
                    acc + vertices[t[k] as usize] * l.weights[k]
                })
            })
            .collect()
    }
}

/// Per-frame model state: identity, expression, head pose and eye rotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub rot_head: Rot6,
    pub trans_head: [f64; 3],
    /// Indexed by [`EyeSide::index`].
    pub rot_eyes: [Rot6; 2],
}

impl FaceParams {
    pub fn neutral(n_identity: usize, n_blendshapes: usize) -> Self {
        Self {
            alpha: vec![0.0; n_identity],
            beta: vec![0.0; n_blendshapes],
            rot_head: IDENTITY_6D,
            trans_head: [0.0; 3],
            rot_eyes: [IDENTITY_6D; 2],
        }
    }

    pub fn neutral_for(model: &FaceModel) -> Self {
        Self::neutral(model.n_identity(), model.n_blendshapes())
    }

    pub fn head_rotation(&self) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(&self.rot_head)
    }

    pub fn eye_rotation(&self, side: EyeSide) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(&self.rot_eyes[side.index()])
    }

    pub fn is_finite(&self) -> bool {
        self.alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.rot_head)
            .chain(&self.trans_head)
            .chain(self.rot_eyes.iter().flatten())
            .all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{axis_angle, matrix_to_rot6d};
    use crate::synthetic::{SyntheticHead, SyntheticHeadConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> FaceModel {
        SyntheticHead::build(&SyntheticHeadConfig::small()).model
    }

    #[test]
    fn synthetic_model_is_valid() {
        model().validate().unwrap();
    }

    #[test]
    fn neutral_params_give_mean_exactly() {
        let m = model();
        let v = m.evaluate(&FaceParams::neutral_for(&m)).unwrap();
        for (p, q) in v.iter().zip(&m.mean) {
            assert_eq!([p.x, p.y, p.z], [q[0] as f64, q[1] as f64, q[2] as f64]);
        }
    }

    #[test]
    fn one_hot_beta_adds_basis_column() {
        let m = model();
        let j = 7;
        let mut p = FaceParams::neutral_for(&m);
        p.beta[j] = 1.0;
        let v = m.evaluate_linear(&p.alpha, &p.beta).unwrap();
        for (i, q) in v.iter().enumerate() {
            let d = m.blendshapes.displacement(j, i);
            let mean = m.mean[i];
            for c in 0..3 {
                assert_eq!(q[c], mean[c] as f64 + d[c] as f64);
            }
        }
    }

    #[test]
    fn evaluation_is_linear_in_coefficients() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a1: Vec<f64> = (0..m.n_identity()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a2: Vec<f64> = (0..m.n_identity()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m.n_blendshapes()).map(|_| rng.random()).collect();
        let zero_a = vec![0.0; m.n_identity()];
        let zero_b = vec![0.0; m.n_blendshapes()];
        let sum_a: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let full = m.evaluate_linear(&sum_a, &b).unwrap();
        let p1 = m.evaluate_linear(&a1, &zero_b).unwrap();
        let p2 = m.evaluate_linear(&a2, &zero_b).unwrap();
        let p3 = m.evaluate_linear(&zero_a, &b).unwrap();
        let mean = m.mean_positions();
        for i in 0..m.n_vertices() {
            let oracle = p1[i] + p2[i] + p3[i] - mean[i] * 2.0;
            assert!((full[i] - oracle).norm() < 1e-6);
        }
    }

    #[test]
    fn head_pose_is_rigid() {
        let m = model();
        let mut p = FaceParams::neutral_for(&m);
        let r = axis_angle(Vector3::new(0.2, 1.0, 0.1), 0.4);
        p.rot_head = matrix_to_rot6d(&r);
        p.trans_head = [0.1, -0.2, 0.3];
        let v = m.evaluate(&p).unwrap();
        let mean = m.mean_positions();
        let d0 = (mean[0] - mean[5]).norm();
        let d1 = (v[0] - v[5]).norm();
        assert!((d0 - d1).abs() < 1e-12);
        assert!((v[3] - (r * mean[3] + Vector3::new(0.1, -0.2, 0.3))).norm() < 1e-12);
    }

    #[test]
    fn eye_rotation_keeps_pivot() {
        let m = model();
        let mut p = FaceParams::neutral_for(&m);
        p.rot_eyes[0] = matrix_to_rot6d(&axis_angle(Vector3::y(), 0.3));
        let v = m.evaluate(&p).unwrap();
        let mean = m.mean_positions();
        let before = m.eye_pivot(EyeSide::Right, &mean);
        let after = m.eye_pivot(EyeSide::Right, &v);
        assert!((before - after).norm() < 1e-9);
        let e = m.eyeball(EyeSide::Left);
        for i in e.range() {
            assert!((v[i] - mean[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = model();
        let mut p = FaceParams::neutral_for(&m);
        p.beta.pop();
        assert!(matches!(m.evaluate(&p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn broken_symmetry_map_rejected() {
        let mut m = model();
        m.symmetry[0] = 1;
        assert!(m.validate().is_err());
    }
}
