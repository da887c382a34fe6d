//! Procedural, mirror-symmetric blendshape head used for tests, the
//! decimation fallback and the `lipsync-sim` scene.
//!
//! The face is a height field over an elliptic disc (x in [-1, 1], y in
//! [-1.3, 1.3], z toward the viewer) with a nose ridge, eye sockets and two
//! UV-sphere eyeballs whose front poles carry the iris. All blendshapes are
//! compactly supported bumps, so each one moves a known region only.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{ProjectiveCamera, GENERATION_RESOLUTION};
use crate::facemodel::{
    Basis, ContourSet, Eyeball, EyeSide, FaceModel, FaceParams, LandmarkEmbedding, Polyline,
    N_IDENTITY,
};
use crate::rotation::{axis_angle, matrix_to_rot6d};

pub const FACE_HALF_HEIGHT: f64 = 1.3;
pub const EYE_CENTER: (f64, f64) = (0.38, 0.3);
pub const EYE_RADIUS: f64 = 0.14;
pub const MOUTH_CENTER: (f64, f64) = (0.0, -0.65);
pub const CAMERA_DISTANCE: f64 = 15.0;

#[derive(Clone, Debug)]
pub struct SyntheticHeadConfig {
    /// Grid cells on each side of the midline.
    pub half_columns: usize,
    /// Grid cells from chin to forehead.
    pub rows: usize,
    /// Polar subdivisions of each eyeball; a multiple of 6 so that a ring
    /// sits exactly 30 degrees off the pole.
    pub eye_rings: usize,
    /// Azimuthal subdivisions of each eyeball; a multiple of 4.
    pub eye_segments: usize,
}

impl SyntheticHeadConfig {
    pub fn small() -> Self {
        Self {
            half_columns: 10,
            rows: 26,
            eye_rings: 6,
            eye_segments: 8,
        }
    }

    pub fn standard() -> Self {
        Self {
            half_columns: 24,
            rows: 60,
            eye_rings: 12,
            eye_segments: 16,
        }
    }
}

impl Default for SyntheticHeadConfig {
    fn default() -> Self {
        Self::standard()
    }
}

/// Blendshape names of the synthetic rig: 20 brow/eye shapes followed by the
/// 35 jaw/mouth/cheek/nose shapes.
pub const BLENDSHAPE_NAMES: [&str; 55] = [
    "browDown_R", "browDown_L", "browInnerUp_R", "browInnerUp_L", "browOuterUp_R",
    "browOuterUp_L", "eyeBlink_R", "eyeBlink_L", "eyeLookDown_R", "eyeLookDown_L",
    "eyeLookIn_R", "eyeLookIn_L", "eyeLookOut_R", "eyeLookOut_L", "eyeLookUp_R",
    "eyeLookUp_L", "eyeSquint_R", "eyeSquint_L", "eyeWide_R", "eyeWide_L",
    "cheekPuff_R", "cheekPuff_L", "cheekSquint_R", "cheekSquint_L", "jawClench",
    "jawForward", "jawLeft", "jawOpen", "jawRight", "mouthClose",
    "mouthDimple_R", "mouthDimple_L", "mouthFrown_R", "mouthFrown_L", "mouthFunnel",
    "mouthLeft", "mouthLowerDown_R", "mouthLowerDown_L", "mouthPress_R", "mouthPress_L",
    "mouthPucker", "mouthRight", "mouthRollLower", "mouthRollUpper", "mouthShrugLower",
    "mouthShrugUpper", "mouthSmile_R", "mouthSmile_L", "mouthStretch_R", "mouthStretch_L",
    "mouthTightener", "mouthUpperUp_R", "mouthUpperUp_L", "noseSneer_R", "noseSneer_L",
];

/// Bump-shaped displacement: `amp * (1 - (r/R)^2)^2 * dir` inside radius R.
#[derive(Clone, Copy, Debug)]
struct ShapeSpec {
    center: (f64, f64),
    radius: f64,
    dir: [f64; 3],
    amp: f64,
}

/// Shape parameters for a name; `x_sign` is -1 for the right side.
fn shape_spec(name: &str) -> ShapeSpec {
    let (stem, x_sign) = if let Some(s) = name.strip_suffix("_R") {
        (s, -1.0)
    } else if let Some(s) = name.strip_suffix("_L") {
        (s, 1.0)
    } else {
        (name, 0.0)
    };
    let (ex, ey) = EYE_CENTER;
    let (mx, my) = MOUTH_CENTER;
    let s = x_sign;
    let spec = |cx: f64, cy: f64, radius: f64, dir: [f64; 3], amp: f64| ShapeSpec {
        center: (cx, cy),
        radius,
        dir,
        amp,
    };
    match stem {
        "browDown" => spec(s * ex, 0.58, 0.25, [0.0, -1.0, 0.0], 0.05),
        "browInnerUp" => spec(s * 0.18, 0.58, 0.2, [0.0, 1.0, 0.0], 0.06),
        "browOuterUp" => spec(s * 0.55, 0.55, 0.2, [0.0, 1.0, 0.0], 0.06),
        "eyeBlink" => spec(s * ex, ey, 0.22, [0.0, -0.2, 1.0], 0.3),
        "eyeLookDown" => spec(s * ex, ey, 0.2, [0.0, -1.0, 0.0], 0.02),
        "eyeLookUp" => spec(s * ex, ey, 0.2, [0.0, 1.0, 0.0], 0.02),
        // inward is toward the midline
        "eyeLookIn" => spec(s * ex, ey, 0.2, [-s, 0.0, 0.0], 0.02),
        "eyeLookOut" => spec(s * ex, ey, 0.2, [s, 0.0, 0.0], 0.02),
        "eyeSquint" => spec(s * ex, 0.22, 0.18, [0.0, 1.0, 0.0], 0.03),
        "eyeWide" => spec(s * ex, 0.38, 0.18, [0.0, 1.0, 0.0], 0.03),
        "cheekPuff" => spec(s * 0.3, -0.5, 0.28, [s * 0.6, 0.0, 1.0], 0.05),
        "cheekSquint" => spec(s * 0.3, -0.45, 0.25, [0.0, 1.0, 0.0], 0.03),
        "jawClench" => spec(0.0, -0.95, 0.5, [0.0, 1.0, 0.0], 0.02),
        "jawForward" => spec(0.0, -0.95, 0.5, [0.0, 0.0, 1.0], 0.05),
        "jawOpen" => spec(0.0, -0.95, 0.55, [0.0, -1.0, -0.2], 0.1),
        "jawLeft" => spec(0.0, -0.95, 0.5, [1.0, 0.0, 0.0], 0.05),
        "jawRight" => spec(0.0, -0.95, 0.5, [-1.0, 0.0, 0.0], 0.05),
        "mouthClose" => spec(mx, my, 0.25, [0.0, 1.0, 0.0], 0.02),
        "mouthDimple" => spec(s * 0.28, my, 0.15, [0.0, 0.0, -1.0], 0.03),
        "mouthFrown" => spec(s * 0.26, my, 0.18, [0.0, -1.0, 0.0], 0.04),
        "mouthFunnel" => spec(mx, my, 0.25, [0.0, 0.0, 1.0], 0.04),
        "mouthLeft" => spec(mx, my, 0.3, [1.0, 0.0, 0.0], 0.04),
        "mouthRight" => spec(mx, my, 0.3, [-1.0, 0.0, 0.0], 0.04),
        "mouthLowerDown" => spec(s * 0.12, -0.74, 0.18, [0.0, -1.0, 0.0], 0.04),
        "mouthPress" => spec(s * 0.2, my, 0.15, [0.0, 0.0, -1.0], 0.02),
        "mouthPucker" => spec(mx, my, 0.22, [0.0, 0.0, 1.0], 0.05),
        "mouthRollLower" => spec(mx, -0.72, 0.18, [0.0, 0.0, -1.0], 0.03),
        "mouthRollUpper" => spec(mx, -0.58, 0.18, [0.0, 0.0, -1.0], 0.03),
        "mouthShrugLower" => spec(mx, -0.75, 0.2, [0.0, 1.0, 0.0], 0.03),
        "mouthShrugUpper" => spec(mx, -0.55, 0.2, [0.0, 1.0, 0.0], 0.03),
        "mouthSmile" => spec(s * 0.26, my, 0.2, [s * 0.7, 0.7, 0.0], 0.05),
        "mouthStretch" => spec(s * 0.26, my, 0.2, [s, -0.3, 0.0], 0.04),
        "mouthTightener" => spec(mx, my, 0.2, [0.0, 0.0, -1.0], 0.02),
        "mouthUpperUp" => spec(s * 0.12, -0.56, 0.18, [0.0, 1.0, 0.0], 0.04),
        "noseSneer" => spec(s * 0.1, -0.32, 0.18, [0.0, 1.0, 0.3], 0.03),
        other => panic!("no synthetic shape for {other}"),
    }
}

fn bump(r: f64, radius: f64) -> f64 {
    let q = r / radius;
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - q * q).powi(2)
    }
}

/// Height of the face surface above the xy plane.
pub fn face_height(x: f64, y: f64) -> f64 {
    let yn = y / FACE_HALF_HEIGHT;
    let base = 0.75 * (1.08 - x * x - yn * yn).max(0.0).sqrt();
    let nose = 0.28 * (-(x * x / 0.012 + (y + 0.05).powi(2) / 0.09)).exp();
    let lips = 0.05 * (-(x * x / 0.1 + (y - MOUTH_CENTER.1).powi(2) / 0.03)).exp();
    let sockets: f64 = [-1.0, 1.0]
        .iter()
        .map(|s| {
            let d2 = (x - s * EYE_CENTER.0).powi(2) + (y - EYE_CENTER.1).powi(2);
            -0.1 * (-d2 / 0.012).exp()
        })
        .sum();
    base + nose + lips + sockets
}

pub fn eye_center(side: EyeSide) -> Vector3<f64> {
    let s = match side {
        EyeSide::Right => -1.0,
        EyeSide::Left => 1.0,
    };
    let (x, y) = (s * EYE_CENTER.0, EYE_CENTER.1);
    Vector3::new(x, y, face_height(x, y) - 0.05)
}

/// Square-to-disc map, scaled to the face ellipse.
fn grid_to_face(u: f64, v: f64) -> (f64, f64) {
    let x = u * (1.0 - v * v / 2.0).sqrt();
    let y = v * (1.0 - u * u / 2.0).sqrt();
    (x, y * FACE_HALF_HEIGHT)
}

pub struct SyntheticHead {
    pub model: FaceModel,
    /// Generation camera (256x256).
    pub camera: ProjectiveCamera,
    /// Face grid dimensions: columns, rows (vertex counts).
    pub grid: (usize, usize),
}

impl SyntheticHead {
    pub fn build(cfg: &SyntheticHeadConfig) -> Self {
        assert!(cfg.eye_rings >= 6 && cfg.eye_rings % 6 == 0);
        assert!(cfg.eye_segments >= 4 && cfg.eye_segments % 4 == 0);
        let nc = 2 * cfg.half_columns + 1;
        let nr = cfg.rows + 1;
        let mut mean: Vec<[f32; 3]> = Vec::new();
        let mut symmetry: Vec<u32> = Vec::new();
        for r in 0..nr {
            let v = -1.0 + 2.0 * r as f64 / cfg.rows as f64;
            for c in 0..nc {
                let u = -1.0 + 2.0 * c as f64 / (nc - 1) as f64;
                let (x, y) = grid_to_face(u, v);
                // snap the midline exactly
                let x = if c == cfg.half_columns { 0.0 } else { x };
                mean.push([x as f32, y as f32, face_height(x, y) as f32]);
                symmetry.push((r * nc + (nc - 1 - c)) as u32);
            }
        }
        // mirror exactly: right half copies the left half with x negated
        for r in 0..nr {
            for c in cfg.half_columns + 1..nc {
                let m = mean[r * nc + (nc - 1 - c)];
                mean[r * nc + c] = [-m[0], m[1], m[2]];
            }
        }
        let mut triangles: Vec<[u32; 3]> = Vec::new();
        for r in 0..nr - 1 {
            for c in 0..nc - 1 {
                let a = (r * nc + c) as u32;
                let b = a + 1;
                let d = a + nc as u32;
                let e = d + 1;
                if c < cfg.half_columns {
                    triangles.push([a, b, e]);
                    triangles.push([a, e, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, e, d]);
                }
            }
        }
        let n_face = mean.len();

        // eyeballs: pole toward +z, rings by polar angle
        let mut eyeballs = [Eyeball::default(); 2];
        let mut eye_rings: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
        let rings = cfg.eye_rings;
        let segs = cfg.eye_segments;
        let per_eye = 2 + (rings - 1) * segs;
        for side in EyeSide::BOTH {
            let start = mean.len() as u32;
            let center = eye_center(EyeSide::Right);
            let mirror = if side == EyeSide::Left { -1.0 } else { 1.0 };
            let mut push = |off: Vector3<f64>| {
                let p = center + off;
                mean.push([(mirror * p.x) as f32, p.y as f32, p.z as f32]);
            };
            push(Vector3::new(0.0, 0.0, EYE_RADIUS));
            for ri in 1..rings {
                let phi = std::f64::consts::PI * ri as f64 / rings as f64;
                for k in 0..segs {
                    // k = 0 points toward the midline for both eyes
                    let psi = 2.0 * std::f64::consts::PI * k as f64 / segs as f64;
                    push(
                        Vector3::new(phi.sin() * psi.cos(), phi.sin() * psi.sin(), phi.cos())
                            * EYE_RADIUS,
                    );
                }
            }
            push(Vector3::new(0.0, 0.0, -EYE_RADIUS));
            let end = mean.len() as u32;
            eyeballs[side.index()] = Eyeball { start, end };
            let ring_vertex = |ri: usize, k: usize| start + 1 + ((ri - 1) * segs + k % segs) as u32;
            for k in 0..segs {
                triangles.push([start, ring_vertex(1, k), ring_vertex(1, k + 1)]);
            }
            for ri in 1..rings - 1 {
                for k in 0..segs {
                    let a = ring_vertex(ri, k);
                    let b = ring_vertex(ri, k + 1);
                    let c = ring_vertex(ri + 1, k);
                    let d = ring_vertex(ri + 1, k + 1);
                    triangles.push([a, c, d]);
                    triangles.push([a, d, b]);
                }
            }
            let back = end - 1;
            for k in 0..segs {
                triangles.push([back, ring_vertex(rings - 1, k + 1), ring_vertex(rings - 1, k)]);
            }
            let iris_ring = rings / 6;
            eye_rings[side.index()] = (0..segs).map(|k| ring_vertex(iris_ring, k)).collect();
        }
        let n = mean.len();
        debug_assert_eq!(n, n_face + 2 * per_eye);
        for i in 0..per_eye as u32 {
            let r = eyeballs[0].start + i;
            let l = eyeballs[1].start + i;
            symmetry.push(l);
            let _ = r;
        }
        for i in 0..per_eye as u32 {
            symmetry.push(eyeballs[0].start + i);
        }

        let identity = identity_basis(&mean, n_face, &eyeballs);
        let blendshapes = blendshape_basis(&mean, n_face);
        let mut model = FaceModel {
            mean,
            triangles,
            identity,
            blendshapes,
            blendshape_names: BLENDSHAPE_NAMES.iter().map(|s| s.to_string()).collect(),
            eyeballs,
            iris_rings: eye_rings,
            symmetry,
            landmarks: Vec::new(),
            contours: ContourSet::default(),
        };
        let face_tris = (nr - 1) * (nc - 1) * 2;
        model.contours = contours(&model, nc, nr);
        model.landmarks = landmarks(&model, face_tris);
        model.validate().expect("synthetic model is consistent");
        let camera = ProjectiveCamera::facing_origin(
            1015.0 * GENERATION_RESOLUTION as f64 / 224.0,
            GENERATION_RESOLUTION,
            GENERATION_RESOLUTION,
            CAMERA_DISTANCE,
        )
        .expect("valid camera");
        Self {
            model,
            camera,
            grid: (nc, nr),
        }
    }

    /// Camera with the same field of view at the fitting resolution.
    pub fn fit_camera(&self) -> ProjectiveCamera {
        self.camera.resized(224, 224)
    }
}

fn identity_basis(mean: &[[f32; 3]], n_face: usize, eyeballs: &[Eyeball; 2]) -> Basis {
    let n = mean.len();
    let mut basis = Basis::zeros(N_IDENTITY, n);
    let field = |k: usize, x: f64, y: f64, z: f64| -> [f64; 3] {
        if k >= 48 {
            // isotropic and vertical scaling
            return if k == 48 {
                [0.04 * x, 0.04 * y, 0.04 * z]
            } else {
                [0.0, 0.04 * y, 0.0]
            };
        }
        let dir = k % 3;
        let p = (k / 3) % 4;
        let q = k / 12;
        let f = (p as f64 * std::f64::consts::PI * (x + 1.0) / 2.0).cos()
            * (q as f64 * std::f64::consts::PI * (y + FACE_HALF_HEIGHT) / (2.0 * FACE_HALF_HEIGHT))
                .cos();
        let mut d = [0.0; 3];
        d[dir] = 0.04 * f;
        d
    };
    for k in 0..N_IDENTITY {
        let comp = basis.component_mut(k);
        for (v, m) in mean.iter().enumerate().take(n_face) {
            let d = field(k, m[0] as f64, m[1] as f64, m[2] as f64);
            comp[v * 3..v * 3 + 3].copy_from_slice(&[d[0] as f32, d[1] as f32, d[2] as f32]);
        }
        // eyeballs move rigidly with the field at their centers
        for side in EyeSide::BOTH {
            let e = eyeballs[side.index()];
            let c = eye_center(side);
            let d = field(k, c.x, c.y, c.z);
            for v in e.range() {
                comp[v * 3..v * 3 + 3].copy_from_slice(&[d[0] as f32, d[1] as f32, d[2] as f32]);
            }
        }
    }
    basis
}

fn blendshape_basis(mean: &[[f32; 3]], n_face: usize) -> Basis {
    let n = mean.len();
    let mut basis = Basis::zeros(BLENDSHAPE_NAMES.len(), n);
    for (k, name) in BLENDSHAPE_NAMES.iter().enumerate() {
        let s = shape_spec(name);
        let dn = (s.dir[0].powi(2) + s.dir[1].powi(2) + s.dir[2].powi(2)).sqrt();
        let comp = basis.component_mut(k);
        for (v, m) in mean.iter().enumerate().take(n_face) {
            let r = ((m[0] as f64 - s.center.0).powi(2) + (m[1] as f64 - s.center.1).powi(2))
                .sqrt();
            let w = s.amp * bump(r, s.radius) / dn;
            for c in 0..3 {
                comp[v * 3 + c] = (w * s.dir[c]) as f32;
            }
        }
    }
    basis
}

/// Nearest face vertex (in the xy plane of the mean shape) to each sample,
/// with consecutive repeats removed.
fn snap_polyline(model: &FaceModel, n_face: usize, pts: &[(f64, f64)], closed: bool) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for &(x, y) in pts {
        let v = nearest_face_vertex(model, n_face, x, y);
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    if closed && out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn nearest_face_vertex(model: &FaceModel, n_face: usize, x: f64, y: f64) -> u32 {
    let mut best = (f64::INFINITY, 0u32);
    for (i, m) in model.mean.iter().enumerate().take(n_face) {
        let d = (m[0] as f64 - x).powi(2) + (m[1] as f64 - y).powi(2);
        // ties go to the lower index; midline samples pick midline vertices
        if d < best.0 - 1e-15 {
            best = (d, i as u32);
        }
    }
    best.1
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize, from: f64, to: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let t = from + (to - from) * i as f64 / (n - 1).max(1) as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn contours(model: &FaceModel, nc: usize, nr: usize) -> ContourSet {
    let n_face = nc * nr;
    let idx = |r: usize, c: usize| (r * nc + c) as u32;
    let mut outline = Vec::new();
    for c in 0..nc {
        outline.push(idx(0, c));
    }
    for r in 1..nr {
        outline.push(idx(r, nc - 1));
    }
    for c in (0..nc - 1).rev() {
        outline.push(idx(nr - 1, c));
    }
    for r in (1..nr - 1).rev() {
        outline.push(idx(r, 0));
    }
    let mid = nr / 2;
    let mut jawline: Vec<u32> = (1..=mid).rev().map(|r| idx(r, 0)).collect();
    jawline.extend((0..nc).map(|c| idx(0, c)));
    jawline.extend((1..=mid).map(|r| idx(r, nc - 1)));

    let pi = std::f64::consts::PI;
    let tau = 2.0 * pi;
    let (ex, ey) = EYE_CENTER;
    let (mx, my) = MOUTH_CENTER;
    let mut strokes = vec![Polyline {
        vertices: outline,
        closed: true,
    }];
    for s in [-1.0, 1.0] {
        let brow: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let t = i as f64 / 8.0;
                let x = s * (0.15 + 0.45 * t);
                (x, 0.55 + 0.06 * (pi * t).sin())
            })
            .collect();
        strokes.push(Polyline {
            vertices: snap_polyline(model, n_face, &brow, false),
            closed: false,
        });
        strokes.push(Polyline {
            vertices: snap_polyline(
                model,
                n_face,
                &ellipse(s * ex, ey, 0.19, 0.11, 24, 0.0, tau),
                true,
            ),
            closed: true,
        });
    }
    let mut nose: Vec<(f64, f64)> = (0..8).map(|i| (0.0, 0.35 - 0.55 * i as f64 / 7.0)).collect();
    nose.extend((0..7).map(|i| (-0.12 + 0.04 * i as f64, -0.24)));
    strokes.push(Polyline {
        vertices: snap_polyline(model, n_face, &nose, false),
        closed: false,
    });
    strokes.push(Polyline {
        vertices: snap_polyline(model, n_face, &ellipse(mx, my, 0.28, 0.13, 32, 0.0, tau), true),
        closed: true,
    });
    let inner_lip = snap_polyline(model, n_face, &ellipse(mx, my, 0.2, 0.05, 32, 0.0, tau), true);
    strokes.push(Polyline {
        vertices: inner_lip.clone(),
        closed: true,
    });
    ContourSet {
        strokes,
        jawline,
        inner_lip,
    }
}

/// Triangle of the face grid containing `(x, y)` in the xy projection.
fn embed_on_face(model: &FaceModel, face_tris: usize, x: f64, y: f64) -> LandmarkEmbedding {
    let mut best: Option<(f64, LandmarkEmbedding)> = None;
    for (ti, t) in model.triangles.iter().enumerate().take(face_tris) {
        let p: Vec<(f64, f64)> = t
            .iter()
            .map(|&i| (model.mean[i as usize][0] as f64, model.mean[i as usize][1] as f64))
            .collect();
        let det = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        if det.abs() < 1e-14 {
            continue;
        }
        let l1 = ((x - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (y - p[0].1)) / det;
        let l2 = ((p[1].0 - p[0].0) * (y - p[0].1) - (x - p[0].0) * (p[1].1 - p[0].1)) / det;
        let w = [1.0 - l1 - l2, l1, l2];
        let outside = -w.iter().cloned().fold(f64::INFINITY, f64::min);
        let emb = LandmarkEmbedding {
            triangle: ti as u32,
            weights: w,
        };
        if best.as_ref().is_none_or(|(o, _)| outside < *o) {
            best = Some((outside, emb));
        }
        if outside <= 0.0 {
            break;
        }
    }
    best.expect("face has triangles").1
}

fn embed_on_vertex(model: &FaceModel, v: u32) -> LandmarkEmbedding {
    let (ti, t) = model
        .triangles
        .iter()
        .enumerate()
        .find(|(_, t)| t.contains(&v))
        .expect("vertex has an incident triangle");
    let k = t.iter().position(|&i| i == v).unwrap();
    let mut weights = [0.0; 3];
    weights[k] = 1.0;
    LandmarkEmbedding {
        triangle: ti as u32,
        weights,
    }
}

/// 68-point face layout (jaw, brows, nose, eyes, outer and inner lips)
/// followed by 5 iris points per eye: center, nasal, top, temporal, bottom.
pub fn face_landmark_layout() -> Vec<(f64, f64)> {
    let pi = std::f64::consts::PI;
    let mut pts = Vec::with_capacity(68);
    for k in 0..17 {
        let t = pi + pi * k as f64 / 16.0;
        pts.push((0.93 * t.cos(), 0.93 * FACE_HALF_HEIGHT * t.sin()));
    }
    for s in [-1.0, 1.0] {
        let xs: Vec<f64> = (0..5).map(|i| 0.6 - 0.1125 * i as f64).collect();
        let row: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| (s * x, 0.55 + 0.06 * (pi * (x - 0.15) / 0.45).sin()))
            .collect();
        // right brow runs outer to inner, left brow inner to outer
        if s < 0.0 {
            pts.extend(row);
        } else {
            pts.extend(row.into_iter().rev());
        }
    }
    for y in [0.35, 0.2, 0.05, -0.1] {
        pts.push((0.0, y));
    }
    for i in 0..5 {
        pts.push((-0.12 + 0.06 * i as f64, -0.22));
    }
    let (ex, ey) = EYE_CENTER;
    for s in [-1.0, 1.0] {
        let cx = s * ex;
        let ring = [
            (cx - 0.13, ey),
            (cx - 0.045, ey + 0.05),
            (cx + 0.045, ey + 0.05),
            (cx + 0.13, ey),
            (cx + 0.045, ey - 0.05),
            (cx - 0.045, ey - 0.05),
        ];
        pts.extend(ring);
    }
    let (mx, my) = MOUTH_CENTER;
    for k in 0..12 {
        let t = pi - 2.0 * pi * k as f64 / 12.0;
        pts.push((mx + 0.28 * t.cos(), my + 0.13 * t.sin()));
    }
    for k in 0..8 {
        let t = pi - 2.0 * pi * k as f64 / 8.0;
        pts.push((mx + 0.2 * t.cos(), my + 0.05 * t.sin()));
    }
    pts
}

fn landmarks(model: &FaceModel, face_tris: usize) -> Vec<LandmarkEmbedding> {
    let mut out: Vec<LandmarkEmbedding> = face_landmark_layout()
        .into_iter()
        .map(|(x, y)| embed_on_face(model, face_tris, x, y))
        .collect();
    for side in EyeSide::BOTH {
        let e = model.eyeball(side);
        let ring = &model.iris_rings[side.index()];
        let q = ring.len() / 4;
        out.push(embed_on_vertex(model, e.start));
        for k in 0..4 {
            out.push(embed_on_vertex(model, ring[k * q]));
        }
    }
    out
}

/// Smooth procedural color of a mean-face coordinate.
pub fn head_texture(p: [f32; 3]) -> [f32; 3] {
    let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
    for side in EyeSide::BOTH {
        let c = eye_center(side);
        let d = Vector3::new(x, y, z) - c;
        if d.norm() < EYE_RADIUS * 1.05 {
            let off_axis = (d.x * d.x + d.y * d.y).sqrt();
            let front = d.z > 0.0;
            return if front && off_axis < 0.04 {
                [0.05, 0.05, 0.08]
            } else if front && off_axis < 0.075 {
                [0.25, 0.35, 0.45]
            } else {
                [0.92, 0.9, 0.88]
            };
        }
    }
    let r = 0.72 + 0.06 * (2.5 * x).sin() * (1.7 * y).cos() + 0.04 * z;
    let g = 0.55 + 0.05 * (2.1 * y + 0.3).sin() + 0.03 * (3.0 * x).cos();
    let b = 0.46 + 0.04 * (1.9 * x + 1.3 * y).cos();
    let lip = (-((x / 0.28).powi(2) + ((y - MOUTH_CENTER.1) / 0.12).powi(2))).exp();
    [
        (r + 0.1 * lip) as f32,
        (g - 0.15 * lip) as f32,
        (b - 0.08 * lip) as f32,
    ]
}

/// Static smooth background color at pixel position.
pub fn background_color(x: f64, y: f64) -> [f32; 3] {
    [
        (0.3 + 0.1 * (x / 37.0).sin()) as f32,
        (0.35 + 0.1 * (y / 41.0).cos()) as f32,
        (0.4 + 0.05 * ((x + y) / 53.0).sin()) as f32,
    ]
}

#[derive(Clone, Debug)]
pub struct RandomParamsConfig {
    pub alpha_std: f64,
    pub head_angle_deg: f64,
    pub translation: f64,
    pub eye_angle_deg: f64,
}

impl Default for RandomParamsConfig {
    fn default() -> Self {
        Self {
            alpha_std: 0.5,
            head_angle_deg: 12.0,
            translation: 0.3,
            eye_angle_deg: 12.0,
        }
    }
}

fn random_rotation<R: Rng>(rng: &mut R, max_deg: f64) -> [f64; 6] {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 { Vector3::y() } else { axis };
    matrix_to_rot6d(&axis_angle(axis, rng.random_range(-max_deg..max_deg).to_radians()))
}

/// Parameters with `beta` uniform in [0, 1] and bounded pose.
pub fn random_params<R: Rng>(model: &FaceModel, rng: &mut R, cfg: &RandomParamsConfig) -> FaceParams {
    let normal = Normal::new(0.0, cfg.alpha_std.max(1e-12)).unwrap();
    let mut p = FaceParams::neutral_for(model);
    p.alpha.iter_mut().for_each(|a| *a = normal.sample(rng));
    p.beta.iter_mut().for_each(|b| *b = rng.random::<f64>());
    p.rot_head = random_rotation(rng, cfg.head_angle_deg);
    p.trans_head = std::array::from_fn(|_| rng.random_range(-cfg.translation..cfg.translation));
    p.rot_eyes = [
        random_rotation(rng, cfg.eye_angle_deg),
        random_rotation(rng, cfg.eye_angle_deg),
    ];
    p
}

/// Smooth sequence sharing one identity: each frame interpolates between
/// random key poses with a cosine ease, keeping `beta` inside [0, 1].
pub fn random_sequence<R: Rng>(
    model: &FaceModel,
    rng: &mut R,
    frames: usize,
    cfg: &RandomParamsConfig,
) -> Vec<FaceParams> {
    let key_every = 10usize;
    let n_keys = frames.div_ceil(key_every) + 1;
    let keys: Vec<FaceParams> = (0..n_keys).map(|_| random_params(model, rng, cfg)).collect();
    let alpha = keys[0].alpha.clone();
    (0..frames)
        .map(|f| {
            let k = f / key_every;
            let t = (f % key_every) as f64 / key_every as f64;
            let w = 0.5 - 0.5 * (std::f64::consts::PI * t).cos();
            let (a, b) = (&keys[k], &keys[k + 1]);
            let lerp = |x: f64, y: f64| x + w * (y - x);
            FaceParams {
                alpha: alpha.clone(),
                beta: a.beta.iter().zip(&b.beta).map(|(x, y)| lerp(*x, *y)).collect(),
                rot_head: std::array::from_fn(|i| lerp(a.rot_head[i], b.rot_head[i])),
                trans_head: std::array::from_fn(|i| lerp(a.trans_head[i], b.trans_head[i])),
                rot_eyes: std::array::from_fn(|e| {
                    std::array::from_fn(|i| lerp(a.rot_eyes[e][i], b.rot_eyes[e][i]))
                }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_is_mirror_symmetric() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        let m = &h.model;
        for (i, &j) in m.symmetry.iter().enumerate() {
            let a = m.mean[i];
            let b = m.mean[j as usize];
            assert_eq!((a[0], a[1], a[2]), (-b[0], b[1], b[2]), "vertex {i}");
        }
        let mirrored: std::collections::HashSet<[u32; 3]> = m
            .triangles
            .iter()
            .map(|t| {
                let mut s = t.map(|v| m.symmetry[v as usize]);
                s.sort_unstable();
                s
            })
            .collect();
        for t in &m.triangles {
            let mut s = *t;
            s.sort_unstable();
            assert!(mirrored.contains(&s));
        }
    }

    #[test]
    fn mouth_group_is_thirty_five_names() {
        let mouth = BLENDSHAPE_NAMES
            .iter()
            .filter(|n| crate::facemodel::MOUTH_PREFIXES.iter().any(|p| n.starts_with(p)))
            .count();
        assert_eq!(mouth, 35);
    }

    #[test]
    fn landmarks_are_complete() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        assert_eq!(h.model.landmarks.len(), crate::facemodel::N_LANDMARKS);
        for l in &h.model.landmarks {
            assert!(l.weights.iter().all(|w| *w > -1e-9), "{l:?}");
        }
    }

    #[test]
    fn iris_ring_is_thirty_degrees_off_axis() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::standard());
        let m = &h.model;
        let c = eye_center(EyeSide::Right);
        for &v in &m.iris_rings[0] {
            let p = m.mean[v as usize];
            let d = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) - c;
            let ang = (d.z / d.norm()).acos().to_degrees();
            assert!((ang - 30.0).abs() < 1e-3);
        }
    }
}
