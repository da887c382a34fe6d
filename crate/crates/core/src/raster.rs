//! Z-buffered triangle rasterizer.
//!
//! A pixel is covered when its center lies strictly inside the projected
//! triangle, or exactly on a top or left edge. Edge functions are evaluated
//! directly at each pixel center (no incremental stepping) so coverage is
//! reproducible by an independent per-pixel test. Barycentrics are
//! perspective-correct; depth is the interpolated camera-space z. On equal
//! depth the lower triangle index wins.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{ProjectiveCamera, ScreenPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct Fragments {
    pub width: usize,
    pub height: usize,
    /// Triangle index per pixel, or -1.
    pub pix_to_face: Vec<i32>,
    /// Perspective-correct barycentric weights per pixel.
    pub bary: Vec<[f64; 3]>,
    /// Camera-space depth per pixel, `+inf` on background.
    pub depth: Vec<f64>,
}

impl Fragments {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            pix_to_face: vec![-1; n],
            bary: vec![[0.0; 3]; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn face_at(&self, x: usize, y: usize) -> Option<usize> {
        let f = self.pix_to_face[self.index(x, y)];
        (f >= 0).then_some(f as usize)
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.pix_to_face.iter().map(|&f| f >= 0).collect()
    }

    pub fn coverage(&self) -> usize {
        self.pix_to_face.iter().filter(|&&f| f >= 0).count()
    }

    /// Interpolates a per-vertex attribute over covered pixels; background
    /// pixels get `None`.
    pub fn interpolate<const N: usize>(
        &self,
        triangles: &[[u32; 3]],
        attr: &[[f64; N]],
    ) -> Vec<Option<[f64; N]>> {
        self.pix_to_face
            .par_iter()
            .zip(self.bary.par_iter())
            .map(|(&f, w)| {
                if f < 0 {
                    return None;
                }
                let t = triangles[f as usize];
                let mut out = [0.0; N];
                for k in 0..3 {
                    let a = &attr[t[k] as usize];
                    for (o, v) in out.iter_mut().zip(a) {
                        *o += w[k] * v;
                    }
                }
                Some(out)
            })
            .collect()
    }
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Triangle prepared for coverage tests. Vertices are reordered so that the
/// signed area is positive; `order` maps back to the original corners.
struct Setup {
    v: [(f64, f64); 3],
    inv_z: [f64; 3],
    order: [usize; 3],
    area: f64,
    top_left: [bool; 3],
    x_range: (usize, usize),
    y_range: (usize, usize),
}

fn setup(p: [ScreenPoint; 3], width: usize, height: usize) -> Option<Setup> {
    if p.iter().any(|s| !s.in_front() || !s.x.is_finite() || !s.y.is_finite()) {
        return None;
    }
    let mut order = [0, 1, 2];
    let mut area = edge(p[0].x, p[0].y, p[1].x, p[1].y, p[2].x, p[2].y);
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    if area < 0.0 {
        order = [0, 2, 1];
        area = -area;
    }
    let v = order.map(|i| (p[i].x, p[i].y));
    // edge k is opposite vertex k: from v[k+1] to v[k+2]
    let top_left = std::array::from_fn(|k| {
        let a = v[(k + 1) % 3];
        let b = v[(k + 2) % 3];
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        dy < 0.0 || (dy == 0.0 && dx > 0.0)
    });
    let min_x = v.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
    let max_x = v.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = v.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let max_y = v.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = |m: f64| (m - 0.5).ceil().max(0.0);
    let hi = |m: f64, n: usize| ((m - 0.5).floor()).min(n as f64 - 1.0);
    let (x0, x1) = (lo(min_x), hi(max_x, width));
    let (y0, y1) = (lo(min_y), hi(max_y, height));
    if x1 < x0 || y1 < y0 {
        return None;
    }
    Some(Setup {
        v,
        inv_z: order.map(|i| 1.0 / p[i].z),
        order,
        area,
        top_left,
        x_range: (x0 as usize, x1 as usize),
        y_range: (y0 as usize, y1 as usize),
    })
}

impl Setup {
    /// Screen-space barycentrics in setup order, or `None` when not covered.
    #[inline]
    fn cover(&self, px: f64, py: f64) -> Option<[f64; 3]> {
        let mut w = [0.0; 3];
        for (k, wk) in w.iter_mut().enumerate() {
            let a = self.v[(k + 1) % 3];
            let b = self.v[(k + 2) % 3];
            let e = edge(a.0, a.1, b.0, b.1, px, py);
            if e < 0.0 || (e == 0.0 && !self.top_left[k]) {
                return None;
            }
            *wk = e;
        }
        Some(w.map(|e| e / self.area))
    }
}

/// Rasterizes already-projected vertices.
pub fn rasterize_screen(
    screen: &[ScreenPoint],
    triangles: &[[u32; 3]],
    width: usize,
    height: usize,
) -> Fragments {
    let setups: Vec<Option<Setup>> = triangles
        .par_iter()
        .map(|t| setup(t.map(|i| screen[i as usize]), width, height))
        .collect();
    let mut frags = Fragments::empty(width, height);
    frags
        .pix_to_face
        .par_chunks_mut(width)
        .zip(frags.bary.par_chunks_mut(width))
        .zip(frags.depth.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, ((faces, bary), depth))| {
            let py = y as f64 + 0.5;
            for (ti, s) in setups.iter().enumerate() {
                let Some(s) = s else { continue };
                if y < s.y_range.0 || y > s.y_range.1 {
                    continue;
                }
                for x in s.x_range.0..=s.x_range.1 {
                    let Some(l) = s.cover(x as f64 + 0.5, py) else {
                        continue;
                    };
                    let q = [l[0] * s.inv_z[0], l[1] * s.inv_z[1], l[2] * s.inv_z[2]];
                    let sum = q[0] + q[1] + q[2];
                    let z = 1.0 / sum;
                    if z < depth[x] {
                        depth[x] = z;
                        faces[x] = ti as i32;
                        let mut w = [0.0; 3];
                        for k in 0..3 {
                            w[s.order[k]] = q[k] / sum;
                        }
                        bary[x] = w;
                    }
                }
            }
        });
    frags
}

pub fn rasterize(
    vertices: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    camera: &ProjectiveCamera,
) -> Fragments {
    let screen = camera.project(vertices);
    rasterize_screen(&screen, triangles, camera.width, camera.height)
}
