//! Conditioning maps rendered from the face model: mean-face coordinates
//! (P), the two-channel sketch (S) and the screen-space flow between a
//! reference and a driving pose (F).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{ProjectiveCamera, ScreenPoint};
use crate::error::{Error, Result};
use crate::facemodel::{FaceModel, FaceParams, Polyline};
use crate::image::Image;
use crate::raster::{rasterize_screen, Fragments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    /// Gaussian falloff of stroke intensity with distance, in pixels.
    pub sigma: f64,
    /// Strokes are zero beyond this distance from the segment, in pixels.
    pub radius: f64,
    /// Relative depth slack of the visibility test.
    pub depth_tolerance: f64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            radius: 1.0,
            depth_tolerance: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderMaps {
    pub p: Image,
    pub s: Image,
    pub flow: Image,
    pub foreground: Image,
}

fn mask_image(frags: &Fragments) -> Image {
    let data = frags
        .pix_to_face
        .iter()
        .map(|&f| if f >= 0 { 1.0 } else { 0.0 })
        .collect();
    Image::new(1, frags.height, frags.width, data).expect("mask size")
}

fn planar<const N: usize>(frags: &Fragments, values: &[Option<[f64; N]>]) -> Image {
    let mut img = Image::zeros(N, frags.height, frags.width);
    let n = frags.width * frags.height;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            for c in 0..N {
                img.data[c * n + i] = v[c] as f32;
            }
        }
    }
    img
}

/// Mean-shape coordinates interpolated over the covered pixels; zero on the
/// background.
pub fn render_p(frags: &Fragments, triangles: &[[u32; 3]], mean: &[[f32; 3]]) -> Image {
    let attr: Vec<[f64; 3]> = mean
        .iter()
        .map(|m| [m[0] as f64, m[1] as f64, m[2] as f64])
        .collect();
    planar(frags, &frags.interpolate(triangles, &attr))
}

/// Flow `reference - driving` of the per-vertex screen positions,
/// interpolated with the driving fragments and zero off the driving
/// foreground.
pub fn flow_from_screen(
    frags: &Fragments,
    triangles: &[[u32; 3]],
    screen_ref: &[ScreenPoint],
    screen_dri: &[ScreenPoint],
) -> Result<Image> {
    if screen_ref.len() != screen_dri.len() {
        return Err(Error::Dimension {
            what: "reference projections",
            expected: screen_dri.len(),
            got: screen_ref.len(),
        });
    }
    let disp: Vec<[f64; 2]> = screen_ref
        .iter()
        .zip(screen_dri)
        .map(|(r, d)| [r.x - d.x, r.y - d.y])
        .collect();
    Ok(planar(frags, &frags.interpolate(triangles, &disp)))
}

/// Rasterizes the driving mesh and returns the reference-minus-driving
/// screen flow together with the driving fragments.
pub fn flow_3dmm(
    model: &FaceModel,
    params_ref: &FaceParams,
    params_dri: &FaceParams,
    camera: &ProjectiveCamera,
) -> Result<(Image, Fragments)> {
    let v_ref = model.evaluate(params_ref)?;
    let v_dri = model.evaluate(params_dri)?;
    let s_ref = camera.project(&v_ref);
    let s_dri = camera.project(&v_dri);
    let frags = rasterize_screen(&s_dri, &model.triangles, camera.width, camera.height);
    let flow = flow_from_screen(&frags, &model.triangles, &s_ref, &s_dri)?;
    Ok((flow, frags))
}

/// Draws polylines into `plane` (row-major `H x W`) taking the per-pixel
/// maximum intensity. With fragments, a stroke sample is dropped when the
/// surface stored at the pixel containing its closest segment point is in
/// front of it beyond the tolerance.
pub fn draw_polylines(
    plane: &mut [f32],
    width: usize,
    height: usize,
    screen: &[ScreenPoint],
    polylines: &[Polyline],
    frags: Option<&Fragments>,
    cfg: &SketchConfig,
) {
    for line in polylines {
        let n = line.vertices.len();
        if n < 2 {
            continue;
        }
        let segs = if line.closed { n } else { n - 1 };
        for k in 0..segs {
            let a = screen[line.vertices[k] as usize];
            let b = screen[line.vertices[(k + 1) % n] as usize];
            draw_segment(plane, width, height, a, b, frags, cfg);
        }
    }
}

fn draw_segment(
    plane: &mut [f32],
    width: usize,
    height: usize,
    a: ScreenPoint,
    b: ScreenPoint,
    frags: Option<&Fragments>,
    cfg: &SketchConfig,
) {
    if !a.in_front() || !b.in_front() {
        return;
    }
    let r = cfg.radius;
    let x0 = ((a.x.min(b.x) - r - 0.5).floor().max(0.0)) as usize;
    let y0 = ((a.y.min(b.y) - r - 0.5).floor().max(0.0)) as usize;
    let x1 = (a.x.max(b.x) + r).ceil().min(width as f64 - 1.0);
    let y1 = (a.y.max(b.y) + r).ceil().min(height as f64 - 1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return;
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a.x + t * dx, a.y + t * dy);
            let d2 = (px - qx).powi(2) + (py - qy).powi(2);
            if d2 > r * r {
                continue;
            }
            if let Some(f) = frags {
                let inv_z = (1.0 - t) / a.z + t / b.z;
                let zq = 1.0 / inv_z;
                let (qi, qj) = (qx.floor(), qy.floor());
                if qi >= 0.0 && qj >= 0.0 && (qi as usize) < width && (qj as usize) < height {
                    let surf = f.depth[f.index(qi as usize, qj as usize)];
                    if surf.is_finite() && zq > surf * (1.0 + cfg.depth_tolerance) {
                        continue;
                    }
                }
            }
            let v = (-d2 / (2.0 * cfg.sigma * cfg.sigma)).exp() as f32;
            let o = &mut plane[y * width + x];
            if v > *o {
                *o = v;
            }
        }
    }
}

/// Channel 0: face contours; channel 1: iris rings. Both depth-tested
/// against `frags`, which must be rasterized from the same projections.
pub fn render_sketch(
    model: &FaceModel,
    screen: &[ScreenPoint],
    frags: &Fragments,
    cfg: &SketchConfig,
) -> Image {
    let (w, h) = (frags.width, frags.height);
    let mut img = Image::zeros(2, h, w);
    draw_polylines(
        img.plane_mut(0),
        w,
        h,
        screen,
        &model.contours.strokes,
        Some(frags),
        cfg,
    );
    let rings: Vec<Polyline> = model
        .iris_rings
        .iter()
        .map(|r| Polyline {
            vertices: r.clone(),
            closed: true,
        })
        .collect();
    draw_polylines(img.plane_mut(1), w, h, screen, &rings, Some(frags), cfg);
    img
}

/// All maps for driving parameters, with the flow pointing to the
/// reference pose.
pub fn render_maps(
    model: &FaceModel,
    params_ref: &FaceParams,
    params_dri: &FaceParams,
    camera: &ProjectiveCamera,
    sketch: &SketchConfig,
) -> Result<RenderMaps> {
    let v_ref = model.evaluate(params_ref)?;
    let v_dri = model.evaluate(params_dri)?;
    render_maps_from_vertices(model, &v_ref, &v_dri, camera, sketch)
}

pub fn render_maps_from_vertices(
    model: &FaceModel,
    v_ref: &[Vector3<f64>],
    v_dri: &[Vector3<f64>],
    camera: &ProjectiveCamera,
    sketch: &SketchConfig,
) -> Result<RenderMaps> {
    let s_ref = camera.project(v_ref);
    let s_dri = camera.project(v_dri);
    let frags = rasterize_screen(&s_dri, &model.triangles, camera.width, camera.height);
    Ok(RenderMaps {
        p: render_p(&frags, &model.triangles, &model.mean),
        s: render_sketch(model, &s_dri, &frags, sketch),
        flow: flow_from_screen(&frags, &model.triangles, &s_ref, &s_dri)?,
        foreground: mask_image(&frags),
    })
}

pub fn foreground_image(frags: &Fragments) -> Image {
    mask_image(frags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticHead, SyntheticHeadConfig};

    fn sp(x: f64, y: f64, z: f64) -> ScreenPoint {
        ScreenPoint { x, y, z }
    }

    #[test]
    fn p_is_zero_off_foreground() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        let p = FaceParams::neutral_for(&h.model);
        let m = render_maps(&h.model, &p, &p, &h.camera, &SketchConfig::default()).unwrap();
        let n = m.p.pixels();
        for i in 0..n {
            if m.foreground.data[i] == 0.0 {
                for c in 0..3 {
                    assert_eq!(m.p.data[c * n + i], 0.0);
                }
                assert_eq!(m.flow.data[i], 0.0);
                assert_eq!(m.flow.data[n + i], 0.0);
            }
        }
        assert!(m.s.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn identical_params_give_zero_flow() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        let mut p = FaceParams::neutral_for(&h.model);
        p.beta[27] = 0.6;
        let (f, frags) = flow_3dmm(&h.model, &p, &p, &h.camera).unwrap();
        assert!(frags.coverage() > 0);
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn straight_stroke_stays_within_radius() {
        let cfg = SketchConfig::default();
        let (w, h) = (32, 32);
        let mut plane = vec![0.0f32; w * h];
        let pts = [sp(4.3, 5.1, 1.0), sp(27.2, 21.7, 1.0)];
        let line = Polyline {
            vertices: vec![0, 1],
            closed: false,
        };
        draw_polylines(&mut plane, w, h, &pts, &[line], None, &cfg);
        let mut lit = 0;
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let (dx, dy) = (pts[1].x - pts[0].x, pts[1].y - pts[0].y);
                let t = (((px - pts[0].x) * dx + (py - pts[0].y) * dy) / (dx * dx + dy * dy))
                    .clamp(0.0, 1.0);
                let d = ((px - pts[0].x - t * dx).powi(2) + (py - pts[0].y - t * dy).powi(2)).sqrt();
                let v = plane[y * w + x];
                if d > 1.0 {
                    assert_eq!(v, 0.0);
                } else if v > 0.0 {
                    lit += 1;
                }
            }
        }
        assert!(lit > 20);
    }
}
