//! Binary pixel masks derived from projected geometry. A pixel `(x, y)` is
//! represented by its center `(x + 0.5, y + 0.5)`, matching the rasterizer.

use crate::image::Image;

/// Even-odd fill of a closed polygon.
pub fn fill_polygon(points: &[[f64; 2]], height: usize, width: usize) -> Image {
    let mut mask = Image::zeros(1, height, width);
    let n = points.len();
    if n < 3 {
        return mask;
    }
    let mut xs: Vec<f64> = Vec::new();
    for y in 0..height {
        let py = y as f64 + 0.5;
        xs.clear();
        for k in 0..n {
            let a = points[k];
            let b = points[(k + 1) % n];
            // half-open in y so shared vertices are counted once
            if (a[1] <= py) != (b[1] <= py) {
                xs.push(a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x0 = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let x1 = (pair[1] - 0.5).ceil().min(width as f64);
            if x1 <= 0.0 {
                continue;
            }
            for x in x0..x1 as usize {
                mask.data[y * width + x] = 1.0;
            }
        }
    }
    mask
}

/// Pixels within Euclidean distance `radius` of a set pixel.
pub fn dilate(mask: &Image, radius: f64) -> Image {
    if radius <= 0.0 {
        return binarize(mask);
    }
    let (h, w) = (mask.height, mask.width);
    let r = radius.floor() as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= radius * radius)
        .collect();
    let src = mask.plane(0);
    let mut out = Image::zeros(1, h, w);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if src[(y * w as i64 + x) as usize] <= 0.0 {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (ty, tx) = (y + dy, x + dx);
                if ty >= 0 && tx >= 0 && ty < h as i64 && tx < w as i64 {
                    out.data[(ty * w as i64 + tx) as usize] = 1.0;
                }
            }
        }
    }
    out
}

fn binarize(mask: &Image) -> Image {
    let mut out = Image::zeros(1, mask.height, mask.width);
    for (o, &m) in out.data.iter_mut().zip(mask.plane(0)) {
        *o = if m > 0.0 { 1.0 } else { 0.0 };
    }
    out
}

/// Pixels whose center lies within `radius` of the polyline.
pub fn polyline_band(points: &[[f64; 2]], closed: bool, radius: f64, height: usize, width: usize) -> Image {
    let mut mask = Image::zeros(1, height, width);
    let n = points.len();
    if n == 0 {
        return mask;
    }
    let segs: Vec<([f64; 2], [f64; 2])> = if n == 1 {
        vec![(points[0], points[0])]
    } else {
        let m = if closed { n } else { n - 1 };
        (0..m).map(|k| (points[k], points[(k + 1) % n])).collect()
    };
    for (a, b) in segs {
        let x0 = (a[0].min(b[0]) - radius - 0.5).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - radius - 0.5).floor().max(0.0) as usize;
        let x1 = (a[0].max(b[0]) + radius).ceil().min(width as f64 - 1.0);
        let y1 = (a[1].max(b[1]) + radius).ceil().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d2 = (px - a[0] - t * dx).powi(2) + (py - a[1] - t * dy).powi(2);
                if d2 <= radius * radius {
                    mask.data[y * width + x] = 1.0;
                }
            }
        }
    }
    mask
}

/// Pixels within `radius` of both the foreground and the background, i.e. a
/// band of width about `2 * radius` around the silhouette.
pub fn boundary_ring(foreground: &Image, radius: f64) -> Image {
    let fg = binarize(foreground);
    let mut bg = fg.clone();
    bg.data.iter_mut().for_each(|v| *v = 1.0 - *v);
    let a = dilate(&fg, radius);
    let b = dilate(&bg, radius);
    let mut out = a;
    out.data.iter_mut().zip(&b.data).for_each(|(o, &m)| *o *= m);
    out
}

/// Pixelwise maximum of single-channel masks of the same size.
pub fn union(masks: &[&Image]) -> Image {
    let first = masks.first().expect("at least one mask");
    let mut out = Image::zeros(1, first.height, first.width);
    for m in masks {
        out.data
            .iter_mut()
            .zip(m.plane(0))
            .for_each(|(o, &v)| *o = o.max(v));
    }
    out
}

pub fn count(mask: &Image) -> usize {
    mask.plane(0).iter().filter(|&&v| v > 0.0).count()
}

/// Mean over channels and over the pixels where `exclude` is zero of
/// `|a - b|`; zero when every pixel is excluded.
pub fn mean_abs_outside(a: &Image, b: &Image, exclude: &Image) -> f64 {
    let n = a.pixels();
    let keep = exclude.plane(0);
    let mut total = 0.0f64;
    let mut m = 0usize;
    for c in 0..a.channels {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for i in 0..n {
            if keep[i] == 0.0 {
                total += (pa[i] - pb[i]).abs() as f64;
                m += 1;
            }
        }
    }
    if m == 0 {
        0.0
    } else {
        total / m as f64
    }
}
