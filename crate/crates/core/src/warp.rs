//! Flow warping and mask compositing.
//!
//! Sampling convention: `output(p) = input(p + flow(p))`, bilinear, with
//! sample positions clamped to the image border. Flow channel 0 is the x
//! (column) offset, channel 1 the y (row) offset, both in pixels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

fn check_flow(image: &Image, flow: &Image) -> Result<()> {
    if flow.channels != 2 {
        return Err(Error::Dimension {
            what: "flow channels",
            expected: 2,
            got: flow.channels,
        });
    }
    image.check_shape(flow, "flow size")
}

fn check_mask(image: &Image, mask: &Image) -> Result<()> {
    if mask.channels != 1 {
        return Err(Error::Dimension {
            what: "mask channels",
            expected: 1,
            got: mask.channels,
        });
    }
    image.check_shape(mask, "mask size")
}

pub fn bilinear_warp(image: &Image, flow: &Image) -> Result<Image> {
    check_flow(image, flow)?;
    let (h, w) = (image.height, image.width);
    let fx = flow.plane(0);
    let fy = flow.plane(1);
    let mut out = Image::zeros(image.channels, h, w);
    out.data
        .par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(row, dst)| {
            let (c, y) = (row / h, row % h);
            for (x, d) in dst.iter_mut().enumerate() {
                let i = y * w + x;
                *d = image.sample_bilinear(c, x as f64 + fx[i] as f64, y as f64 + fy[i] as f64);
            }
        });
    Ok(out)
}

/// Flow scaled by the mask before warping: `warp(I, K * F)`.
pub fn warp_unstable(image: &Image, flow: &Image, mask: &Image) -> Result<Image> {
    check_flow(image, flow)?;
    check_mask(image, mask)?;
    let k = mask.plane(0);
    let mut scaled = flow.clone();
    for c in 0..2 {
        scaled
            .plane_mut(c)
            .iter_mut()
            .zip(k)
            .for_each(|(f, &m)| *f *= m);
    }
    bilinear_warp(image, &scaled)
}

/// Mask blends the warped and the unwarped image: `K warp(I, F) + (1 - K) I`.
pub fn warp_stable(image: &Image, flow: &Image, mask: &Image) -> Result<Image> {
    check_mask(image, mask)?;
    let warped = bilinear_warp(image, flow)?;
    composite_blend(image, &warped, mask)
}

/// Result of [`warp_detached`]: the image and a marker that the mask is a
/// constant with respect to any downstream gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct DetachedWarp {
    pub image: Image,
    pub mask_detached: bool,
}

pub fn warp_detached(image: &Image, flow: &Image, mask: &Image) -> Result<DetachedWarp> {
    Ok(DetachedWarp {
        image: warp_unstable(image, flow, mask)?,
        mask_detached: true,
    })
}

/// `orig (1 - K) + pred K`, with `K` broadcast over channels.
pub fn composite_blend(orig: &Image, pred: &Image, mask: &Image) -> Result<Image> {
    check_mask(orig, mask)?;
    if !orig.same_shape(pred) {
        return Err(Error::Dimension {
            what: "blend images",
            expected: orig.data.len(),
            got: pred.data.len(),
        });
    }
    let n = orig.pixels();
    let k = mask.plane(0);
    let mut out = orig.clone();
    out.data
        .par_iter_mut()
        .zip(pred.data.par_iter())
        .enumerate()
        .for_each(|(i, (o, &p))| {
            let m = k[i % n];
            if m == 0.0 {
                return;
            }
            *o = if m == 1.0 { p } else { *o * (1.0 - m) + p * m };
        });
    Ok(out)
}

/// Mean over pixels and channels of `|(1 - K)(a - b)|`.
pub fn locality_metric(pred: &Image, reference: &Image, mask: &Image) -> Result<f64> {
    check_mask(pred, mask)?;
    if !pred.same_shape(reference) {
        return Err(Error::Dimension {
            what: "locality images",
            expected: pred.data.len(),
            got: reference.data.len(),
        });
    }
    let n = pred.pixels();
    let k = mask.plane(0);
    // per-row partial sums keep the total independent of thread scheduling
    let rows: Vec<f64> = pred
        .data
        .par_chunks(pred.width.max(1))
        .zip(reference.data.par_chunks(pred.width.max(1)))
        .enumerate()
        .map(|(r, (a, b))| {
            let base = (r * pred.width) % n.max(1);
            a.iter()
                .zip(b)
                .enumerate()
                .map(|(x, (&a, &b))| ((1.0 - k[base + x]) * (a - b)).abs() as f64)
                .sum::<f64>()
        })
        .collect();
    Ok(rows.iter().sum::<f64>() / pred.data.len().max(1) as f64)
}

/// Constant flow field.
pub fn constant_flow(height: usize, width: usize, dx: f32, dy: f32) -> Image {
    Image::from_fn(2, height, width, |c, _, _| if c == 0 { dx } else { dy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(1, h, w, |_, _, x| x as f32)
    }

    #[test]
    fn zero_flow_is_bitwise_identity() {
        let img = Image::from_fn(3, 9, 11, |c, y, x| ((c * 7 + y * 3 + x) % 5) as f32);
        let out = bilinear_warp(&img, &constant_flow(9, 11, 0.0, 0.0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn integer_shift_on_ramp() {
        let img = ramp(6, 16);
        let out = bilinear_warp(&img, &constant_flow(6, 16, 2.0, 0.0)).unwrap();
        for y in 0..6 {
            for x in 0..14 {
                assert_eq!(out.get(0, y, x), (x + 2) as f32);
            }
            // clamped at the border
            assert_eq!(out.get(0, y, 15), 15.0);
        }
    }

    #[test]
    fn half_pixel_on_ramp_is_midpoint() {
        let img = ramp(4, 10);
        let out = bilinear_warp(&img, &constant_flow(4, 10, 0.5, 0.0)).unwrap();
        for x in 0..9 {
            assert_eq!(out.get(0, 1, x), x as f32 + 0.5);
        }
    }

    #[test]
    fn mask_extremes() {
        let img = Image::from_fn(2, 8, 8, |c, y, x| (c + y * x) as f32 * 0.1);
        let flow = constant_flow(8, 8, 1.5, -0.75);
        let zero = Image::zeros(1, 8, 8);
        let one = Image::filled(1, 8, 8, 1.0);
        let pure = bilinear_warp(&img, &flow).unwrap();
        assert_eq!(warp_stable(&img, &flow, &zero).unwrap(), img);
        assert_eq!(warp_stable(&img, &flow, &one).unwrap(), pure);
        assert_eq!(warp_unstable(&img, &flow, &zero).unwrap(), img);
        assert_eq!(warp_unstable(&img, &flow, &one).unwrap(), pure);
        let d = warp_detached(&img, &flow, &zero).unwrap();
        assert!(d.mask_detached);
        assert_eq!(d.image, img);
    }

    #[test]
    fn half_mask_separates_the_two_parametrizations() {
        let img = ramp(8, 16);
        let flow = constant_flow(8, 16, 2.0, 0.0);
        let half = Image::filled(1, 8, 16, 0.5);
        let stable = warp_stable(&img, &flow, &half).unwrap();
        let unstable = warp_unstable(&img, &flow, &half).unwrap();
        let shifted1 = bilinear_warp(&img, &constant_flow(8, 16, 1.0, 0.0)).unwrap();
        assert_eq!(unstable, shifted1);
        for x in 0..14 {
            let expect = 0.5 * (x as f32) + 0.5 * (x as f32 + 2.0);
            assert_eq!(stable.get(0, 3, x), expect);
        }
    }

    #[test]
    fn blend_and_locality_formulas() {
        let a = Image::filled(3, 4, 4, 0.2);
        let b = Image::filled(3, 4, 4, 0.6);
        let half = Image::filled(1, 4, 4, 0.5);
        let m = composite_blend(&a, &b, &half).unwrap();
        assert!(m.data.iter().all(|&v| (v - 0.4).abs() < 1e-7));
        let mask = Image::from_fn(1, 4, 4, |_, _, x| if x < 2 { 1.0 } else { 0.0 });
        let ones = Image::filled(3, 4, 4, 1.0);
        let zeros = Image::zeros(3, 4, 4);
        assert_eq!(locality_metric(&ones, &zeros, &mask).unwrap(), 0.5);
        assert_eq!(locality_metric(&ones, &ones, &mask).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let img = Image::zeros(1, 4, 4);
        assert!(bilinear_warp(&img, &constant_flow(4, 5, 0.0, 0.0)).is_err());
        assert!(warp_stable(&img, &constant_flow(4, 4, 0.0, 0.0), &Image::zeros(2, 4, 4)).is_err());
    }

    proptest! {
        #[test]
        fn affine_images_reproduced_in_interior(
            a in -2.0f32..2.0, b in -2.0f32..2.0, c0 in -1.0f32..1.0,
            dx in -2.0f32..2.0, dy in -2.0f32..2.0,
        ) {
            let (h, w) = (12, 12);
            let img = Image::from_fn(1, h, w, |_, y, x| a * x as f32 + b * y as f32 + c0);
            let out = bilinear_warp(&img, &constant_flow(h, w, dx, dy)).unwrap();
            for y in 3..9 {
                for x in 3..9 {
                    let e = a * (x as f32 + dx) + b * (y as f32 + dy) + c0;
                    prop_assert!((out.get(0, y, x) - e).abs() < 1e-4);
                }
            }
        }

        #[test]
        fn locality_zero_when_change_inside_binary_mask(seed in 0u64..1000) {
            let mask = Image::from_fn(1, 6, 6, |_, y, x| ((x * 7 + y * 3 + seed as usize) % 3 == 0) as u8 as f32);
            let a = Image::from_fn(2, 6, 6, |c, y, x| (c + x + y) as f32);
            let mut b = a.clone();
            for y in 0..6 {
                for x in 0..6 {
                    if mask.get(0, y, x) == 1.0 {
                        b.set(1, y, x, 42.0);
                    }
                }
            }
            prop_assert_eq!(locality_metric(&a, &b, &mask).unwrap(), 0.0);
        }
    }
}
