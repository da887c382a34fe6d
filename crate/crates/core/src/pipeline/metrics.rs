use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Face bounding box in pixels; rows `y1..y2`, columns `x1..x2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub y1: f64,
    pub y2: f64,
    pub x1: f64,
    pub x2: f64,
}

impl FaceBox {
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn validate(&self, frame: usize) -> Result<()> {
        if !(self.y2 > self.y1) {
            return Err(Error::DegenerateBox(frame));
        }
        if !(self.x2 > self.x1) {
            return Err(Error::InvalidInput(format!(
                "face box at frame {frame} has x2 <= x1"
            )));
        }
        Ok(())
    }

    /// Tight box around a point set.
    pub fn around(points: &[[f64; 2]]) -> Self {
        let mut b = Self {
            y1: f64::INFINITY,
            y2: f64::NEG_INFINITY,
            x1: f64::INFINITY,
            x2: f64::NEG_INFINITY,
        };
        for p in points {
            b.x1 = b.x1.min(p[0]);
            b.x2 = b.x2.max(p[0]);
            b.y1 = b.y1.min(p[1]);
            b.y2 = b.y2.max(p[1]);
        }
        b
    }

    /// Integer pixel bounds, rounded to the nearest pixel edge.
    pub fn pixel_bounds(&self) -> (i64, i64, i64, i64) {
        (
            self.y1.round() as i64,
            self.y2.round() as i64,
            self.x1.round() as i64,
            self.x2.round() as i64,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaCl {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

/// Chin-line displacement `|y2_orig - y2_lipsync| / (y2_orig - y1_orig)`
/// per frame, and its mean. Only the original boxes must be non-degenerate.
pub fn delta_cl(orig: &[FaceBox], lipsync: &[FaceBox]) -> Result<DeltaCl> {
    if orig.len() != lipsync.len() {
        return Err(Error::Dimension {
            what: "lip-sync boxes",
            expected: orig.len(),
            got: lipsync.len(),
        });
    }
    let per_frame = orig
        .iter()
        .zip(lipsync)
        .enumerate()
        .map(|(i, (o, l))| {
            let h = o.y2 - o.y1;
            if !(h > 0.0) {
                return Err(Error::DegenerateBox(i));
            }
            Ok((o.y2 - l.y2).abs() / h)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    };
    Ok(DeltaCl { per_frame, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(y1: f64, y2: f64) -> FaceBox {
        FaceBox {
            y1,
            y2,
            x1: 0.0,
            x2: 50.0,
        }
    }

    #[test]
    fn examples() {
        let o = [b(0.0, 100.0), b(10.0, 90.0)];
        assert_eq!(delta_cl(&o, &o).unwrap().mean, 0.0);
        let d = delta_cl(&[b(0.0, 100.0)], &[b(0.0, 110.0)]).unwrap();
        assert!((d.per_frame[0] - 0.10).abs() < 1e-15);
        assert!(matches!(
            delta_cl(&[b(5.0, 100.0), b(3.0, 3.0)], &[b(0.0, 1.0), b(0.0, 1.0)]),
            Err(Error::DegenerateBox(1))
        ));
        assert!(delta_cl(&o, &o[..1]).is_err());
    }

    proptest! {
        #[test]
        fn scale_and_translation_invariant(
            y1 in -50.0..50.0f64, h in 1.0..200.0f64, dy in -30.0..30.0f64,
            s in 0.25..4.0f64, t in -100.0..100.0f64,
        ) {
            let o = [b(y1, y1 + h)];
            let l = [b(y1, y1 + h + dy)];
            let base = delta_cl(&o, &l).unwrap().mean;
            let tf = |x: &FaceBox| FaceBox {
                y1: s * x.y1 + t, y2: s * x.y2 + t, x1: s * x.x1 + t, x2: s * x.x2 + t,
            };
            let moved = delta_cl(&o.map(|x| tf(&x)), &l.map(|x| tf(&x))).unwrap().mean;
            prop_assert!((moved - base).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
