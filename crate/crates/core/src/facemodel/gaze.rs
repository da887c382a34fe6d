//! Coupling between eyeball rotations and the gaze blendshapes.
//!
//! Axes: x to the viewer's right, y up, z out of the face. The gaze
//! direction is the image of +z under the eye rotation (its third column).
//! The right eye sits at negative x, so looking toward +x is "in" for the
//! right eye and "out" for the left eye.

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::{EyeSide, FaceModel, FaceParams};
use crate::error::{Error, Result};
use crate::rotation::orthonormality_error;

pub const DEFAULT_MAX_GAZE_DEG: f64 = 30.0;

const ROTATION_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GazeAngles {
    pub theta_h: f64,
    pub theta_v: f64,
    pub th_max: f64,
    pub tv_max: f64,
}

impl GazeAngles {
    pub fn new(theta_h: f64, theta_v: f64) -> Self {
        let m = DEFAULT_MAX_GAZE_DEG.to_radians();
        Self {
            theta_h,
            theta_v,
            th_max: m,
            tv_max: m,
        }
    }

    pub fn with_maxima(mut self, th_max: f64, tv_max: f64) -> Result<Self> {
        if !(th_max > 0.0 && tv_max > 0.0) {
            return Err(Error::InvalidGaze(format!(
                "gaze maxima must be positive, got ({th_max}, {tv_max})"
            )));
        }
        self.th_max = th_max;
        self.tv_max = tv_max;
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GazeBlendshapes {
    pub look_in: f64,
    pub look_out: f64,
    pub look_up: f64,
    pub look_down: f64,
}

impl GazeBlendshapes {
    pub fn as_array(&self) -> [f64; 4] {
        [self.look_in, self.look_out, self.look_up, self.look_down]
    }
}

/// Horizontal and vertical angle of the gaze direction of a rotation.
pub fn rotation_gaze_angles(rot: &Matrix3<f64>) -> Result<(f64, f64)> {
    let err = orthonormality_error(rot);
    if !(err <= ROTATION_TOL) {
        return Err(Error::DegenerateRotation(format!(
            "eye rotation deviates from SO(3) by {err:e}"
        )));
    }
    let d = rot.column(2);
    Ok((d[0].atan2(d[2]), d[1].atan2(d[2])))
}

/// Normalizes by the maxima and splits each axis into its two clamped halves.
pub fn angles_to_blendshapes(angles: &GazeAngles, side: EyeSide) -> GazeBlendshapes {
    let norm_h = angles.theta_h / angles.th_max;
    let norm_v = angles.theta_v / angles.tv_max;
    let toward_plus_x = norm_h.clamp(0.0, 1.0);
    let toward_minus_x = -norm_h.clamp(-1.0, 0.0);
    let (look_in, look_out) = match side {
        EyeSide::Right => (toward_plus_x, toward_minus_x),
        EyeSide::Left => (toward_minus_x, toward_plus_x),
    };
    GazeBlendshapes {
        look_in,
        look_out,
        look_up: norm_v.clamp(0.0, 1.0),
        look_down: -norm_v.clamp(-1.0, 0.0),
    }
}

pub fn gaze_to_blendshapes(
    rot: &Matrix3<f64>,
    side: EyeSide,
    th_max: f64,
    tv_max: f64,
) -> Result<GazeBlendshapes> {
    let (theta_h, theta_v) = rotation_gaze_angles(rot)?;
    let angles = GazeAngles::new(theta_h, theta_v).with_maxima(th_max, tv_max)?;
    Ok(angles_to_blendshapes(&angles, side))
}

/// Inverse of [`angles_to_blendshapes`] for unsaturated values.
pub fn blendshapes_to_gaze(
    bs: &GazeBlendshapes,
    side: EyeSide,
    th_max: f64,
    tv_max: f64,
) -> Result<GazeAngles> {
    if bs.look_in != 0.0 && bs.look_out != 0.0 {
        return Err(Error::InvalidGaze(
            "look-in and look-out are both active".into(),
        ));
    }
    if bs.look_up != 0.0 && bs.look_down != 0.0 {
        return Err(Error::InvalidGaze(
            "look-up and look-down are both active".into(),
        ));
    }
    let toward_plus_x = match side {
        EyeSide::Right => bs.look_in - bs.look_out,
        EyeSide::Left => bs.look_out - bs.look_in,
    };
    GazeAngles::new(toward_plus_x * th_max, (bs.look_up - bs.look_down) * tv_max)
        .with_maxima(th_max, tv_max)
}

/// Minimal rotation taking +z to the direction with the given gaze angles.
pub fn gaze_rotation(theta_h: f64, theta_v: f64) -> Matrix3<f64> {
    let d = Vector3::new(theta_h.tan(), theta_v.tan(), 1.0).normalize();
    Rotation3::rotation_between(&Vector3::z(), &d)
        .unwrap_or_else(Rotation3::identity)
        .into_inner()
}

/// Writes `eyeLook{In,Out,Up,Down}_{R,L}` from the eye rotations. Names the
/// model does not carry are skipped.
pub fn couple_gaze_blendshapes(
    model: &FaceModel,
    params: &FaceParams,
    th_max: f64,
    tv_max: f64,
) -> Result<FaceParams> {
    let mut out = params.clone();
    for side in EyeSide::BOTH {
        let bs = gaze_to_blendshapes(&params.eye_rotation(side)?, side, th_max, tv_max)?;
        let pairs = [
            ("eyeLookIn", bs.look_in),
            ("eyeLookOut", bs.look_out),
            ("eyeLookUp", bs.look_up),
            ("eyeLookDown", bs.look_down),
        ];
        for (stem, value) in pairs {
            if let Some(i) = model.blendshape_index(&format!("{stem}{}", side.suffix())) {
                out.beta[i] = value;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::axis_angle;
    use proptest::prelude::*;

    const MAX: f64 = 30.0 * std::f64::consts::PI / 180.0;

    #[test]
    fn identity_rotation_gives_zero() {
        for side in EyeSide::BOTH {
            let bs = gaze_to_blendshapes(&Matrix3::identity(), side, MAX, MAX).unwrap();
            assert_eq!(bs.as_array(), [0.0; 4]);
        }
    }

    #[test]
    fn yaw_fifteen_degrees_is_half() {
        // rotation about +y by +15 deg sends +z toward +x
        let r = axis_angle(Vector3::y(), 15f64.to_radians());
        let bs = gaze_to_blendshapes(&r, EyeSide::Right, MAX, MAX).unwrap();
        assert!((bs.look_in - 0.5).abs() < 1e-12);
        assert_eq!(bs.look_out, 0.0);
        let bs = gaze_to_blendshapes(&r, EyeSide::Left, MAX, MAX).unwrap();
        assert!((bs.look_out - 0.5).abs() < 1e-12);
        assert_eq!(bs.look_in, 0.0);
    }

    #[test]
    fn saturates_beyond_maximum() {
        let r = axis_angle(Vector3::y(), 45f64.to_radians());
        let bs = gaze_to_blendshapes(&r, EyeSide::Right, MAX, MAX).unwrap();
        assert_eq!(bs.look_in, 1.0);
        let r = axis_angle(Vector3::x(), 50f64.to_radians());
        // rotation about +x by +50 deg sends +z toward -y
        let bs = gaze_to_blendshapes(&r, EyeSide::Right, MAX, MAX).unwrap();
        assert_eq!(bs.look_down, 1.0);
        assert_eq!(bs.look_up, 0.0);
    }

    #[test]
    fn inverse_of_half_look_in() {
        let bs = GazeBlendshapes {
            look_in: 0.5,
            ..Default::default()
        };
        let g = blendshapes_to_gaze(&bs, EyeSide::Right, MAX, MAX).unwrap();
        assert!((g.theta_h.to_degrees() - 15.0).abs() < 1e-12);
        assert_eq!(g.theta_v, 0.0);
        let zero = blendshapes_to_gaze(&GazeBlendshapes::default(), EyeSide::Left, MAX, MAX)
            .unwrap();
        assert_eq!((zero.theta_h, zero.theta_v), (0.0, 0.0));
    }

    #[test]
    fn opposing_pair_rejected() {
        let bs = GazeBlendshapes {
            look_up: 0.2,
            look_down: 0.1,
            ..Default::default()
        };
        assert!(blendshapes_to_gaze(&bs, EyeSide::Right, MAX, MAX).is_err());
    }

    #[test]
    fn non_rotation_rejected() {
        let m = Matrix3::identity() * 1.1;
        assert!(gaze_to_blendshapes(&m, EyeSide::Right, MAX, MAX).is_err());
    }

    #[test]
    fn non_positive_maxima_rejected() {
        assert!(GazeAngles::new(0.0, 0.0).with_maxima(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_range(h in -1.0f64..1.0, v in -1.0f64..1.0, right in any::<bool>()) {
            let side = if right { EyeSide::Right } else { EyeSide::Left };
            let r = gaze_rotation(h * MAX, v * MAX);
            let bs = gaze_to_blendshapes(&r, side, MAX, MAX).unwrap();
            let g = blendshapes_to_gaze(&bs, side, MAX, MAX).unwrap();
            prop_assert!((g.theta_h - h * MAX).abs() < 1e-6);
            prop_assert!((g.theta_v - v * MAX).abs() < 1e-6);
            let r2 = gaze_rotation(g.theta_h, g.theta_v);
            let bs2 = gaze_to_blendshapes(&r2, side, MAX, MAX).unwrap();
            for (a, b) in bs.as_array().iter().zip(bs2.as_array()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
