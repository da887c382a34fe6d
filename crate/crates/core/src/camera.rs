//! Pinhole camera.
//!
//! Screen convention: pixel `(col, row)` covers `[col, col+1) x [row, row+1)`
//! with its center at `(col + 0.5, row + 0.5)`; y grows downward. Camera
//! space has +z pointing into the scene, so `x = f X / Z + cx`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Focal length used for fitting when none is supplied, in pixels at 224x224.
pub const DEFAULT_FIT_FOCAL: f64 = 1015.0;
pub const FIT_RESOLUTION: usize = 224;
pub const GENERATION_RESOLUTION: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveCamera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenPoint {
    pub x: f64,
    pub y: f64,
    /// Camera-space depth.
    pub z: f64,
}

impl ScreenPoint {
    /// Point is strictly in front of the camera.
    pub fn in_front(&self) -> bool {
        self.z > 0.0
    }
}

impl ProjectiveCamera {
    pub fn new(focal: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera on the +z axis at `distance`, looking back at the origin with
    /// world +y mapped to screen up.
    pub fn facing_origin(focal: f64, width: usize, height: usize, distance: f64) -> Result<Self> {
        let mut cam = Self::new(focal, width, height)?;
        cam.rotation = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        cam.translation = [0.0, 0.0, distance];
        Ok(cam)
    }

    /// Default fitting camera at 224x224.
    pub fn default_fit(distance: f64) -> Self {
        Self::facing_origin(DEFAULT_FIT_FOCAL, FIT_RESOLUTION, FIT_RESOLUTION, distance)
            .expect("default camera is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be at least 1".into()));
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            focal: self.focal * sx,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + Vector3::from(self.translation)
    }

    pub fn project_camera_space(&self, c: &Vector3<f64>) -> ScreenPoint {
        ScreenPoint {
            x: self.focal * c.x / c.z + self.cx,
            y: self.focal * c.y / c.z + self.cy,
            z: c.z,
        }
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> ScreenPoint {
        self.project_camera_space(&self.to_camera(p))
    }

    /// Projects every vertex; points with `z <= 0` are returned with
    /// `in_front() == false` and must not be rasterized.
    pub fn project(&self, vertices: &[Vector3<f64>]) -> Vec<ScreenPoint> {
        let r = self.rotation_matrix();
        let t = Vector3::from(self.translation);
        vertices
            .iter()
            .map(|p| self.project_camera_space(&(r * p + t)))
            .collect()
    }
}
