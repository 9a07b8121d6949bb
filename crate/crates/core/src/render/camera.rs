use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOCAL_LENGTH_MM: f64 = 50.0;
pub const DEFAULT_FILM_WIDTH_MM: f64 = 35.0;

/// Object frame center; grids occupy `[0, 1]³`.
const CENTER: [f64; 3] = [0.5, 0.5, 0.5];

/// Camera pose on a sphere around the object center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewParams {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

/// Pinhole camera looking at the object center with world `+y` up.
///
/// Camera space has `x` to the image right, `y` to the image bottom and `z`
/// along the optical axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub focal_length: f64,
    pub film_width: f64,
    pub width: usize,
    pub height: usize,
    position: [f64; 3],
    /// Rows are the camera `x`, `y`, `z` axes in world coordinates.
    basis: [[f64; 3]; 3],
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}

pub fn camera_from_angles(azimuth: f64, elevation: f64, distance: f64, width: usize, height: usize) -> Result<Camera> {
    Camera::new(
        ViewParams { azimuth, elevation, distance },
        width,
        height,
        DEFAULT_FOCAL_LENGTH_MM,
        DEFAULT_FILM_WIDTH_MM,
    )
}

impl Camera {
    pub fn new(view: ViewParams, width: usize, height: usize, focal_length: f64, film_width: f64) -> Result<Camera> {
        let ViewParams { azimuth, elevation, distance } = view;
        if !(elevation.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::invalid(format!("elevation {elevation} must satisfy |e| < pi/2")));
        }
        if !azimuth.is_finite() {
            return Err(Error::invalid("azimuth must be finite"));
        }
        if !(distance > 3f64.sqrt() / 2.0) || !distance.is_finite() {
            return Err(Error::invalid(format!(
                "distance {distance} must exceed the bounding-sphere radius sqrt(3)/2"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(focal_length > 0.0 && film_width > 0.0) {
            return Err(Error::invalid("focal length and film width must be positive"));
        }
        let (sa, ca) = azimuth.sin_cos();
        let (se, ce) = elevation.sin_cos();
        let offset = [sa * ce, se, -ca * ce];
        let position = [0, 1, 2].map(|i| CENTER[i] + distance * offset[i]);
        let forward = normalize(offset.map(|v| -v));
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let down = cross(forward, right);
        Ok(Camera {
            azimuth,
            elevation,
            distance,
            focal_length,
            film_width,
            width,
            height,
            position,
            basis: [right, down, forward],
        })
    }

    pub fn view(&self) -> ViewParams {
        ViewParams {
            azimuth: self.azimuth,
            elevation: self.elevation,
            distance: self.distance,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        self.position
    }

    /// Camera axes (right, down, forward) in world coordinates.
    pub fn basis(&self) -> [[f64; 3]; 3] {
        self.basis
    }

    /// Focal length in pixels.
    pub fn focal_pixels(&self) -> f64 {
        self.focal_length / self.film_width * self.width as f64
    }

    /// Unit camera-space ray direction through image point `(x, y)` in
    /// pixel units, with pixel `(u, v)` centered at `(u + 0.5, v + 0.5)`.
    pub fn pixel_ray_camera(&self, x: f64, y: f64) -> [f64; 3] {
        let f = self.focal_pixels();
        normalize([
            (x - self.width as f64 / 2.0) / f,
            (y - self.height as f64 / 2.0) / f,
            1.0,
        ])
    }

    /// Unit world-space ray direction through image point `(x, y)`.
    pub fn pixel_ray(&self, x: f64, y: f64) -> [f64; 3] {
        let c = self.pixel_ray_camera(x, y);
        let [r, d, f] = self.basis;
        normalize([0, 1, 2].map(|i| c[0] * r[i] + c[1] * d[i] + c[2] * f[i]))
    }

    /// Rotates a world-space vector into camera space.
    pub fn to_camera(&self, v: [f64; 3]) -> [f64; 3] {
        self.basis.map(|axis| dot(axis, v))
    }
}
