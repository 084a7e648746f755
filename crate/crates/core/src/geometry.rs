//! Angular arithmetic and coordinate conversions on the viewing sphere.
//!
//! Conventions used throughout the crate:
//!
//! * azimuth `phi` in degrees, `[0, 360)`, increasing to the camera's right;
//! * elevation (`mu` for scene coordinates, `gamma` for head pitch) in degrees,
//!   `[-90, 90]`, positive up, `0` at the horizon;
//! * equirectangular row 0 is the zenith, column 0 is azimuth 0;
//! * camera frame is x right, y up, z forward.
//!
//! Public APIs speak degrees; radians only appear inside trigonometric kernels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite angle: {0}")]
    NonFinite(f64),
    #[error("elevation {0} outside [-90, 90]")]
    ElevationOutOfRange(f64),
    #[error("field of view {0} must lie in (0, 180)")]
    InvalidFov(f64),
    #[error("equirectangular raster must be 2:1, got {width}x{height}")]
    Aspect { width: u32, height: u32 },
    #[error("image dimensions must be positive")]
    EmptyImage,
}

/// Wraps an azimuth into `[0, 360)`.
pub fn wrap_azimuth(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFinite(a));
    }
    Ok(wrap_unchecked(a))
}

#[inline]
pub(crate) fn wrap_unchecked(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    // rem_euclid rounds tiny negatives up to exactly 360.0; `+ 0.0` drops -0.0.
    if r >= 360.0 {
        0.0
    } else {
        r + 0.0
    }
}

/// Signed displacement from `current` to `target`, in `(-180, 180]`.
pub fn signed_delta(target: f64, current: f64) -> Result<f64, GeometryError> {
    for v in [target, current] {
        if !v.is_finite() {
            return Err(GeometryError::NonFinite(v));
        }
    }
    Ok(signed_delta_unchecked(target, current))
}

#[inline]
pub(crate) fn signed_delta_unchecked(target: f64, current: f64) -> f64 {
    let d = wrap_unchecked(target - current);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

fn check_elevation(v: f64) -> Result<f64, GeometryError> {
    if !v.is_finite() {
        return Err(GeometryError::NonFinite(v));
    }
    if !(-90.0..=90.0).contains(&v) {
        return Err(GeometryError::ElevationOutOfRange(v));
    }
    Ok(v + 0.0)
}

/// A point on the viewing sphere: absolute azimuth and elevation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    phi: f64,
    mu: f64,
}

impl Direction {
    /// Wraps `phi`; rejects non-finite input and `mu` outside `[-90, 90]`.
    pub fn new(phi: f64, mu: f64) -> Result<Self, GeometryError> {
        let phi = wrap_azimuth(phi)?;
        let mu = check_elevation(mu)?;
        Ok(Self { phi, mu })
    }

    /// Like [`Direction::new`] but clamps `mu` instead of rejecting it.
    /// Returns whether clamping happened.
    pub fn new_clamped(phi: f64, mu: f64) -> Result<(Self, bool), GeometryError> {
        if !mu.is_finite() {
            return Err(GeometryError::NonFinite(mu));
        }
        let clamped = mu.clamp(-90.0, 90.0);
        Ok((Self::new(phi, clamped)?, clamped != mu))
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Unit vector in the world frame (x east-ish, y up, z at azimuth 0).
    pub fn to_vector(&self) -> [f64; 3] {
        let (sp, cp) = self.phi.to_radians().sin_cos();
        let (sm, cm) = self.mu.to_radians().sin_cos();
        [cm * sp, sm, cm * cp]
    }

    /// Inverse of [`Direction::to_vector`]; the vector need not be normalized.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let horiz = v[0].hypot(v[2]);
        let mu = v[1].atan2(horiz).to_degrees().clamp(-90.0, 90.0);
        let phi = if horiz == 0.0 {
            0.0
        } else {
            wrap_unchecked(v[0].atan2(v[2]).to_degrees())
        };
        Self { phi, mu: mu + 0.0 }
    }

    /// Great-circle distance in degrees.
    pub fn angular_distance(&self, other: &Direction) -> f64 {
        let a = self.to_vector();
        let b = other.to_vector();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos).to_degrees()
    }
}

/// Head orientation of the agent. Pitch is clamped, never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    phi: f64,
    gamma: f64,
}

impl ViewPose {
    /// Wraps `phi`; rejects non-finite input and `gamma` outside `[-90, 90]`.
    pub fn new(phi: f64, gamma: f64) -> Result<Self, GeometryError> {
        let phi = wrap_azimuth(phi)?;
        let gamma = check_elevation(gamma)?;
        Ok(Self { phi, gamma })
    }

    /// Wraps `phi` and clamps `gamma` into `[-90, 90]`.
    pub fn clamped(phi: f64, gamma: f64) -> Result<Self, GeometryError> {
        if !gamma.is_finite() {
            return Err(GeometryError::NonFinite(gamma));
        }
        Self::new(phi, gamma.clamp(-90.0, 90.0))
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn direction(&self) -> Direction {
        Direction {
            phi: self.phi,
            mu: self.gamma,
        }
    }
}

impl From<Direction> for ViewPose {
    fn from(d: Direction) -> Self {
        Self {
            phi: d.phi,
            gamma: d.mu,
        }
    }
}

/// Horizontal and vertical angular extent of the perspective camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoVSpec {
    f_phi: f64,
    f_gamma: f64,
}

impl FoVSpec {
    pub fn new(f_phi: f64, f_gamma: f64) -> Result<Self, GeometryError> {
        for f in [f_phi, f_gamma] {
            if !f.is_finite() || f <= 0.0 || f >= 180.0 {
                return Err(GeometryError::InvalidFov(f));
            }
        }
        Ok(Self { f_phi, f_gamma })
    }

    /// Horizontal FoV with the vertical extent implied by a square-pixel
    /// pinhole camera at `width`x`height`.
    pub fn from_horizontal(f_phi: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let f_gamma = derive_vertical_fov(f_phi, width, height)?;
        Self::new(f_phi, f_gamma)
    }

    pub fn f_phi(&self) -> f64 {
        self.f_phi
    }

    pub fn f_gamma(&self) -> f64 {
        self.f_gamma
    }
}

/// `2·atan((height/width)·tan(f_phi/2))`, in degrees.
pub fn derive_vertical_fov(f_phi: f64, width: u32, height: u32) -> Result<f64, GeometryError> {
    if !f_phi.is_finite() || f_phi <= 0.0 || f_phi >= 180.0 {
        return Err(GeometryError::InvalidFov(f_phi));
    }
    if width == 0 || height == 0 {
        return Err(GeometryError::EmptyImage);
    }
    let half = (f_phi / 2.0).to_radians().tan() * height as f64 / width as f64;
    Ok(2.0 * half.atan().to_degrees())
}

/// Angular-box visibility test: the prediction lies within half the FoV of
/// the pose on each axis, with the azimuth difference taken on the circle.
pub fn within_fov(pred: &Direction, pose: &ViewPose, fov: &FoVSpec) -> bool {
    signed_delta_unchecked(pred.phi, pose.phi).abs() <= fov.f_phi / 2.0
        && (pred.mu - pose.gamma).abs() <= fov.f_gamma / 2.0
}

fn check_equirect(width: u32, height: u32) -> Result<(), GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::EmptyImage);
    }
    if width != 2 * height {
        return Err(GeometryError::Aspect { width, height });
    }
    Ok(())
}

/// Fractional pixel position of a direction in a 2:1 equirectangular raster.
pub fn dir_to_equirect_pixel(
    d: &Direction,
    width: u32,
    height: u32,
) -> Result<(f64, f64), GeometryError> {
    check_equirect(width, height)?;
    Ok(equirect_xy(d, width as f64, height as f64))
}

#[inline]
pub(crate) fn equirect_xy(d: &Direction, width: f64, height: f64) -> (f64, f64) {
    (d.phi / 360.0 * width, (90.0 - d.mu) / 180.0 * height)
}

pub fn equirect_pixel_to_dir(
    x: f64,
    y: f64,
    width: u32,
    height: u32,
) -> Result<Direction, GeometryError> {
    check_equirect(width, height)?;
    Direction::new(
        x / width as f64 * 360.0,
        90.0 - y / height as f64 * 180.0,
    )
}

/// Unit ray through fractional pixel `(u, v)` of a pinhole camera.
///
/// The principal point sits at `(width/2, height/2)`, so for even sizes pixel
/// `(width/2, height/2)` looks straight ahead; `u = 0` and `u = width` are the
/// left and right edges of the horizontal FoV.
pub fn camera_ray(u: f64, v: f64, fov: &FoVSpec, width: u32, height: u32) -> [f64; 3] {
    let tx = (fov.f_phi / 2.0).to_radians().tan();
    let ty = (fov.f_gamma / 2.0).to_radians().tan();
    let hw = width as f64 / 2.0;
    let hh = height as f64 / 2.0;
    let x = (u - hw) / hw * tx;
    let y = (hh - v) / hh * ty;
    let n = (x * x + y * y + 1.0).sqrt();
    [x / n, y / n, 1.0 / n]
}

/// Yaw-pitch rotation of a head pose (zero roll), as a row-major 3x3 matrix
/// mapping camera-frame vectors to world-frame vectors.
pub fn pose_rotation(pose: &ViewPose) -> [[f64; 3]; 3] {
    let (sp, cp) = pose.phi.to_radians().sin_cos();
    let (sg, cg) = pose.gamma.to_radians().sin_cos();
    // yaw(phi) * pitch(gamma); pitch raises the forward axis toward +y.
    [
        [cp, -sp * sg, sp * cg],
        [0.0, cg, sg],
        [-sp, -cp * sg, cp * cg],
    ]
}

#[inline]
pub(crate) fn rotate_with(m: &[[f64; 3]; 3], pose: &ViewPose, ray: [f64; 3]) -> Direction {
    if ray[0] == 0.0 && ray[1] == 0.0 && ray[2] > 0.0 {
        return pose.direction();
    }
    let w = [
        m[0][0] * ray[0] + m[0][1] * ray[1] + m[0][2] * ray[2],
        m[1][0] * ray[0] + m[1][1] * ray[1] + m[1][2] * ray[2],
        m[2][0] * ray[0] + m[2][1] * ray[1] + m[2][2] * ray[2],
    ];
    Direction::from_vector(w)
}

/// Maps a camera-frame ray into a world direction for the given head pose.
/// The forward axis maps exactly onto the pose.
pub fn rotate_ray(ray: [f64; 3], pose: &ViewPose) -> Direction {
    rotate_with(&pose_rotation(pose), pose, ray)
}
