#![allow(dead_code)]

use std::f64::consts::PI;

use hvs::panorama::{EquirectPanorama, Renderer, Scene};
use hvs::synthetic::synthetic_scene;
use hvs::{Direction, FoVSpec, ViewPose};
use image::RgbImage;

pub fn d(phi: f64, mu: f64) -> Direction {
    Direction::new(phi, mu).unwrap()
}

pub fn pose(phi: f64, gamma: f64) -> ViewPose {
    ViewPose::new(phi, gamma).unwrap()
}

pub fn default_fov() -> FoVSpec {
    FoVSpec::from_horizontal(100.0, 960, 720).unwrap()
}

pub fn scenes(n: usize, seed: u64, width: u32) -> Vec<Scene> {
    (0..n).map(|i| synthetic_scene(&format!("scene-{i:03}"), seed, width)).collect()
}

fn level(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn phase_pair(theta: f64) -> [u8; 2] {
    [level(127.5 * (1.0 + theta.cos())), level(127.5 * (1.0 + theta.sin()))]
}

/// Three panoramas that jointly encode direction in colour:
/// a coarse azimuth phase plus linear elevation, an 8x azimuth phase, and an
/// elevation phase with a 22.5 degree period.
pub struct DirectionCode {
    pub coarse: EquirectPanorama,
    pub fine_phi: EquirectPanorama,
    pub fine_mu: EquirectPanorama,
}

pub const MU_PERIOD: f64 = 22.5;

impl DirectionCode {
    pub fn new(width: u32) -> Self {
        let coarse = EquirectPanorama::from_fn(width, |d| {
            let [r, g] = phase_pair(d.phi().to_radians());
            [r, g, level((d.mu() + 90.0) / 180.0 * 255.0)]
        })
        .unwrap();
        let fine_phi = EquirectPanorama::from_fn(width, |d| {
            let [r, g] = phase_pair(8.0 * d.phi().to_radians());
            [r, g, 0]
        })
        .unwrap();
        let fine_mu = EquirectPanorama::from_fn(width, |d| {
            let [r, g] = phase_pair(2.0 * PI * d.mu() / MU_PERIOD);
            [r, g, 0]
        })
        .unwrap();
        Self {
            coarse,
            fine_phi,
            fine_mu,
        }
    }
}

fn phase_deg(px: &[u8; 3]) -> f64 {
    (px[1] as f64 - 127.5).atan2(px[0] as f64 - 127.5).to_degrees()
}

/// Picks `fine + period * k` closest to `coarse` on a circle of
/// circumference `wrap` (or on the line when `wrap` is infinite).
fn unwrap(coarse: f64, fine_phase: f64, period: f64, wrap: f64) -> f64 {
    let base = fine_phase / 360.0 * period;
    let k = ((coarse - base) / period).round();
    let mut best = base + k * period;
    let mut best_err = f64::INFINITY;
    for dk in -1..=1 {
        let cand = base + (k + dk as f64) * period;
        let mut err = (cand - coarse).abs();
        if wrap.is_finite() {
            err = err.rem_euclid(wrap);
            err = err.min(wrap - err);
        }
        if err < best_err {
            best_err = err;
            best = cand;
        }
    }
    best
}

/// Recovers the direction a rendered pixel looked along from its three codes.
pub fn decode(coarse: &[u8; 3], fine_phi: &[u8; 3], fine_mu: &[u8; 3]) -> Direction {
    let phi_c = phase_deg(coarse).rem_euclid(360.0);
    let mu_c = coarse[2] as f64 / 255.0 * 180.0 - 90.0;
    let phi = unwrap(phi_c, phase_deg(fine_phi), 45.0, 360.0).rem_euclid(360.0);
    let mu = unwrap(mu_c, phase_deg(fine_mu), MU_PERIOD, f64::INFINITY).clamp(-90.0, 90.0);
    Direction::new(if phi >= 360.0 { 0.0 } else { phi }, mu).unwrap()
}

/// Textbook inverse gnomonic projection: the direction through tangent-plane
/// point `(x, y)` (x right, y up, unit focal length) for a camera centred on
/// `(phi0, gamma0)`.
pub fn inverse_gnomonic(x: f64, y: f64, phi0: f64, gamma0: f64) -> (f64, f64) {
    let rho = x.hypot(y);
    if rho == 0.0 {
        return (phi0, gamma0);
    }
    let c = rho.atan();
    let (sc, cc) = c.sin_cos();
    let (s0, c0) = gamma0.to_radians().sin_cos();
    let mu = (cc * s0 + y * sc * c0 / rho).asin();
    let dphi = (x * sc).atan2(rho * c0 * cc - y * s0 * sc);
    ((phi0 + dphi.to_degrees()).rem_euclid(360.0), mu.to_degrees())
}

/// Expected direction for pixel `(u, v)` of a `width x height` view.
pub fn expected_direction(u: u32, v: u32, fov: &FoVSpec, width: u32, height: u32, at: &ViewPose) -> Direction {
    let x = (u as f64 - width as f64 / 2.0) / (width as f64 / 2.0) * (fov.f_phi() / 2.0).to_radians().tan();
    let y = (height as f64 / 2.0 - v as f64) / (height as f64 / 2.0) * (fov.f_gamma() / 2.0).to_radians().tan();
    let (phi, mu) = inverse_gnomonic(x, y, at.phi(), at.gamma());
    Direction::new(if phi >= 360.0 { 0.0 } else { phi }, mu.clamp(-90.0, 90.0)).unwrap()
}

/// Largest great-circle error (degrees) between the decoded and the expected
/// direction over every pixel of the view at `at`.
pub fn max_direction_error(code: &DirectionCode, renderer: &Renderer, at: &ViewPose) -> f64 {
    let (w, h) = renderer.resolution();
    let fov = renderer.fov();
    let a = renderer.render(&code.coarse, at);
    let b = renderer.render(&code.fine_phi, at);
    let c = renderer.render(&code.fine_mu, at);
    let mut worst: f64 = 0.0;
    for v in 0..h {
        for u in 0..w {
            let got = decode(&a.get_pixel(u, v).0, &b.get_pixel(u, v).0, &c.get_pixel(u, v).0);
            let want = expected_direction(u, v, &fov, w, h, at);
            worst = worst.max(got.angular_distance(&want));
        }
    }
    worst
}

/// Largest per-channel difference between horizontally adjacent pixels.
pub fn max_column_jump(img: &RgbImage) -> u8 {
    let mut worst = 0u8;
    for (x, y, p) in img.enumerate_pixels() {
        if x + 1 < img.width() {
            let q = img.get_pixel(x + 1, y);
            for c in 0..3 {
                worst = worst.max(p.0[c].abs_diff(q.0[c]));
            }
        }
    }
    worst
}

/// A smooth azimuth-only pattern with no discontinuity anywhere.
pub fn azimuth_ring(width: u32) -> EquirectPanorama {
    EquirectPanorama::from_fn(width, |d| {
        let [r, g] = phase_pair(d.phi().to_radians());
        [r, g, 128]
    })
    .unwrap()
}

/// Angular-box visibility written out directly: within half the FoV on each
/// axis, azimuth difference taken the short way round.
pub fn seen_from_any(coord: &Direction, poses: &[ViewPose], fov: &FoVSpec) -> bool {
    poses.iter().any(|p| {
        let raw = (coord.phi() - p.phi()).rem_euclid(360.0);
        let dphi = raw.min(360.0 - raw);
        dphi <= fov.f_phi() / 2.0 && (coord.mu() - p.gamma()).abs() <= fov.f_gamma() / 2.0
    })
}
