//! Step histograms and suggestion heatmaps.

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{EpisodeResult, StepRecord};
use crate::geometry::Direction;

/// Successful episodes counted by terminal step, with every failure in a
/// separate bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepHistogram {
    /// `counts[i]` is the number of successes that ended at step `i + 1`.
    pub counts: Vec<u64>,
    pub failures: u64,
}

impl StepHistogram {
    pub fn new(max_steps: u32) -> Self {
        Self {
            counts: vec![0; max_steps as usize],
            failures: 0,
        }
    }

    fn add(&mut self, success: bool, steps_used: u32) {
        if !success {
            self.failures += 1;
            return;
        }
        let i = steps_used.max(1) as usize - 1;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += 1;
    }

    pub fn from_results(results: &[EpisodeResult], max_steps: u32) -> Self {
        let mut h = Self::new(max_steps);
        for r in results {
            h.add(r.success, r.steps_used);
        }
        h
    }

    /// Builds a histogram from log records, using only terminal lines.
    pub fn from_records(records: &[StepRecord], max_steps: u32) -> Self {
        let mut h = Self::new(max_steps);
        for r in records {
            if let (Some(success), Some(steps)) = (r.success, r.steps_used) {
                h.add(success, steps);
            }
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.failures
    }

    /// `bucket,count,fraction` rows: steps `1..=n`, then `failure`.
    pub fn to_csv(&self) -> String {
        let total = self.total().max(1) as f64;
        let mut s = String::from("bucket,count,fraction\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{:.6}\n", i + 1, c, *c as f64 / total));
        }
        s.push_str(&format!("failure,{},{:.6}\n", self.failures, self.failures as f64 / total));
        s
    }

    /// Bar chart: one blue bar per step, a red failure bar on the right.
    pub fn to_image(&self) -> RgbImage {
        const BAR: u32 = 32;
        const GAP: u32 = 8;
        const HEIGHT: u32 = 240;
        let n = self.counts.len() as u32 + 1;
        let width = n * (BAR + GAP) + GAP;
        let mut img = RgbImage::from_pixel(width, HEIGHT + 2 * GAP, Rgb([255, 255, 255]));
        let peak = self.counts.iter().copied().chain([self.failures]).max().unwrap_or(0).max(1);
        let bars = self.counts.iter().map(|c| (*c, Rgb([49, 104, 179]))).chain([(self.failures, Rgb([196, 52, 52]))]);
        for (i, (count, color)) in bars.enumerate() {
            let h = (count as f64 / peak as f64 * HEIGHT as f64).round() as u32;
            let x0 = GAP + i as u32 * (BAR + GAP);
            for x in x0..x0 + BAR {
                for y in (GAP + HEIGHT - h)..(GAP + HEIGHT) {
                    img.put_pixel(x, y, color);
                }
            }
        }
        for x in 0..width {
            img.put_pixel(x, GAP + HEIGHT, Rgb([0, 0, 0]));
        }
        img
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub width: u32,
    pub height: u32,
    /// Kernel standard deviation in degrees of great-circle distance.
    pub sigma: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            width: 720,
            height: 360,
            sigma: 10.0,
        }
    }
}

/// Equirectangular density grid, row 0 at the zenith, normalized so the
/// maximum is 1 (all zeros when empty).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub width: u32,
    pub height: u32,
    pub sigma: f64,
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    /// Direction at the centre of cell `(x, y)`.
    pub fn cell_center(&self, x: u32, y: u32) -> Direction {
        Direction::new(
            (x as f64 + 0.5) / self.width as f64 * 360.0,
            90.0 - (y as f64 + 0.5) / self.height as f64 * 180.0,
        )
        .expect("cell centre in range")
    }

    pub fn argmax(&self) -> (u32, u32) {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        (i as u32 % self.width, i as u32 / self.width)
    }

    /// Colour image using [`colormap`].
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| Rgb(colormap(self.get(x, y))))
    }
}

/// Five-stop piecewise-linear map from `[0, 1]` to RGB: black-purple
/// `(0,0,4)`, violet `(87,16,110)`, rose `(188,55,84)`, orange `(249,142,9)`,
/// pale yellow `(252,255,164)` at 0, 0.25, 0.5, 0.75 and 1.
pub fn colormap(v: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 4.0],
        [87.0, 16.0, 110.0],
        [188.0, 55.0, 84.0],
        [249.0, 142.0, 9.0],
        [252.0, 255.0, 164.0],
    ];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let pos = v * 4.0;
    let i = (pos.floor() as usize).min(3);
    let t = pos - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] * (1.0 - t) + STOPS[i + 1][c] * t).round() as u8;
    }
    out
}

/// Splats each weighted coordinate as a Gaussian in great-circle distance
/// (so the kernel wraps across the 0/360 seam) and normalizes the peak to 1.
/// Contributions beyond 5σ are ignored.
pub fn build_heatmap(coords: &[(Direction, f64)], cfg: &HeatmapConfig) -> HeatmapGrid {
    assert!(cfg.sigma > 0.0, "heatmap sigma must be positive");
    let (w, h) = (cfg.width, cfg.height);
    let mut grid = HeatmapGrid {
        width: w,
        height: h,
        sigma: cfg.sigma,
        values: vec![0.0; w as usize * h as usize],
    };
    if coords.is_empty() {
        return grid;
    }
    let points: Vec<([f64; 3], f64, f64)> = coords
        .iter()
        .map(|(d, weight)| (d.to_vector(), d.mu(), *weight))
        .collect();
    let cutoff = 5.0 * cfg.sigma;
    let cos_cutoff = cutoff.min(180.0).to_radians().cos();
    let two_var = 2.0 * cfg.sigma * cfg.sigma;
    let template = grid.clone();
    grid.values
        .par_chunks_mut(w as usize)
        .enumerate()
        .for_each(|(y, row)| {
            let row_mu = template.cell_center(0, y as u32).mu();
            let near: Vec<_> = points.iter().filter(|p| (p.1 - row_mu).abs() <= cutoff).collect();
            if near.is_empty() {
                return;
            }
            for (x, cell) in row.iter_mut().enumerate() {
                let c = template.cell_center(x as u32, y as u32).to_vector();
                for (v, _, weight) in &near {
                    let dot = (c[0] * v[0] + c[1] * v[1] + c[2] * v[2]).clamp(-1.0, 1.0);
                    if dot < cos_cutoff {
                        continue;
                    }
                    let theta = dot.acos().to_degrees();
                    *cell += weight * (-theta * theta / two_var).exp();
                }
            }
        });
    let peak = grid.values.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        grid.values.iter_mut().for_each(|v| *v /= peak);
    }
    grid
}

/// All hypothesis coordinates recorded in a set of episode logs, weight 1 each.
pub fn hypothesis_coords(records: &[StepRecord]) -> Vec<(Direction, f64)> {
    records
        .iter()
        .flat_map(|r| r.hypotheses.iter())
        .filter_map(|h| Direction::new(h.phi, h.mu).ok().map(|d| (d, 1.0)))
        .collect()
}
