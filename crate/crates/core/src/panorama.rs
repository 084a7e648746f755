//! Annotated 360° scenes and narrow field-of-view rendering.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, camera_ray, equirect_xy, pose_rotation, rotate_with, within_fov,
    Direction, FoVSpec, GeometryError, ViewPose,
};

pub const MIN_PANORAMA_WIDTH: u32 = 64;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene record in {path} (line {line}): {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("panorama {path} is {width}x{height}; expected 2:1 and width >= {MIN_PANORAMA_WIDTH}")]
    Aspect {
        path: PathBuf,
        width: u32,
        height: u32,
    },
    #[error("cannot decode panorama {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("target '{label}' in scene '{scene_id}': bounding box does not contain its coordinate")]
    BoxMissesTarget { scene_id: String, label: String },
    #[error("duplicate scene_id '{0}' in manifest")]
    DuplicateScene(String),
    #[error("invalid scene '{scene_id}': {reason}")]
    Invalid { scene_id: String, reason: String },
}

/// 8-bit RGB equirectangular raster, row 0 at the zenith.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectPanorama {
    image: RgbImage,
}

impl EquirectPanorama {
    pub fn new(image: RgbImage) -> Result<Self, GeometryError> {
        let (w, h) = image.dimensions();
        if w != 2 * h || w < MIN_PANORAMA_WIDTH {
            return Err(GeometryError::Aspect {
                width: w,
                height: h,
            });
        }
        Ok(Self { image })
    }

    /// Builds a panorama by evaluating `color` at every pixel centre.
    pub fn from_fn(width: u32, color: impl Fn(Direction) -> [u8; 3] + Sync) -> Result<Self, GeometryError> {
        let height = width / 2;
        let mut buf = vec![0u8; width as usize * height as usize * 3];
        buf.par_chunks_mut(width as usize * 3)
            .enumerate()
            .for_each(|(y, row)| {
                for x in 0..width as usize {
                    let d = geometry::equirect_pixel_to_dir(x as f64 + 0.5, y as f64 + 0.5, width, height)
                        .expect("pixel centre inside raster");
                    row[x * 3..x * 3 + 3].copy_from_slice(&color(d));
                }
            });
        Self::new(RgbImage::from_raw(width, height, buf).expect("buffer sized to raster"))
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    /// Bilinear sample at fractional pixel `(x, y)`, where pixel `i` covers
    /// `[i, i + 1)` and is centred at `i + 0.5`. Wraps in azimuth, clamps at
    /// the poles.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let w = self.width() as i64;
        let h = self.height() as i64;
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = fx - x0;
        let ay = fy - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let xa = x0.rem_euclid(w) as u32;
        let xb = (x0 + 1).rem_euclid(w) as u32;
        let ya = y0.clamp(0, h - 1) as u32;
        let yb = (y0 + 1).clamp(0, h - 1) as u32;
        let px = |x: u32, y: u32| self.image.get_pixel(x, y).0;
        let (p00, p10, p01, p11) = (px(xa, ya), px(xb, ya), px(xa, yb), px(xb, yb));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - ax) + p10[c] as f64 * ax;
            let bottom = p01[c] as f64 * (1.0 - ax) + p11[c] as f64 * ax;
            out[c] = top * (1.0 - ay) + bottom * ay;
        }
        out
    }

    /// Bilinear sample at a direction, rounded to 8 bits.
    pub fn sample_direction(&self, d: &Direction) -> [u8; 3] {
        let (x, y) = equirect_xy(d, self.width() as f64, self.height() as f64);
        quantize(self.sample_bilinear(x, y))
    }
}

#[inline]
fn quantize(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extreme,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Self::Easy, Self::Medium, Self::Hard, Self::Extreme];
}

/// Humanoid object search vs humanoid path search; they differ only in scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "HOS")]
    ObjectSearch,
    #[serde(rename = "HPS")]
    PathSearch,
}

/// Angular box around a target. `phi_min > phi_max` means the box crosses
/// the 0/360 seam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularBox {
    pub phi_min: f64,
    pub phi_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl AngularBox {
    fn phi_span(&self) -> f64 {
        geometry::wrap_unchecked(self.phi_max - self.phi_min)
    }

    pub fn contains(&self, d: &Direction) -> bool {
        let offset = geometry::wrap_unchecked(d.phi() - self.phi_min);
        offset <= self.phi_span() && d.mu() >= self.mu_min && d.mu() <= self.mu_max
    }

    /// Box centre with the azimuth midpoint taken along the circle.
    pub fn center(&self) -> Direction {
        let phi = self.phi_min + self.phi_span() / 2.0;
        Direction::new_clamped(phi, (self.mu_min + self.mu_max) / 2.0)
            .expect("finite box")
            .0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEntity {
    pub label: String,
    pub coord: Direction,
    pub salience: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub label: String,
    pub instruction: String,
    pub coord: Direction,
    pub bbox: AngularBox,
    pub difficulty: Difficulty,
    pub task: TaskKind,
}

impl TargetSpec {
    pub fn as_entity(&self) -> SemanticEntity {
        SemanticEntity {
            label: self.label.clone(),
            coord: self.coord,
            salience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: String,
    pub pano_path: PathBuf,
    pub category: String,
    pub entities: Vec<SemanticEntity>,
    pub targets: Vec<TargetSpec>,
}

impl SceneAnnotation {
    /// Entities plus any target not already present (matched by label).
    pub fn entities_with(&self, target: &TargetSpec) -> Vec<SemanticEntity> {
        let mut out = self.entities.clone();
        if !out.iter().any(|e| e.label == target.label) {
            out.push(target.as_entity());
        }
        out
    }

    pub fn find_target(&self, instruction: &str) -> Option<&TargetSpec> {
        self.targets.iter().find(|t| t.instruction == instruction)
    }

    pub fn to_record(&self) -> SceneRecord {
        SceneRecord {
            scene_id: self.scene_id.clone(),
            pano_path: self.pano_path.to_string_lossy().into_owned(),
            category: self.category.clone(),
            entities: self
                .entities
                .iter()
                .map(|e| EntityRecord {
                    label: e.label.clone(),
                    phi: e.coord.phi(),
                    mu: e.coord.mu(),
                    salience: e.salience,
                })
                .collect(),
            targets: self
                .targets
                .iter()
                .map(|t| TargetRecord {
                    label: t.label.clone(),
                    instruction: t.instruction.clone(),
                    phi: t.coord.phi(),
                    mu: t.coord.mu(),
                    bbox: t.bbox,
                    difficulty: t.difficulty,
                    task: t.task,
                })
                .collect(),
        }
    }
}

/// A scene with its decoded panorama, shareable across episode workers.
#[derive(Debug, Clone)]
pub struct Scene {
    pub annotation: SceneAnnotation,
    pub panorama: Arc<EquirectPanorama>,
}

// On-disk schema.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub label: String,
    pub phi: f64,
    pub mu: f64,
    pub salience: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub label: String,
    pub instruction: String,
    pub phi: f64,
    pub mu: f64,
    pub bbox: AngularBox,
    pub difficulty: Difficulty,
    pub task: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub scene_id: String,
    pub pano_path: String,
    pub category: String,
    pub entities: Vec<EntityRecord>,
    pub targets: Vec<TargetRecord>,
}

impl SceneRecord {
    pub fn validate(&self) -> Result<SceneAnnotation, SceneError> {
        let invalid = |reason: String| SceneError::Invalid {
            scene_id: self.scene_id.clone(),
            reason,
        };
        if self.scene_id.is_empty() {
            return Err(invalid("empty scene_id".into()));
        }
        if self.entities.is_empty() {
            return Err(invalid("scene has no entities".into()));
        }
        let mut entities = Vec::with_capacity(self.entities.len());
        for e in &self.entities {
            if e.label.trim().is_empty() {
                return Err(invalid("entity with empty label".into()));
            }
            if !(1..=5).contains(&e.salience) {
                return Err(invalid(format!("salience {} of '{}' outside 1..=5", e.salience, e.label)));
            }
            let coord = Direction::new(e.phi, e.mu).map_err(|err| invalid(format!("entity '{}': {err}", e.label)))?;
            entities.push(SemanticEntity {
                label: e.label.clone(),
                coord,
                salience: e.salience,
            });
        }
        let mut targets = Vec::with_capacity(self.targets.len());
        for t in &self.targets {
            if t.label.trim().is_empty() {
                return Err(invalid("target with empty label".into()));
            }
            let coord = Direction::new(t.phi, t.mu).map_err(|err| invalid(format!("target '{}': {err}", t.label)))?;
            let b = t.bbox;
            let finite = [b.phi_min, b.phi_max, b.mu_min, b.mu_max].iter().all(|v| v.is_finite());
            if !finite || b.mu_min > b.mu_max {
                return Err(invalid(format!("target '{}': malformed bbox", t.label)));
            }
            let bbox = AngularBox {
                phi_min: geometry::wrap_unchecked(b.phi_min),
                phi_max: geometry::wrap_unchecked(b.phi_max),
                ..b
            };
            if !bbox.contains(&coord) {
                return Err(SceneError::BoxMissesTarget {
                    scene_id: self.scene_id.clone(),
                    label: t.label.clone(),
                });
            }
            targets.push(TargetSpec {
                label: t.label.clone(),
                instruction: t.instruction.clone(),
                coord,
                bbox,
                difficulty: t.difficulty,
                task: t.task,
            });
        }
        Ok(SceneAnnotation {
            scene_id: self.scene_id.clone(),
            pano_path: PathBuf::from(&self.pano_path),
            category: self.category.clone(),
            entities,
            targets,
        })
    }
}

fn read(path: &Path) -> Result<String, SceneError> {
    fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_record(path: &Path, line: usize, text: &str) -> Result<SceneAnnotation, SceneError> {
    let record: SceneRecord = serde_json::from_str(text).map_err(|e| SceneError::Malformed {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    })?;
    record.validate()
}

pub fn load_panorama(path: &Path) -> Result<EquirectPanorama, SceneError> {
    if !path.exists() {
        return Err(SceneError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    let img = image::open(path)
        .map_err(|e| SceneError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (width, height) = img.dimensions();
    EquirectPanorama::new(img).map_err(|_| SceneError::Aspect {
        path: path.to_path_buf(),
        width,
        height,
    })
}

fn attach_panorama(annotation: SceneAnnotation, base: &Path) -> Result<Scene, SceneError> {
    let panorama = load_panorama(&base.join(&annotation.pano_path))?;
    Ok(Scene {
        annotation,
        panorama: Arc::new(panorama),
    })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads a single-record annotation file and its panorama (resolved relative
/// to the annotation's directory).
pub fn load_scene(annotation_path: &Path) -> Result<Scene, SceneError> {
    let text = read(annotation_path)?;
    let annotation = parse_record(annotation_path, 1, &text)?;
    attach_panorama(annotation, &base_dir(annotation_path))
}

/// Parses a newline-delimited manifest without touching the panoramas.
pub fn read_manifest(path: &Path) -> Result<Vec<SceneAnnotation>, SceneError> {
    let text = read(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let annotation = parse_record(path, i + 1, line)?;
        if !seen.insert(annotation.scene_id.clone()) {
            return Err(SceneError::DuplicateScene(annotation.scene_id));
        }
        out.push(annotation);
    }
    Ok(out)
}

/// Loads every scene in a manifest, decoding panoramas in parallel.
pub fn load_manifest(path: &Path) -> Result<Vec<Scene>, SceneError> {
    let base = base_dir(path);
    read_manifest(path)?
        .into_par_iter()
        .map(|a| attach_panorama(a, &base))
        .collect()
}

/// One rendered perspective view.
#[derive(Debug, Clone, PartialEq)]
pub struct NFoVObservation {
    pub pose: ViewPose,
    pub fov: FoVSpec,
    pub image: RgbImage,
    pub step_index: u32,
}

/// Pinhole renderer with the per-pixel camera rays cached for one
/// (FoV, resolution) pair.
#[derive(Debug, Clone)]
pub struct Renderer {
    fov: FoVSpec,
    width: u32,
    height: u32,
    rays: Vec<[f64; 3]>,
}

impl Renderer {
    pub fn new(fov: FoVSpec, width: u32, height: u32) -> Self {
        let mut rays = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                rays.push(camera_ray(u as f64, v as f64, &fov, width, height));
            }
        }
        Self {
            fov,
            width,
            height,
            rays,
        }
    }

    pub fn fov(&self) -> FoVSpec {
        self.fov
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Renders the view at `pose`. Pixel `(u, v)` looks along
    /// `camera_ray(u, v)`, so the centre pixel `(width/2, height/2)` is the
    /// panorama sample at the pose direction.
    pub fn render(&self, pano: &EquirectPanorama, pose: &ViewPose) -> RgbImage {
        let m = pose_rotation(pose);
        let pw = pano.width() as f64;
        let ph = pano.height() as f64;
        let row_len = self.width as usize * 3;
        let mut buf = vec![0u8; row_len * self.height as usize];
        buf.par_chunks_mut(row_len).enumerate().for_each(|(v, row)| {
            let rays = &self.rays[v * self.width as usize..(v + 1) * self.width as usize];
            for (u, ray) in rays.iter().enumerate() {
                let d = rotate_with(&m, pose, *ray);
                let (x, y) = equirect_xy(&d, pw, ph);
                row[u * 3..u * 3 + 3].copy_from_slice(&quantize(pano.sample_bilinear(x, y)));
            }
        });
        RgbImage::from_raw(self.width, self.height, buf).expect("buffer sized to view")
    }

    pub fn observe(&self, pano: &EquirectPanorama, pose: ViewPose, step_index: u32) -> NFoVObservation {
        NFoVObservation {
            pose,
            fov: self.fov,
            image: self.render(pano, &pose),
            step_index,
        }
    }
}

/// One-off render; prefer [`Renderer`] when rendering repeatedly.
pub fn render_nfov(
    pano: &EquirectPanorama,
    pose: ViewPose,
    fov: FoVSpec,
    width: u32,
    height: u32,
) -> NFoVObservation {
    Renderer::new(fov, width, height).observe(pano, pose, 1)
}

/// Splits entities into those inside at least one view of `history` and the rest.
pub fn partition_entities<'a>(
    entities: &'a [SemanticEntity],
    history: &[ViewPose],
    fov: &FoVSpec,
) -> (Vec<&'a SemanticEntity>, Vec<&'a SemanticEntity>) {
    entities
        .iter()
        .partition(|e| history.iter().any(|p| within_fov(&e.coord, p, fov)))
}

/// `(visible, hidden)` partition of the scene's entities over the revealed views.
pub fn visible_entities<'a>(
    scene: &'a SceneAnnotation,
    history: &[ViewPose],
    fov: &FoVSpec,
) -> (Vec<&'a SemanticEntity>, Vec<&'a SemanticEntity>) {
    partition_entities(&scene.entities, history, fov)
}
