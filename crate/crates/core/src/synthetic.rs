//! Procedurally generated scenes for demos and tests.
//!
//! Each scene has 11 labelled entities at random directions. The first four
//! are also search targets, mixing object and path search and cycling
//! through the difficulty splits. The panorama paints every entity as a
//! coloured disc over a sky/floor gradient.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::geometry::{wrap_unchecked, Direction};
use crate::panorama::{
    AngularBox, Difficulty, EquirectPanorama, Scene, SceneAnnotation, SceneError, SemanticEntity, TargetSpec,
    TaskKind,
};
use crate::seeding::{keyed_seed, rng};

pub const ENTITIES_PER_SCENE: usize = 11;
pub const TARGETS_PER_SCENE: usize = 4;

const LABELS: [&str; 16] = [
    "red armchair",
    "bookshelf",
    "doorway",
    "potted plant",
    "floor lamp",
    "television",
    "staircase",
    "window",
    "refrigerator",
    "wall clock",
    "sofa",
    "dining table",
    "hallway",
    "painting",
    "coat rack",
    "fire extinguisher",
];

const CATEGORIES: [&str; 4] = ["living room", "office", "station", "shop"];

fn label_color(label: &str) -> [u8; 3] {
    let h = Sha256::digest(label.as_bytes());
    [h[0] | 0x40, h[1] | 0x40, h[2] | 0x40]
}

/// Annotation for scene `scene_id`, fully determined by `(scene_id, seed)`.
pub fn synthetic_annotation(scene_id: &str, seed: u64) -> SceneAnnotation {
    let mut r = rng(keyed_seed(scene_id, &[seed]));
    let mut labels: Vec<&str> = LABELS.to_vec();
    // partial Fisher-Yates: the first ENTITIES_PER_SCENE labels are the picks
    for i in 0..ENTITIES_PER_SCENE {
        let j = r.random_range(i..labels.len());
        labels.swap(i, j);
    }
    let offset = r.random_range(0..Difficulty::ALL.len());
    let mut entities = Vec::with_capacity(ENTITIES_PER_SCENE);
    let mut targets = Vec::with_capacity(TARGETS_PER_SCENE);
    for (i, label) in labels[..ENTITIES_PER_SCENE].iter().enumerate() {
        let phi = r.random_range(0.0..360.0);
        let mu: f64 = r.random_range(-30.0..30.0);
        let coord = Direction::new(phi, mu).expect("sampled direction in range");
        let salience = r.random_range(1..=5u8);
        entities.push(SemanticEntity {
            label: label.to_string(),
            coord,
            salience,
        });
        if i < TARGETS_PER_SCENE {
            let half_w = r.random_range(6.0..14.0);
            let half_h = r.random_range(4.0..10.0);
            let (task, instruction) = if i % 2 == 0 {
                (TaskKind::ObjectSearch, format!("Find the {label}."))
            } else {
                (TaskKind::PathSearch, format!("Turn to face the {label} so you can walk toward it."))
            };
            targets.push(TargetSpec {
                label: label.to_string(),
                instruction,
                coord,
                bbox: AngularBox {
                    phi_min: wrap_unchecked(phi - half_w),
                    phi_max: wrap_unchecked(phi + half_w),
                    mu_min: (mu - half_h).max(-90.0),
                    mu_max: (mu + half_h).min(90.0),
                },
                difficulty: Difficulty::ALL[(i + offset) % Difficulty::ALL.len()],
                task,
            });
        }
    }
    SceneAnnotation {
        scene_id: scene_id.to_string(),
        pano_path: PathBuf::from(format!("{scene_id}.png")),
        category: CATEGORIES[r.random_range(0..CATEGORIES.len())].to_string(),
        entities,
        targets,
    }
}

/// Paints the entities of `annotation` as 6° discs on a `width`-pixel panorama.
pub fn synthetic_panorama(annotation: &SceneAnnotation, width: u32) -> EquirectPanorama {
    let discs: Vec<(Direction, [u8; 3])> = annotation
        .entities
        .iter()
        .map(|e| (e.coord, label_color(&e.label)))
        .collect();
    EquirectPanorama::from_fn(width, |d| {
        if let Some((_, c)) = discs.iter().find(|(center, _)| center.angular_distance(&d) <= 6.0) {
            return *c;
        }
        let t = (d.mu() + 90.0) / 180.0;
        let shade = (40.0 + 160.0 * t) as u16;
        let c = if d.mu() >= 0.0 {
            [shade / 2, shade / 2 + 20, shade]
        } else {
            [shade, shade * 3 / 4, shade / 2]
        };
        c.map(|v| v.min(255) as u8)
    })
    .expect("synthetic panorama width is valid")
}

pub fn synthetic_scene(scene_id: &str, seed: u64, width: u32) -> Scene {
    let annotation = synthetic_annotation(scene_id, seed);
    let panorama = Arc::new(synthetic_panorama(&annotation, width));
    Scene { annotation, panorama }
}

/// Writes `n` scenes (`scene-000`, `scene-001`, ...) as PNG panoramas plus a
/// `manifest.jsonl` into `dir`, returning the manifest path.
pub fn write_synthetic_manifest(dir: &Path, n: usize, seed: u64, width: u32) -> Result<PathBuf, SceneError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SceneError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = String::new();
    for i in 0..n {
        let scene = synthetic_scene(&format!("scene-{i:03}"), seed, width);
        let png = dir.join(&scene.annotation.pano_path);
        scene
            .panorama
            .image()
            .save(&png)
            .map_err(|e| io(&png)(std::io::Error::other(e)))?;
        manifest.push_str(&serde_json::to_string(&scene.annotation.to_record()).expect("record serializes"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest).map_err(io(&path))?;
    Ok(path)
}
