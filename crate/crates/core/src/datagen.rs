//! Training-data engine: synthesizes view trajectories over annotated scenes
//! (half of them never looking at the designated target) and expands each
//! trajectory into single-step samples that reveal a prefix of its views and
//! ask for the full observed/imagined layout.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{within_fov, wrap_unchecked, Direction, FoVSpec, ViewPose};
use crate::imagination::{format_imagination, ImaginationOutput, LabeledCoord};
use crate::panorama::{partition_entities, SceneAnnotation};
use crate::seeding::{derive_seed, keyed_seed, rng};

pub const MAX_DESIGNATED_TARGETS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("scene '{0}' has no targets")]
    NoTargets(String),
    #[error("scene '{scene_id}': could not place a pose avoiding '{target}' within {budget} tries")]
    RejectionBudget {
        scene_id: String,
        target: String,
        budget: usize,
    },
    #[error("invalid generation parameters: {0}")]
    Params(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub n_trajectories: usize,
    pub avoid_ratio: f64,
    pub length: usize,
    pub fov: FoVSpec,
    pub seed: u64,
    /// Magnitude range of the azimuth step between consecutive views.
    pub azimuth_step: (f64, f64),
    /// Pitch is drawn uniformly from `[-pitch_limit, pitch_limit]`.
    pub pitch_limit: f64,
    pub rejection_budget: usize,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            n_trajectories: 24,
            avoid_ratio: 0.5,
            length: 8,
            fov: FoVSpec::from_horizontal(100.0, 960, 720).expect("default FoV"),
            seed: 0,
            azimuth_step: (30.0, 120.0),
            pitch_limit: 45.0,
            rejection_budget: 1000,
        }
    }
}

impl TrajectoryParams {
    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Params(m.into()));
        if !(0.0..=1.0).contains(&self.avoid_ratio) {
            return bad("avoid_ratio must lie in [0, 1]");
        }
        if self.length == 0 {
            return bad("trajectory length must be >= 1");
        }
        let (lo, hi) = self.azimuth_step;
        if !(lo >= 0.0 && lo <= hi && hi <= 180.0) {
            return bad("azimuth step range must satisfy 0 <= min <= max <= 180");
        }
        if !(0.0..=90.0).contains(&self.pitch_limit) {
            return bad("pitch limit must lie in [0, 90]");
        }
        Ok(())
    }

    pub fn n_avoiding(&self) -> usize {
        (self.n_trajectories as f64 * self.avoid_ratio).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scene_id: String,
    pub index: usize,
    pub designated_target: String,
    pub poses: Vec<ViewPose>,
    pub avoiding: bool,
}

fn sample_pose(r: &mut impl Rng, prev: Option<&ViewPose>, p: &TrajectoryParams) -> ViewPose {
    let phi = match prev {
        None => r.random_range(0.0..360.0),
        Some(prev) => {
            let (lo, hi) = p.azimuth_step;
            let mag = if hi > lo { r.random_range(lo..=hi) } else { lo };
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            wrap_unchecked(prev.phi() + sign * mag)
        }
    };
    let gamma = if p.pitch_limit > 0.0 {
        r.random_range(-p.pitch_limit..=p.pitch_limit)
    } else {
        0.0
    };
    ViewPose::new(phi, gamma).expect("sampled pose in range")
}

/// Seeded random-walk trajectories; the first `floor(n · avoid_ratio)` are
/// target-avoiding. Designated targets cycle through the scene's first
/// three targets.
pub fn synthesize_trajectories(
    scene: &SceneAnnotation,
    params: &TrajectoryParams,
) -> Result<Vec<Trajectory>, DataError> {
    params.validate()?;
    if scene.targets.is_empty() {
        return Err(DataError::NoTargets(scene.scene_id.clone()));
    }
    let designated = &scene.targets[..scene.targets.len().min(MAX_DESIGNATED_TARGETS)];
    let n_avoid = params.n_avoiding();
    let scene_seed = keyed_seed(&scene.scene_id, &[params.seed]);
    (0..params.n_trajectories)
        .map(|index| {
            let target = &designated[index % designated.len()];
            let avoiding = index < n_avoid;
            let mut r = rng(derive_seed(scene_seed, &[index as u64]));
            let mut poses: Vec<ViewPose> = Vec::with_capacity(params.length);
            for _ in 0..params.length {
                let mut tries = 0;
                let pose = loop {
                    let candidate = sample_pose(&mut r, poses.last(), params);
                    if !avoiding || !within_fov(&target.coord, &candidate, &params.fov) {
                        break candidate;
                    }
                    tries += 1;
                    if tries >= params.rejection_budget {
                        return Err(DataError::RejectionBudget {
                            scene_id: scene.scene_id.clone(),
                            target: target.label.clone(),
                            budget: params.rejection_budget,
                        });
                    }
                };
                poses.push(pose);
            }
            Ok(Trajectory {
                scene_id: scene.scene_id.clone(),
                index,
                designated_target: target.label.clone(),
                poses,
                avoiding,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub scene_id: String,
    pub instruction: String,
    pub designated_target: String,
    pub avoiding: bool,
    pub revealed: Vec<ViewPose>,
    pub observed: Vec<LabeledCoord>,
    pub imagined: Vec<LabeledCoord>,
    pub suggest_target: Direction,
}

impl TrainingSample {
    pub fn target_output(&self) -> ImaginationOutput {
        ImaginationOutput {
            observed: self.observed.clone(),
            imagined: self.imagined.clone(),
            suggest: self.suggest_target,
            clamped: false,
        }
    }
}

/// One sample per prefix length, each with the layout re-partitioned over
/// the revealed views.
pub fn expand_trajectory(
    scene: &SceneAnnotation,
    traj: &Trajectory,
    prefix_lengths: &[usize],
    fov: &FoVSpec,
) -> Result<Vec<TrainingSample>, DataError> {
    let target = scene
        .targets
        .iter()
        .find(|t| t.label == traj.designated_target)
        .ok_or_else(|| DataError::Params(format!("unknown designated target '{}'", traj.designated_target)))?;
    let entities = scene.entities_with(target);
    prefix_lengths
        .iter()
        .map(|&n| {
            if n == 0 || n > traj.poses.len() {
                return Err(DataError::Params(format!(
                    "prefix length {n} outside 1..={}",
                    traj.poses.len()
                )));
            }
            let revealed = traj.poses[..n].to_vec();
            let (visible, hidden) = partition_entities(&entities, &revealed, fov);
            Ok(TrainingSample {
                scene_id: scene.scene_id.clone(),
                instruction: target.instruction.clone(),
                designated_target: target.label.clone(),
                avoiding: traj.avoiding,
                revealed,
                observed: visible.into_iter().map(LabeledCoord::from).collect(),
                imagined: hidden.into_iter().map(LabeledCoord::from).collect(),
                suggest_target: target.coord,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealedView {
    pub phi: f64,
    pub gamma: f64,
}

/// On-disk form of a training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: String,
    pub instruction: String,
    pub revealed: Vec<RevealedView>,
    pub target_text: String,
}

pub fn sample_record(s: &TrainingSample) -> SampleRecord {
    SampleRecord {
        scene_id: s.scene_id.clone(),
        instruction: s.instruction.clone(),
        revealed: s
            .revealed
            .iter()
            .map(|p| RevealedView {
                phi: p.phi(),
                gamma: p.gamma(),
            })
            .collect(),
        target_text: format_imagination(&s.target_output()),
    }
}

/// One JSON line, without the trailing newline.
pub fn serialize_sample(s: &TrainingSample) -> String {
    serde_json::to_string(&sample_record(s)).expect("sample records serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub trajectories: TrajectoryParams,
    pub prefix_lengths: Vec<usize>,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            trajectories: TrajectoryParams::default(),
            prefix_lengths: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub trajectories: usize,
    pub samples: usize,
    pub avoiding_fraction: f64,
}

/// Trajectories and samples for one scene.
#[derive(Debug, Clone)]
pub struct SceneSamples {
    pub scene_id: String,
    pub trajectories: Vec<Trajectory>,
    pub samples: Vec<TrainingSample>,
}

pub fn generate_scene(scene: &SceneAnnotation, params: &DatasetParams) -> Result<SceneSamples, DataError> {
    let trajectories = synthesize_trajectories(scene, &params.trajectories)?;
    let mut samples = Vec::with_capacity(trajectories.len() * params.prefix_lengths.len());
    for t in &trajectories {
        samples.extend(expand_trajectory(scene, t, &params.prefix_lengths, &params.trajectories.fov)?);
    }
    Ok(SceneSamples {
        scene_id: scene.scene_id.clone(),
        trajectories,
        samples,
    })
}

pub fn shard_name(scene_id: &str) -> String {
    format!("samples-{scene_id}.jsonl")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Generates every scene in parallel, writing one shard per scene plus
/// `summary.json` into `out_dir`.
pub fn generate_dataset(
    scenes: &[SceneAnnotation],
    params: &DatasetParams,
    out_dir: &Path,
) -> Result<DatasetSummary, DataError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut per_scene: Vec<(String, usize, usize, usize)> = scenes
        .par_iter()
        .map(|scene| {
            let generated = generate_scene(scene, params)?;
            let path = out_dir.join(shard_name(&scene.scene_id));
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            for s in &generated.samples {
                writeln!(w, "{}", serialize_sample(s)).map_err(io_err(&path))?;
            }
            w.flush().map_err(io_err(&path))?;
            let avoiding = generated.trajectories.iter().filter(|t| t.avoiding).count();
            Ok((
                generated.scene_id,
                generated.trajectories.len(),
                avoiding,
                generated.samples.len(),
            ))
        })
        .collect::<Result<_, DataError>>()?;
    per_scene.sort_by(|a, b| a.0.cmp(&b.0));
    let trajectories: usize = per_scene.iter().map(|s| s.1).sum();
    let avoiding: usize = per_scene.iter().map(|s| s.2).sum();
    let summary = DatasetSummary {
        scenes: per_scene.len(),
        trajectories,
        samples: per_scene.iter().map(|s| s.3).sum(),
        avoiding_fraction: if trajectories == 0 {
            0.0
        } else {
            avoiding as f64 / trajectories as f64
        },
    };
    let path = out_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")
        .map_err(io_err(&path))?;
    Ok(summary)
}
