//! One search episode: render, imagine, convert, act, move; repeated until a
//! submission or the step budget runs out.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{Actor, ActorContext};
use crate::convert::{convert_batch, format_suggestion_block, Action};
use crate::geometry::{signed_delta_unchecked, within_fov, wrap_unchecked, FoVSpec, ViewPose};
use crate::imagination::{imagine_step, ImagineQuery, Imaginator, SamplingSchedule};
use crate::panorama::{Difficulty, NFoVObservation, Renderer, Scene, TargetSpec, TaskKind};
use crate::seeding::{derive_seed, rng};

pub const DEFAULT_MAX_STEPS: u32 = 10;
pub const DEFAULT_FOV: f64 = 100.0;
pub const DEFAULT_WIDTH: u32 = 960;
pub const DEFAULT_HEIGHT: u32 = 720;

/// Success tolerances in degrees around the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tau_phi_hos: f64,
    pub tau_gamma_hos: f64,
    pub tau_phi_hps: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tau_phi_hos: 30.0,
            tau_gamma_hos: 20.0,
            tau_phi_hps: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPose {
    /// Uniform azimuth, zero pitch, drawn from the episode seed.
    RandomAzimuth,
    Fixed { phi: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: u32,
    pub fov: FoVSpec,
    pub width: u32,
    pub height: u32,
    pub tolerances: Tolerances,
    pub initial_pose: InitialPose,
    pub schedule: SamplingSchedule,
    /// Expose the simulator's "target in view" flag to the actor.
    pub detection: bool,
    /// Measure wall-clock latency per step (makes logs non-reproducible).
    pub record_latency: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            fov: FoVSpec::from_horizontal(DEFAULT_FOV, DEFAULT_WIDTH, DEFAULT_HEIGHT)
                .expect("default FoV is valid"),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            tolerances: Tolerances::default(),
            initial_pose: InitialPose::RandomAzimuth,
            schedule: SamplingSchedule::default(),
            detection: false,
            record_latency: true,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps < 1 {
            return Err("max_steps must be >= 1".into());
        }
        let t = self.tolerances;
        if !(t.tau_phi_hos > 0.0 && t.tau_gamma_hos > 0.0 && t.tau_phi_hps > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err("resolution must be positive".into());
        }
        self.schedule.validate().map_err(|e| e.to_string())
    }

    pub fn renderer(&self) -> Renderer {
        Renderer::new(self.fov, self.width, self.height)
    }
}

/// Applies a relative rotation: azimuth wraps, pitch clamps.
pub fn apply_action(pose: &ViewPose, d_phi: f64, d_gamma: f64) -> ViewPose {
    ViewPose::clamped(wrap_unchecked(pose.phi() + d_phi), pose.gamma() + d_gamma)
        .expect("finite rotation")
}

/// Whether a submitted view counts as finding the target.
pub fn score(target: &TargetSpec, submitted: &ViewPose, tol: &Tolerances) -> bool {
    match target.task {
        TaskKind::ObjectSearch => {
            let c = target.bbox.center();
            signed_delta_unchecked(submitted.phi(), c.phi()).abs() <= tol.tau_phi_hos
                && (submitted.gamma() - c.mu()).abs() <= tol.tau_gamma_hos
        }
        TaskKind::PathSearch => {
            signed_delta_unchecked(submitted.phi(), target.coord.phi()).abs() <= tol.tau_phi_hps
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Submitted,
    BudgetExhausted,
    BackendError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub phi: f64,
    pub gamma: f64,
}

impl From<ViewPose> for PoseRecord {
    fn from(p: ViewPose) -> Self {
        Self {
            phi: p.phi(),
            gamma: p.gamma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub phi: f64,
    pub mu: f64,
    pub temperature: f64,
}

/// One line of the episode log. The terminal line carries `success`,
/// `termination` and `steps_used`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub scene_id: String,
    pub target_label: String,
    pub step: u32,
    pub pose: PoseRecord,
    pub temperatures: Vec<f64>,
    pub hypotheses: Vec<HypothesisRecord>,
    pub suggestions_text: String,
    pub action: Option<Action>,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_used: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: String,
    pub target_index: usize,
    pub target_label: String,
    pub difficulty: Difficulty,
    pub task: TaskKind,
    pub seed: u64,
    pub success: bool,
    pub submitted: Option<PoseRecord>,
    pub steps_used: u32,
    pub termination: Termination,
    pub error: Option<String>,
    pub log: Vec<StepRecord>,
}

impl EpisodeResult {
    /// The log as newline-terminated JSON lines.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log records serialize") + "\n")
            .collect()
    }
}

pub fn initial_pose(cfg: &EpisodeConfig, seed: u64) -> ViewPose {
    match cfg.initial_pose {
        InitialPose::RandomAzimuth => {
            let phi = rng(derive_seed(seed, &[0])).random_range(0.0..360.0);
            ViewPose::new(phi, 0.0).expect("sampled azimuth is finite")
        }
        InitialPose::Fixed { phi, gamma } => ViewPose::clamped(phi, gamma).expect("finite fixed pose"),
    }
}

/// Backends and shared resources for running episodes.
pub struct EpisodeRunner<'a> {
    pub imaginator: Option<&'a dyn Imaginator>,
    pub actor: &'a dyn Actor,
    pub cfg: &'a EpisodeConfig,
    pub renderer: &'a Renderer,
}

impl EpisodeRunner<'_> {
    /// Runs the episode for `scene.targets[target_index]`.
    ///
    /// Without an imaginator the actor receives no suggestions (the unguided
    /// configuration).
    pub fn run(&self, scene: &Scene, target_index: usize, seed: u64) -> EpisodeResult {
        let cfg = self.cfg;
        let annotation = &scene.annotation;
        let target = &annotation.targets[target_index];
        let keep_images = self.actor.needs_images() || self.imaginator.is_some_and(|i| i.needs_images());
        let imagine_seed = derive_seed(seed, &[1]);

        let mut pose = initial_pose(cfg, seed);
        let mut memory: Vec<ViewPose> = Vec::new();
        let mut observations: Vec<NFoVObservation> = Vec::new();
        let mut log = Vec::new();

        let finish = |log: Vec<StepRecord>, termination, success, submitted, steps_used, error| EpisodeResult {
            scene_id: annotation.scene_id.clone(),
            target_index,
            target_label: target.label.clone(),
            difficulty: target.difficulty,
            task: target.task,
            seed,
            success,
            submitted,
            steps_used,
            termination,
            error,
            log,
        };

        for step in 1..=cfg.max_steps {
            let started = Instant::now();
            let observation = self.renderer.observe(&scene.panorama, pose, step);
            let mut history = memory.clone();
            history.push(pose);
            if keep_images {
                observations.push(observation.clone());
            }
            let mut record = StepRecord {
                scene_id: annotation.scene_id.clone(),
                target_label: target.label.clone(),
                step,
                pose: pose.into(),
                temperatures: Vec::new(),
                hypotheses: Vec::new(),
                suggestions_text: String::new(),
                action: None,
                latency_ms: 0.0,
                warnings: Vec::new(),
                success: None,
                termination: None,
                steps_used: None,
            };
            let latency = |started: Instant| {
                if cfg.record_latency {
                    started.elapsed().as_secs_f64() * 1000.0
                } else {
                    0.0
                }
            };
            let fail = |mut record: StepRecord, mut log: Vec<StepRecord>, err: String| {
                record.latency_ms = latency(started);
                record.success = Some(false);
                record.termination = Some(Termination::BackendError);
                record.steps_used = Some(step);
                record.warnings.push(err.clone());
                log.push(record);
                finish(log, Termination::BackendError, false, None, step, Some(err))
            };

            let mut suggestions = Vec::new();
            if let Some(imaginator) = self.imaginator {
                let query = ImagineQuery {
                    scene: annotation,
                    instruction: &target.instruction,
                    history: &history,
                    observations: &observations,
                    temperature: 0.0,
                    top_k: cfg.schedule.top_k,
                    seed: 0,
                };
                let set = match imagine_step(imaginator, &query, step, &cfg.schedule, imagine_seed) {
                    Ok(set) => set,
                    Err(e) => return fail(record, log, format!("imaginator: {e}")),
                };
                record.temperatures = set.temperatures.clone();
                record.warnings.extend(set.warnings.iter().cloned());
                let coords: Vec<_> = set
                    .hypotheses
                    .iter()
                    .map(|h| (h.output.suggest, h.temperature))
                    .collect();
                record.hypotheses = coords
                    .iter()
                    .map(|(d, t)| HypothesisRecord {
                        phi: d.phi(),
                        mu: d.mu(),
                        temperature: *t,
                    })
                    .collect();
                suggestions = convert_batch(&coords, &pose, &cfg.fov);
                record.suggestions_text = format_suggestion_block(&suggestions);
            }

            let ctx = ActorContext {
                instruction: &target.instruction,
                observation: &observation,
                memory: &memory,
                suggestions: &suggestions,
                step,
                target_in_view: cfg.detection.then(|| within_fov(&target.coord, &pose, &cfg.fov)),
            };
            let reply = match self.actor.act(&ctx) {
                Ok(r) => r,
                Err(e) => return fail(record, log, format!("actor: {e}")),
            };
            record.action = Some(reply.action);
            record.latency_ms = latency(started);

            match reply.action {
                Action::Sub { phi, gamma } => {
                    let submitted = ViewPose::clamped(phi, gamma).expect("normalized submission");
                    let success = score(target, &submitted, &cfg.tolerances);
                    record.success = Some(success);
                    record.termination = Some(Termination::Submitted);
                    record.steps_used = Some(step);
                    log.push(record);
                    return finish(log, Termination::Submitted, success, Some(submitted.into()), step, None);
                }
                Action::Rot { d_phi, d_gamma } => {
                    memory.push(pose);
                    pose = apply_action(&pose, d_phi, d_gamma);
                    if step == cfg.max_steps {
                        record.success = Some(false);
                        record.termination = Some(Termination::BudgetExhausted);
                        record.steps_used = Some(step);
                    }
                    log.push(record);
                }
            }
        }
        finish(log, Termination::BudgetExhausted, false, None, cfg.max_steps, None)
    }
}
