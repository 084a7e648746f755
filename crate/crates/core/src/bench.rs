//! Batch evaluation over a set of scenes: runs every (scene, target, seed)
//! episode on a worker pool and aggregates success rates and step counts.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::actor::Actor;
use crate::episode::{EpisodeConfig, EpisodeResult, EpisodeRunner, StepRecord, Termination};
use crate::imagination::Imaginator;
use crate::panorama::{Difficulty, Scene, TaskKind};
use crate::plots::StepHistogram;
use crate::seeding::keyed_seed;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("manifest contains no scenes")]
    EmptyManifest,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub episodes: usize,
    pub successes: usize,
    pub rate: Option<f64>,
}

impl RateEntry {
    fn from_iter<'a>(results: impl Iterator<Item = &'a EpisodeResult>) -> Self {
        let (mut episodes, mut successes) = (0, 0);
        for r in results {
            episodes += 1;
            successes += r.success as usize;
        }
        Self {
            episodes,
            successes,
            rate: (episodes > 0).then(|| successes as f64 / episodes as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRates {
    pub easy: RateEntry,
    pub medium: RateEntry,
    pub hard: RateEntry,
    pub extreme: RateEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRates {
    #[serde(rename = "HOS")]
    pub hos: RateEntry,
    #[serde(rename = "HPS")]
    pub hps: RateEntry,
}

/// Aggregate results of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub episodes: usize,
    pub backend_errors: usize,
    pub overall: RateEntry,
    pub by_difficulty: DifficultyRates,
    pub by_task: TaskRates,
    pub step_histogram: StepHistogram,
    pub mean_steps_success: Option<f64>,
    pub median_steps_success: Option<f64>,
    /// Median of `steps_used` over all episodes (failures included).
    pub median_terminal_step: Option<f64>,
    pub imaginator: String,
    pub actor: String,
    pub config_fingerprint: String,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

impl BenchReport {
    pub fn from_results(
        results: &[EpisodeResult],
        max_steps: u32,
        imaginator: String,
        actor: String,
        config_fingerprint: String,
    ) -> Self {
        let by_diff = |d: Difficulty| RateEntry::from_iter(results.iter().filter(|r| r.difficulty == d));
        let by_task = |t: TaskKind| RateEntry::from_iter(results.iter().filter(|r| r.task == t));
        let mut success_steps: Vec<f64> = results
            .iter()
            .filter(|r| r.success)
            .map(|r| r.steps_used as f64)
            .collect();
        let mut all_steps: Vec<f64> = results.iter().map(|r| r.steps_used as f64).collect();
        let mean = (!success_steps.is_empty())
            .then(|| success_steps.iter().sum::<f64>() / success_steps.len() as f64);
        Self {
            episodes: results.len(),
            backend_errors: results
                .iter()
                .filter(|r| r.termination == Termination::BackendError)
                .count(),
            overall: RateEntry::from_iter(results.iter()),
            by_difficulty: DifficultyRates {
                easy: by_diff(Difficulty::Easy),
                medium: by_diff(Difficulty::Medium),
                hard: by_diff(Difficulty::Hard),
                extreme: by_diff(Difficulty::Extreme),
            },
            by_task: TaskRates {
                hos: by_task(TaskKind::ObjectSearch),
                hps: by_task(TaskKind::PathSearch),
            },
            step_histogram: StepHistogram::from_results(results, max_steps),
            mean_steps_success: mean,
            median_steps_success: median(&mut success_steps),
            median_terminal_step: median(&mut all_steps),
            imaginator,
            actor,
            config_fingerprint,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let pct = |e: &RateEntry| match e.rate {
            Some(r) => format!("{:>6.2}%  ({}/{})", 100.0 * r, e.successes, e.episodes),
            None => "     -".to_string(),
        };
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        s.push_str(&format!("imaginator: {}\nactor:      {}\nconfig:     {}\n\n", self.imaginator, self.actor, self.config_fingerprint));
        s.push_str(&format!("{:<10} {}\n", "overall", pct(&self.overall)));
        for (name, e) in [
            ("easy", &self.by_difficulty.easy),
            ("medium", &self.by_difficulty.medium),
            ("hard", &self.by_difficulty.hard),
            ("extreme", &self.by_difficulty.extreme),
            ("HOS", &self.by_task.hos),
            ("HPS", &self.by_task.hps),
        ] {
            s.push_str(&format!("{name:<10} {}\n", pct(e)));
        }
        s.push_str(&format!(
            "\nepisodes {}  backend errors {}  mean steps (success) {}  median steps (success) {}  median terminal step {}\n",
            self.episodes,
            self.backend_errors,
            opt(self.mean_steps_success),
            opt(self.median_steps_success),
            opt(self.median_terminal_step)
        ));
        s
    }
}

/// Hash of every setting that affects results.
pub fn config_fingerprint(
    cfg: &EpisodeConfig,
    imaginator: &str,
    actor: &str,
    scene_ids: &[&str],
    seeds: &[u64],
) -> String {
    let mut cfg = cfg.clone();
    cfg.record_latency = false;
    let doc = serde_json::json!({
        "config": cfg,
        "imaginator": imaginator,
        "actor": actor,
        "scenes": scene_ids,
        "seeds": seeds,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Per-episode seed keyed by `(scene_id, target index, run seed)`.
pub fn episode_seed(scene_id: &str, target_index: usize, seed: u64) -> u64 {
    keyed_seed(scene_id, &[target_index as u64, seed])
}

pub struct BenchOutcome {
    pub report: BenchReport,
    pub results: Vec<EpisodeResult>,
}

/// Runs every `(scene, target, seed)` episode. Backend failures are recorded
/// per episode and never abort the run. Results come back in
/// `(scene order, target index, seed order)` regardless of scheduling.
pub fn run_bench(
    scenes: &[Scene],
    imaginator: Option<&dyn Imaginator>,
    actor: &dyn Actor,
    cfg: &EpisodeConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<BenchOutcome, BenchError> {
    if scenes.is_empty() {
        return Err(BenchError::EmptyManifest);
    }
    cfg.validate().map_err(BenchError::Config)?;
    let renderer = cfg.renderer();
    let runner = EpisodeRunner {
        imaginator,
        actor,
        cfg,
        renderer: &renderer,
    };
    let jobs: Vec<(usize, usize, u64)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            (0..s.annotation.targets.len()).flat_map(move |ti| seeds.iter().map(move |&seed| (si, ti, seed)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let results: Vec<EpisodeResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(si, ti, seed)| {
                let scene = &scenes[si];
                runner.run(scene, ti, episode_seed(&scene.annotation.scene_id, ti, seed))
            })
            .collect()
    });
    let imaginator_name = imaginator.map_or_else(|| "none".to_string(), |i| i.describe());
    let actor_name = actor.describe();
    let ids: Vec<&str> = scenes.iter().map(|s| s.annotation.scene_id.as_str()).collect();
    let fingerprint = config_fingerprint(cfg, &imaginator_name, &actor_name, &ids, seeds);
    let report = BenchReport::from_results(&results, cfg.max_steps, imaginator_name, actor_name, fingerprint);
    Ok(BenchOutcome { report, results })
}

pub fn episode_log_name(r: &EpisodeResult) -> String {
    format!("{}__t{}__{:016x}.jsonl", r.scene_id, r.target_index, r.seed)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), BenchError> {
    fs::write(path, contents).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json`, `report.txt`, `histogram.csv`, `histogram.png` and
/// one log file per episode under `logs/`.
pub fn write_outputs(outcome: &BenchOutcome, out_dir: &Path) -> Result<(), BenchError> {
    let logs = out_dir.join("logs");
    fs::create_dir_all(&logs).map_err(|source| BenchError::Io {
        path: logs.clone(),
        source,
    })?;
    for r in &outcome.results {
        write(&logs.join(episode_log_name(r)), r.log_jsonl())?;
    }
    write(&out_dir.join("report.json"), outcome.report.to_json())?;
    write(&out_dir.join("report.txt"), outcome.report.to_table())?;
    let hist = &outcome.report.step_histogram;
    write(&out_dir.join("histogram.csv"), hist.to_csv())?;
    if hist.total() > 0 {
        let png = out_dir.join("histogram.png");
        hist.to_image().save(&png).map_err(|e| BenchError::Io {
            path: png.clone(),
            source: std::io::Error::other(e),
        })?;
    }
    Ok(())
}

/// Reads every `*.jsonl` file under `dir` (sorted by name), returning the
/// parsed step records and the number of lines that failed to parse.
pub fn read_logs(dir: &Path) -> Result<(Vec<StepRecord>, usize), BenchError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BenchError::Io { path, source }
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut records = Vec::new();
    let mut skipped = 0;
    for f in files {
        let text = fs::read_to_string(&f).map_err(io(&f))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<StepRecord>(line) {
                Ok(r) => records.push(r),
                Err(_) => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed log line(s) under {}", dir.display());
    }
    Ok((records, skipped))
}
