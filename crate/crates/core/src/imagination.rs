//! The imaginator side of the search loop: its structured text output, the
//! temperature schedule for sampling several hypotheses per step, and two
//! backends (a ground-truth oracle and a remote model client).

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Direction, FoVSpec, ViewPose};
use crate::panorama::{partition_entities, NFoVObservation, SceneAnnotation, SemanticEntity};
use crate::seeding::{derive_seed, rng};
use crate::wire::{self, BackendError, HttpClient, ImagineRequest, TextResponse, WireSampling, WireView};

pub const OBSERVED_HEADER: &str = "[Observed]";
pub const IMAGINED_HEADER: &str = "[Imagined]";
pub const SUGGEST_PREFIX: &str = "Suggest Check";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCoord {
    pub label: String,
    pub coord: Direction,
}

impl From<&SemanticEntity> for LabeledCoord {
    fn from(e: &SemanticEntity) -> Self {
        Self {
            label: e.label.clone(),
            coord: e.coord,
        }
    }
}

/// Parsed imaginator output: the layout it believes it has seen, the layout
/// it imagines elsewhere, and where it suggests looking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImaginationOutput {
    pub observed: Vec<LabeledCoord>,
    pub imagined: Vec<LabeledCoord>,
    pub suggest: Direction,
    /// Set when any elevation in the text fell outside `[-90, 90]` and was clamped.
    #[serde(default)]
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImaginationParseError {
    #[error("line {line}: malformed coordinate pair in {text:?}")]
    Coordinate { line: usize, text: String },
    #[error("line {line}: entity line outside a section or without label: {text:?}")]
    Entity { line: usize, text: String },
    #[error("line {line}: unexpected text {text:?}")]
    Unexpected { line: usize, text: String },
    #[error("line {line}: missing 'Suggest Check' line")]
    MissingSuggest { line: usize },
}

impl ImaginationParseError {
    pub fn line(&self) -> usize {
        match self {
            Self::Coordinate { line, .. }
            | Self::Entity { line, .. }
            | Self::Unexpected { line, .. }
            | Self::MissingSuggest { line } => *line,
        }
    }
}

fn scan_number(s: &str) -> Option<(f64, usize)> {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = i - int_start;
    let mut frac_digits = 0;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let f = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        frac_digits = i - f;
    }
    if int_digits + frac_digits == 0 {
        return None;
    }
    s[..i].parse().ok().map(|v| (v, i))
}

fn skip_ws(s: &str, i: usize) -> usize {
    i + (s[i..].len() - s[i..].trim_start().len())
}

/// Parses `(<number>, <number>)` at the start of `s` (leading whitespace
/// allowed). Returns the pair and the number of bytes consumed.
pub(crate) fn parse_pair(s: &str) -> Option<((f64, f64), usize)> {
    let mut i = skip_ws(s, 0);
    if !s[i..].starts_with('(') {
        return None;
    }
    i = skip_ws(s, i + 1);
    let (a, n) = scan_number(&s[i..])?;
    i = skip_ws(s, i + n);
    if !s[i..].starts_with(',') {
        return None;
    }
    i = skip_ws(s, i + 1);
    let (b, n) = scan_number(&s[i..])?;
    i = skip_ws(s, i + n);
    if !s[i..].starts_with(')') {
        return None;
    }
    Some(((a, b), i + 1))
}

fn header_matches(line: &str, header: &str) -> bool {
    let squash = |s: &str| s.split_whitespace().collect::<String>().to_ascii_lowercase();
    squash(line) == squash(header)
}

fn strip_suggest(line: &str) -> Option<&str> {
    let mut words = line.split_whitespace();
    let first = words.next()?;
    let second = words.next()?;
    if !first.eq_ignore_ascii_case("suggest") || !second.to_ascii_lowercase().starts_with("check") {
        return None;
    }
    let idx = line.to_ascii_lowercase().find("check")? + "check".len();
    Some(&line[idx..])
}

fn parse_coordinate(text: &str, line: usize, full: &str) -> Result<(Direction, bool), ImaginationParseError> {
    let err = || ImaginationParseError::Coordinate {
        line,
        text: full.to_string(),
    };
    let ((phi, mu), used) = parse_pair(text).ok_or_else(err)?;
    if !text[used..].trim().is_empty() {
        return Err(err());
    }
    Direction::new_clamped(phi, mu).map_err(|_| err())
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Observed,
    Imagined,
}

/// Parses imaginator text. Headers are case- and whitespace-tolerant;
/// coordinate pairs are strict. Lines after `Suggest Check` are ignored.
pub fn parse_imagination(text: &str) -> Result<ImaginationOutput, ImaginationParseError> {
    let mut section = Section::Preamble;
    let mut observed = Vec::new();
    let mut imagined = Vec::new();
    let mut clamped = false;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if header_matches(line, OBSERVED_HEADER) {
            section = Section::Observed;
            continue;
        }
        if header_matches(line, IMAGINED_HEADER) {
            section = Section::Imagined;
            continue;
        }
        if let Some(rest) = strip_suggest(line) {
            let (suggest, c) = parse_coordinate(rest, line_no, line)?;
            return Ok(ImaginationOutput {
                observed,
                imagined,
                suggest,
                clamped: clamped || c,
            });
        }
        if let Some(body) = line.strip_prefix('-') {
            let bad_entity = || ImaginationParseError::Entity {
                line: line_no,
                text: line.to_string(),
            };
            if section == Section::Preamble {
                return Err(bad_entity());
            }
            let colon = body.rfind(':').ok_or_else(bad_entity)?;
            let label = body[..colon].trim();
            if label.is_empty() {
                return Err(bad_entity());
            }
            let (coord, c) = parse_coordinate(&body[colon + 1..], line_no, line)?;
            clamped |= c;
            let entry = LabeledCoord {
                label: label.to_string(),
                coord,
            };
            match section {
                Section::Observed => observed.push(entry),
                _ => imagined.push(entry),
            }
            continue;
        }
        return Err(ImaginationParseError::Unexpected {
            line: line_no,
            text: line.to_string(),
        });
    }
    Err(ImaginationParseError::MissingSuggest { line: last_line + 1 })
}

/// Renders an output in the imagination grammar with full-precision numbers,
/// so that `parse_imagination(format_imagination(x)) == x`.
pub fn format_imagination(out: &ImaginationOutput) -> String {
    let mut s = String::new();
    s.push_str(OBSERVED_HEADER);
    s.push('\n');
    for e in &out.observed {
        s.push_str(&format!("- {}: ({}, {})\n", e.label, e.coord.phi(), e.coord.mu()));
    }
    s.push_str(IMAGINED_HEADER);
    s.push('\n');
    for e in &out.imagined {
        s.push_str(&format!("- {}: ({}, {})\n", e.label, e.coord.phi(), e.coord.mu()));
    }
    s.push_str(&format!(
        "{SUGGEST_PREFIX} ({}, {})",
        out.suggest.phi(),
        out.suggest.mu()
    ));
    s
}

/// Greedy-anchor-plus-stochastic sampling schedule with per-step decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub k_candidates: usize,
    pub top_k: u32,
    pub t1: f64,
    pub decay: f64,
    pub stochastic_steps: u32,
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        Self {
            k_candidates: 3,
            top_k: 50,
            t1: 0.7,
            decay: 0.85,
            stochastic_steps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid sampling schedule: {0}")]
pub struct ScheduleError(String);

impl SamplingSchedule {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.k_candidates < 1 {
            return Err(ScheduleError("k_candidates must be >= 1".into()));
        }
        if !(self.t1 >= 0.0 && self.t1.is_finite()) {
            return Err(ScheduleError("t1 must be finite and >= 0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(ScheduleError("decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// `t1 · decay^(step-1)`, built by repeated multiplication so that
    /// consecutive steps differ by exactly one factor of `decay`.
    pub fn temperature_at(&self, step: u32) -> f64 {
        let mut t = self.t1;
        for _ in 1..step {
            t *= self.decay;
        }
        t
    }
}

/// Greedy-first temperatures for `step` (1-based): a single `0` once the
/// stochastic window has passed, otherwise `0` followed by `k - 1` copies of
/// the decayed temperature.
pub fn schedule_temperatures(step: u32, schedule: &SamplingSchedule) -> Vec<f64> {
    if step > schedule.stochastic_steps {
        return vec![0.0];
    }
    let t = schedule.temperature_at(step.max(1));
    std::iter::once(0.0)
        .chain(std::iter::repeat_n(t, schedule.k_candidates.saturating_sub(1)))
        .collect()
}

/// Everything a backend may need for one imagination call.
#[derive(Debug, Clone, Copy)]
pub struct ImagineQuery<'a> {
    pub scene: &'a SceneAnnotation,
    pub instruction: &'a str,
    pub history: &'a [ViewPose],
    pub observations: &'a [NFoVObservation],
    pub temperature: f64,
    pub top_k: u32,
    pub seed: u64,
}

pub trait Imaginator: Send + Sync {
    fn imagine(&self, query: &ImagineQuery<'_>) -> Result<ImaginationOutput, BackendError>;

    /// Whether the backend reads rendered pixels.
    fn needs_images(&self) -> bool {
        false
    }

    /// Short description for reports and config fingerprints.
    fn describe(&self) -> String;
}

/// Ground-truth imaginator: reports the true layout split by visibility and
/// suggests the true target, perturbed by Gaussian noise whose spread grows
/// linearly with temperature (`sigma0 · T / t_ref`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleImaginator {
    pub sigma0: f64,
    pub t_ref: f64,
    pub fov: FoVSpec,
}

impl OracleImaginator {
    pub fn new(sigma0: f64, t_ref: f64, fov: FoVSpec) -> Self {
        Self { sigma0, t_ref, fov }
    }

    pub fn sigma_for(&self, temperature: f64) -> f64 {
        if temperature <= 0.0 || self.t_ref <= 0.0 {
            0.0
        } else {
            self.sigma0 * temperature / self.t_ref
        }
    }
}

fn most_salient<'a>(entities: impl Iterator<Item = &'a SemanticEntity>) -> Option<&'a SemanticEntity> {
    // first maximum wins ties
    entities.fold(None, |best: Option<&SemanticEntity>, e| match best {
        Some(b) if b.salience >= e.salience => Some(b),
        _ => Some(e),
    })
}

pub fn oracle_imagine(
    oracle: &OracleImaginator,
    scene: &SceneAnnotation,
    history: &[ViewPose],
    instruction: &str,
    temperature: f64,
    seed: u64,
) -> Result<ImaginationOutput, BackendError> {
    if scene.entities.is_empty() {
        return Err(BackendError::Local(format!("scene '{}' has no entities", scene.scene_id)));
    }
    let target = scene.find_target(instruction);
    let entities = match target {
        Some(t) => scene.entities_with(t),
        None => scene.entities.clone(),
    };
    let (visible, hidden) = partition_entities(&entities, history, &oracle.fov);
    let truth = match target {
        Some(t) => t.coord,
        None => most_salient(hidden.iter().copied())
            .or_else(|| most_salient(entities.iter()))
            .expect("non-empty entity list")
            .coord,
    };
    let sigma = oracle.sigma_for(temperature);
    let suggest = if sigma == 0.0 {
        truth
    } else {
        let normal = Normal::new(0.0, sigma).map_err(|e| BackendError::Local(e.to_string()))?;
        let mut r = rng(seed);
        let dphi = normal.sample(&mut r);
        let dmu = normal.sample(&mut r);
        Direction::new_clamped(truth.phi() + dphi, truth.mu() + dmu)
            .expect("finite noisy coordinate")
            .0
    };
    Ok(ImaginationOutput {
        observed: visible.into_iter().map(LabeledCoord::from).collect(),
        imagined: hidden.into_iter().map(LabeledCoord::from).collect(),
        suggest,
        clamped: false,
    })
}

impl Imaginator for OracleImaginator {
    fn imagine(&self, q: &ImagineQuery<'_>) -> Result<ImaginationOutput, BackendError> {
        oracle_imagine(self, q.scene, q.history, q.instruction, q.temperature, q.seed)
    }

    fn describe(&self) -> String {
        format!("oracle(sigma0={}, t_ref={})", self.sigma0, self.t_ref)
    }
}

/// Client for an imaginator served over HTTP.
pub struct RemoteImaginator {
    client: HttpClient,
    url: String,
    send_routing: bool,
}

impl RemoteImaginator {
    /// `endpoint` may be a base URL or the full `/v1/imagine` URL.
    pub fn new(endpoint: &str, client: HttpClient) -> Self {
        Self {
            client,
            url: wire::endpoint_url(endpoint, wire::IMAGINE_PATH),
            send_routing: true,
        }
    }

    /// Whether to include the optional `scene_id`/`seed` routing fields.
    pub fn with_routing(mut self, on: bool) -> Self {
        self.send_routing = on;
        self
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }

    pub fn build_request(&self, q: &ImagineQuery<'_>) -> ImagineRequest {
        ImagineRequest {
            instruction: q.instruction.to_string(),
            views: q
                .observations
                .iter()
                .map(|o| WireView {
                    phi: o.pose.phi(),
                    gamma: o.pose.gamma(),
                    image_png_base64: wire::encode_png_base64(&o.image),
                })
                .collect(),
            sampling: WireSampling {
                temperature: q.temperature,
                top_k: q.top_k,
            },
            scene_id: self.send_routing.then(|| q.scene.scene_id.clone()),
            seed: self.send_routing.then_some(q.seed),
            request_id: None,
        }
    }

    pub fn send(&self, request: &ImagineRequest) -> Result<ImaginationOutput, BackendError> {
        let reply: TextResponse = self.client.post_json(&self.url, request)?;
        parse_imagination(&reply.text).map_err(|e| BackendError::Parse {
            message: e.to_string(),
            raw: reply.text,
        })
    }
}

impl Imaginator for RemoteImaginator {
    fn imagine(&self, q: &ImagineQuery<'_>) -> Result<ImaginationOutput, BackendError> {
        self.send(&self.build_request(q))
    }

    fn needs_images(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("remote({})", self.url)
    }
}

/// Imagination output paired with the temperature that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub output: ImaginationOutput,
    pub temperature: f64,
}

/// The hypotheses sampled at one step, greedy anchor first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub step: u32,
    pub temperatures: Vec<f64>,
    pub hypotheses: Vec<Hypothesis>,
    pub warnings: Vec<String>,
}

/// Samples one hypothesis per scheduled temperature (concurrently), keeping
/// greedy-first order. Stochastic failures are dropped with a warning; a
/// failed greedy call fails the step.
pub fn imagine_step(
    backend: &dyn Imaginator,
    base: &ImagineQuery<'_>,
    step: u32,
    schedule: &SamplingSchedule,
    seed: u64,
) -> Result<HypothesisSet, BackendError> {
    let temperatures = schedule_temperatures(step, schedule);
    let results: Vec<_> = temperatures
        .par_iter()
        .enumerate()
        .map(|(rank, &temperature)| {
            let q = ImagineQuery {
                temperature,
                top_k: schedule.top_k,
                seed: derive_seed(seed, &[step as u64, rank as u64]),
                ..*base
            };
            backend.imagine(&q)
        })
        .collect();
    let mut hypotheses = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for (rank, (result, &temperature)) in results.into_iter().zip(&temperatures).enumerate() {
        match result {
            Ok(output) => hypotheses.push(Hypothesis { output, temperature }),
            Err(e) if rank == 0 => return Err(e),
            Err(e) => {
                log::warn!("step {step}: hypothesis {} dropped: {e}", rank + 1);
                warnings.push(format!("hypothesis {} dropped: {e}", rank + 1));
            }
        }
    }
    Ok(HypothesisSet {
        step,
        temperatures,
        hypotheses,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panorama::{AngularBox, Difficulty, TargetSpec, TaskKind};
    use std::path::PathBuf;
    use std::sync::atomic::{AtomicUsize, Ordering};

    const VERBATIM: &str = "[Observed]\n- picture frames: (274, 16)\n[Imagined]\n- window with outdoor view: (166, 9)\nSuggest Check (166, 9)";

    fn d(phi: f64, mu: f64) -> Direction {
        Direction::new(phi, mu).unwrap()
    }

    fn scene() -> SceneAnnotation {
        let e = |label: &str, phi, mu, salience| SemanticEntity {
            label: label.into(),
            coord: d(phi, mu),
            salience,
        };
        SceneAnnotation {
            scene_id: "s1".into(),
            pano_path: PathBuf::from("p.png"),
            category: "living room".into(),
            entities: vec![
                e("sofa", 10.0, -10.0, 3),
                e("lamp", 200.0, 5.0, 4),
                e("clock", 300.0, 20.0, 4),
                e("red mug", 120.0, 5.0, 2),
            ],
            targets: vec![TargetSpec {
                label: "red mug".into(),
                instruction: "find the red mug".into(),
                coord: d(120.0, 5.0),
                bbox: AngularBox {
                    phi_min: 115.0,
                    phi_max: 125.0,
                    mu_min: 0.0,
                    mu_max: 10.0,
                },
                difficulty: Difficulty::Easy,
                task: TaskKind::ObjectSearch,
            }],
        }
    }

    fn oracle() -> OracleImaginator {
        OracleImaginator::new(20.0, 0.7, FoVSpec::new(100.0, 83.58).unwrap())
    }

    fn pose(phi: f64, gamma: f64) -> ViewPose {
        ViewPose::new(phi, gamma).unwrap()
    }

    #[test]
    fn parses_verbatim_example() {
        let out = parse_imagination(VERBATIM).unwrap();
        assert_eq!(out.observed, vec![LabeledCoord { label: "picture frames".into(), coord: d(274.0, 16.0) }]);
        assert_eq!(out.imagined, vec![LabeledCoord { label: "window with outdoor view".into(), coord: d(166.0, 9.0) }]);
        assert_eq!(out.suggest, d(166.0, 9.0));
        assert!(!out.clamped);
    }

    #[test]
    fn parser_edge_cases() {
        let empty = parse_imagination("[Observed]\n[Imagined]\nSuggest Check (1.5, -2)").unwrap();
        assert!(empty.observed.is_empty() && empty.imagined.is_empty());
        assert_eq!(empty.suggest, d(1.5, -2.0));

        let err = parse_imagination("[Observed]\n- a: (1, 2)\n[Imagined]").unwrap_err();
        assert_eq!(err, ImaginationParseError::MissingSuggest { line: 4 });

        let tolerant = parse_imagination("  [ observed ]\n- a:b: (370, 95)\n[IMAGINED]\nsuggest check(-10, 0)").unwrap();
        assert_eq!(tolerant.observed[0].label, "a:b");
        assert_eq!(tolerant.observed[0].coord, d(10.0, 90.0));
        assert!(tolerant.clamped);
        assert_eq!(tolerant.suggest, d(350.0, 0.0));

        let bad = parse_imagination("[Observed]\n- a: (1; 2)\nSuggest Check (1, 2)").unwrap_err();
        assert_eq!(bad.line(), 2);
        assert!(matches!(bad, ImaginationParseError::Coordinate { .. }));
        let bad = parse_imagination("[Observed]\nSuggest Check (1, 2e3)").unwrap_err();
        assert_eq!(bad.line(), 2);
        assert!(matches!(parse_imagination("- a: (1, 2)\nSuggest Check (1, 2)"), Err(ImaginationParseError::Entity { line: 1, .. })));
        assert!(matches!(parse_imagination("[Observed]\nhello\nSuggest Check (1, 2)"), Err(ImaginationParseError::Unexpected { line: 2, .. })));
        assert!(matches!(parse_imagination("[Observed]\n- : (1, 2)\nSuggest Check (1, 2)"), Err(ImaginationParseError::Entity { .. })));
    }

    #[test]
    fn format_roundtrips() {
        let out = parse_imagination(VERBATIM).unwrap();
        assert_eq!(format_imagination(&out), VERBATIM);
        let tricky = ImaginationOutput {
            observed: vec![],
            imagined: vec![LabeledCoord { label: "x".into(), coord: d(0.1 + 0.2, -1e-7) }],
            suggest: d(359.99999999999994, 89.99999999),
            clamped: false,
        };
        assert_eq!(parse_imagination(&format_imagination(&tricky)).unwrap(), tricky);
    }

    #[test]
    fn schedule_examples() {
        let s = SamplingSchedule::default();
        assert_eq!(schedule_temperatures(1, &s), vec![0.0, 0.7, 0.7]);
        let t2 = schedule_temperatures(2, &s);
        assert!((t2[1] - 0.595).abs() < 1e-12 && t2[1] == t2[2] && t2[0] == 0.0);
        let t3 = schedule_temperatures(3, &s);
        assert!((t3[1] - 0.50575).abs() < 1e-12);
        assert_eq!(schedule_temperatures(4, &s), vec![0.0]);
        let one = SamplingSchedule { k_candidates: 1, ..s.clone() };
        assert_eq!(schedule_temperatures(1, &one), vec![0.0]);
        assert!(SamplingSchedule { decay: 0.0, ..s.clone() }.validate().is_err());
        assert!(SamplingSchedule { k_candidates: 0, ..s.clone() }.validate().is_err());
        assert!(s.validate().is_ok());
        for step in 1..3 {
            assert_eq!(s.temperature_at(step + 1), s.decay * s.temperature_at(step));
        }
    }

    #[test]
    fn oracle_examples() {
        let sc = scene();
        let h = [pose(0.0, 0.0)];
        let exact = oracle_imagine(&oracle(), &sc, &h, "find the red mug", 0.0, 1).unwrap();
        assert_eq!(exact.suggest, d(120.0, 5.0));
        assert_eq!(exact, oracle_imagine(&oracle(), &sc, &h, "find the red mug", 0.0, 999).unwrap());

        let noisy = oracle_imagine(&oracle(), &sc, &h, "find the red mug", 0.7, 42).unwrap();
        assert_eq!(noisy, oracle_imagine(&oracle(), &sc, &h, "find the red mug", 0.7, 42).unwrap());
        assert!(noisy.suggest.angular_distance(&d(120.0, 5.0)) <= 4.0 * 20.0 * 2f64.sqrt());
        assert_ne!(noisy.suggest, d(120.0, 5.0));

        let labels = |v: &[LabeledCoord]| v.iter().map(|e| e.label.clone()).collect::<Vec<_>>();
        assert_eq!(labels(&exact.observed), vec!["sofa"]);
        assert_eq!(labels(&exact.imagined), vec!["lamp", "clock", "red mug"]);
        let seen = oracle_imagine(&oracle(), &sc, &[pose(0.0, 0.0), pose(120.0, 0.0)], "find the red mug", 0.0, 1).unwrap();
        assert!(labels(&seen.observed).contains(&"red mug".to_string()));
    }

    #[test]
    fn oracle_fallback() {
        let sc = scene();
        // lamp and clock tie on salience; the first hidden one wins
        let out = oracle_imagine(&oracle(), &sc, &[pose(0.0, 0.0)], "walk to the exit", 0.0, 1).unwrap();
        assert_eq!(out.suggest, d(200.0, 5.0));
        let all = [pose(0.0, 0.0), pose(90.0, 0.0), pose(180.0, 0.0), pose(270.0, 0.0)];
        let out = oracle_imagine(&oracle(), &sc, &all, "walk to the exit", 0.0, 1).unwrap();
        assert_eq!(out.suggest, d(200.0, 5.0));
        let mut empty = sc.clone();
        empty.entities.clear();
        assert!(oracle_imagine(&oracle(), &empty, &all, "x", 0.0, 1).is_err());
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_seed: u64,
    }

    impl Imaginator for Flaky {
        fn imagine(&self, q: &ImagineQuery<'_>) -> Result<ImaginationOutput, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if q.seed == self.fail_seed {
                return Err(BackendError::Status { status: 500, body: "boom".into() });
            }
            oracle().imagine(q)
        }
        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    #[test]
    fn step_composition() {
        let sc = scene();
        let h = [pose(0.0, 0.0)];
        let q = ImagineQuery {
            scene: &sc,
            instruction: "find the red mug",
            history: &h,
            observations: &[],
            temperature: 0.0,
            top_k: 50,
            seed: 0,
        };
        let s = SamplingSchedule::default();
        let set = imagine_step(&oracle(), &q, 1, &s, 7).unwrap();
        assert_eq!(set.hypotheses.len(), 3);
        assert_eq!(set.hypotheses[0].temperature, 0.0);
        assert_eq!(set.hypotheses[0].output.suggest, d(120.0, 5.0));
        assert_eq!(set, imagine_step(&oracle(), &q, 1, &s, 7).unwrap());
        assert_eq!(imagine_step(&oracle(), &q, 5, &s, 7).unwrap().hypotheses.len(), 1);

        let flaky = Flaky { calls: AtomicUsize::new(0), fail_seed: derive_seed(7, &[1, 2]) };
        let set = imagine_step(&flaky, &q, 1, &s, 7).unwrap();
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
        assert_eq!(set.hypotheses.len(), 2);
        assert_eq!(set.warnings.len(), 1);
        assert_eq!(set.hypotheses[0].temperature, 0.0);
        let greedy_fail = Flaky { calls: AtomicUsize::new(0), fail_seed: derive_seed(7, &[1, 0]) };
        assert!(imagine_step(&greedy_fail, &q, 1, &s, 7).is_err());
    }
}
