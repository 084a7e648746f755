//! Absolute imagined coordinates to ego-centric action primitives, and the
//! ranked suggestion block handed to the actor.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{signed_delta_unchecked, within_fov, wrap_unchecked, Direction, FoVSpec, ViewPose};

pub const SUGGESTION_HEADER: &str = "[Spatial Imagination Suggestions]";

/// Head action: a relative rotation or a terminal submission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args")]
pub enum Action {
    /// Relative rotation; `d_phi` in `(-180, 180]`.
    Rot { d_phi: f64, d_gamma: f64 },
    /// Submit the absolute view `(phi, gamma)` as the answer.
    Sub { phi: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionParseError {
    #[error("unknown primitive in '{0}'")]
    UnknownPrimitive(String),
    #[error("malformed arguments in '{0}'")]
    Malformed(String),
}

impl Action {
    /// Rotation with `d_phi` folded into `(-180, 180]`.
    pub fn rot(d_phi: f64, d_gamma: f64) -> Self {
        Action::Rot {
            d_phi: signed_delta_unchecked(d_phi, 0.0),
            d_gamma: d_gamma + 0.0,
        }
    }

    /// Submission with azimuth wrapped and pitch clamped.
    pub fn sub(phi: f64, gamma: f64) -> Self {
        Action::Sub {
            phi: wrap_unchecked(phi),
            gamma: gamma.clamp(-90.0, 90.0) + 0.0,
        }
    }

    pub fn is_submit(&self) -> bool {
        matches!(self, Action::Sub { .. })
    }

    pub fn args(&self) -> (f64, f64) {
        match *self {
            Action::Rot { d_phi, d_gamma } => (d_phi, d_gamma),
            Action::Sub { phi, gamma } => (phi, gamma),
        }
    }

    /// Renders with one fractional digit, as used in suggestion blocks.
    pub fn to_short_string(&self) -> String {
        let (a, b) = self.args();
        format!("{}({}, {})", self.name(), fixed1(a), fixed1(b))
    }

    fn name(&self) -> &'static str {
        match self {
            Action::Rot { .. } => "Rot",
            Action::Sub { .. } => "Sub",
        }
    }

    /// Parses `Rot(a, b)` or `Sub(a, b)`; primitive names are case-sensitive.
    pub fn parse(text: &str) -> Result<Self, ActionParseError> {
        let t = text.trim();
        let (name, rest) = match t.find('(') {
            Some(i) => (t[..i].trim(), &t[i..]),
            None => return Err(ActionParseError::UnknownPrimitive(t.to_string())),
        };
        let ctor: fn(f64, f64) -> Action = match name {
            "Rot" => Action::rot,
            "Sub" => Action::sub,
            _ => return Err(ActionParseError::UnknownPrimitive(t.to_string())),
        };
        let (a, b) = crate::imagination::parse_pair(rest)
            .filter(|(_, consumed)| rest[*consumed..].trim().is_empty())
            .map(|(pair, _)| pair)
            .ok_or_else(|| ActionParseError::Malformed(t.to_string()))?;
        Ok(ctor(a, b))
    }
}

/// Full-precision form; parses back to the identical action.
impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.args();
        write!(f, "{}({}, {})", self.name(), a, b)
    }
}

fn fixed1(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

/// Maps an imagined coordinate to `Sub` when it already lies in the current
/// view, otherwise to the `Rot` that centres it.
pub fn convert(pred: &Direction, pose: &ViewPose, fov: &FoVSpec) -> Action {
    if within_fov(pred, pose, fov) {
        Action::sub(pred.phi(), pred.mu())
    } else {
        Action::rot(
            signed_delta_unchecked(pred.phi(), pose.phi()),
            pred.mu() - pose.gamma(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSuggestion {
    /// 1-based; rank 1 is the greedy anchor.
    pub rank: usize,
    pub source_coord: Direction,
    pub action: Action,
    pub temperature_used: f64,
}

impl ActionSuggestion {
    pub fn is_greedy(&self) -> bool {
        self.rank == 1
    }
}

/// Converts greedy-first hypotheses, ranking them in input order. No dedup.
pub fn convert_batch(
    coords: &[(Direction, f64)],
    pose: &ViewPose,
    fov: &FoVSpec,
) -> Vec<ActionSuggestion> {
    coords
        .iter()
        .enumerate()
        .map(|(i, (coord, temperature))| ActionSuggestion {
            rank: i + 1,
            source_coord: *coord,
            action: convert(coord, pose, fov),
            temperature_used: *temperature,
        })
        .collect()
}

/// Header line followed by `<rank>. <Action>` lines, no trailing newline.
/// Returns an empty string for an empty list.
pub fn format_suggestion_block(suggestions: &[ActionSuggestion]) -> String {
    if suggestions.is_empty() {
        return String::new();
    }
    let mut out = String::from(SUGGESTION_HEADER);
    for s in suggestions {
        out.push('\n');
        out.push_str(&format!("{}. {}", s.rank, s.action.to_short_string()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuggestionParseError {
    #[error("missing '{SUGGESTION_HEADER}' header")]
    MissingHeader,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
}

/// Parses a suggestion block back into `(rank, action)` pairs.
pub fn parse_suggestion_block(text: &str) -> Result<Vec<(usize, Action)>, SuggestionParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == SUGGESTION_HEADER => {}
        _ => return Err(SuggestionParseError::MissingHeader),
    }
    lines
        .map(|(i, l)| {
            let err = |reason: String| SuggestionParseError::Line { line: i + 1, reason };
            let (rank, rest) = l
                .trim()
                .split_once('.')
                .ok_or_else(|| err("expected '<rank>. <action>'".into()))?;
            let rank = rank.trim().parse().map_err(|_| err(format!("bad rank '{rank}'")))?;
            let action = Action::parse(rest).map_err(|e| err(e.to_string()))?;
            Ok((rank, action))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fov() -> FoVSpec {
        FoVSpec::new(100.0, 83.58).unwrap()
    }

    fn d(phi: f64, mu: f64) -> Direction {
        Direction::new(phi, mu).unwrap()
    }

    fn p(phi: f64, gamma: f64) -> ViewPose {
        ViewPose::new(phi, gamma).unwrap()
    }

    #[test]
    fn convert_examples() {
        assert_eq!(convert(&d(166.0, 9.0), &p(0.0, 0.0), &fov()), Action::Rot { d_phi: 166.0, d_gamma: 9.0 });
        assert_eq!(convert(&d(166.0, 9.0), &p(160.0, 10.0), &fov()), Action::Sub { phi: 166.0, gamma: 9.0 });
        assert_eq!(convert(&d(33.0, -4.0), &p(33.0, -4.0), &fov()), Action::Sub { phi: 33.0, gamma: -4.0 });
        assert_eq!(convert(&d(10.0, 0.0), &p(350.0, 0.0), &fov()), Action::Sub { phi: 10.0, gamma: 0.0 });
        // leftward target across the seam rotates left, not 340 degrees right
        assert_eq!(convert(&d(250.0, 0.0), &p(10.0, 0.0), &fov()), Action::Rot { d_phi: -120.0, d_gamma: 0.0 });
    }

    #[test]
    fn batch_ranks_in_order() {
        let coords = [(d(166.0, 9.0), 0.0), (d(166.0, 9.0), 0.7), (d(20.0, 0.0), 0.7)];
        let s = convert_batch(&coords, &p(0.0, 0.0), &fov());
        assert_eq!(s.iter().map(|s| s.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(s[0].is_greedy() && !s[1].is_greedy());
        assert_eq!(s[0].action, s[1].action);
        assert_eq!(convert_batch(&coords[..1], &p(0.0, 0.0), &fov()).len(), 1);
        assert!(convert_batch(&[], &p(0.0, 0.0), &fov()).is_empty());
    }

    #[test]
    fn suggestion_block_golden() {
        let one = |a| ActionSuggestion {
            rank: 1,
            source_coord: d(166.0, 9.0),
            action: a,
            temperature_used: 0.0,
        };
        assert_eq!(
            format_suggestion_block(&[one(Action::rot(166.0, 9.0))]),
            "[Spatial Imagination Suggestions]\n1. Rot(166.0, 9.0)"
        );
        assert_eq!(
            format_suggestion_block(&[one(Action::sub(166.0, 9.0))]),
            "[Spatial Imagination Suggestions]\n1. Sub(166.0, 9.0)"
        );
        assert_eq!(
            format_suggestion_block(&[one(Action::rot(-0.04, 12.345))]),
            "[Spatial Imagination Suggestions]\n1. Rot(0.0, 12.3)"
        );
        assert_eq!(format_suggestion_block(&[]), "");
    }

    #[test]
    fn block_roundtrip() {
        let s = convert_batch(
            &[(d(166.0, 9.0), 0.0), (d(10.5, -3.5), 0.7), (d(300.0, 20.0), 0.7)],
            &p(0.0, 0.0),
            &fov(),
        );
        let parsed = parse_suggestion_block(&format_suggestion_block(&s)).unwrap();
        let expect: Vec<_> = s.iter().map(|s| (s.rank, s.action)).collect();
        assert_eq!(parsed, expect);
        assert_eq!(parse_suggestion_block("1. Rot(1.0, 2.0)"), Err(SuggestionParseError::MissingHeader));
        assert!(matches!(
            parse_suggestion_block("[Spatial Imagination Suggestions]\n1. Turn(1, 2)"),
            Err(SuggestionParseError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn action_parse() {
        assert_eq!(Action::parse("Rot(-40, 5)").unwrap(), Action::Rot { d_phi: -40.0, d_gamma: 5.0 });
        assert_eq!(Action::parse(" Sub( 370 , 95 ) ").unwrap(), Action::Sub { phi: 10.0, gamma: 90.0 });
        assert!(matches!(Action::parse("rot(1, 2)"), Err(ActionParseError::UnknownPrimitive(_))));
        assert!(matches!(Action::parse("Rot(1, x)"), Err(ActionParseError::Malformed(_))));
        assert!(matches!(Action::parse("Rot(1, 2) extra"), Err(ActionParseError::Malformed(_))));
    }

    proptest! {
        #[test]
        fn never_rot_zero(pp in 0f64..360.0, pm in -90f64..90.0, qp in 0f64..360.0, qg in -90f64..90.0) {
            let a = convert(&d(pp, pm), &p(qp, qg), &fov());
            prop_assert_ne!(a, Action::Rot { d_phi: 0.0, d_gamma: 0.0 });
        }

        #[test]
        fn display_roundtrip(a in -1e4f64..1e4, b in -90f64..90.0, sub: bool) {
            let act = if sub { Action::sub(a, b) } else { Action::rot(a, b) };
            prop_assert_eq!(Action::parse(&act.to_string()).unwrap(), act);
        }
    }
}
