//! The actor side of the search loop: the `<think>`/`<answer>` reply grammar,
//! scripted policies for desk-scale runs, and a client for remote actors.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convert::{format_suggestion_block, Action, ActionParseError, ActionSuggestion};
use crate::geometry::ViewPose;
use crate::panorama::NFoVObservation;
use crate::wire::{self, ActRequest, BackendError, HttpClient, TextResponse, WirePose, WireView};

/// What the actor sees at one step.
#[derive(Debug, Clone)]
pub struct ActorContext<'a> {
    pub instruction: &'a str,
    pub observation: &'a NFoVObservation,
    /// Poses of steps `1..step`, oldest first.
    pub memory: &'a [ViewPose],
    pub suggestions: &'a [ActionSuggestion],
    pub step: u32,
    /// Simulation-only ground truth: whether the target lies inside the
    /// current view. `None` when detection is disabled.
    pub target_in_view: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorReply {
    pub think: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActorParseError {
    #[error("missing <answer> block")]
    MissingAnswer,
    #[error("ambiguous answer: {0} <answer> blocks")]
    AmbiguousAnswer(usize),
    #[error("unterminated <{0}> block")]
    Unterminated(&'static str),
    #[error(transparent)]
    Action(#[from] ActionParseError),
}

fn blocks<'t>(text: &'t str, tag: &'static str) -> Result<Vec<&'t str>, ActorParseError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let body = &rest[start + open.len()..];
        let end = body.find(&close).ok_or(ActorParseError::Unterminated(tag))?;
        out.push(&body[..end]);
        rest = &body[end + close.len()..];
    }
    Ok(out)
}

/// Extracts the optional think block and the single mandatory answer block.
pub fn parse_actor_reply(text: &str) -> Result<ActorReply, ActorParseError> {
    let answers = blocks(text, "answer")?;
    let answer = match answers.as_slice() {
        [] => return Err(ActorParseError::MissingAnswer),
        [one] => *one,
        many => return Err(ActorParseError::AmbiguousAnswer(many.len())),
    };
    let think = blocks(text, "think")?
        .first()
        .map(|t| t.trim().to_string())
        .unwrap_or_default();
    Ok(ActorReply {
        think,
        action: Action::parse(answer)?,
    })
}

/// Inverse of [`parse_actor_reply`] for full-precision actions.
pub fn format_actor_reply(reply: &ActorReply) -> String {
    let mut s = String::new();
    if !reply.think.is_empty() {
        s.push_str(&format!("<think>{}</think>", reply.think));
    }
    s.push_str(&format!("<answer>{}</answer>", reply.action));
    s
}

pub trait Actor: Send + Sync {
    fn act(&self, ctx: &ActorContext<'_>) -> Result<ActorReply, BackendError>;

    fn needs_images(&self) -> bool {
        false
    }

    fn describe(&self) -> String;
}

/// Executes the greedy anchor suggestion verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct FollowerPolicy;

pub fn follower_policy(ctx: &ActorContext<'_>) -> Result<ActorReply, BackendError> {
    let top = ctx
        .suggestions
        .iter()
        .find(|s| s.rank == 1)
        .or(ctx.suggestions.first())
        .ok_or_else(|| BackendError::Local("follower policy requires at least one suggestion".into()))?;
    Ok(ActorReply {
        think: format!("following suggestion {}", top.rank),
        action: top.action,
    })
}

impl Actor for FollowerPolicy {
    fn act(&self, ctx: &ActorContext<'_>) -> Result<ActorReply, BackendError> {
        follower_policy(ctx)
    }

    fn describe(&self) -> String {
        "follower".into()
    }
}

/// Unguided baseline: pans right by a fixed stride, submitting the current
/// view only when the simulator says the target is in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPolicy {
    pub stride: f64,
}

impl Default for SweepPolicy {
    fn default() -> Self {
        Self { stride: 60.0 }
    }
}

pub fn sweep_policy(policy: &SweepPolicy, ctx: &ActorContext<'_>) -> ActorReply {
    if ctx.target_in_view == Some(true) {
        log::debug!("sweep: submitting on simulator detection at step {}", ctx.step);
        let pose = ctx.observation.pose;
        return ActorReply {
            think: "target detected in view (simulator ground truth)".into(),
            action: Action::sub(pose.phi(), pose.gamma()),
        };
    }
    ActorReply {
        think: String::new(),
        action: Action::rot(policy.stride, 0.0),
    }
}

impl Actor for SweepPolicy {
    fn act(&self, ctx: &ActorContext<'_>) -> Result<ActorReply, BackendError> {
        Ok(sweep_policy(self, ctx))
    }

    fn describe(&self) -> String {
        format!("sweep(stride={})", self.stride)
    }
}

/// Default actor prompt. Placeholders: `{instruction}`, `{step}`,
/// `{memory}`, `{suggestions}`. A line consisting only of `{suggestions}` is
/// dropped when there are no suggestions.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "\
Task: {instruction}
Step: {step}
Previously visited views (phi, gamma):
{memory}
{suggestions}
Reason inside <think></think>, then reply with exactly one action inside <answer></answer>: Rot(d_phi, d_gamma) to turn relative to the current view, or Sub(phi, gamma) to submit an absolute view.";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate(String);

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(DEFAULT_PROMPT_TEMPLATE.to_string())
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        std::fs::read_to_string(path).map(Self)
    }

    pub fn render(&self, ctx: &ActorContext<'_>) -> String {
        let mut memory = String::new();
        for (i, p) in ctx.memory.iter().enumerate() {
            let _ = writeln!(memory, "{}. ({:.1}, {:.1})", i + 1, p.phi(), p.gamma());
        }
        if memory.is_empty() {
            memory.push_str("(none)");
        } else {
            memory.pop();
        }
        let suggestions = format_suggestion_block(ctx.suggestions);
        let mut lines = Vec::new();
        for line in self.0.lines() {
            if line.trim() == "{suggestions}" && suggestions.is_empty() {
                continue;
            }
            lines.push(
                line.replace("{instruction}", ctx.instruction)
                    .replace("{step}", &ctx.step.to_string())
                    .replace("{memory}", &memory)
                    .replace("{suggestions}", &suggestions),
            );
        }
        lines.join("\n")
    }
}

/// Client for an actor model served over HTTP.
pub struct RemoteActor {
    client: HttpClient,
    url: String,
    template: PromptTemplate,
}

impl RemoteActor {
    pub fn new(endpoint: &str, client: HttpClient) -> Self {
        Self {
            client,
            url: wire::endpoint_url(endpoint, wire::ACT_PATH),
            template: PromptTemplate::default(),
        }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }

    pub fn build_request(&self, ctx: &ActorContext<'_>) -> ActRequest {
        ActRequest {
            instruction: ctx.instruction.to_string(),
            current_view: WireView {
                phi: ctx.observation.pose.phi(),
                gamma: ctx.observation.pose.gamma(),
                image_png_base64: wire::encode_png_base64(&ctx.observation.image),
            },
            memory: ctx
                .memory
                .iter()
                .map(|p| WirePose {
                    phi: p.phi(),
                    gamma: p.gamma(),
                })
                .collect(),
            suggestions_text: format_suggestion_block(ctx.suggestions),
            step: ctx.step,
            prompt: Some(self.template.render(ctx)),
            request_id: None,
        }
    }

    pub fn send(&self, request: &ActRequest) -> Result<ActorReply, BackendError> {
        let reply: TextResponse = self.client.post_json(&self.url, request)?;
        parse_actor_reply(&reply.text).map_err(|e| BackendError::Parse {
            message: e.to_string(),
            raw: reply.text,
        })
    }
}

impl Actor for RemoteActor {
    fn act(&self, ctx: &ActorContext<'_>) -> Result<ActorReply, BackendError> {
        self.send(&self.build_request(ctx))
    }

    fn needs_images(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("remote({})", self.url)
    }
}
