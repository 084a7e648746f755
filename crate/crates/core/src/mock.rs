//! Loopback HTTP server implementing `/v1/imagine` and `/v1/act` on top of
//! the oracle imaginator and the scripted actor policies. Replies go through
//! the same formatters and parsers as production code.

use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::sync::oneshot;

use crate::actor::{format_actor_reply, ActorReply};
use crate::convert::{parse_suggestion_block, Action};
use crate::geometry::ViewPose;
use crate::imagination::{format_imagination, oracle_imagine, OracleImaginator};
use crate::panorama::SceneAnnotation;
use crate::wire::{ActRequest, ImagineRequest, TextResponse, ACT_PATH, IMAGINE_PATH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockActorMode {
    /// Executes rank 1 of the suggestion block.
    Follower,
    /// Always pans right by `stride` degrees.
    Sweep { stride: f64 },
}

pub struct MockState {
    pub scenes: Vec<SceneAnnotation>,
    pub oracle: OracleImaginator,
    pub actor: MockActorMode,
    /// Seed used when a request carries none.
    pub default_seed: u64,
    /// Answer this many requests with 503 before serving normally.
    pub fail_first: AtomicUsize,
    pub served: AtomicUsize,
}

impl MockState {
    pub fn new(scenes: Vec<SceneAnnotation>, oracle: OracleImaginator, actor: MockActorMode, default_seed: u64) -> Self {
        Self {
            scenes,
            oracle,
            actor,
            default_seed,
            fail_first: AtomicUsize::new(0),
            served: AtomicUsize::new(0),
        }
    }

    pub fn with_failures(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    fn find_scene(&self, scene_id: Option<&str>, instruction: &str) -> Option<&SceneAnnotation> {
        match scene_id {
            Some(id) => self.scenes.iter().find(|s| s.scene_id == id),
            None => self.scenes.iter().find(|s| s.find_target(instruction).is_some()),
        }
    }

    /// The reply text for an imagine request, or a reason it is invalid.
    pub fn imagine_text(&self, req: &ImagineRequest) -> Result<String, String> {
        let scene = self
            .find_scene(req.scene_id.as_deref(), &req.instruction)
            .ok_or_else(|| format!("no scene matches scene_id {:?} / instruction {:?}", req.scene_id, req.instruction))?;
        let history = req
            .views
            .iter()
            .map(|v| ViewPose::clamped(v.phi, v.gamma).map_err(|e| format!("bad view pose: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let out = oracle_imagine(
            &self.oracle,
            scene,
            &history,
            &req.instruction,
            req.sampling.temperature,
            req.seed.unwrap_or(self.default_seed),
        )
        .map_err(|e| e.to_string())?;
        Ok(format_imagination(&out))
    }

    pub fn act_text(&self, req: &ActRequest) -> Result<String, String> {
        let reply = match self.actor {
            MockActorMode::Sweep { stride } => ActorReply {
                think: String::new(),
                action: Action::rot(stride, 0.0),
            },
            MockActorMode::Follower => {
                if req.suggestions_text.trim().is_empty() {
                    return Err("follower requires a suggestion block".into());
                }
                let parsed = parse_suggestion_block(&req.suggestions_text).map_err(|e| e.to_string())?;
                let (rank, action) = parsed
                    .iter()
                    .find(|(rank, _)| *rank == 1)
                    .or(parsed.first())
                    .copied()
                    .ok_or("suggestion block lists no actions")?;
                ActorReply {
                    think: format!("following suggestion {rank}"),
                    action,
                }
            }
        };
        Ok(format_actor_reply(&reply))
    }
}

fn bad_request(reason: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": reason.into() }))).into_response()
}

fn handle<T: DeserializeOwned>(
    state: &MockState,
    body: &Bytes,
    id: impl Fn(&T) -> Option<String>,
    reply: impl Fn(&MockState, &T) -> Result<String, String>,
) -> Response {
    let served = state.served.fetch_add(1, Ordering::SeqCst);
    if state
        .fail_first
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::SERVICE_UNAVAILABLE, "injected failure").into_response();
    }
    let req: T = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("malformed request body: {e}")),
    };
    match reply(state, &req) {
        Ok(text) => {
            log::debug!("request #{served} served ({} bytes)", text.len());
            Json(TextResponse {
                text,
                request_id: id(&req),
            })
            .into_response()
        }
        Err(reason) => bad_request(reason),
    }
}

async fn imagine(State(state): State<Arc<MockState>>, body: Bytes) -> Response {
    tokio::task::spawn_blocking(move || {
        handle(&state, &body, |r: &ImagineRequest| r.request_id.clone(), MockState::imagine_text)
    })
    .await
    .unwrap_or_else(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response())
}

async fn act(State(state): State<Arc<MockState>>, body: Bytes) -> Response {
    handle(&state, &body, |r: &ActRequest| r.request_id.clone(), MockState::act_text)
}

pub fn router(state: Arc<MockState>) -> Router {
    Router::new()
        .route(IMAGINE_PATH, post(imagine))
        .route(ACT_PATH, post(act))
        .with_state(state)
}

/// A mock server running on its own thread; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn spawn(state: MockState, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(state);
        let app = router(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name(format!("mock-server-{}", addr.port()))
            .spawn(move || {
                let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
                rt.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener)?;
                    axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await
                })
            })?;
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &MockState {
        &self.state
    }

    /// Blocks until the server thread exits.
    pub fn join(mut self) -> std::io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
