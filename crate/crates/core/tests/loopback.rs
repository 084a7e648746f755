mod common;

use std::time::Duration;

use common::*;
use hvs::actor::{Actor, ActorContext, FollowerPolicy, RemoteActor, SweepPolicy};
use hvs::convert::{convert_batch, Action};
use hvs::episode::{EpisodeConfig, EpisodeRunner};
use hvs::imagination::{
    format_imagination, oracle_imagine, ImagineQuery, Imaginator, OracleImaginator, RemoteImaginator,
};
use hvs::mock::{MockActorMode, MockServer, MockState};
use hvs::panorama::{NFoVObservation, Renderer, Scene};
use hvs::wire::{
    endpoint_url, BackendError, ClientConfig, HttpClient, ImagineRequest, TextResponse, WireSampling, WireView,
    IMAGINE_PATH,
};

fn oracle(sigma0: f64) -> OracleImaginator {
    OracleImaginator::new(sigma0, 0.7, default_fov())
}

fn client() -> HttpClient {
    HttpClient::new(ClientConfig {
        backoff_base: Duration::from_millis(5),
        timeout: Duration::from_secs(20),
        ..ClientConfig::default()
    })
    .unwrap()
}

fn serve(scenes: &[Scene], actor: MockActorMode, failures: usize) -> MockServer {
    let state = MockState::new(scenes.iter().map(|s| s.annotation.clone()).collect(), oracle(20.0), actor, 0)
        .with_failures(failures);
    MockServer::spawn(state, "127.0.0.1:0".parse().unwrap()).unwrap()
}

fn observations(scene: &Scene, poses: &[(f64, f64)]) -> Vec<NFoVObservation> {
    let r = Renderer::new(default_fov(), 32, 24);
    poses
        .iter()
        .enumerate()
        .map(|(i, &(phi, gamma))| r.observe(&scene.panorama, pose(phi, gamma), i as u32 + 1))
        .collect()
}

#[test]
fn remote_imagine_matches_oracle() {
    let scenes = scenes(2, 5, 128);
    let server = serve(&scenes, MockActorMode::Follower, 0);
    let remote = RemoteImaginator::new(&server.url(), client());
    let direct = oracle(20.0);
    let views = [(10.0, 0.0), (130.0, -20.0), (250.0, 30.0)];
    for scene in &scenes {
        for target in &scene.annotation.targets {
            for n in 1..=views.len() {
                let obs = observations(scene, &views[..n]);
                let history: Vec<_> = obs.iter().map(|o| o.pose).collect();
                for (i, &temperature) in [0.0, 0.7, 0.50575].iter().enumerate() {
                    let q = ImagineQuery {
                        scene: &scene.annotation,
                        instruction: &target.instruction,
                        history: &history,
                        observations: &obs,
                        temperature,
                        top_k: 50,
                        seed: 1000 + i as u64 * 7 + n as u64,
                    };
                    assert_eq!(remote.imagine(&q).unwrap(), direct.imagine(&q).unwrap());
                }
            }
        }
    }
}

#[test]
fn remote_act_matches_policies() {
    let scenes = scenes(1, 5, 128);
    let obs = observations(&scenes[0], &[(40.0, 0.0)]);
    let coords = [(d(166.0, 9.0), 0.0), (d(12.5, -3.5), 0.7)];
    let suggestions = convert_batch(&coords, &obs[0].pose, &default_fov());
    let ctx = ActorContext {
        instruction: "Find the sofa.",
        observation: &obs[0],
        memory: &[],
        suggestions: &suggestions,
        step: 1,
        target_in_view: None,
    };

    let follower = serve(&scenes, MockActorMode::Follower, 0);
    let remote = RemoteActor::new(&follower.url(), client());
    assert_eq!(remote.act(&ctx).unwrap().action, FollowerPolicy.act(&ctx).unwrap().action);
    assert_eq!(remote.act(&ctx).unwrap().action, Action::Rot { d_phi: 126.0, d_gamma: 9.0 });

    // no suggestions: the follower has nothing to follow
    let bare = ActorContext { suggestions: &[], ..ctx };
    assert!(matches!(remote.act(&bare), Err(BackendError::Status { status: 400, .. })));
    assert_eq!(remote.client().retries(), 0);

    let sweep = serve(&scenes, MockActorMode::Sweep { stride: 60.0 }, 0);
    let remote = RemoteActor::new(&sweep.url(), client());
    let local = SweepPolicy::default();
    assert_eq!(remote.act(&bare).unwrap().action, local.act(&bare).unwrap().action);
}

#[test]
fn server_errors_are_retried() {
    let scenes = scenes(1, 5, 128);
    let server = serve(&scenes, MockActorMode::Follower, 2);
    let remote = RemoteImaginator::new(&server.url(), client());
    let target = &scenes[0].annotation.targets[0];
    let q = ImagineQuery {
        scene: &scenes[0].annotation,
        instruction: &target.instruction,
        history: &[pose(0.0, 0.0)],
        observations: &[],
        temperature: 0.0,
        top_k: 50,
        seed: 1,
    };
    let out = remote.imagine(&q).unwrap();
    assert_eq!(out.suggest, target.coord);
    assert_eq!(remote.client().retries(), 2);

    // a retry budget smaller than the failure streak surfaces the status
    let server = serve(&scenes, MockActorMode::Follower, 5);
    let stingy = HttpClient::new(ClientConfig {
        max_retries: 1,
        backoff_base: Duration::from_millis(1),
        ..ClientConfig::default()
    })
    .unwrap();
    let remote = RemoteImaginator::new(&server.url(), stingy);
    assert!(matches!(remote.imagine(&q), Err(BackendError::Status { status: 503, .. })));
}

#[test]
fn malformed_requests_get_400() {
    let scenes = scenes(1, 5, 128);
    let server = serve(&scenes, MockActorMode::Follower, 0);
    let c = client();
    let url = endpoint_url(&server.url(), IMAGINE_PATH);
    let err = c.post_json::<_, TextResponse>(&url, &serde_json::json!({ "prompt": "hi" })).unwrap_err();
    match err {
        BackendError::Status { status: 400, body } => assert!(body.contains("malformed"), "{body}"),
        other => panic!("expected 400, got {other:?}"),
    }
    let unknown = ImagineRequest {
        instruction: "Find the unicorn.".into(),
        views: vec![],
        sampling: WireSampling {
            temperature: 0.0,
            top_k: 50,
        },
        scene_id: Some("nowhere".into()),
        seed: None,
        request_id: None,
    };
    assert!(matches!(
        c.post_json::<_, TextResponse>(&url, &unknown),
        Err(BackendError::Status { status: 400, .. })
    ));
    assert_eq!(c.retries(), 0);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let c = HttpClient::new(ClientConfig {
        max_retries: 2,
        backoff_base: Duration::from_millis(1),
        ..ClientConfig::default()
    })
    .unwrap();
    let remote = RemoteImaginator::new(&format!("http://{addr}"), c);
    let scenes = scenes(1, 5, 128);
    let q = ImagineQuery {
        scene: &scenes[0].annotation,
        instruction: "x",
        history: &[],
        observations: &[],
        temperature: 0.0,
        top_k: 50,
        seed: 0,
    };
    assert!(matches!(remote.imagine(&q), Err(BackendError::Transport { attempts: 3, .. })));
}

#[test]
fn concurrent_requests_pair_correctly() {
    let scenes = scenes(3, 5, 128);
    let server = serve(&scenes, MockActorMode::Follower, 0);
    let c = client();
    let url = endpoint_url(&server.url(), IMAGINE_PATH);
    let direct = oracle(20.0);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..20u64)
            .map(|i| {
                let (c, url, direct, scenes) = (&c, &url, &direct, &scenes);
                s.spawn(move || {
                    let scene = &scenes[i as usize % scenes.len()].annotation;
                    let target = &scene.targets[i as usize % scene.targets.len()];
                    let req = ImagineRequest {
                        instruction: target.instruction.clone(),
                        views: vec![WireView {
                            phi: (i * 17) as f64,
                            gamma: 0.0,
                            image_png_base64: String::new(),
                        }],
                        sampling: WireSampling {
                            temperature: 0.7,
                            top_k: 50,
                        },
                        scene_id: Some(scene.scene_id.clone()),
                        seed: Some(i),
                        request_id: Some(format!("req-{i}")),
                    };
                    let reply: TextResponse = c.post_json(url, &req).unwrap();
                    assert_eq!(reply.request_id.as_deref(), Some(format!("req-{i}").as_str()));
                    let want =
                        oracle_imagine(direct, scene, &[pose((i * 17) as f64, 0.0)], &target.instruction, 0.7, i)
                            .unwrap();
                    assert_eq!(reply.text, format_imagination(&want));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    });
    assert_eq!(server.state().served.load(std::sync::atomic::Ordering::SeqCst), 20);
}

#[test]
fn remote_imaginator_episodes_match_direct() {
    let scenes = scenes(2, 11, 256);
    let server = serve(&scenes, MockActorMode::Follower, 0);
    let remote = RemoteImaginator::new(&server.url(), client());
    let direct = oracle(20.0);
    let cfg = EpisodeConfig {
        width: 64,
        height: 48,
        fov: hvs::FoVSpec::from_horizontal(100.0, 64, 48).unwrap(),
        record_latency: false,
        ..EpisodeConfig::default()
    };
    // the mock's oracle must see the same FoV for the partitions to agree
    assert_eq!(cfg.fov, direct.fov);
    let renderer = cfg.renderer();
    let follower = FollowerPolicy;
    let run = |imaginator: &dyn Imaginator, scene: &Scene, ti: usize, seed: u64| {
        EpisodeRunner {
            imaginator: Some(imaginator),
            actor: &follower,
            cfg: &cfg,
            renderer: &renderer,
        }
        .run(scene, ti, seed)
    };
    for scene in &scenes {
        for ti in 0..scene.annotation.targets.len() {
            for seed in [3, 4] {
                let a = run(&remote, scene, ti, seed);
                let b = run(&direct, scene, ti, seed);
                assert_eq!(a.log_jsonl(), b.log_jsonl());
                assert!(a.success);
            }
        }
    }
}
