use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use alchemy_cli::server::{router, AppState};
use alchemy_core::baselines::IdealObserver;
use alchemy_core::environment::runner::{run_episode, RunOptions};
use alchemy_core::interface::{save_run, StepView};
use alchemy_core::EnvConfig;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn app_with_trace() -> (tempfile::TempDir, Router, alchemy_core::environment::runner::EpisodeRun) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EnvConfig::default();
    let opts = RunOptions { record_belief: true, record_activations: false };
    let run = run_episode(&mut IdealObserver::default(), &cfg, 31, 0, opts).unwrap();
    save_run(dir.path(), "episode-00000", &run).unwrap();
    let app = router(AppState::new(dir.path().to_path_buf(), cfg, None));
    (dir, app, run)
}

#[tokio::test]
async fn trace_endpoints() {
    let (_dir, app, run) = app_with_trace();
    let (s, list) = call(&app, "GET", "/api/traces", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list[0]["id"], "episode-00000");
    assert_eq!(list[0]["score"], run.trace.summary.score);

    let (s, t) = call(&app, "GET", "/api/traces/episode-00000", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["steps"], 150);
    assert_eq!(t["has_belief"], true);

    let (s, step) = call(&app, "GET", "/api/traces/episode-00000/steps/0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(step["potions"].as_array().unwrap().len(), 12);
    assert!(step["belief"]["edge_prob"].is_array());
    // the service view is the offline view
    let offline = StepView::from_trace(&run.trace, 7, Some(&run.belief)).unwrap();
    let (_, step7) = call(&app, "GET", "/api/traces/episode-00000/steps/7", None).await;
    assert_eq!(serde_json::from_value::<StepView>(step7).unwrap(), offline);

    for uri in ["/api/traces/nope", "/api/traces/episode-00000/steps/150", "/api/traces/episode-00000/steps/x"] {
        assert_eq!(call(&app, "GET", uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
}

#[tokio::test]
async fn session_lifecycle() {
    let (_dir, app, _) = app_with_trace();
    let (s, created) = call(&app, "POST", "/api/sessions", Some(json!({ "seed": 4, "mode": "human" }))).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = created["id"].as_str().unwrap().to_string();
    assert_eq!(created["cursor"], 0);
    assert_eq!(created["n_actions"], 22);

    let (s, r) = call(&app, "POST", &format!("/api/sessions/{id}/actions"), Some(json!({ "action": 0 }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["step"]["env_reward"], 0);
    assert_eq!(r["step"]["shaping_reward"], 0.0);
    assert_eq!(r["state"]["cursor"], 1);

    let actions = format!("/api/sessions/{id}/actions");
    for bad in [json!({ "action": 99 }), json!({ "action": "x" }), json!({}), json!({ "auto": true })] {
        assert_eq!(call(&app, "POST", &actions, Some(bad.clone())).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let (s, b) = call(&app, "GET", &format!("/api/sessions/{id}/belief"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["edge_prob"].as_array().unwrap().len(), 12);

    let (_, st) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(st["cursor"], 1);
    for _ in 1..150 {
        assert_eq!(call(&app, "POST", &actions, Some(json!({ "action": 0 }))).await.0, StatusCode::OK);
    }
    assert_eq!(call(&app, "POST", &actions, Some(json!({ "action": 0 }))).await.0, StatusCode::CONFLICT);

    assert_eq!(call(&app, "GET", "/api/sessions/zzz", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/api/sessions/zzz/actions", Some(json!({ "action": 0 }))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/sessions/zzz/belief", None).await.0, StatusCode::NOT_FOUND);
    let bad_mode = call(&app, "POST", "/api/sessions", Some(json!({ "seed": 1, "mode": "wizard" }))).await;
    assert_eq!(bad_mode.0, StatusCode::UNPROCESSABLE_ENTITY);
    let no_net = call(&app, "POST", "/api/sessions", Some(json!({ "seed": 1, "mode": "epn" }))).await;
    assert_eq!(no_net.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn interleaved_sessions_do_not_interfere() {
    let (_dir, app, _) = app_with_trace();
    let mk = |id: &str, mode: &str| json!({ "seed": 8, "mode": mode, "id": id });
    for (id, mode) in [("a", "ideal"), ("b", "random"), ("a2", "ideal"), ("b2", "random")] {
        assert_eq!(call(&app, "POST", "/api/sessions", Some(mk(id, mode))).await.0, StatusCode::CREATED);
    }
    assert_eq!(call(&app, "POST", "/api/sessions", Some(mk("a", "ideal"))).await.0, StatusCode::CONFLICT);
    let auto = Some(json!({ "auto": true }));
    for _ in 0..30 {
        call(&app, "POST", "/api/sessions/a/actions", auto.clone()).await;
        call(&app, "POST", "/api/sessions/b/actions", auto.clone()).await;
    }
    for _ in 0..30 {
        call(&app, "POST", "/api/sessions/a2/actions", auto.clone()).await;
    }
    for _ in 0..30 {
        call(&app, "POST", "/api/sessions/b2/actions", auto.clone()).await;
    }
    let get = |id: &'static str| {
        let app = app.clone();
        async move { call(&app, "GET", &format!("/api/sessions/{id}"), None).await.1 }
    };
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("id");
        v
    };
    assert_eq!(strip(get("a").await), strip(get("a2").await));
    assert_eq!(strip(get("b").await), strip(get("b2").await));
    let ba = call(&app, "GET", "/api/sessions/a/belief", None).await.1;
    let ba2 = call(&app, "GET", "/api/sessions/a2/belief", None).await.1;
    assert_eq!(ba, ba2);
}
