use std::time::{Duration, Instant};

use futures::StreamExt;
use gpm_clicker::{auto_click, router, AppState, Phase, Snapshot};
use serde_json::{json, Value};

async fn serve() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(AppState::new())).await.unwrap() });
    format!("http://{addr}")
}

struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    async fn create(&self, config: Value) -> String {
        let resp = self.http.post(format!("{}/sessions", self.base)).json(&config).send().await.unwrap();
        assert_eq!(resp.status(), 201);
        resp.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string()
    }

    async fn post(&self, id: &str, action: &str) -> reqwest::Response {
        self.http.post(format!("{}/sessions/{id}/{action}", self.base)).send().await.unwrap()
    }

    async fn snap(&self, id: &str, action: &str) -> Snapshot {
        let resp = self.post(id, action).await;
        assert!(resp.status().is_success(), "{action}: {}", resp.status());
        resp.json().await.unwrap()
    }

    async fn state(&self, id: &str) -> Snapshot {
        self.http.get(format!("{}/sessions/{id}/state", self.base)).send().await.unwrap().json().await.unwrap()
    }
}

async fn client() -> Client {
    Client { base: serve().await, http: reqwest::Client::new() }
}

fn batch(seed: u64) -> Value {
    json!({ "batch": true, "seed": seed, "max_episodes": 10 })
}

/// Steps a batch session to completion, clicking by `auto_click` when
/// `clicking`. Returns every model prompt seen and the final snapshot.
async fn drive(c: &Client, id: &str, clicking: bool) -> (Vec<String>, Snapshot) {
    let mut prev = c.snap(id, "resume").await;
    let mut prompts = Vec::new();
    loop {
        let resp = c.post(id, "step").await;
        if resp.status() == 409 {
            break;
        }
        let snap: Snapshot = resp.json().await.unwrap();
        if snap.phase == Phase::ModelDriven {
            prompts.push(snap.prompt.clone());
        }
        if clicking && auto_click(&prev, &snap) {
            let r: Value = c.post(id, "click").await.json().await.unwrap();
            assert_eq!(r["credited"], true);
        }
        prev = snap;
    }
    (prompts, c.state(id).await)
}

fn obeys_context_law(prompt: &str) -> bool {
    let lines: Vec<&str> = prompt.split('\n').collect();
    let (trailer, body) = lines.split_last().unwrap();
    let zeros = body.iter().filter(|l| l.starts_with("0: ")).count();
    let ones = body.iter().filter(|l| l.starts_with("1: ")).count();
    let first_one = body.iter().position(|l| l.starts_with("1: ")).unwrap_or(body.len());
    trailer.starts_with("1: ")
        && trailer.ends_with("; ")
        && zeros == ones
        && zeros + ones == body.len()
        && body[..first_one].iter().all(|l| l.starts_with("0: "))
}

#[tokio::test]
async fn auto_clicker_beats_no_clicks() {
    let c = client().await;
    let clicked = c.create(batch(3)).await;
    let silent = c.create(batch(3)).await;
    assert_ne!(clicked, silent);
    let (prompts, with) = drive(&c, &clicked, true).await;
    let (silent_prompts, without) = drive(&c, &silent, false).await;
    assert_eq!(with.phase, Phase::Done);
    assert_eq!(with.history.tuples, 150);
    assert_eq!(without.history.tuples, 150);
    assert_eq!(without.history.rewarded, 0);
    assert!(with.history.rewarded > without.history.rewarded);
    assert!(with.history.rewarded_per_episode[2..].iter().sum::<usize>() >= 1);
    assert_eq!(prompts.len(), 120);
    assert!(prompts.iter().all(|p| obeys_context_law(p)));
    assert!(prompts.iter().any(|p| p.contains('\n')));
    assert!(silent_prompts.iter().all(|p| !p.contains('\n') && p.starts_with("1: ")));
}

#[tokio::test]
async fn sessions_are_isolated() {
    let c = client().await;
    let a = c.create(batch(1)).await;
    let b = c.create(batch(1)).await;
    c.snap(&b, "resume").await;
    let b_before = c.state(&b).await;
    c.snap(&a, "resume").await;
    for i in 0..20 {
        c.snap(&a, "step").await;
        if i % 3 == 0 {
            c.post(&a, "click").await;
        }
        if i == 10 {
            c.snap(&a, "pause").await;
            c.snap(&a, "resume").await;
        }
    }
    c.snap(&a, "reset").await;
    let mut b_after = c.state(&b).await;
    b_after.id = b_before.id.clone();
    assert_eq!(b_after, b_before);
    // Same seed, same trajectory when stepped alone.
    let s1 = c.snap(&b, "step").await;
    let s2 = c.snap(&a, "step").await;
    assert_eq!((s1.effector, s1.object, s1.last_action), (s2.effector, s2.object, s2.last_action));
}

#[tokio::test]
async fn errors_and_controls() {
    let c = client().await;
    assert_eq!(c.post("nope", "click").await.status(), 404);
    assert_eq!(c.http.get(format!("{}/sessions/nope/state", c.base)).send().await.unwrap().status(), 404);
    let resp = c.http.post(format!("{}/sessions", c.base)).json(&json!({ "token_budget": 1 })).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    assert_eq!(resp.json::<Value>().await.unwrap()["field"], "token_budget");
    let resp = c.http.post(format!("{}/sessions", c.base)).json(&json!({ "bogus": 1 })).send().await.unwrap();
    assert_eq!(resp.status(), 400);

    let live = c.create(json!({})).await;
    let snap = c.state(&live).await;
    assert_eq!((snap.phase, snap.step_period_ms, snap.episode), (Phase::Paused, 2000, 1));
    assert_eq!(c.post(&live, "step").await.status(), 409);
    assert_eq!(c.post(&live, "click").await.status(), 409);

    let id = c.create(batch(0)).await;
    c.snap(&id, "resume").await;
    let s1 = c.snap(&id, "step").await;
    let s2 = c.snap(&id, "step").await;
    assert_eq!(s2.total_steps, s1.total_steps + 1);
    assert_eq!(s2.phase, Phase::RandomWarmup);
    let r: Value = c.post(&id, "click").await.json().await.unwrap();
    assert_eq!(r["snapshot"]["pending_click"], true);
    c.snap(&id, "pause").await;
    assert_eq!(c.post(&id, "click").await.status(), 409);
    assert_eq!(c.post(&id, "step").await.status(), 409);
    let reset = c.snap(&id, "reset").await;
    assert_eq!((reset.phase, reset.episode, reset.total_steps, reset.history.tuples), (Phase::RandomWarmup, 1, 0, 0));
}

#[tokio::test]
async fn live_clock_streams_snapshots() {
    let c = client().await;
    let period = 150u64;
    let id = c.create(json!({ "world": { "step_period_ms": period } })).await;
    let resp = c.http.get(format!("{}/sessions/{id}/events", c.base)).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let mut stream = resp.bytes_stream();
    c.snap(&id, "resume").await;
    let mut buf = String::new();
    let mut steps = Vec::new();
    let start = Instant::now();
    while steps.len() < 4 && start.elapsed() < Duration::from_secs(10) {
        let chunk = tokio::time::timeout(Duration::from_secs(5), stream.next()).await.unwrap().unwrap().unwrap();
        buf.push_str(&String::from_utf8_lossy(&chunk));
        while let Some(end) = buf.find("\n\n") {
            let event: String = buf.drain(..end + 2).collect();
            if let Some(data) = event.lines().find_map(|l| l.strip_prefix("data:")) {
                let snap: Snapshot = serde_json::from_str(data.trim()).unwrap();
                if snap.total_steps > steps.last().map_or(0, |(s, _)| *s) {
                    steps.push((snap.total_steps, start.elapsed()));
                }
            }
        }
    }
    c.snap(&id, "pause").await;
    assert_eq!(steps.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    for w in steps.windows(2) {
        let gap = w[1].1 - w[0].1;
        assert!(gap < Duration::from_millis(3 * period), "{gap:?}");
    }
    let frozen = c.state(&id).await.total_steps;
    tokio::time::sleep(Duration::from_millis(3 * period)).await;
    assert_eq!(c.state(&id).await.total_steps, frozen);
}
