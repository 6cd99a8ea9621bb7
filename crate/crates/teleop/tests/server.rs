use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;
use vascnav::env::EnvConfig;
use vascnav::grid::corridor_benchmark;
use vascnav::policy::{Arch, PolicyParams};
use vascnav::session::{replay, ClientMsg, Session, SessionConfig};
use vascnav_teleop::{serve, spawn_session, SessionHandle, TickConfig};

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

fn session(seed: u64) -> Session {
    let policy = PolicyParams::init_orthogonal(Arch::default(), &mut ChaCha8Rng::seed_from_u64(5));
    let config = SessionConfig {
        env: EnvConfig::desk(),
        seed,
        ..SessionConfig::default()
    };
    Session::new(Arc::new(corridor_benchmark()), policy, config).unwrap()
}

async fn start_server(seed: u64) -> (String, SessionHandle) {
    let handle = spawn_session(session(seed), TickConfig::default());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let h = handle.clone();
    tokio::spawn(async move { serve(listener, h, std::future::pending()).await.unwrap() });
    (format!("ws://{addr}/ws"), handle)
}

async fn connect(url: &str) -> Ws {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("server went quiet")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn next_of(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn join_gets_map_then_snapshot() {
    let (url, _h) = start_server(1).await;
    let mut ws = connect(&url).await;
    let map = next_json(&mut ws).await;
    assert_eq!(map["type"], "map");
    assert_eq!(map["width"], 200);
    assert!(map["png_base64"].as_str().unwrap().len() > 10);
    let state = next_json(&mut ws).await;
    assert_eq!(state["type"], "state");
    assert_eq!(state["tick"], 0);
    assert_eq!(state["mode"], "AUTO");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn late_joiner_gets_current_snapshot_first() {
    let (url, _h) = start_server(1).await;
    let mut a = connect(&url).await;
    next_of(&mut a, "state").await;
    send(&mut a, r#"{"type":"start"}"#).await;
    let mut seen = 0;
    while seen < 10 {
        next_of(&mut a, "state").await;
        seen += 1;
    }
    let mut b = connect(&url).await;
    assert_eq!(next_json(&mut b).await["type"], "map");
    let snap = next_json(&mut b).await;
    assert_eq!(snap["type"], "state");
    let t0 = snap["tick"].as_u64().unwrap();
    assert!(t0 >= 10);
    // Live states follow the snapshot without gaps.
    let next = next_of(&mut b, "state").await;
    assert_eq!(next["tick"].as_u64().unwrap(), t0 + 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_json_keeps_connection() {
    let (url, _h) = start_server(1).await;
    let mut ws = connect(&url).await;
    next_of(&mut ws, "state").await;
    for bad in ["{not json", r#"{"type":"warp"}"#, r#"{"type":"mark_critical","x":1,"y":1,"eps":-3}"#] {
        send(&mut ws, bad).await;
        let e = next_of(&mut ws, "error").await;
        assert!(!e["reason"].as_str().unwrap().is_empty());
    }
    send(&mut ws, r#"{"type":"start"}"#).await;
    assert_eq!(next_of(&mut ws, "state").await["tick"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hand_delta_in_auto_is_rejected() {
    let (url, h) = start_server(1).await;
    let mut ws = connect(&url).await;
    let before = next_of(&mut ws, "state").await;
    send(&mut ws, r#"{"type":"hand_delta","dx":10,"dy":0}"#).await;
    let e = next_of(&mut ws, "error").await;
    assert!(e["reason"].as_str().unwrap().contains("AUTO"));
    let snap = h.snapshot().await.unwrap();
    assert_eq!(snap.tick, 0);
    let s = replay(&snap.recording).unwrap();
    let after: Value = serde_json::from_str(&s.state_message().to_json()).unwrap();
    assert_eq!(after, before);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn manual_delta_moves_robot_on_next_tick() {
    let (url, _h) = start_server(1).await;
    let mut ws = connect(&url).await;
    let s0 = next_of(&mut ws, "state").await;
    send(&mut ws, r#"{"type":"takeover"}"#).await;
    let ev = next_of(&mut ws, "event").await;
    assert_eq!(ev["kind"], "mode_changed");
    let x0 = s0["robot"][0].as_f64().unwrap();
    let y0 = s0["robot"][1].as_f64().unwrap();
    // The corridor map has free space both ways along x for most starts.
    let grid = corridor_benchmark();
    let dx = if grid.is_segment_free((x0, y0), (x0 + 3.0, y0)) { 3.0 } else { -3.0 };
    send(&mut ws, &format!(r#"{{"type":"hand_delta","dx":{dx},"dy":0}}"#)).await;
    send(&mut ws, r#"{"type":"start"}"#).await;
    let s1 = next_of(&mut ws, "state").await;
    assert_eq!(s1["mode"], "MANUAL");
    assert_eq!(s1["robot"][0].as_f64().unwrap(), x0 + dx);
    assert_eq!(s1["robot"][1].as_f64().unwrap(), y0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sixty_ticks_take_one_second() {
    let (url, _h) = start_server(1).await;
    let mut ws = connect(&url).await;
    next_of(&mut ws, "state").await;
    send(&mut ws, r#"{"type":"start"}"#).await;
    let first = next_of(&mut ws, "state").await["tick"].as_u64().unwrap();
    let t0 = Instant::now();
    loop {
        let t = next_of(&mut ws, "state").await["tick"].as_u64().unwrap();
        if t == first + 60 {
            break;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!((secs - 1.0).abs() <= 0.05, "60 ticks took {secs:.3} s");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn every_client_gets_every_state() {
    let (url, _h) = start_server(1).await;
    let mut a = connect(&url).await;
    let mut b = connect(&url).await;
    next_of(&mut a, "state").await;
    next_of(&mut b, "state").await;
    send(&mut a, r#"{"type":"start"}"#).await;
    for ws in [&mut a, &mut b] {
        let mut last = 0;
        for _ in 0..30 {
            let t = next_of(ws, "state").await["tick"].as_u64().unwrap();
            assert_eq!(t, last + 1);
            last = t;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn advances_and_records_without_clients() {
    let handle = spawn_session(session(2), TickConfig { hz: 240.0 });
    handle.send(ClientMsg::Start, None).await.unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    let snap = handle.snapshot().await.unwrap();
    assert!(snap.tick > 10);
    let stopped = handle.stop().await.unwrap();
    assert!(stopped.tick_count() >= snap.tick);
    let rep = replay(&stopped.recording()).unwrap();
    assert_eq!(rep.log(), stopped.log());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn live_session_replays_identically() {
    let handle = spawn_session(session(3), TickConfig { hz: 600.0 });
    handle.send(ClientMsg::Start, None).await.unwrap();
    tokio::time::sleep(Duration::from_millis(50)).await;
    handle.send(ClientMsg::Takeover, None).await.unwrap();
    for k in 0..40 {
        let dx = if k % 2 == 0 { 1.0 } else { -0.5 };
        handle
            .send(ClientMsg::HandDelta { dx, dy: 0.25, t_ms: None }, None)
            .await
            .unwrap();
        tokio::time::sleep(Duration::from_millis(3)).await;
    }
    handle.send(ClientMsg::ReArm, None).await.unwrap();
    tokio::time::sleep(Duration::from_millis(50)).await;
    let live = handle.stop().await.unwrap();
    let rep = replay(&live.recording()).unwrap();
    assert_eq!(rep.log(), live.log());
    assert_eq!(rep.state_message(), live.state_message());
}
