use std::time::Duration;

use fluid_woz::client::WsClient;
use fluid_woz::latency;
use fluid_woz::log::{read, Stream};
use fluid_woz::model::{starter_scenario, validate_scenario, GoalStatus};
use fluid_woz::protocol::{ClientMessage, ClientRole, ServerMessage};
use fluid_woz::script::{run_script, Script};
use fluid_woz::server::{serve, serve_replay, ServeOptions, ServerError};

fn opts(dir: &std::path::Path) -> ServeOptions {
    ServeOptions::new(validate_scenario(starter_scenario()).unwrap(), dir)
}

#[tokio::test]
async fn observer_gets_welcome_then_state() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(opts(dir.path())).await.unwrap();
    let mut c = WsClient::connect(&h.url(), ClientRole::Observer).await.unwrap();
    assert!(matches!(c.recv().await, Some(ServerMessage::Welcome { .. })));
    assert!(matches!(c.recv().await, Some(ServerMessage::Keyframe { .. })));
    let d = c.wait_for(Duration::from_secs(1), |m| matches!(m, ServerMessage::StateDelta { .. }));
    assert!(d.await.is_some());
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn second_wizard_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(opts(dir.path())).await.unwrap();
    let mut a = WsClient::connect(&h.url(), ClientRole::Wizard).await.unwrap();
    assert!(matches!(a.recv().await, Some(ServerMessage::Welcome { .. })));
    let mut b = WsClient::connect(&h.url(), ClientRole::Wizard).await.unwrap();
    assert_eq!(b.recv().await, Some(ServerMessage::Refused { code: "role_taken".into() }));
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn wizard_races_admit_exactly_one() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(opts(dir.path())).await.unwrap();
    let url = h.url();
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let url = url.clone();
            tokio::spawn(async move {
                let mut c = WsClient::connect(&url, ClientRole::Wizard).await.unwrap();
                let first = c.recv().await;
                (first, c)
            })
        })
        .collect();
    let mut welcomed = 0;
    let mut keep = Vec::new();
    for t in tasks {
        let (first, c) = t.await.unwrap();
        if matches!(first, Some(ServerMessage::Welcome { .. })) {
            welcomed += 1;
        }
        keep.push(c);
    }
    assert_eq!(welcomed, 1);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn port_in_use() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(opts(dir.path())).await.unwrap();
    let mut o = opts(dir.path());
    o.port = h.addr.port();
    assert!(matches!(serve(o).await, Err(ServerError::PortInUse(_))));
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn click_flow_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(opts(dir.path())).await.unwrap();
    let mut w = WsClient::connect(&h.url(), ClientRole::Wizard).await.unwrap();
    let mut o = WsClient::connect(&h.url(), ClientRole::Observer).await.unwrap();
    w.send_raw(r#"{"type":"click"}"#).await.unwrap();
    let e = w.wait_for(Duration::from_secs(1), |m| matches!(m, ServerMessage::Error { .. })).await;
    assert!(matches!(e, Some(ServerMessage::Error { code, .. }) if code == "malformed_message"));

    w.send(&ClientMessage::Click { x: 5.0, y: 5.0, command_id: None }).await.unwrap();
    let e = w.wait_for(Duration::from_secs(1), |m| matches!(m, ServerMessage::Error { .. })).await;
    assert!(matches!(e, Some(ServerMessage::Error { code, .. }) if code == "illegal_click"));

    w.send(&ClientMessage::Click { x: 2.0, y: 3.5, command_id: None }).await.unwrap();
    let a = o
        .wait_for(Duration::from_secs(1), |m| matches!(m, ServerMessage::GoalStatus { status: GoalStatus::Active, .. }))
        .await;
    assert!(a.is_some());
    w.send(&ClientMessage::CancelAll {}).await.unwrap();
    let c = o.wait_for(Duration::from_secs(1), |m| matches!(m, ServerMessage::Cancelled { .. })).await;
    assert!(matches!(c, Some(ServerMessage::Cancelled { goal_ids, .. }) if goal_ids == vec![1]));
    // Wizard-only errors never reach observers.
    let leaked = o.wait_for(Duration::from_millis(100), |m| matches!(m, ServerMessage::Error { .. })).await;
    assert_eq!(leaked, None);
    let summary = h.shutdown().await.unwrap();
    let events = read(&summary.log_path).unwrap();
    assert_eq!(events.iter().filter(|e| e.stream == Stream::WizardAction).count(), 3);
}

#[tokio::test]
async fn scripted_command_is_traced() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(opts(dir.path())).await.unwrap();
    let script: Script = "at 100ms user says \"go left\"\nat 400ms wizard clicks (2.0, 3.5)\n".parse().unwrap();
    let out = run_script(&h.url(), &script, Duration::from_secs(10)).await.unwrap();
    let summary = h.shutdown().await.unwrap();
    assert!(out.wizard.iter().any(|m| matches!(m, ServerMessage::RelayUtterance { text, .. } if text == "go left")));
    assert!(out.wizard.iter().any(|m| matches!(m, ServerMessage::Latency { .. })));
    let events = read(&summary.log_path).unwrap();
    let b = latency::report(&events).unwrap().breakdowns[0];
    let l1 = b.l1_ms.unwrap();
    assert!((250..400).contains(&l1), "{l1}");
    assert!(b.l3_ms.is_some());
}

#[tokio::test]
async fn replay_reaches_observers() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve(opts(dir.path())).await.unwrap();
    let mut w = WsClient::connect(&h.url(), ClientRole::Wizard).await.unwrap();
    w.send(&ClientMessage::Click { x: 2.0, y: 3.5, command_id: None }).await.unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    let summary = h.shutdown().await.unwrap();
    let events = read(&summary.log_path).unwrap();

    let r = serve_replay(events.clone(), 4.0, "127.0.0.1", 0).await.unwrap();
    let mut user = WsClient::connect(&r.url(), ClientRole::User).await.unwrap();
    assert_eq!(user.recv().await, Some(ServerMessage::Refused { code: "observer_only".into() }));
    let mut o = WsClient::connect(&r.url(), ClientRole::Observer).await.unwrap();
    assert!(matches!(o.recv().await, Some(ServerMessage::Welcome { .. })));
    let mut seen = Vec::new();
    while let Some(m) = o.recv_timeout(Duration::from_secs(5)).await {
        if m == (ServerMessage::End {}) {
            break;
        }
        seen.push(m);
    }
    let stats = r.wait().await.unwrap();
    assert_eq!(seen.len() as u64, stats.emitted);
    assert!(seen.iter().any(|m| matches!(m, ServerMessage::GoalStatus { status: GoalStatus::Active, .. })));
    let snapshots = events.iter().filter(|e| e.stream == Stream::RobotState).count();
    let frames = seen
        .iter()
        .filter(|m| matches!(m, ServerMessage::Keyframe { .. } | ServerMessage::StateDelta { .. }))
        .count();
    assert_eq!(frames, snapshots);
}
