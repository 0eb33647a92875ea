use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use isoform_core::exercise::ExerciseConfig;
use isoform_core::pipeline::{run_from_clips, synth_suite, SuiteSpec, TrainSetup};
use isoform_core::protocol::frame_message;
use isoform_core::service::{LoadedModel, ModelRegistry};
use isoform_core::synth::{synthesize, Archetype, SynthSpec};
use isoform_core::Execution;
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;

fn registry() -> Arc<ModelRegistry> {
    let mut spec = SuiteSpec::new(Archetype::Plank);
    spec.reps_per_class = 20;
    spec.clips_per_class = 4;
    spec.noise_sigma = 0.01;
    let (_, clips) = synth_suite(&spec, Execution::Parallel).unwrap();
    let setup = TrainSetup::new(ExerciseConfig::builtin(Archetype::Plank)).with_seed(2);
    let model = run_from_clips(&clips, &setup, None, Execution::Parallel).unwrap().model;
    let mut reg = ModelRegistry::new();
    reg.insert(LoadedModel::new(model).unwrap());
    Arc::new(reg)
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn recv(ws: &mut Socket) -> Value {
    loop {
        match ws.next().await.expect("socket open").unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("unexpected {other:?}"),
        }
    }
}

async fn send(ws: &mut Socket, text: String) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_over_a_real_socket() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(isoform_cli::server::serve(listener, registry(), async {
        let _ = stopped.await;
    }));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    let hello = recv(&mut ws).await;
    assert_eq!(hello["t"], "hello");
    assert_eq!(hello["exercises"], serde_json::json!(["plank"]));

    send(&mut ws, r#"{"t":"start","exercise":"plank","profile":"coco17"}"#.into()).await;
    let ack = recv(&mut ws).await;
    assert_eq!(ack["t"], "ack");

    let clip = synthesize(&SynthSpec::new(Archetype::Plank, 0).with_reps(5).with_noise(0.01).with_seed(4))
        .unwrap()
        .clip;
    for f in &clip.frames {
        send(&mut ws, serde_json::to_string(&frame_message(f)).unwrap()).await;
    }
    send(&mut ws, r#"{"t":"end"}"#.into()).await;

    let mut reps = Vec::new();
    let report = loop {
        let m = recv(&mut ws).await;
        match m["t"].as_str().unwrap() {
            "rep" => reps.push(m),
            "report" => break m,
            other => panic!("unexpected message {other}: {m}"),
        }
    };
    assert_eq!(reps.len(), 5);
    for (i, r) in reps.iter().enumerate() {
        assert_eq!(r["idx"], i);
        assert_eq!(r["verdict"], "correct");
    }
    assert_eq!(report["totals"]["correct"], 5);

    // Garbage gets an error frame and the socket stays usable.
    send(&mut ws, "not json".into()).await;
    let err = recv(&mut ws).await;
    assert_eq!(err["t"], "err");
    send(&mut ws, r#"{"t":"start","exercise":"plank"}"#.into()).await;
    assert_eq!(recv(&mut ws).await["t"], "ack");

    ws.close(None).await.unwrap();
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}

#[tokio::test]
async fn exercises_endpoint_lists_models() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(isoform_cli::server::serve(listener, registry(), async {
        let _ = stopped.await;
    }));

    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut tcp = tokio::net::TcpStream::connect(addr).await.unwrap();
    tcp.write_all(b"GET /exercises HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut body = String::new();
    tcp.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.ends_with(r#"["plank"]"#), "{body}");

    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}
