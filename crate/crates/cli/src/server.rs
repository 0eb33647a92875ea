//! WebSocket transport for the session protocol. Each connection owns its
//! protocol state; loaded models are shared read-only.

use std::future::Future;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use isoform_core::protocol::{Connection, ServerMessage, SessionIds};
use isoform_core::service::ModelRegistry;
use tokio::net::TcpListener;

#[derive(Clone)]
struct AppState {
    registry: Arc<ModelRegistry>,
    ids: Arc<SessionIds>,
}

/// `/ws` speaks the session protocol; `/exercises` lists loaded models.
pub fn router(registry: Arc<ModelRegistry>) -> Router {
    let state = AppState {
        registry,
        ids: Arc::new(SessionIds::default()),
    };
    Router::new()
        .route("/ws", get(upgrade))
        .route("/exercises", get(exercises))
        .with_state(state)
}

pub async fn serve(
    listener: TcpListener,
    registry: Arc<ModelRegistry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn exercises(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.registry.exercises())
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| session_loop(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn session_loop(mut socket: WebSocket, state: AppState) {
    let mut conn = Connection::new(state.registry, state.ids);
    if !send(&mut socket, &conn.hello()).await {
        return;
    }
    while let Some(msg) = socket.recv().await {
        let replies = match msg {
            Ok(Message::Text(text)) => conn.handle_text(text.as_str()),
            Ok(Message::Binary(_)) => vec![ServerMessage::error("bad_message", "expected a text frame")],
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        for reply in &replies {
            if !send(&mut socket, reply).await {
                conn.close();
                return;
            }
        }
    }
    if let Some(report) = conn.close() {
        log::info!("session {} closed with {} reps", report.session, report.reps);
    }
}
