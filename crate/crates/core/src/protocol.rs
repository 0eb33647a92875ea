//! JSON message protocol for live sessions, independent of the transport.
//!
//! Client to server:
//! `{"t":"start","exercise":..,"profile":..}`, `{"t":"frame","time_ms":..,"kp":[[x,y,c],..]}`,
//! `{"t":"end"}`.
//!
//! Server to client: `hello` on connect (available exercises), `ack`, one
//! `rep` per completed repetition, `report` on end, and `err` with a stable
//! code whenever a message is rejected.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{GradeLevel, Violation};
use crate::pose::KeypointFrame;
use crate::service::{FeedbackEvent, ModelRegistry, ServiceError, Session, SessionOptions, SessionReport, Verdict};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum ClientMessage {
    Start {
        exercise: String,
        #[serde(default)]
        profile: Option<String>,
        #[serde(default)]
        level: Option<GradeLevel>,
    },
    Frame {
        time_ms: f64,
        kp: Vec<[f64; 3]>,
    },
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMessage {
    pub idx: usize,
    pub verdict: Verdict,
    pub label: Option<String>,
    pub probs: [f64; 3],
    pub violations: Vec<Violation>,
    pub latency_ms: f64,
    pub start_ms: f64,
    pub end_ms: f64,
}

impl From<&FeedbackEvent> for RepMessage {
    fn from(e: &FeedbackEvent) -> Self {
        Self {
            idx: e.rep_index,
            verdict: e.verdict,
            label: e.label.clone(),
            probs: e.probs,
            violations: e.violations.clone(),
            latency_ms: e.latency_ms,
            start_ms: e.start_ms,
            end_ms: e.end_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello { version: u32, exercises: Vec<String> },
    Ack { session: String },
    Rep(RepMessage),
    Report(SessionReport),
    Err { code: String, message: String },
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Err {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

impl From<&ServiceError> for ServerMessage {
    fn from(e: &ServiceError) -> Self {
        ServerMessage::error(e.code(), e.to_string())
    }
}

/// Hands out session identifiers; share one across connections of a server.
#[derive(Debug, Default)]
pub struct SessionIds(AtomicU64);

impl SessionIds {
    pub fn next(&self) -> String {
        format!("s{}", self.0.fetch_add(1, Ordering::Relaxed) + 1)
    }
}

/// Protocol state of one client connection: at most one active session.
pub struct Connection {
    registry: Arc<ModelRegistry>,
    ids: Arc<SessionIds>,
    session: Option<Session>,
}

impl Connection {
    pub fn new(registry: Arc<ModelRegistry>, ids: Arc<SessionIds>) -> Self {
        Self {
            registry,
            ids,
            session: None,
        }
    }

    /// Capability message sent when the connection opens.
    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            version: PROTOCOL_VERSION,
            exercises: self.registry.exercises(),
        }
    }

    pub fn has_session(&self) -> bool {
        self.session.is_some()
    }

    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error("bad_message", e.to_string())],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Start { exercise, profile, level } => self.start(&exercise, profile, level),
            ClientMessage::Frame { time_ms, kp } => self.frame(time_ms, kp),
            ClientMessage::End => match self.session.take() {
                Some(mut s) => {
                    let (events, report) = s.end_with_events();
                    let mut out: Vec<ServerMessage> =
                        events.iter().map(|e| ServerMessage::Rep(e.into())).collect();
                    out.push(ServerMessage::Report(report));
                    out
                }
                None => vec![ServerMessage::error("no_session", "no active session to end")],
            },
        }
    }

    /// Transport closed: ends any active session and returns its report.
    pub fn close(&mut self) -> Option<SessionReport> {
        self.session.take().map(|mut s| s.end())
    }

    fn start(&mut self, exercise: &str, profile: Option<String>, level: Option<GradeLevel>) -> Vec<ServerMessage> {
        if let Some(s) = &self.session {
            return vec![ServerMessage::error(
                "session_active",
                format!("session {} is still running", s.id()),
            )];
        }
        let options = SessionOptions {
            level: level.unwrap_or(GradeLevel::Standard),
            ..SessionOptions::default()
        };
        let session = match Session::start(self.ids.next(), &self.registry, exercise, options) {
            Ok(s) => s,
            Err(e) => return vec![(&e).into()],
        };
        if let Some(requested) = profile {
            if requested != session.profile().name() {
                let e = ServiceError::ProfileMismatch {
                    requested,
                    model: session.profile().name().to_string(),
                };
                return vec![(&e).into()];
            }
        }
        let ack = ServerMessage::Ack {
            session: session.id().to_string(),
        };
        self.session = Some(session);
        vec![ack]
    }

    fn frame(&mut self, time_ms: f64, kp: Vec<[f64; 3]>) -> Vec<ServerMessage> {
        let Some(session) = self.session.as_mut() else {
            return vec![ServerMessage::error("no_session", "send start before frames")];
        };
        let points = kp.iter().map(|p| [p[0], p[1]]).collect();
        let confidence = kp.iter().map(|p| p[2]).collect();
        let frame = KeypointFrame {
            time_ms,
            points,
            confidence,
        };
        match session.frame(frame) {
            Ok(events) => events.iter().map(|e| ServerMessage::Rep(e.into())).collect(),
            Err(e) => vec![(&e).into()],
        }
    }
}

/// Client message for a frame.
pub fn frame_message(frame: &KeypointFrame) -> ClientMessage {
    ClientMessage::Frame {
        time_ms: frame.time_ms,
        kp: frame
            .points
            .iter()
            .zip(&frame.confidence)
            .map(|(p, c)| [p[0], p[1], *c])
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conn() -> Connection {
        Connection::new(Arc::new(ModelRegistry::new()), Arc::new(SessionIds::default()))
    }

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_str(r#"{"t":"start","exercise":"tree","profile":"coco17"}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Start {
                exercise: "tree".into(),
                profile: Some("coco17".into()),
                level: None
            }
        );
        let m: ClientMessage = serde_json::from_str(r#"{"t":"frame","time_ms":33.0,"kp":[[0.1,0.2,0.9]]}"#).unwrap();
        assert!(matches!(m, ClientMessage::Frame { kp, .. } if kp == vec![[0.1, 0.2, 0.9]]));
        let m: ClientMessage = serde_json::from_str(r#"{"t":"end"}"#).unwrap();
        assert_eq!(m, ClientMessage::End);
    }

    #[test]
    fn hello_lists_exercises() {
        let json = conn().hello().to_json();
        assert_eq!(json, r#"{"t":"hello","version":1,"exercises":[]}"#);
    }

    #[test]
    fn errors_carry_stable_codes() {
        let mut c = conn();
        let code = |msgs: Vec<ServerMessage>| match &msgs[..] {
            [ServerMessage::Err { code, .. }] => code.clone(),
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(code(c.handle_text("not json")), "bad_message");
        assert_eq!(code(c.handle_text(r#"{"t":"warp"}"#)), "bad_message");
        assert_eq!(code(c.handle_text(r#"{"t":"end"}"#)), "no_session");
        assert_eq!(code(c.handle_text(r#"{"t":"frame","time_ms":0,"kp":[]}"#)), "no_session");
        assert_eq!(code(c.handle_text(r#"{"t":"start","exercise":"juggling"}"#)), "unknown_exercise");
        assert_eq!(code(c.handle_text(r#"{"t":"start","exercise":"tree"}"#)), "model_missing");
    }
}
