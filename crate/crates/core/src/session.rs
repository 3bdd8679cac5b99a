//! Session records: the append-only event log, the stage state machine it
//! folds into, and the line-oriented log format.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::image::ContentDigest;
use crate::integrator::SceneStage;
use crate::metrics::MetricsReport;
use crate::planner::{PlanEdit, SubtaskId, SubtaskPlan};
use crate::prompt::PromptText;

pub const SESSION_FORMAT: &str = "agentmark.session/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Created,
    Planned,
    Generating,
    Reviewing,
    Integrating,
    Protecting,
    Done,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Done | SessionState::Failed)
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PlanProduced,
    ComponentGenerated,
    ReviewScored,
    RegenerationTriggered,
    SceneIntegrated,
    WatermarkEmbedded,
    InterventionApplied,
    StateChanged,
    Error,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What a human asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterventionKind {
    /// Allowed while Planned, or while Reviewing (touched subtasks are regenerated).
    EditPlan { edit: PlanEdit },
    /// Reviewing only. `accept = false` forces one more attempt.
    OverrideReview { subtask_id: SubtaskId, accept: bool },
    /// Moves and scales a foreground box, from Planned through Integrating.
    AdjustLayout {
        subtask_id: SubtaskId,
        #[serde(default)]
        dx: i64,
        #[serde(default)]
        dy: i64,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    /// Any state before Protecting.
    SetProtectionParams {
        amplitude: f64,
        #[serde(default)]
        chips_per_bit: Option<usize>,
    },
    Abort {
        #[serde(default)]
        reason: Option<String>,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl InterventionKind {
    pub fn name(&self) -> &'static str {
        match self {
            InterventionKind::EditPlan { .. } => "edit_plan",
            InterventionKind::OverrideReview { .. } => "override_review",
            InterventionKind::AdjustLayout { .. } => "adjust_layout",
            InterventionKind::SetProtectionParams { .. } => "set_protection_params",
            InterventionKind::Abort { .. } => "abort",
        }
    }

    /// Whether this intervention may be applied in `state`.
    pub fn allowed_in(&self, state: SessionState) -> bool {
        use SessionState::*;
        match self {
            InterventionKind::EditPlan { .. } => matches!(state, Planned | Reviewing),
            InterventionKind::OverrideReview { .. } => state == Reviewing,
            InterventionKind::AdjustLayout { .. } => {
                matches!(state, Planned | Generating | Reviewing | Integrating)
            }
            InterventionKind::SetProtectionParams { .. } => {
                matches!(
                    state,
                    Created | Planned | Generating | Reviewing | Integrating
                )
            }
            InterventionKind::Abort { .. } => !state.is_terminal(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intervention {
    pub kind: InterventionKind,
    /// Hashed user id of whoever submitted it.
    pub actor: String,
}

/// Kind-specific event data. The tag doubles as the event kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", deny_unknown_fields)]
pub enum EventPayload {
    PlanProduced {
        plan: SubtaskPlan,
        plan_loss: f64,
    },
    ComponentGenerated {
        subtask_id: SubtaskId,
        seed: u64,
        attempt: u32,
        digest: ContentDigest,
    },
    ReviewScored {
        subtask_id: SubtaskId,
        attempt: u32,
        score: f64,
        passed: bool,
        overridden: bool,
    },
    RegenerationTriggered {
        subtask_id: SubtaskId,
        attempt: u32,
        seed: u64,
        reason: String,
    },
    SceneIntegrated {
        digest: ContentDigest,
        stage: SceneStage,
        harmonize_strength: f64,
        coherence_loss: f64,
        adjacency: Vec<(SubtaskId, SubtaskId)>,
    },
    WatermarkEmbedded {
        digest_pre: ContentDigest,
        digest_post: ContentDigest,
        psnr_db: Option<f64>,
        amplitude: f64,
        chips_per_bit: usize,
        posthoc: bool,
        recoverability_penalty: f64,
        metrics: MetricsReport,
    },
    InterventionApplied {
        intervention: Intervention,
    },
    StateChanged {
        from: SessionState,
        to: SessionState,
    },
    Error {
        code: String,
        message: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::PlanProduced { .. } => EventKind::PlanProduced,
            EventPayload::ComponentGenerated { .. } => EventKind::ComponentGenerated,
            EventPayload::ReviewScored { .. } => EventKind::ReviewScored,
            EventPayload::RegenerationTriggered { .. } => EventKind::RegenerationTriggered,
            EventPayload::SceneIntegrated { .. } => EventKind::SceneIntegrated,
            EventPayload::WatermarkEmbedded { .. } => EventKind::WatermarkEmbedded,
            EventPayload::InterventionApplied { .. } => EventKind::InterventionApplied,
            EventPayload::StateChanged { .. } => EventKind::StateChanged,
            EventPayload::Error { .. } => EventKind::Error,
        }
    }
}

/// On disk as a flat object: `{seq, timestamp, kind, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent", into = "RawEvent")]
pub struct Event {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub payload: EventPayload,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    seq: u64,
    timestamp: DateTime<Utc>,
    kind: EventKind,
    payload: serde_json::Value,
}

impl TryFrom<RawEvent> for Event {
    type Error = serde_json::Error;

    fn try_from(raw: RawEvent) -> Result<Self, Self::Error> {
        let tagged = serde_json::json!({ "kind": raw.kind, "payload": raw.payload });
        Ok(Event {
            seq: raw.seq,
            timestamp: raw.timestamp,
            payload: serde_json::from_value(tagged)?,
        })
    }
}

impl From<Event> for RawEvent {
    fn from(e: Event) -> Self {
        let kind = e.payload.kind();
        let mut tagged = serde_json::to_value(e.payload).expect("payload serializes");
        RawEvent {
            seq: e.seq,
            timestamp: e.timestamp,
            kind,
            payload: tagged["payload"].take(),
        }
    }
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("event {kind} is not legal in state {state}")]
    IllegalTransition {
        state: SessionState,
        kind: EventKind,
    },
    #[error("malformed session log at line {line}, column {column}: {message}")]
    MalformedRecord {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Legal stage edges, in pipeline order, plus the regeneration back edge and
/// skipping review under the no-reviewer ablation.
fn edge_allowed(from: SessionState, to: SessionState) -> bool {
    use SessionState::*;
    if from.is_terminal() {
        return false;
    }
    if to == Failed {
        return true;
    }
    matches!(
        (from, to),
        (Created, Planned)
            | (Planned, Generating)
            | (Generating, Reviewing)
            | (Reviewing, Generating)
            | (Generating, Integrating)
            | (Reviewing, Integrating)
            | (Integrating, Protecting)
            | (Protecting, Done)
    )
}

/// State after `payload` is applied in `state`.
pub fn next_state(
    state: SessionState,
    payload: &EventPayload,
) -> Result<SessionState, SessionError> {
    use SessionState::*;
    let illegal = || SessionError::IllegalTransition {
        state,
        kind: payload.kind(),
    };
    if state.is_terminal() {
        return Err(illegal());
    }
    let target = match payload {
        EventPayload::InterventionApplied { .. } | EventPayload::Error { .. } => return Ok(state),
        EventPayload::StateChanged { from, to } => {
            return if *from == state && edge_allowed(state, *to) {
                Ok(*to)
            } else {
                Err(illegal())
            };
        }
        EventPayload::PlanProduced { .. } => match state {
            // a revised plan during review keeps the session where it is
            Planned | Reviewing => return Ok(state),
            _ => Planned,
        },
        EventPayload::ComponentGenerated { .. } => Generating,
        EventPayload::ReviewScored { .. } => Reviewing,
        EventPayload::RegenerationTriggered { .. } => Generating,
        EventPayload::SceneIntegrated { .. } => Integrating,
        EventPayload::WatermarkEmbedded { .. } => Protecting,
    };
    if target == state || edge_allowed(state, target) {
        // regeneration only happens from review; repeated review scores stay put
        if state == Generating
            && target == Generating
            && payload.kind() == EventKind::RegenerationTriggered
        {
            return Err(illegal());
        }
        Ok(target)
    } else {
        Err(illegal())
    }
}

/// First line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionHeader {
    pub format: String,
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub prompt: PromptText,
    pub user_hash: String,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub state: SessionState,
    pub events: Vec<Event>,
    pub metrics: Option<MetricsReport>,
}

impl SessionRecord {
    pub fn new(
        session_id: String,
        created_at: DateTime<Utc>,
        prompt: PromptText,
        user_hash: String,
        config: PipelineConfig,
    ) -> Self {
        Self {
            header: SessionHeader {
                format: SESSION_FORMAT.into(),
                session_id,
                created_at,
                prompt,
                user_hash,
                config,
            },
            state: SessionState::Created,
            events: Vec::new(),
            metrics: None,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.header.config
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq + 1)
    }

    /// Appends an event, advancing the state; the record is unchanged on error.
    pub fn transition(
        &mut self,
        timestamp: DateTime<Utc>,
        payload: EventPayload,
    ) -> Result<&Event, SessionError> {
        let state = next_state(self.state, &payload)?;
        if let EventPayload::WatermarkEmbedded { metrics, .. } = &payload {
            self.metrics = Some(*metrics);
        }
        self.state = state;
        self.events.push(Event {
            seq: self.next_seq(),
            timestamp,
            payload,
        });
        Ok(self.events.last().expect("just pushed"))
    }

    /// Rebuilds a record by folding `events` from Created.
    pub fn replay(header: SessionHeader, events: Vec<Event>) -> Result<Self, SessionError> {
        let mut record = Self {
            header,
            state: SessionState::Created,
            events: Vec::with_capacity(events.len()),
            metrics: None,
        };
        for e in events {
            let state = next_state(record.state, &e.payload)?;
            if let EventPayload::WatermarkEmbedded { metrics, .. } = &e.payload {
                record.metrics = Some(*metrics);
            }
            record.state = state;
            record.events.push(e);
        }
        Ok(record)
    }
}

pub fn header_line(header: &SessionHeader) -> String {
    serde_json::to_string(header).expect("header serializes")
}

pub fn event_line(event: &Event) -> String {
    serde_json::to_string(event).expect("event serializes")
}

/// One JSON object per line: the header, then every event in order.
pub fn serialize_session(record: &SessionRecord) -> Vec<u8> {
    let mut out = header_line(&record.header);
    out.push('\n');
    for e in &record.events {
        out.push_str(&event_line(e));
        out.push('\n');
    }
    out.into_bytes()
}

fn malformed(line: usize, err: &serde_json::Error) -> SessionError {
    SessionError::MalformedRecord {
        line,
        column: err.column(),
        message: err.to_string(),
    }
}

/// Parses a log and folds it. Lines are 1-based in errors. A final line
/// without its newline is treated as truncated.
pub fn deserialize_session(bytes: &[u8]) -> Result<SessionRecord, SessionError> {
    let text = std::str::from_utf8(bytes).map_err(|e| SessionError::MalformedRecord {
        line: bytes[..e.valid_up_to()]
            .iter()
            .filter(|b| **b == b'\n')
            .count()
            + 1,
        column: 0,
        message: e.to_string(),
    })?;
    if text.is_empty() {
        return Err(SessionError::MalformedRecord {
            line: 1,
            column: 0,
            message: "empty log".into(),
        });
    }
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    if !text.ends_with('\n') {
        return Err(SessionError::MalformedRecord {
            line: lines.len(),
            column: lines.last().map_or(0, |l| l.len()),
            message: "truncated record".into(),
        });
    }
    let header: SessionHeader = serde_json::from_str(lines[0]).map_err(|e| malformed(1, &e))?;
    if header.format != SESSION_FORMAT {
        return Err(SessionError::MalformedRecord {
            line: 1,
            column: 0,
            message: format!("unsupported format {:?}", header.format),
        });
    }
    let mut events: Vec<Event> = Vec::with_capacity(lines.len() - 1);
    for (i, line) in lines.iter().enumerate().skip(1) {
        let e: Event = serde_json::from_str(line).map_err(|err| malformed(i + 1, &err))?;
        if let Some(prev) = events.last() {
            if e.seq <= prev.seq {
                return Err(SessionError::MalformedRecord {
                    line: i + 1,
                    column: 0,
                    message: format!("seq {} does not follow {}", e.seq, prev.seq),
                });
            }
        }
        events.push(e);
    }
    SessionRecord::replay(header, events)
}
