//! Drives a session through plan, generate, review, integrate and protect,
//! one stage per `advance`, with human interventions between stages.
//!
//! The event log is the source of truth. Resuming a session re-executes the
//! stages and interventions it records, checks every regenerated event
//! against the log and reuses the logged timestamps, so the continued session
//! ends in the same artifact.

pub mod corpus;
pub mod remote;
mod store;

use std::collections::VecDeque;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::{EventSink, FileSink, FileStore, MemorySink, StoreError};

use crate::attack::{jpeg_roundtrip, quick_suite, recoverability_penalty, POSTHOC_EXPORT_QUALITY};
use crate::clock::{Clock, SystemClock};
use crate::config::{PipelineConfig, ProtectionParams};
use crate::generator::{
    retry_seed, subtask_seed, Component, GeneratorBackend, GeneratorError, ProceduralGenerator,
};
use crate::image::{content_hash, psnr, Image};
use crate::integrator::{
    integrate, resolve_layout, IntegrationError, IntegrationReport, Layout, Scene,
};
use crate::metrics::MetricsReport;
use crate::planner::{
    apply_plan_edit, plan_loss, GrammarPlanner, PlanEdit, PlanError, PlannerBackend, Subtask,
    SubtaskId, SubtaskPlan,
};
use crate::prompt::PromptText;
use crate::protector::{
    derive_key, embed, hash_user, protection_loss, timestamp_text, ModelIds, ProtectError,
    ProvenanceRecord, WatermarkParams, WatermarkSalt,
};
use crate::reviewer::{
    review_gate, ComponentReview, GateEvent, GateSettings, ReviewError, ReviewReport, Scorer,
    StubScorer,
};
use crate::session::{
    Event, EventKind, EventPayload, Intervention, InterventionKind, SessionError, SessionRecord,
    SessionState,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session is {0}; no further stages")]
    Finished(SessionState),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{kind} is not allowed while {state}")]
    IllegalIntervention {
        state: SessionState,
        kind: &'static str,
    },
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error("not ready: session is {0}")]
    NotReady(SessionState),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Protect(#[from] ProtectError),
    #[error("replay diverged at seq {seq}: log has {logged}, re-execution produced {produced}")]
    ReplayDivergence {
        seq: u64,
        logged: EventKind,
        produced: EventKind,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl OrchestratorError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::UnknownSession(_) => "unknown_session",
            OrchestratorError::Finished(_) => "session_finished",
            OrchestratorError::Session(SessionError::IllegalTransition { .. }) => {
                "illegal_transition"
            }
            OrchestratorError::Session(SessionError::MalformedRecord { .. }) => "malformed_record",
            OrchestratorError::IllegalIntervention { .. } => "illegal_intervention",
            OrchestratorError::InvalidIntervention(_) => "invalid_intervention",
            OrchestratorError::NotReady(_) => "not_ready",
            OrchestratorError::InvalidConfig(_) => "invalid_config",
            OrchestratorError::Plan(PlanError::PlannerUnavailable(_)) => "planner_unavailable",
            OrchestratorError::Plan(_) => "plan_error",
            OrchestratorError::Generator(GeneratorError::GeneratorUnavailable(_))
            | OrchestratorError::Review(ReviewError::Generator(
                GeneratorError::GeneratorUnavailable(_),
            )) => "generator_unavailable",
            OrchestratorError::Generator(_) => "generator_error",
            OrchestratorError::Review(ReviewError::SessionFailure { .. }) => "session_failure",
            OrchestratorError::Review(ReviewError::ScorerUnavailable(_)) => "scorer_unavailable",
            OrchestratorError::Review(_) => "review_error",
            OrchestratorError::Integration(_) => "integration_error",
            OrchestratorError::Protect(_) => "protection_error",
            OrchestratorError::ReplayDivergence { .. } => "replay_divergence",
            OrchestratorError::Store(_) => "store_error",
        }
    }
}

/// Agents, clock and secret used by a session.
#[derive(Clone)]
pub struct Backends {
    pub planner: Arc<dyn PlannerBackend>,
    pub generator: Arc<dyn GeneratorBackend>,
    pub scorer: Arc<dyn Scorer>,
    pub clock: Arc<dyn Clock>,
    pub salt: WatermarkSalt,
}

impl Backends {
    /// Grammar planner, procedural generator, stub scorer, system clock.
    pub fn local(salt: WatermarkSalt) -> Self {
        Self {
            planner: Arc::new(GrammarPlanner),
            generator: Arc::new(ProceduralGenerator),
            scorer: Arc::new(StubScorer),
            clock: Arc::new(SystemClock),
            salt,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn model_ids(&self) -> ModelIds {
        ModelIds {
            planner: self.planner.model_id(),
            generator: self.generator.model_id(),
            scorer: self.scorer.model_id(),
        }
    }
}

/// Protected image with its provenance and loss diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub session_id: String,
    pub image: Image,
    pub provenance: ProvenanceRecord,
    pub metrics: MetricsReport,
}

impl Artifact {
    pub fn ppm(&self) -> Vec<u8> {
        self.image.to_ppm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutAdjustment {
    pub subtask_id: SubtaskId,
    pub dx: i64,
    pub dy: i64,
    pub scale: f64,
}

#[derive(Default)]
struct Work {
    plan: Option<SubtaskPlan>,
    /// Current component per subtask, in plan order.
    components: Vec<Component>,
    review: Option<ReviewReport>,
    adjustments: Vec<LayoutAdjustment>,
    scene: Option<(Scene, IntegrationReport)>,
    protection: ProtectionParams,
    artifact: Option<Artifact>,
}

/// A live session.
pub struct Engine {
    record: SessionRecord,
    backends: Backends,
    work: Work,
    /// Logged events still to be matched while resuming.
    replay: VecDeque<Event>,
    stamp: Option<DateTime<Utc>>,
    sink: Option<Box<dyn EventSink>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("session_id", &self.record.session_id())
            .field("state", &self.record.state)
            .field("events", &self.record.events.len())
            .finish()
    }
}

impl Engine {
    /// Starts a session in Created. `user` is hashed before it is stored.
    pub fn create(
        session_id: String,
        prompt: PromptText,
        config: PipelineConfig,
        user: &str,
        backends: Backends,
        mut sink: Option<Box<dyn EventSink>>,
    ) -> Result<Self, OrchestratorError> {
        config
            .validate()
            .map_err(|e| OrchestratorError::InvalidConfig(e.0))?;
        let created_at = backends.clock.now();
        let record = SessionRecord::new(session_id, created_at, prompt, hash_user(user), config);
        if let Some(s) = sink.as_mut() {
            s.write_header(&record.header)?;
        }
        Ok(Self::from_record(record, backends, sink))
    }

    fn from_record(
        record: SessionRecord,
        backends: Backends,
        sink: Option<Box<dyn EventSink>>,
    ) -> Self {
        let protection = record.config().protection.clone();
        Self {
            record,
            backends,
            work: Work {
                protection,
                ..Work::default()
            },
            replay: VecDeque::new(),
            stamp: None,
            sink,
        }
    }

    /// Rebuilds a session from its log by re-executing it. New events
    /// (a stage cut short by a crash) are appended to `sink`.
    pub fn resume(
        logged: SessionRecord,
        backends: Backends,
        sink: Option<Box<dyn EventSink>>,
    ) -> Result<Self, OrchestratorError> {
        let fresh = SessionRecord::new(
            logged.header.session_id.clone(),
            logged.header.created_at,
            logged.header.prompt.clone(),
            logged.header.user_hash.clone(),
            logged.header.config.clone(),
        );
        let mut engine = Self::from_record(fresh, backends, sink);
        engine.replay = logged.events.into();
        while let Some(next) = engine.replay.front() {
            if engine.record.state.is_terminal() {
                return Err(OrchestratorError::ReplayDivergence {
                    seq: next.seq,
                    logged: next.kind(),
                    produced: EventKind::StateChanged,
                });
            }
            let result = match &next.payload {
                EventPayload::InterventionApplied { intervention } => {
                    let iv = intervention.clone();
                    engine.intervene(iv)
                }
                _ => engine.step(),
            };
            match result {
                Ok(()) => {}
                // a logged failure is reproduced by the stage itself
                Err(e) if !engine.record.state.is_terminal() || is_fatal(&e) => return Err(e),
                Err(_) => {}
            }
        }
        Ok(engine)
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn session_id(&self) -> &str {
        self.record.session_id()
    }

    pub fn state(&self) -> SessionState {
        self.record.state
    }

    pub fn config(&self) -> &PipelineConfig {
        self.record.config()
    }

    pub fn plan(&self) -> Option<&SubtaskPlan> {
        self.work.plan.as_ref()
    }

    pub fn components(&self) -> &[Component] {
        &self.work.components
    }

    pub fn review(&self) -> Option<&ReviewReport> {
        self.work.review.as_ref()
    }

    pub fn scene(&self) -> Option<&Scene> {
        self.work.scene.as_ref().map(|(s, _)| s)
    }

    pub fn layout(&self) -> Option<&Layout> {
        self.scene().map(|s| &s.layout)
    }

    pub fn protection(&self) -> &ProtectionParams {
        &self.work.protection
    }

    pub fn artifact(&self) -> Result<&Artifact, OrchestratorError> {
        match (&self.work.artifact, self.record.state) {
            (Some(a), SessionState::Done) => Ok(a),
            (_, state) => Err(OrchestratorError::NotReady(state)),
        }
    }

    pub fn metrics_report(&self) -> Result<MetricsReport, OrchestratorError> {
        self.artifact().map(|a| a.metrics)
    }

    /// Runs one stage, or every remaining stage under the no-HITL ablation.
    pub fn advance(&mut self) -> Result<SessionState, OrchestratorError> {
        loop {
            self.step()?;
            if self.record.state.is_terminal() || !self.config().ablations.no_hitl {
                return Ok(self.record.state);
            }
        }
    }

    /// Runs every remaining stage.
    pub fn run_to_end(&mut self) -> Result<SessionState, OrchestratorError> {
        while !self.record.state.is_terminal() {
            self.step()?;
        }
        Ok(self.record.state)
    }

    fn timestamp(&mut self) -> DateTime<Utc> {
        if let Some(t) = self.stamp {
            return t;
        }
        let t = match self.replay.front() {
            Some(e) => e.timestamp,
            None => self.backends.clock.now(),
        };
        self.stamp = Some(t);
        t
    }

    fn emit(&mut self, payload: EventPayload) -> Result<(), OrchestratorError> {
        if let Some(logged) = self.replay.pop_front() {
            self.stamp = None;
            if logged.payload != payload || logged.seq != self.record.next_seq() {
                return Err(OrchestratorError::ReplayDivergence {
                    seq: logged.seq,
                    logged: logged.kind(),
                    produced: payload.kind(),
                });
            }
            self.record.transition(logged.timestamp, payload)?;
            return Ok(());
        }
        let t = self.timestamp();
        self.stamp = None;
        let event = self.record.transition(t, payload)?.clone();
        if let Some(s) = self.sink.as_mut() {
            s.append(&event)?;
        }
        Ok(())
    }

    fn fail(&mut self, err: OrchestratorError) -> OrchestratorError {
        let from = self.record.state;
        if from.is_terminal() {
            return err;
        }
        let logged = self
            .emit(EventPayload::Error {
                code: err.code().into(),
                message: err.to_string(),
            })
            .and_then(|_| {
                self.emit(EventPayload::StateChanged {
                    from,
                    to: SessionState::Failed,
                })
            });
        match logged {
            Ok(()) => err,
            Err(e) => e,
        }
    }

    fn step(&mut self) -> Result<(), OrchestratorError> {
        let state = self.record.state;
        let result = match state {
            SessionState::Created => self.stage_plan(),
            SessionState::Planned => self.stage_generate(),
            SessionState::Generating if !self.config().ablations.no_reviewer => self.stage_review(),
            SessionState::Generating | SessionState::Reviewing => self.stage_integrate(),
            SessionState::Integrating => self.stage_protect(),
            SessionState::Protecting => self.emit(EventPayload::StateChanged {
                from: state,
                to: SessionState::Done,
            }),
            SessionState::Done | SessionState::Failed => {
                return Err(OrchestratorError::Finished(state))
            }
        };
        match result {
            Err(e) if is_fatal(&e) => Err(e),
            Err(e) => Err(self.fail(e)),
            Ok(()) => Ok(()),
        }
    }

    fn plan_ref(&self) -> Result<&SubtaskPlan, OrchestratorError> {
        self.work
            .plan
            .as_ref()
            .ok_or(OrchestratorError::NotReady(self.record.state))
    }

    fn stage_plan(&mut self) -> Result<(), OrchestratorError> {
        let plan = self
            .backends
            .planner
            .plan(&self.record.header.prompt, self.config())?;
        plan.validate()?;
        let loss = plan_loss(&plan);
        self.work.plan = Some(plan.clone());
        self.emit(EventPayload::PlanProduced {
            plan,
            plan_loss: loss,
        })
    }

    fn stage_generate(&mut self) -> Result<(), OrchestratorError> {
        let plan = self.plan_ref()?.clone();
        let config = self.config().clone();
        let generator = Arc::clone(&self.backends.generator);
        let components: Vec<Component> = plan
            .subtasks
            .par_iter()
            .map(|s| {
                let seed = subtask_seed(config.seed, s.id);
                let mut c = generator.generate(s, seed, &config.generator)?;
                c.subtask_id = s.id;
                c.seed_used = seed;
                c.attempt = 0;
                Ok(c)
            })
            .collect::<Result<_, GeneratorError>>()?;
        for c in &components {
            self.emit(generated(c))?;
        }
        self.work.components = components;
        Ok(())
    }

    fn gate_settings(&self, enabled: bool) -> GateSettings {
        let config = self.config();
        GateSettings {
            tau: config.tau,
            max_retries: config.max_retries,
            policy: config.review_policy,
            enabled,
        }
    }

    /// Runs the review gate over `components` and logs what happened.
    fn run_gate(
        &mut self,
        components: Vec<Component>,
        enabled: bool,
    ) -> Result<(Vec<Component>, ReviewReport), OrchestratorError> {
        let plan = self.plan_ref()?.clone();
        let settings = self.gate_settings(enabled);
        let generator = Arc::clone(&self.backends.generator);
        let scorer = Arc::clone(&self.backends.scorer);
        let params = self.config().generator.clone();
        let prompt = self.record.header.prompt.clone();
        let mut log = Vec::new();
        let mut regen = |c: &Component, s: &Subtask| -> Result<Component, GeneratorError> {
            crate::generator::regenerate(generator.as_ref(), c, s, &params, settings.max_retries)
        };
        let mut record = |e: GateEvent<'_>| {
            log.push(match e {
                GateEvent::Scored {
                    subtask_id,
                    attempt,
                    score,
                    passed,
                } => EventPayload::ReviewScored {
                    subtask_id,
                    attempt,
                    score: score.value,
                    passed,
                    overridden: false,
                },
                GateEvent::Regenerating {
                    subtask_id,
                    attempt,
                    seed,
                    reason,
                } => EventPayload::RegenerationTriggered {
                    subtask_id,
                    attempt,
                    seed,
                    reason,
                },
                GateEvent::Generated(c) => generated(c),
            })
        };
        let out = review_gate(
            components,
            &plan.subtasks,
            &prompt,
            scorer.as_ref(),
            settings,
            &mut regen,
            &mut record,
        );
        for p in log {
            self.emit(p)?;
        }
        Ok(out?)
    }

    fn stage_review(&mut self) -> Result<(), OrchestratorError> {
        let components = std::mem::take(&mut self.work.components);
        let (kept, report) = self.run_gate(components, true)?;
        self.work.components = kept;
        self.work.review = Some(report);
        Ok(())
    }

    fn stage_integrate(&mut self) -> Result<(), OrchestratorError> {
        if self.work.review.is_none() {
            // no-reviewer ablation: measure scores for the loss without gating
            let components = std::mem::take(&mut self.work.components);
            let (kept, report) = self.run_gate(components, false)?;
            self.work.components = kept;
            self.work.review = Some(report);
        }
        let size = self.config().scene_size;
        let mut layout = resolve_layout(self.plan_ref()?, size, size)?;
        for a in &self.work.adjustments {
            layout.adjust(a.subtask_id, a.dx, a.dy, a.scale)?;
        }
        let paste_only = self.config().ablations.no_integration;
        let (scene, report) = integrate(&self.work.components, &layout, paste_only)?;
        let payload = EventPayload::SceneIntegrated {
            digest: content_hash(&scene.image),
            stage: report.stage,
            harmonize_strength: report.harmonize_strength,
            coherence_loss: report.coherence_after,
            adjacency: layout.adjacency.iter().copied().collect(),
        };
        self.work.scene = Some((scene, report));
        self.emit(payload)
    }

    fn stage_protect(&mut self) -> Result<(), OrchestratorError> {
        let (scene, integration) = self
            .work
            .scene
            .as_ref()
            .ok_or(OrchestratorError::NotReady(self.record.state))?;
        let config = self.config().clone();
        let posthoc = config.ablations.posthoc_protection;
        let original = if posthoc {
            jpeg_roundtrip(&scene.image, POSTHOC_EXPORT_QUALITY)
        } else {
            scene.image.clone()
        };
        let l_int = integration.coherence_after;
        let digest_pre = content_hash(&original);
        let t = self.timestamp();
        let key = derive_key(
            &digest_pre,
            &t,
            &self.backends.salt,
            &self.work.protection,
            original.dims(),
        )?;
        let marked = embed(&original, &key)?;
        let digest_post = content_hash(&marked);
        let penalty = if config.robustness_suite {
            recoverability_penalty(&marked, &key, &quick_suite(config.seed))
        } else {
            0.0
        };
        let l_prot = protection_loss(&original, &marked, penalty, config.alpha)?;
        let l_plan = plan_loss(self.plan_ref()?);
        let l_rev = self.work.review.as_ref().map_or(0.0, |r| r.l_rev);
        let metrics = MetricsReport::new(l_plan, l_rev, l_int, l_prot);
        let mut recorded = config.clone();
        recorded.protection = self.work.protection.clone();
        let provenance = ProvenanceRecord::new(
            timestamp_text(&t),
            self.backends.model_ids(),
            self.record.header.user_hash.clone(),
            &key,
            digest_pre,
            digest_post,
            posthoc,
            recorded,
        );
        let payload = EventPayload::WatermarkEmbedded {
            digest_pre,
            digest_post,
            psnr_db: psnr(&original, &marked).map_err(ProtectError::from)?,
            amplitude: key.params.amplitude,
            chips_per_bit: key.params.chips_per_bit,
            posthoc,
            recoverability_penalty: penalty,
            metrics,
        };
        self.work.artifact = Some(Artifact {
            session_id: self.session_id().to_owned(),
            image: marked,
            provenance,
            metrics,
        });
        self.emit(payload)?;
        self.emit(EventPayload::StateChanged {
            from: SessionState::Protecting,
            to: SessionState::Done,
        })
    }

    /// Applies a human intervention and logs it with its consequences.
    pub fn intervene(&mut self, intervention: Intervention) -> Result<(), OrchestratorError> {
        let state = self.record.state;
        if !intervention.kind.allowed_in(state) {
            return Err(OrchestratorError::IllegalIntervention {
                state,
                kind: intervention.kind.name(),
            });
        }
        let invalid = |m: String| OrchestratorError::InvalidIntervention(m);
        // validate before anything is logged
        let edited = match &intervention.kind {
            InterventionKind::EditPlan { edit } => {
                Some(apply_plan_edit(self.plan_ref()?, edit).map_err(|e| invalid(e.to_string()))?)
            }
            InterventionKind::OverrideReview { subtask_id, .. } => {
                let known = self
                    .work
                    .review
                    .as_ref()
                    .and_then(|r| r.get(*subtask_id))
                    .is_some();
                if !known {
                    return Err(invalid(format!(
                        "no reviewed component for subtask {subtask_id}"
                    )));
                }
                None
            }
            InterventionKind::AdjustLayout {
                subtask_id, scale, ..
            } => {
                let fg = self.plan_ref()?.foreground().any(|s| s.id == *subtask_id);
                if !fg {
                    return Err(invalid(format!("no foreground subtask {subtask_id}")));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(invalid("scale must be positive".into()));
                }
                None
            }
            InterventionKind::SetProtectionParams {
                amplitude,
                chips_per_bit,
            } => {
                let size = self.config().scene_size;
                let p = ProtectionParams {
                    amplitude: *amplitude,
                    chips_per_bit: *chips_per_bit,
                };
                WatermarkParams::resolve(&p, size, size).map_err(|e| invalid(e.to_string()))?;
                None
            }
            InterventionKind::Abort { .. } => None,
        };
        self.emit(EventPayload::InterventionApplied {
            intervention: intervention.clone(),
        })?;
        let result = match intervention.kind {
            InterventionKind::EditPlan { edit } => {
                self.replan(edited.expect("validated edit"), &edit)
            }
            InterventionKind::OverrideReview { subtask_id, accept } => {
                self.override_review(subtask_id, accept)
            }
            InterventionKind::AdjustLayout {
                subtask_id,
                dx,
                dy,
                scale,
            } => {
                self.work.adjustments.push(LayoutAdjustment {
                    subtask_id,
                    dx,
                    dy,
                    scale,
                });
                if state == SessionState::Integrating {
                    self.stage_integrate()
                } else {
                    Ok(())
                }
            }
            InterventionKind::SetProtectionParams {
                amplitude,
                chips_per_bit,
            } => {
                self.work.protection = ProtectionParams {
                    amplitude,
                    chips_per_bit,
                };
                Ok(())
            }
            InterventionKind::Abort { .. } => self.emit(EventPayload::StateChanged {
                from: state,
                to: SessionState::Failed,
            }),
        };
        match result {
            Err(e) if is_fatal(&e) => Err(e),
            Err(e) => Err(self.fail(e)),
            Ok(()) => Ok(()),
        }
    }

    fn replan(&mut self, plan: SubtaskPlan, edit: &PlanEdit) -> Result<(), OrchestratorError> {
        let touched = edit.touched(&plan);
        let loss = plan_loss(&plan);
        self.work.plan = Some(plan.clone());
        self.emit(EventPayload::PlanProduced {
            plan: plan.clone(),
            plan_loss: loss,
        })?;
        // layout adjustments for removed subtasks no longer apply
        self.work
            .adjustments
            .retain(|a| plan.foreground().any(|s| s.id == a.subtask_id));
        if self.record.state != SessionState::Reviewing {
            return Ok(());
        }
        let live: Vec<SubtaskId> = plan.subtasks.iter().map(|s| s.id).collect();
        self.work
            .components
            .retain(|c| live.contains(&c.subtask_id));
        if let Some(r) = self.work.review.as_mut() {
            r.components.retain(|c| live.contains(&c.subtask_id));
            r.overridden.retain(|id| live.contains(id));
        }
        if let Some(id) = touched {
            let subtask = plan.get(id).expect("touched subtask exists").clone();
            let previous = self
                .work
                .components
                .iter()
                .find(|c| c.subtask_id == id)
                .cloned();
            let (attempt, seed) = match &previous {
                Some(p) => (p.attempt + 1, retry_seed(p.seed_used, p.attempt + 1)),
                None => (0, subtask_seed(self.config().seed, id)),
            };
            self.emit(EventPayload::RegenerationTriggered {
                subtask_id: id,
                attempt,
                seed,
                reason: "plan edited".into(),
            })?;
            let mut c =
                self.backends
                    .generator
                    .generate(&subtask, seed, &self.config().generator)?;
            c.subtask_id = id;
            c.seed_used = seed;
            c.attempt = attempt;
            self.emit(generated(&c))?;
            let (mut kept, report) = self.run_gate(vec![c], true)?;
            let c = kept.pop().expect("one component in, one out");
            let review = report.components.into_iter().next().expect("one review");
            self.replace_component(c, review, false);
        }
        let tau = self.config().tau;
        if let Some(r) = self.work.review.as_mut() {
            r.recompute_loss(tau);
        }
        Ok(())
    }

    fn replace_component(&mut self, c: Component, review: ComponentReview, overridden: bool) {
        let id = c.subtask_id;
        match self.work.components.iter_mut().find(|x| x.subtask_id == id) {
            Some(slot) => *slot = c,
            None => self.work.components.push(c),
        }
        let order: Vec<SubtaskId> = self
            .plan_ref()
            .map(|p| p.subtasks.iter().map(|s| s.id).collect())
            .unwrap_or_default();
        self.work.components.sort_by_key(|c| {
            order
                .iter()
                .position(|i| *i == c.subtask_id)
                .unwrap_or(usize::MAX)
        });
        let report = self.work.review.get_or_insert_with(ReviewReport::default);
        match report.components.iter_mut().find(|r| r.subtask_id == id) {
            Some(slot) => *slot = review,
            None => report.components.push(review),
        }
        report.components.sort_by_key(|r| {
            order
                .iter()
                .position(|i| *i == r.subtask_id)
                .unwrap_or(usize::MAX)
        });
        if overridden {
            report.overridden.insert(id);
        } else {
            report.overridden.remove(&id);
        }
    }

    fn override_review(&mut self, id: SubtaskId, accept: bool) -> Result<(), OrchestratorError> {
        let tau = self.config().tau;
        let current = self
            .work
            .components
            .iter()
            .find(|c| c.subtask_id == id)
            .cloned()
            .ok_or_else(|| {
                OrchestratorError::InvalidIntervention(format!("no component for subtask {id}"))
            })?;
        if accept {
            let mut review = self
                .work
                .review
                .as_ref()
                .and_then(|r| r.get(id))
                .cloned()
                .expect("validated");
            review.passed = true;
            review.flagged = false;
            self.emit(EventPayload::ReviewScored {
                subtask_id: id,
                attempt: current.attempt,
                score: review.final_score,
                passed: true,
                overridden: true,
            })?;
            self.replace_component(current, review, true);
        } else {
            let subtask = self
                .plan_ref()?
                .get(id)
                .expect("component has a subtask")
                .clone();
            let attempt = current.attempt + 1;
            let seed = retry_seed(current.seed_used, attempt);
            self.emit(EventPayload::RegenerationTriggered {
                subtask_id: id,
                attempt,
                seed,
                reason: "rejected by reviewer override".into(),
            })?;
            let mut c =
                self.backends
                    .generator
                    .generate(&subtask, seed, &self.config().generator)?;
            c.subtask_id = id;
            c.seed_used = seed;
            c.attempt = attempt;
            self.emit(generated(&c))?;
            let score = self
                .backends
                .scorer
                .score(&c, &self.record.header.prompt, &subtask)?;
            c.score = Some(score.value);
            let passed = score.value >= tau;
            self.emit(EventPayload::ReviewScored {
                subtask_id: id,
                attempt,
                score: score.value,
                passed,
                overridden: false,
            })?;
            let attempts = self
                .work
                .review
                .as_ref()
                .and_then(|r| r.get(id))
                .map_or(1, |r| r.attempts)
                + 1;
            let review = ComponentReview {
                subtask_id: id,
                attempts,
                final_score: score.value,
                passed: true,
                flagged: !passed,
            };
            self.replace_component(c, review, false);
        }
        if let Some(r) = self.work.review.as_mut() {
            r.recompute_loss(tau);
        }
        Ok(())
    }
}

/// Errors that must not be logged as a session failure.
fn is_fatal(e: &OrchestratorError) -> bool {
    matches!(
        e,
        OrchestratorError::ReplayDivergence { .. }
            | OrchestratorError::Store(_)
            | OrchestratorError::Finished(_)
    )
}

fn generated(c: &Component) -> EventPayload {
    EventPayload::ComponentGenerated {
        subtask_id: c.subtask_id,
        seed: c.seed_used,
        attempt: c.attempt,
        digest: c.digest(),
    }
}

/// Creates a session and runs it to completion without pausing.
pub fn run_pipeline(
    prompt: PromptText,
    config: PipelineConfig,
    user: &str,
    backends: Backends,
) -> Result<Artifact, OrchestratorError> {
    let id = uuid::Uuid::new_v4().to_string();
    let mut engine = Engine::create(id, prompt, config, user, backends, None)?;
    engine.run_to_end()?;
    engine.artifact().cloned()
}
