//! HTTP clients for hosted planner, generator and scorer models.

use std::io::Read;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use crate::config::{GeneratorParams, PipelineConfig};
use crate::generator::{Component, GeneratorBackend, GeneratorError};
use crate::image::{Image, Layer};
use crate::planner::{PlanError, PlanSource, PlannerBackend, Subtask, SubtaskPlan};
use crate::prompt::PromptText;
use crate::reviewer::{AlignmentScore, ReviewError, ScoreDetails, Scorer, ScorerKind};

pub const PLANNER_URL_VAR: &str = "AGENTMARK_PLANNER_URL";
pub const GENERATOR_URL_VAR: &str = "AGENTMARK_GENERATOR_URL";
pub const SCORER_URL_VAR: &str = "AGENTMARK_SCORER_URL";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
/// Few-shot template sent to the planner.
pub const PLANNER_TEMPLATE: &str = "decompose-v1";
const MAX_BODY: u64 = 64 << 20;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(timeout).build()
}

fn env_url(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

fn post(agent: &ureq::Agent, url: &str, body: serde_json::Value) -> Result<Vec<u8>, String> {
    let resp = agent
        .post(url)
        .set("Content-Type", "application/json")
        .send_string(&body.to_string())
        .map_err(|e| match e {
            ureq::Error::Status(code, _) => format!("{url} answered {code}"),
            other => other.to_string(),
        })?;
    let mut bytes = Vec::new();
    resp.into_reader()
        .take(MAX_BODY)
        .read_to_end(&mut bytes)
        .map_err(|e| e.to_string())?;
    Ok(bytes)
}

impl super::Backends {
    /// Local backends, with each agent replaced by its HTTP client when the
    /// matching endpoint variable is set.
    pub fn from_env(salt: crate::protector::WatermarkSalt) -> Self {
        let mut b = Self::local(salt);
        if let Some(p) = HttpPlanner::from_env() {
            b.planner = std::sync::Arc::new(p);
        }
        if let Some(g) = HttpGenerator::from_env() {
            b.generator = std::sync::Arc::new(g);
        }
        if let Some(s) = HttpScorer::from_env() {
            b.scorer = std::sync::Arc::new(s);
        }
        b
    }
}

#[derive(Debug, Clone)]
pub struct HttpPlanner {
    url: String,
    agent: ureq::Agent,
}

impl HttpPlanner {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout),
        }
    }

    pub fn from_env() -> Option<Self> {
        env_url(PLANNER_URL_VAR).map(|u| Self::new(u, DEFAULT_TIMEOUT))
    }
}

impl PlannerBackend for HttpPlanner {
    fn plan(
        &self,
        prompt: &PromptText,
        _config: &PipelineConfig,
    ) -> Result<SubtaskPlan, PlanError> {
        let body = json!({ "prompt": prompt.text(), "template": PLANNER_TEMPLATE });
        let bytes = post(&self.agent, &self.url, body).map_err(PlanError::PlannerUnavailable)?;
        let text = String::from_utf8(bytes).map_err(|e| PlanError::InvalidPlan(e.to_string()))?;
        let mut plan = SubtaskPlan::from_json(&text)?;
        plan.source = PlanSource::External;
        Ok(plan)
    }

    fn model_id(&self) -> String {
        format!("http-planner@{}", self.url)
    }
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    url: String,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout),
        }
    }

    pub fn from_env() -> Option<Self> {
        env_url(GENERATOR_URL_VAR).map(|u| Self::new(u, DEFAULT_TIMEOUT))
    }
}

/// PNG with alpha keeps its alpha plane; anything else is opaque.
fn decode_layer(bytes: &[u8]) -> Result<Layer, GeneratorError> {
    let unavailable =
        |m: String| GeneratorError::GeneratorUnavailable(format!("undecodable image: {m}"));
    if bytes.starts_with(b"P6") {
        return Ok(Layer::opaque(Image::from_ppm(bytes)?));
    }
    let decoded = image::load_from_memory(bytes).map_err(|e| unavailable(e.to_string()))?;
    let rgba = decoded.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let raw = rgba.as_raw();
    let rgb: Vec<u8> = raw
        .chunks_exact(4)
        .flat_map(|p| [p[0], p[1], p[2]])
        .collect();
    let alpha = raw
        .chunks_exact(4)
        .map(|p| f64::from(p[3]) / 255.0)
        .collect();
    Ok(Layer::new(Image::from_rgb8(w, h, &rgb)?, alpha)?)
}

impl GeneratorBackend for HttpGenerator {
    fn generate(
        &self,
        subtask: &Subtask,
        seed: u64,
        params: &GeneratorParams,
    ) -> Result<Component, GeneratorError> {
        let body = json!({ "subtask": subtask, "params": params, "seed": seed });
        let bytes =
            post(&self.agent, &self.url, body).map_err(GeneratorError::GeneratorUnavailable)?;
        let layer = decode_layer(&bytes)?;
        Ok(Component {
            subtask_id: subtask.id,
            layer,
            seed_used: seed,
            attempt: 0,
            score: None,
            glyph: None,
        })
    }

    fn model_id(&self) -> String {
        format!("http-generator@{}", self.url)
    }
}

#[derive(Debug, Clone)]
pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout),
        }
    }

    pub fn from_env() -> Option<Self> {
        env_url(SCORER_URL_VAR).map(|u| Self::new(u, DEFAULT_TIMEOUT))
    }
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
    #[serde(default)]
    details: Option<ScoreDetails>,
}

impl Scorer for HttpScorer {
    fn score(
        &self,
        component: &Component,
        prompt: &PromptText,
        subtask: &Subtask,
    ) -> Result<AlignmentScore, ReviewError> {
        let body = json!({
            "image": B64.encode(component.image().to_png()),
            "prompt": prompt.text(),
            "subtask": subtask,
        });
        let bytes = post(&self.agent, &self.url, body).map_err(ReviewError::ScorerUnavailable)?;
        let reply: ScoreReply = serde_json::from_slice(&bytes)
            .map_err(|e| ReviewError::ScorerUnavailable(format!("bad reply: {e}")))?;
        if !(0.0..=1.0).contains(&reply.score) {
            return Err(ReviewError::ScorerUnavailable(format!(
                "score {} outside [0, 1]",
                reply.score
            )));
        }
        Ok(AlignmentScore {
            value: reply.score,
            scorer: ScorerKind::External,
            details: reply.details,
        })
    }

    fn model_id(&self) -> String {
        format!("http-scorer@{}", self.url)
    }
}
