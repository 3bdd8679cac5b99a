//! Shared inputs for the benchmarks.

use std::sync::Arc;

use chrono::{DateTime, Utc};

use agentmark_core::generator::{subtask_seed, Component, GeneratorBackend, ProceduralGenerator};
use agentmark_core::integrator::{integrate, resolve_layout, Scene};
use agentmark_core::orchestrator::Backends;
use agentmark_core::planner::{GrammarPlanner, PlannerBackend};
use agentmark_core::protector::{derive_key, WatermarkKey, WatermarkSalt};
use agentmark_core::{
    content_hash, FixedClock, Image, PipelineConfig, PromptText, ProtectionParams,
};

pub const PROMPT: &str = "a red dragon flying above a medieval castle at sunset";

pub fn epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).expect("valid timestamp")
}

pub fn backends() -> Backends {
    Backends::local(WatermarkSalt::new("bench")).with_clock(Arc::new(FixedClock(epoch())))
}

pub fn config(size: usize) -> PipelineConfig {
    PipelineConfig {
        scene_size: size,
        seed: 1,
        ..PipelineConfig::default()
    }
}

/// Generated components for `PROMPT`, unreviewed.
pub fn components(size: usize) -> (Vec<Component>, Scene) {
    let cfg = config(size);
    let plan = GrammarPlanner
        .plan(&PromptText::new(PROMPT).expect("prompt"), &cfg)
        .expect("plan");
    let components: Vec<Component> = plan
        .subtasks
        .iter()
        .map(|s| {
            ProceduralGenerator
                .generate(s, subtask_seed(cfg.seed, s.id), &cfg.generator)
                .expect("component")
        })
        .collect();
    let layout = resolve_layout(&plan, size, size).expect("layout");
    let (pasted, _) = integrate(&components, &layout, true).expect("paste");
    (components, pasted)
}

/// A fully integrated scene.
pub fn scene(size: usize) -> Image {
    let (components, pasted) = components(size);
    let (scene, _) = integrate(&components, &pasted.layout, false).expect("integrate");
    scene.image
}

pub fn key_for(image: &Image) -> WatermarkKey {
    derive_key(
        &content_hash(image),
        &epoch(),
        &WatermarkSalt::new("bench"),
        &ProtectionParams::default(),
        image.dims(),
    )
    .expect("key")
}
