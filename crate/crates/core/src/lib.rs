pub mod attack;
pub mod clock;
pub mod color;
pub mod config;
pub mod generator;
pub mod image;
pub mod integrator;
pub mod metrics;
pub mod orchestrator;
pub mod planner;
pub mod prompt;
pub mod protector;
pub mod reviewer;
pub mod session;

pub use clock::{Clock, FixedClock, SteppingClock, SystemClock};
pub use config::{Ablations, GeneratorParams, PipelineConfig, ProtectionParams, ReviewPolicy};
pub use image::{content_hash, psnr, ContentDigest, Image, ImageError, Layer};
pub use metrics::MetricsReport;
pub use planner::{PlanError, Subtask, SubtaskId, SubtaskPlan};
pub use prompt::PromptText;
