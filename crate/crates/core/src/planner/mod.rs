//! Prompt decomposition into subtasks with attributes and layout constraints.

mod decompose;
mod edit;
mod grid;
pub mod lexicon;
mod parse;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decompose::decompose;
pub use edit::{apply_plan_edit, AttributePatch, PlanEdit};
pub use grid::{resolve_grid, GridAssignment};
pub use lexicon::{GridCell, HueTag, Lighting, Pose, RelationKind, SizeTag, Style};
pub use parse::{parse_prompt, ClauseAttributes, ClauseRelation, EntityClause, PromptAst};

use crate::config::PipelineConfig;
use crate::prompt::PromptText;

pub const PLAN_SCHEMA: &str = "agentmark.plan/v1";

pub type SubtaskId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no entity clause could be parsed from the prompt")]
    NoEntityFound,
    #[error("layout relations are cyclic: {0}")]
    CyclicLayout(String),
    #[error("layout cannot be satisfied on the 3x3 grid: {0}")]
    UnsatisfiableLayout(String),
    #[error("unknown subtask {0}")]
    UnknownSubtask(SubtaskId),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("planner service unavailable: {0}")]
    PlannerUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskKind {
    Foreground,
    Background,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<HueTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<SizeTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
    /// Background subtasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lighting: Option<Lighting>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relation {
    pub relation: RelationKind,
    pub target: SubtaskId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConstraint {
    #[serde(default)]
    pub anchor: Option<GridCell>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    /// Larger is nearer; the background sits at depth 0.
    pub depth: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtask {
    pub id: SubtaskId,
    #[serde(rename = "object")]
    pub entity: String,
    pub kind: SubtaskKind,
    #[serde(default)]
    pub attributes: Attributes,
    #[serde(rename = "constraints", default)]
    pub layout: Option<LayoutConstraint>,
}

impl Subtask {
    pub fn is_background(&self) -> bool {
        self.kind == SubtaskKind::Background
    }

    pub fn depth(&self) -> i32 {
        match (&self.layout, self.kind) {
            (Some(l), _) => l.depth,
            (None, SubtaskKind::Background) => 0,
            (None, SubtaskKind::Foreground) => 1,
        }
    }

    pub fn relations(&self) -> &[Relation] {
        self.layout.as_ref().map_or(&[], |l| &l.relations)
    }

    pub fn anchor(&self) -> Option<GridCell> {
        self.layout.as_ref().and_then(|l| l.anchor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanSource {
    Grammar,
    External,
}

/// Ordered subtasks plus the parse coverage that feeds the planning loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskPlan {
    pub schema: String,
    pub subtasks: Vec<Subtask>,
    pub coverage: f64,
    pub source: PlanSource,
}

impl SubtaskPlan {
    pub fn k(&self) -> usize {
        self.subtasks.len()
    }

    pub fn get(&self, id: SubtaskId) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.id == id)
    }

    pub fn foreground(&self) -> impl Iterator<Item = &Subtask> {
        self.subtasks.iter().filter(|s| !s.is_background())
    }

    pub fn background(&self) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.is_background())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Parses and validates a plan document.
    pub fn from_json(s: &str) -> Result<SubtaskPlan, PlanError> {
        let plan: SubtaskPlan =
            serde_json::from_str(s).map_err(|e| PlanError::InvalidPlan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    /// Checks every structural invariant, including acyclic and satisfiable layout.
    pub fn validate(&self) -> Result<(), PlanError> {
        let invalid = |m: String| Err(PlanError::InvalidPlan(m));
        if self.schema != PLAN_SCHEMA {
            return invalid(format!("unsupported schema {:?}", self.schema));
        }
        if self.subtasks.is_empty() {
            return invalid("plan has no subtasks".into());
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return invalid(format!("coverage {} outside (0, 1]", self.coverage));
        }
        let mut ids = BTreeSet::new();
        for s in &self.subtasks {
            if !ids.insert(s.id) {
                return invalid(format!("duplicate subtask id {}", s.id));
            }
            if s.entity.trim().is_empty() {
                return invalid(format!("subtask {} has an empty entity", s.id));
            }
        }
        if self.foreground().next().is_none() {
            return invalid("plan needs at least one foreground subtask".into());
        }
        if self.subtasks.iter().filter(|s| s.is_background()).count() > 1 {
            return invalid("plan has more than one background subtask".into());
        }
        for s in &self.subtasks {
            for r in s.relations() {
                match self.get(r.target) {
                    None => return Err(PlanError::UnknownSubtask(r.target)),
                    Some(t) if t.is_background() || s.is_background() => {
                        return invalid(format!(
                            "relation {} -> {} involves the background",
                            s.id, r.target
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        check_depths(self)?;
        resolve_grid(self).map(|_| ())
    }
}

fn check_depths(plan: &SubtaskPlan) -> Result<(), PlanError> {
    for s in plan.foreground() {
        if s.depth() < 1 {
            return Err(PlanError::InvalidPlan(format!(
                "foreground {} has depth < 1",
                s.id
            )));
        }
        for r in s.relations() {
            if r.relation == RelationKind::Over {
                let target = plan.get(r.target).expect("validated");
                if s.depth() <= target.depth() {
                    return Err(PlanError::InvalidPlan(format!(
                        "{} is over {} but not nearer",
                        s.id, r.target
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Detects a cycle in `edges` (u -> v); returns one node on it.
pub(crate) fn find_cycle(
    nodes: &[SubtaskId],
    edges: &[(SubtaskId, SubtaskId)],
) -> Option<SubtaskId> {
    let mut indeg: BTreeMap<SubtaskId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    for &(_, v) in edges {
        *indeg.entry(v).or_default() += 1;
    }
    let mut ready: Vec<SubtaskId> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for &(u, v) in edges {
            if u == n {
                let d = indeg.get_mut(&v).expect("node");
                *d -= 1;
                if *d == 0 {
                    ready.push(v);
                }
            }
        }
    }
    (seen < indeg.len()).then(|| *indeg.iter().find(|(_, d)| **d > 0).expect("cycle").0)
}

/// `-ln(coverage)`, the planning-loss surrogate; zero iff coverage is 1.
pub fn plan_loss(plan: &SubtaskPlan) -> f64 {
    if plan.coverage >= 1.0 {
        0.0
    } else {
        -plan.coverage.ln()
    }
}

/// Produces a plan for a prompt.
pub trait PlannerBackend: Send + Sync {
    fn plan(&self, prompt: &PromptText, config: &PipelineConfig) -> Result<SubtaskPlan, PlanError>;
    fn model_id(&self) -> String;
}

/// Deterministic grammar planner.
#[derive(Debug, Default, Clone, Copy)]
pub struct GrammarPlanner;

impl PlannerBackend for GrammarPlanner {
    fn plan(&self, prompt: &PromptText, config: &PipelineConfig) -> Result<SubtaskPlan, PlanError> {
        decompose(&parse_prompt(prompt)?, config)
    }

    fn model_id(&self) -> String {
        "grammar-planner/1".into()
    }
}
