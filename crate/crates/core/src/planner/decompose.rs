use std::collections::BTreeMap;

use super::lexicon::{Lighting, RelationKind, BACKGROUND_ENTITY};
use super::parse::PromptAst;
use super::{
    find_cycle, Attributes, LayoutConstraint, PlanError, PlanSource, Relation, Subtask, SubtaskId,
    SubtaskKind, SubtaskPlan, PLAN_SCHEMA,
};
use crate::config::PipelineConfig;

/// Compiles a parsed prompt into a plan: one foreground subtask per distinct
/// entity noun (repeated nouns refer to the same entity), then one background.
pub fn decompose(ast: &PromptAst, _config: &PipelineConfig) -> Result<SubtaskPlan, PlanError> {
    let mut subtasks: Vec<Subtask> = Vec::new();
    let mut clause_to_id: Vec<SubtaskId> = Vec::with_capacity(ast.clauses.len());
    for clause in &ast.clauses {
        let existing = subtasks.iter_mut().find(|s| s.entity == clause.noun);
        let subtask = match existing {
            Some(s) => s,
            None => {
                let id = subtasks.len() as SubtaskId + 1;
                subtasks.push(Subtask {
                    id,
                    entity: clause.noun.clone(),
                    kind: SubtaskKind::Foreground,
                    attributes: Attributes::default(),
                    layout: None,
                });
                subtasks.last_mut().expect("pushed")
            }
        };
        let a = &clause.attributes;
        let attrs = &mut subtask.attributes;
        attrs.color = a.color.or(attrs.color);
        attrs.size = a.size.or(attrs.size);
        attrs.pose = a.pose.or(attrs.pose);
        attrs.style = a.style.or(attrs.style);
        if let Some(anchor) = clause.anchor {
            subtask.layout.get_or_insert_with(default_layout).anchor = Some(anchor);
        }
        clause_to_id.push(subtask.id);
    }

    let mut relations: BTreeMap<SubtaskId, Vec<Relation>> = BTreeMap::new();
    for r in &ast.relations {
        let subject = clause_to_id[r.subject];
        let target = clause_to_id[r.object];
        if subject == target {
            return Err(PlanError::CyclicLayout(format!(
                "subtask {subject} relates to itself"
            )));
        }
        let rel = Relation {
            relation: r.relation,
            target,
        };
        let list = relations.entry(subject).or_default();
        if !list.contains(&rel) {
            list.push(rel);
        }
    }
    for (id, rels) in relations {
        let s = subtasks
            .iter_mut()
            .find(|s| s.id == id)
            .expect("subject exists");
        s.layout.get_or_insert_with(default_layout).relations = rels;
    }

    assign_depths(&mut subtasks)?;

    let bg_id = subtasks.len() as SubtaskId + 1;
    subtasks.push(Subtask {
        id: bg_id,
        entity: BACKGROUND_ENTITY.into(),
        kind: SubtaskKind::Background,
        attributes: Attributes {
            lighting: Some(ast.background.unwrap_or(Lighting::Neutral)),
            ..Attributes::default()
        },
        layout: Some(LayoutConstraint {
            anchor: None,
            relations: Vec::new(),
            depth: 0,
        }),
    });

    let plan = SubtaskPlan {
        schema: PLAN_SCHEMA.into(),
        subtasks,
        coverage: ast.coverage(),
        source: PlanSource::Grammar,
    };
    plan.validate()?;
    Ok(plan)
}

fn default_layout() -> LayoutConstraint {
    LayoutConstraint {
        anchor: None,
        relations: Vec::new(),
        depth: 1,
    }
}

/// Depth 1 for every foreground, raised so each `over` subject sits nearer
/// than its target.
pub(crate) fn assign_depths(subtasks: &mut [Subtask]) -> Result<(), PlanError> {
    let fg: Vec<SubtaskId> = subtasks
        .iter()
        .filter(|s| !s.is_background())
        .map(|s| s.id)
        .collect();
    let edges: Vec<(SubtaskId, SubtaskId)> = subtasks
        .iter()
        .flat_map(|s| {
            s.relations()
                .iter()
                .filter(|r| r.relation == RelationKind::Over)
                .map(move |r| (r.target, s.id))
        })
        .collect();
    if let Some(n) = find_cycle(&fg, &edges) {
        return Err(PlanError::CyclicLayout(format!(
            "depth relations loop through subtask {n}"
        )));
    }
    let mut depth: BTreeMap<SubtaskId, i32> = fg.iter().map(|&id| (id, 1)).collect();
    // longest path; |fg| rounds suffice on a DAG
    for _ in 0..fg.len() {
        for &(t, s) in &edges {
            let d = depth[&t] + 1;
            let e = depth.get_mut(&s).expect("fg node");
            *e = (*e).max(d);
        }
    }
    for s in subtasks.iter_mut().filter(|s| !s.is_background()) {
        let d = depth[&s.id];
        if d != 1 || s.layout.is_some() {
            s.layout.get_or_insert_with(default_layout).depth = d;
        }
    }
    Ok(())
}
