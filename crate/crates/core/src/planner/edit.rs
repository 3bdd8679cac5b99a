use serde::{Deserialize, Serialize};

use super::decompose::assign_depths;
use super::lexicon::{is_entity, GridCell, HueTag, Pose, SizeTag, Style};
use super::{
    Attributes, LayoutConstraint, PlanError, Relation, RelationKind, Subtask, SubtaskId,
    SubtaskKind, SubtaskPlan,
};

/// Fields to overwrite; `None` leaves the attribute unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributePatch {
    #[serde(default)]
    pub color: Option<HueTag>,
    #[serde(default)]
    pub size: Option<SizeTag>,
    #[serde(default)]
    pub pose: Option<Pose>,
    #[serde(default)]
    pub style: Option<Style>,
}

/// A human refinement of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanEdit {
    SetAttributes {
        id: SubtaskId,
        attributes: AttributePatch,
    },
    AddSubtask {
        entity: String,
        #[serde(default)]
        attributes: AttributePatch,
        #[serde(default)]
        anchor: Option<GridCell>,
    },
    RemoveSubtask {
        id: SubtaskId,
    },
    SetAnchor {
        id: SubtaskId,
        anchor: Option<GridCell>,
    },
    AddRelation {
        id: SubtaskId,
        relation: RelationKind,
        target: SubtaskId,
    },
    ClearRelations {
        id: SubtaskId,
    },
}

impl PlanEdit {
    /// Subtask whose component must be (re)generated after the edit, if any.
    pub fn touched(&self, plan_after: &SubtaskPlan) -> Option<SubtaskId> {
        match self {
            PlanEdit::SetAttributes { id, .. } => Some(*id),
            PlanEdit::AddSubtask { .. } => plan_after.foreground().map(|s| s.id).max(),
            _ => None,
        }
    }
}

fn patch(attrs: &mut Attributes, p: &AttributePatch) {
    attrs.color = p.color.or(attrs.color);
    attrs.size = p.size.or(attrs.size);
    attrs.pose = p.pose.or(attrs.pose);
    attrs.style = p.style.or(attrs.style);
}

fn find_mut(plan: &mut SubtaskPlan, id: SubtaskId) -> Result<&mut Subtask, PlanError> {
    plan.subtasks
        .iter_mut()
        .find(|s| s.id == id)
        .ok_or(PlanError::UnknownSubtask(id))
}

fn foreground_mut(plan: &mut SubtaskPlan, id: SubtaskId) -> Result<&mut Subtask, PlanError> {
    let s = find_mut(plan, id)?;
    if s.is_background() {
        return Err(PlanError::InvalidPlan(format!(
            "subtask {id} is the background"
        )));
    }
    Ok(s)
}

/// Applies `edit` to a copy of `plan` and re-validates every invariant.
pub fn apply_plan_edit(plan: &SubtaskPlan, edit: &PlanEdit) -> Result<SubtaskPlan, PlanError> {
    let mut next = plan.clone();
    match edit {
        PlanEdit::SetAttributes { id, attributes } => {
            patch(&mut find_mut(&mut next, *id)?.attributes, attributes);
        }
        PlanEdit::AddSubtask {
            entity,
            attributes,
            anchor,
        } => {
            if !is_entity(entity) {
                return Err(PlanError::InvalidPlan(format!("unknown entity {entity:?}")));
            }
            let id = next.subtasks.iter().map(|s| s.id).max().unwrap_or(0) + 1;
            let mut attrs = Attributes::default();
            patch(&mut attrs, attributes);
            let subtask = Subtask {
                id,
                entity: entity.clone(),
                kind: SubtaskKind::Foreground,
                attributes: attrs,
                layout: anchor.map(|a| LayoutConstraint {
                    anchor: Some(a),
                    relations: Vec::new(),
                    depth: 1,
                }),
            };
            // keep the background last
            let at = next
                .subtasks
                .iter()
                .position(|s| s.is_background())
                .unwrap_or(next.subtasks.len());
            next.subtasks.insert(at, subtask);
        }
        PlanEdit::RemoveSubtask { id } => {
            foreground_mut(&mut next, *id)?;
            if next.foreground().count() == 1 {
                return Err(PlanError::InvalidPlan(
                    "cannot remove the only foreground subtask".into(),
                ));
            }
            next.subtasks.retain(|s| s.id != *id);
            for s in &mut next.subtasks {
                if let Some(l) = &mut s.layout {
                    l.relations.retain(|r| r.target != *id);
                }
            }
        }
        PlanEdit::SetAnchor { id, anchor } => {
            let s = foreground_mut(&mut next, *id)?;
            match (&mut s.layout, anchor) {
                (Some(l), _) => l.anchor = *anchor,
                (None, Some(a)) => {
                    s.layout = Some(LayoutConstraint {
                        anchor: Some(*a),
                        relations: Vec::new(),
                        depth: 1,
                    })
                }
                (None, None) => {}
            }
        }
        PlanEdit::AddRelation {
            id,
            relation,
            target,
        } => {
            foreground_mut(&mut next, *target)?;
            let s = foreground_mut(&mut next, *id)?;
            let layout = s.layout.get_or_insert(LayoutConstraint {
                anchor: None,
                relations: Vec::new(),
                depth: 1,
            });
            let rel = Relation {
                relation: *relation,
                target: *target,
            };
            if !layout.relations.contains(&rel) {
                layout.relations.push(rel);
            }
        }
        PlanEdit::ClearRelations { id } => {
            if let Some(l) = &mut foreground_mut(&mut next, *id)?.layout {
                l.relations.clear();
            }
        }
    }
    assign_depths(&mut next.subtasks)?;
    next.validate()?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;
    use crate::planner::{GrammarPlanner, PlannerBackend};
    use crate::prompt::PromptText;

    fn dragon_plan() -> SubtaskPlan {
        GrammarPlanner
            .plan(
                &PromptText::new("a red dragon flying above a medieval castle at sunset").unwrap(),
                &PipelineConfig::default(),
            )
            .unwrap()
    }

    #[test]
    fn color_edit_is_local() {
        let plan = dragon_plan();
        let edited = apply_plan_edit(
            &plan,
            &PlanEdit::SetAttributes {
                id: 1,
                attributes: AttributePatch {
                    color: Some(HueTag::Green),
                    ..Default::default()
                },
            },
        )
        .unwrap();
        let mut expected = plan.clone();
        expected.subtasks[0].attributes.color = Some(HueTag::Green);
        assert_eq!(edited, expected);
        assert_eq!(edited.source, plan.source);
    }

    #[test]
    fn removing_last_foreground_is_rejected() {
        let plan = GrammarPlanner
            .plan(
                &PromptText::new("blue circle").unwrap(),
                &PipelineConfig::default(),
            )
            .unwrap();
        assert!(matches!(
            apply_plan_edit(&plan, &PlanEdit::RemoveSubtask { id: 1 }),
            Err(PlanError::InvalidPlan(_))
        ));
    }

    #[test]
    fn adding_a_moon_increments_k() {
        let plan = dragon_plan();
        let edited = apply_plan_edit(
            &plan,
            &PlanEdit::AddSubtask {
                entity: "moon".into(),
                attributes: AttributePatch::default(),
                anchor: Some(GridCell::UpperLeft),
            },
        )
        .unwrap();
        assert_eq!(edited.k(), plan.k() + 1);
        assert!(edited.subtasks.last().unwrap().is_background());
        let moon = edited.subtasks.iter().find(|s| s.entity == "moon").unwrap();
        assert_eq!(moon.id, 4);
        assert_eq!(moon.anchor(), Some(GridCell::UpperLeft));
    }

    #[test]
    fn unknown_ids_and_cycles_are_reported() {
        let plan = dragon_plan();
        assert_eq!(
            apply_plan_edit(&plan, &PlanEdit::ClearRelations { id: 42 }),
            Err(PlanError::UnknownSubtask(42))
        );
        assert!(matches!(
            apply_plan_edit(
                &plan,
                &PlanEdit::AddRelation {
                    id: 2,
                    relation: RelationKind::Above,
                    target: 1
                }
            ),
            Err(PlanError::CyclicLayout(_))
        ));
    }

    #[test]
    fn removing_a_target_drops_relations_to_it() {
        let plan = dragon_plan();
        let edited = apply_plan_edit(&plan, &PlanEdit::RemoveSubtask { id: 2 }).unwrap();
        assert!(edited.subtasks[0].relations().is_empty());
    }
}
