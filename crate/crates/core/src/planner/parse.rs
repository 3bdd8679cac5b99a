//! Tolerant scanner for the controlled prompt grammar:
//!
//! ```text
//! prompt     := clause (("and" | relation) clause)* [anchor] [background]
//! clause     := [article] modifier* noun [pose] ["in" ["the"] cell]
//! modifier   := color | size | style | pose
//! relation   := "above" | "below" | "over" | "left of" | "right of"
//!             | "to the left of" | "to the right of" | "left-of" | "right-of"
//! background := ["at"] ("sunset" | "night" | "noon")
//! ```
//!
//! Tokens outside the grammar are collected as unparsed; an unknown token
//! between modifiers and their noun orphans those modifiers.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lexicon::{
    is_entity, GridCell, HueTag, Lighting, Pose, RelationKind, SizeTag, Style, ARTICLES,
};
use super::PlanError;
use crate::prompt::PromptText;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClauseAttributes {
    pub color: Option<HueTag>,
    pub size: Option<SizeTag>,
    pub pose: Option<Pose>,
    pub style: Option<Style>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityClause {
    pub noun: String,
    pub attributes: ClauseAttributes,
    pub anchor: Option<GridCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClauseRelation {
    pub subject: usize,
    pub relation: RelationKind,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptAst {
    pub tokens: Vec<String>,
    pub consumed: Vec<bool>,
    pub clauses: Vec<EntityClause>,
    pub relations: Vec<ClauseRelation>,
    pub background: Option<Lighting>,
}

impl PromptAst {
    pub fn unparsed(&self) -> Vec<&str> {
        self.tokens
            .iter()
            .zip(&self.consumed)
            .filter(|(_, c)| !**c)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    /// Fraction of tokens consumed by the parse.
    pub fn coverage(&self) -> f64 {
        let used = self.consumed.iter().filter(|c| **c).count();
        used as f64 / self.tokens.len() as f64
    }
}

enum Modifier {
    Article,
    Color(HueTag),
    Size(SizeTag),
    Style(Style),
    Pose(Pose),
}

fn modifier(tok: &str) -> Option<Modifier> {
    if ARTICLES.contains(&tok) {
        return Some(Modifier::Article);
    }
    if let Ok(c) = HueTag::from_str(tok) {
        return Some(Modifier::Color(c));
    }
    if let Ok(s) = SizeTag::from_str(tok) {
        return Some(Modifier::Size(s));
    }
    if let Ok(s) = Style::from_str(tok) {
        return Some(Modifier::Style(s));
    }
    Pose::from_str(tok).ok().map(Modifier::Pose)
}

/// Matches a relation phrase starting at `i`; returns the relation and the
/// number of tokens it spans.
fn relation_at(tokens: &[String], i: usize) -> Option<(RelationKind, usize)> {
    let t = |k: usize| tokens.get(i + k).map(String::as_str);
    let side = |w: Option<&str>| match w {
        Some("left") => Some(RelationKind::LeftOf),
        Some("right") => Some(RelationKind::RightOf),
        _ => None,
    };
    match t(0)? {
        "above" => Some((RelationKind::Above, 1)),
        "below" => Some((RelationKind::Below, 1)),
        "over" => Some((RelationKind::Over, 1)),
        "left-of" => Some((RelationKind::LeftOf, 1)),
        "right-of" => Some((RelationKind::RightOf, 1)),
        "left" | "right" if t(1) == Some("of") => side(t(0)).map(|r| (r, 2)),
        "to" if t(1) == Some("the") && t(3) == Some("of") => side(t(2)).map(|r| (r, 4)),
        _ => None,
    }
}

/// Matches an anchor phrase (`in the upper-right`, `in center`, `upper-right`).
fn anchor_at(tokens: &[String], i: usize) -> Option<(GridCell, usize)> {
    let t = |k: usize| tokens.get(i + k).map(String::as_str);
    let cell = |k: usize| t(k).and_then(|w| GridCell::from_str(w).ok());
    if let Some(c) = cell(0) {
        return Some((c, 1));
    }
    if t(0) == Some("in") {
        if let Some(c) = cell(1) {
            return Some((c, 2));
        }
        if t(1) == Some("the") {
            return cell(2).map(|c| (c, 3));
        }
    }
    None
}

fn background_at(tokens: &[String], i: usize) -> Option<(Lighting, usize)> {
    let lighting = |w: &str| match Lighting::from_str(w) {
        Ok(Lighting::Neutral) | Err(_) => None,
        Ok(l) => Some(l),
    };
    match tokens[i].as_str() {
        "at" => tokens.get(i + 1).and_then(|w| lighting(w)).map(|l| (l, 2)),
        w => lighting(w).map(|l| (l, 1)),
    }
}

pub fn parse_prompt(prompt: &PromptText) -> Result<PromptAst, PlanError> {
    let tokens = prompt.tokens();
    if tokens.is_empty() {
        return Err(PlanError::NoEntityFound);
    }
    let mut consumed = vec![false; tokens.len()];
    let mut clauses: Vec<EntityClause> = Vec::new();
    let mut relations = Vec::new();
    let mut background = None;

    // modifiers waiting for their noun
    let mut pending: Vec<usize> = Vec::new();
    let mut pending_attrs = ClauseAttributes::default();
    // (relation, token range, subject clause)
    let mut pending_relation: Option<(RelationKind, std::ops::Range<usize>, usize)> = None;
    let mut pending_and: Option<usize> = None;

    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i].as_str();

        if is_entity(tok) {
            consumed[i] = true;
            for &p in &pending {
                consumed[p] = true;
            }
            pending.clear();
            let idx = clauses.len();
            clauses.push(EntityClause {
                noun: tok.to_owned(),
                attributes: std::mem::take(&mut pending_attrs),
                anchor: None,
            });
            if let Some((relation, span, subject)) = pending_relation.take() {
                span.for_each(|k| consumed[k] = true);
                relations.push(ClauseRelation {
                    subject,
                    relation,
                    object: idx,
                });
            } else if let Some(a) = pending_and.take() {
                consumed[a] = true;
            }
            pending_and = None;
            i += 1;
            continue;
        }

        if pending.is_empty() && !clauses.is_empty() {
            if let Some((rel, len)) = relation_at(&tokens, i) {
                // a second relation before any object orphans the first
                pending_relation = Some((rel, i..i + len, clauses.len() - 1));
                pending_and = None;
                i += len;
                continue;
            }
            if let Some((cell, len)) = anchor_at(&tokens, i) {
                let last = clauses.last_mut().expect("non-empty");
                if last.anchor.is_none() {
                    last.anchor = Some(cell);
                    consumed[i..i + len].iter_mut().for_each(|c| *c = true);
                }
                i += len;
                continue;
            }
            if let Ok(pose) = Pose::from_str(tok) {
                let last = clauses.last_mut().expect("non-empty");
                if last.attributes.pose.is_none() && pending_relation.is_none() {
                    last.attributes.pose = Some(pose);
                    consumed[i] = true;
                    i += 1;
                    continue;
                }
            }
            if tok == "and" {
                pending_and = Some(i);
                i += 1;
                continue;
            }
        }

        if let Some((lighting, len)) = background_at(&tokens, i) {
            if background.is_none() {
                background = Some(lighting);
                consumed[i..i + len].iter_mut().for_each(|c| *c = true);
            }
            i += len;
            continue;
        }

        match modifier(tok) {
            Some(m) => {
                pending.push(i);
                match m {
                    Modifier::Article => {}
                    Modifier::Color(c) => pending_attrs.color = Some(c),
                    Modifier::Size(s) => pending_attrs.size = Some(s),
                    Modifier::Style(s) => pending_attrs.style = Some(s),
                    Modifier::Pose(p) => pending_attrs.pose = Some(p),
                }
            }
            None => {
                pending.clear();
                pending_attrs = ClauseAttributes::default();
            }
        }
        i += 1;
    }

    if clauses.is_empty() {
        return Err(PlanError::NoEntityFound);
    }
    Ok(PromptAst {
        tokens,
        consumed,
        clauses,
        relations,
        background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PromptAst, PlanError> {
        parse_prompt(&PromptText::new(s).unwrap())
    }

    #[test]
    fn dragon_castle_sunset() {
        let ast = parse("a red dragon flying above a medieval castle at sunset").unwrap();
        assert_eq!(ast.clauses.len(), 2);
        assert_eq!(ast.clauses[0].noun, "dragon");
        assert_eq!(ast.clauses[0].attributes.color, Some(HueTag::Red));
        assert_eq!(ast.clauses[0].attributes.pose, Some(Pose::Flying));
        assert_eq!(ast.clauses[1].noun, "castle");
        assert_eq!(ast.clauses[1].attributes.style, Some(Style::Medieval));
        assert_eq!(
            ast.relations,
            [ClauseRelation {
                subject: 0,
                relation: RelationKind::Above,
                object: 1
            }]
        );
        assert_eq!(ast.background, Some(Lighting::Sunset));
        assert_eq!(ast.coverage(), 1.0);
    }

    #[test]
    fn minimal_sentence() {
        let ast = parse("blue circle").unwrap();
        assert_eq!(ast.clauses.len(), 1);
        assert!(ast.relations.is_empty());
        assert_eq!(ast.background, None);
    }

    #[test]
    fn degenerate_input_has_no_entity() {
        assert_eq!(parse("sunset at the the"), Err(PlanError::NoEntityFound));
    }

    #[test]
    fn unknown_tokens_are_collected() {
        let ast = parse("create a fantasy scene with a red dragon").unwrap();
        assert_eq!(ast.unparsed(), ["create", "a", "fantasy", "scene", "with"]);
    }

    #[test]
    fn multiword_relations_and_anchors() {
        let ast = parse("a tree to the left of a house in the lower-right").unwrap();
        assert_eq!(ast.relations[0].relation, RelationKind::LeftOf);
        assert_eq!(ast.clauses[1].anchor, Some(GridCell::LowerRight));
        assert_eq!(ast.coverage(), 1.0);
        let ast = parse("a moon right of the sun").unwrap();
        assert_eq!(ast.relations[0].relation, RelationKind::RightOf);
    }

    #[test]
    fn and_joins_clauses_without_relation() {
        let ast = parse("a boat and a star at night").unwrap();
        assert_eq!(ast.clauses.len(), 2);
        assert!(ast.relations.is_empty());
        assert_eq!(ast.coverage(), 1.0);
    }

    #[test]
    fn dangling_relation_is_unparsed() {
        let ast = parse("a bird above").unwrap();
        assert!(ast.relations.is_empty());
        assert_eq!(ast.unparsed(), ["above"]);
    }
}
