//! Alignment scoring, the threshold gate with regeneration, and the hinge loss.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{hsv_to_rgb, rgb_to_hsv};
use crate::config::ReviewPolicy;
use crate::generator::{expected_color, expected_size, gradient_stops, Component, GeneratorError};
use crate::planner::lexicon::{entity_index, ENTITIES};
use crate::planner::{HueTag, Lighting, SizeTag, Subtask, SubtaskId};
use crate::prompt::PromptText;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReviewError {
    #[error("scorer service unavailable: {0}")]
    ScorerUnavailable(String),
    #[error(
        "subtask {subtask_id} stayed below tau after {attempts} attempts (best {best_score:.3})"
    )]
    SessionFailure {
        subtask_id: SubtaskId,
        attempts: u32,
        best_score: f64,
    },
    #[error("no subtask {0} in the plan")]
    UnknownSubtask(SubtaskId),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Stub,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDetails {
    pub object_presence: f64,
    pub attribute_match: f64,
    pub artifact_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub value: f64,
    pub scorer: ScorerKind,
    pub details: Option<ScoreDetails>,
}

pub trait Scorer: Send + Sync {
    fn score(
        &self,
        component: &Component,
        prompt: &PromptText,
        subtask: &Subtask,
    ) -> Result<AlignmentScore, ReviewError>;
    fn model_id(&self) -> String;
}

/// Block weights of the attribute vector: hue, size, entity.
const WEIGHTS: [f64; 3] = [2.0, 1.0, 1.0];
const SIZE_SIGMA: f64 = 0.06;
const OPAQUE: f64 = 0.5;
/// Share of clipped opaque samples above which the artifact flag is raised.
const CLIP_SHARE: f64 = 0.2;

/// Deterministic stand-in for an embedding scorer: cosine similarity between
/// the expected and measured attribute vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubScorer;

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn entity_slot(entity: &str) -> Option<usize> {
    if entity == crate::planner::lexicon::BACKGROUND_ENTITY {
        Some(ENTITIES.len())
    } else {
        entity_index(entity)
    }
}

/// Saturation-weighted 12-band hue histogram of an RGB sample stream.
fn hue_histogram(pixels: impl Iterator<Item = ([f64; 3], f64)>) -> Vec<f64> {
    let mut h = vec![0.0; 12];
    for (rgb, w) in pixels {
        let (hue, sat, _) = rgb_to_hsv(rgb);
        if sat >= 0.05 {
            h[HueTag::of_hue(hue).index()] += w * sat;
        }
    }
    normalized(h)
}

fn background_hues(lighting: Lighting) -> Vec<f64> {
    let (top, bottom) = gradient_stops(lighting);
    let a = hsv_to_rgb(top[0], top[1], top[2]);
    let b = hsv_to_rgb(bottom[0], bottom[1], bottom[2]);
    hue_histogram((0..64).map(|i| {
        let t = i as f64 / 63.0;
        ([0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t), 1.0)
    }))
}

impl StubScorer {
    /// Expected and measured blocks (hue, size, entity); empty blocks are skipped.
    fn vectors(
        &self,
        component: &Component,
        subtask: &Subtask,
    ) -> ([Vec<f64>; 3], [Vec<f64>; 3], bool, usize) {
        let layer = &component.layer;
        let (w, h) = layer.image.dims();
        let n_entities = ENTITIES.len() + 1;
        let mut opaque = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..h {
            for x in 0..w {
                let a = layer.alpha_at(x, y);
                if a >= OPAQUE {
                    opaque.push((layer.image.pixel(x, y), a));
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        let clipped = opaque
            .iter()
            .flat_map(|(p, _)| p.iter())
            .filter(|v| **v <= 0.0 || **v >= 1.0)
            .count();
        let artifact =
            !opaque.is_empty() && clipped as f64 > CLIP_SHARE * 3.0 * opaque.len() as f64;

        let measured_hue = hue_histogram(opaque.iter().copied());
        let measured_entity = match component.glyph.as_deref().and_then(entity_slot) {
            Some(i) if !opaque.is_empty() => one_hot(n_entities, i),
            _ => vec![0.0; n_entities],
        };
        let expected_entity =
            entity_slot(&subtask.entity).map_or(vec![0.0; n_entities], |i| one_hot(n_entities, i));

        if subtask.is_background() {
            let lighting = subtask.attributes.lighting.unwrap_or(Lighting::Neutral);
            let expected = [background_hues(lighting), Vec::new(), expected_entity];
            let measured = [measured_hue, Vec::new(), measured_entity];
            return (expected, measured, artifact, opaque.len());
        }

        let measured_size = if opaque.is_empty() {
            vec![0.0; 3]
        } else {
            let extent = (x1 - x0 + 1).max(y1 - y0 + 1) as f64 / w.min(h) as f64;
            normalized(
                SizeTag::ALL
                    .iter()
                    .map(|s| (-((extent - s.scale()) / SIZE_SIGMA).powi(2)).exp())
                    .collect(),
            )
        };
        let expected = [
            one_hot(12, expected_color(subtask).index()),
            one_hot(3, expected_size(subtask).index()),
            expected_entity,
        ];
        (
            expected,
            [measured_hue, measured_size, measured_entity],
            artifact,
            opaque.len(),
        )
    }
}

impl Scorer for StubScorer {
    fn score(
        &self,
        component: &Component,
        _prompt: &PromptText,
        subtask: &Subtask,
    ) -> Result<AlignmentScore, ReviewError> {
        let (expected, measured, artifact, opaque) = self.vectors(component, subtask);
        let mut num = 0.0;
        let mut e_norm = 0.0;
        let mut m_norm = 0.0;
        let mut cos = [0.0; 3];
        for b in 0..3 {
            if expected[b].is_empty() {
                continue;
            }
            let w2 = WEIGHTS[b] * WEIGHTS[b];
            cos[b] = dot(&expected[b], &measured[b]);
            num += w2 * cos[b];
            e_norm += w2 * dot(&expected[b], &expected[b]);
            m_norm += w2 * dot(&measured[b], &measured[b]);
        }
        let mut value = if e_norm > 0.0 && m_norm > 0.0 {
            (num / (e_norm.sqrt() * m_norm.sqrt())).clamp(0.0, 1.0)
        } else {
            0.0
        };
        if artifact {
            value *= 0.5;
        }
        let attribute_match = if subtask.is_background() {
            cos[0]
        } else {
            (4.0 * cos[0] + cos[1]) / 5.0
        };
        Ok(AlignmentScore {
            value,
            scorer: ScorerKind::Stub,
            details: Some(ScoreDetails {
                object_presence: if opaque > 0 { cos[2] } else { 0.0 },
                attribute_match,
                artifact_flag: artifact,
            }),
        })
    }

    fn model_id(&self) -> String {
        "stub-scorer/1".into()
    }
}

/// `sum_i max(0, tau - s_i)`.
pub fn review_loss(scores: &[f64], tau: f64) -> f64 {
    scores.iter().map(|s| (tau - s).max(0.0)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReview {
    pub subtask_id: SubtaskId,
    /// Number of attempts drawn, including the first.
    pub attempts: u32,
    pub final_score: f64,
    pub passed: bool,
    /// Accepted below tau because retries ran out.
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub components: Vec<ComponentReview>,
    pub l_rev: f64,
    pub overridden: BTreeSet<SubtaskId>,
}

impl ReviewReport {
    pub fn get(&self, id: SubtaskId) -> Option<&ComponentReview> {
        self.components.iter().find(|c| c.subtask_id == id)
    }

    pub fn recompute_loss(&mut self, tau: f64) {
        let scores: Vec<f64> = self.components.iter().map(|c| c.final_score).collect();
        self.l_rev = review_loss(&scores, tau);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSettings {
    pub tau: f64,
    pub max_retries: u32,
    pub policy: ReviewPolicy,
    /// `false` is the no-reviewer ablation: scores are still measured for the
    /// loss, but nothing is gated and no events are emitted.
    pub enabled: bool,
}

/// Progress notifications, in the order they happen.
#[derive(Debug)]
pub enum GateEvent<'a> {
    Scored {
        subtask_id: SubtaskId,
        attempt: u32,
        score: &'a AlignmentScore,
        passed: bool,
    },
    Regenerating {
        subtask_id: SubtaskId,
        attempt: u32,
        seed: u64,
        reason: String,
    },
    Generated(&'a Component),
}

/// Scores every component and regenerates those below `tau` until they pass
/// or retries run out, keeping the best attempt. `regen` draws the next
/// attempt for a component; `emit` observes every step.
pub fn review_gate(
    components: Vec<Component>,
    subtasks: &[Subtask],
    prompt: &PromptText,
    scorer: &dyn Scorer,
    settings: GateSettings,
    regen: &mut dyn FnMut(&Component, &Subtask) -> Result<Component, GeneratorError>,
    emit: &mut dyn FnMut(GateEvent<'_>),
) -> Result<(Vec<Component>, ReviewReport), ReviewError> {
    let mut kept = Vec::with_capacity(components.len());
    let mut report = ReviewReport::default();
    for mut current in components {
        let subtask = subtasks
            .iter()
            .find(|s| s.id == current.subtask_id)
            .ok_or(ReviewError::UnknownSubtask(current.subtask_id))?;
        let first = scorer.score(&current, prompt, subtask)?;
        current.score = Some(first.value);
        if !settings.enabled {
            report.components.push(ComponentReview {
                subtask_id: current.subtask_id,
                attempts: 1,
                final_score: first.value,
                passed: true,
                flagged: false,
            });
            kept.push(current);
            continue;
        }
        let mut passed = first.value >= settings.tau;
        emit(GateEvent::Scored {
            subtask_id: current.subtask_id,
            attempt: current.attempt,
            score: &first,
            passed,
        });
        let mut best = current.clone();
        let mut attempts = 1;
        while !passed && current.attempt < settings.max_retries {
            let next_attempt = current.attempt + 1;
            emit(GateEvent::Regenerating {
                subtask_id: current.subtask_id,
                attempt: next_attempt,
                seed: crate::generator::retry_seed(current.seed_used, next_attempt),
                reason: format!(
                    "score {:.4} below tau {}",
                    current.score.unwrap_or(0.0),
                    settings.tau
                ),
            });
            let mut next = regen(&current, subtask)?;
            emit(GateEvent::Generated(&next));
            let s = scorer.score(&next, prompt, subtask)?;
            next.score = Some(s.value);
            attempts += 1;
            passed = s.value >= settings.tau;
            emit(GateEvent::Scored {
                subtask_id: next.subtask_id,
                attempt: next.attempt,
                score: &s,
                passed,
            });
            if s.value > best.score.unwrap_or(f64::NEG_INFINITY) {
                best = next.clone();
            }
            current = next;
        }
        let final_score = best.score.unwrap_or(0.0);
        if !passed && settings.policy == ReviewPolicy::Strict {
            return Err(ReviewError::SessionFailure {
                subtask_id: best.subtask_id,
                attempts,
                best_score: final_score,
            });
        }
        report.components.push(ComponentReview {
            subtask_id: best.subtask_id,
            attempts,
            final_score,
            passed: true,
            flagged: final_score < settings.tau,
        });
        kept.push(best);
    }
    report.recompute_loss(settings.tau);
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GeneratorParams;
    use crate::generator::{regenerate, GeneratorBackend, ProceduralGenerator};
    use crate::planner::{Attributes, SubtaskKind};

    fn subtask(entity: &str, color: Option<HueTag>) -> Subtask {
        Subtask {
            id: 1,
            entity: entity.into(),
            kind: SubtaskKind::Foreground,
            attributes: Attributes {
                color,
                ..Default::default()
            },
            layout: None,
        }
    }

    fn params() -> GeneratorParams {
        GeneratorParams {
            resolution: 64,
            ..Default::default()
        }
    }

    fn prompt() -> PromptText {
        PromptText::new("a red dragon").unwrap()
    }

    #[test]
    fn hinge_fixtures() {
        assert!((review_loss(&[0.30, 0.20, 0.25], 0.25) - 0.05).abs() < 1e-12);
        assert_eq!(review_loss(&[0.5, 0.9], 0.25), 0.0);
        assert_eq!(review_loss(&[0.0, 0.0], 1.0), 2.0);
    }

    #[test]
    fn matching_and_disjoint_hues() {
        let red = subtask("dragon", Some(HueTag::Red));
        let c = ProceduralGenerator.generate(&red, 7, &params()).unwrap();
        let good = StubScorer.score(&c, &prompt(), &red).unwrap();
        assert!(good.value >= 0.6, "{good:?}");
        let blue = subtask("dragon", Some(HueTag::Blue));
        let bad = StubScorer.score(&c, &prompt(), &blue).unwrap();
        assert!(bad.value <= 0.4, "{bad:?}");
    }

    #[test]
    fn identical_vectors_score_one() {
        // a square fills exactly the medium extent with a single hue
        let s = subtask("square", Some(HueTag::Green));
        let c = ProceduralGenerator.generate(&s, 0, &params()).unwrap();
        let v = StubScorer.score(&c, &prompt(), &s).unwrap().value;
        assert!(v > 0.99, "{v}");
    }

    #[test]
    fn backgrounds_match_their_lighting() {
        let sky = |l| Subtask {
            id: 2,
            entity: "sky".into(),
            kind: SubtaskKind::Background,
            attributes: Attributes {
                lighting: Some(l),
                ..Default::default()
            },
            layout: None,
        };
        let c = ProceduralGenerator
            .generate(&sky(Lighting::Sunset), 1, &params())
            .unwrap();
        let right = StubScorer
            .score(&c, &prompt(), &sky(Lighting::Sunset))
            .unwrap()
            .value;
        let wrong = StubScorer
            .score(&c, &prompt(), &sky(Lighting::Noon))
            .unwrap()
            .value;
        assert!(right > 0.9 && wrong < right, "{right} {wrong}");
    }

    /// Scores scripted per attempt.
    struct Scripted(Vec<f64>);

    impl Scorer for Scripted {
        fn score(
            &self,
            c: &Component,
            _: &PromptText,
            _: &Subtask,
        ) -> Result<AlignmentScore, ReviewError> {
            Ok(AlignmentScore {
                value: self.0[(c.attempt as usize).min(self.0.len() - 1)],
                scorer: ScorerKind::Stub,
                details: None,
            })
        }

        fn model_id(&self) -> String {
            "scripted".into()
        }
    }

    fn gate(
        scores: Vec<f64>,
        settings: GateSettings,
    ) -> (Result<(Vec<Component>, ReviewReport), ReviewError>, usize) {
        let s = subtask("tree", None);
        let c = ProceduralGenerator.generate(&s, 3, &params()).unwrap();
        let mut regens = 0;
        let out = review_gate(
            vec![c],
            &[s],
            &prompt(),
            &Scripted(scores),
            settings,
            &mut |c, s| regenerate(&ProceduralGenerator, c, s, &params(), settings.max_retries),
            &mut |e| regens += usize::from(matches!(e, GateEvent::Regenerating { .. })),
        );
        (out, regens)
    }

    fn settings(max_retries: u32, policy: ReviewPolicy) -> GateSettings {
        GateSettings {
            tau: 0.25,
            max_retries,
            policy,
            enabled: true,
        }
    }

    #[test]
    fn sub_threshold_component_is_regenerated_and_best_kept() {
        let (out, regens) = gate(
            vec![0.2, 0.22, 0.21, 0.1],
            settings(3, ReviewPolicy::AcceptBest),
        );
        let (kept, report) = out.unwrap();
        assert_eq!(regens, 3);
        assert_eq!(kept[0].attempt, 1);
        assert_eq!(report.components[0].attempts, 4);
        assert!(report.components[0].passed && report.components[0].flagged);
        assert!((report.l_rev - 0.03).abs() < 1e-12);
    }

    #[test]
    fn passing_on_retry_stops_the_loop() {
        let (out, regens) = gate(vec![0.2, 0.3], settings(3, ReviewPolicy::Strict));
        assert_eq!(regens, 1);
        assert_eq!(out.unwrap().1.components[0].final_score, 0.3);
    }

    #[test]
    fn zero_retries_accept_best_flags() {
        let (out, regens) = gate(vec![0.1], settings(0, ReviewPolicy::AcceptBest));
        assert_eq!(regens, 0);
        let r = &out.unwrap().1.components[0];
        assert!(r.passed && r.flagged);
    }

    #[test]
    fn strict_policy_fails_the_session() {
        let (out, _) = gate(vec![0.1], settings(2, ReviewPolicy::Strict));
        assert!(matches!(
            out,
            Err(ReviewError::SessionFailure { attempts: 3, .. })
        ));
    }

    #[test]
    fn disabled_gate_is_silent() {
        let mut s = settings(3, ReviewPolicy::Strict);
        s.enabled = false;
        let (out, regens) = gate(vec![0.1], s);
        assert_eq!(regens, 0);
        let report = out.unwrap().1;
        assert!(report.components[0].passed);
        assert!((report.l_rev - 0.15).abs() < 1e-12);
    }
}
