//! Scene assembly: layout, depth-ordered compositing, palette harmonization
//! and gradient-domain seam blending.

mod features;
mod harmonize;
mod poisson;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{coherence_loss, extract_features, scene_coherence, FeatureVector, FEATURE_DIM};
pub use harmonize::{harmonize, harmonize_with_strength, HARMONIZE_STRENGTHS};
pub use poisson::{blend_channel, blend_seams, guidance, label_map, seam_band, SEAM_RADIUS};

use crate::generator::Component;
use crate::image::{resample_bilinear, Image, ImageError};
use crate::planner::{resolve_grid, PlanError, SubtaskId, SubtaskPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("no placement for subtask {0}")]
    MissingPlacement(SubtaskId),
    #[error("no component for subtask {0}")]
    MissingComponent(SubtaskId),
    #[error("scene is at stage {actual:?}, expected {expected:?}")]
    StageOrder {
        expected: SceneStage,
        actual: SceneStage,
    },
    #[error("poisson solver diverged")]
    SolverDiverged,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Axis-aligned pixel rectangle `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn x1(&self) -> usize {
        self.x0 + self.w
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    /// Whether the rectangles touch or overlap once each is grown by `margin`.
    pub fn near(&self, other: &Rect, margin: usize) -> bool {
        let m = 2 * margin;
        self.x0 < other.x1() + m
            && other.x0 < self.x1() + m
            && self.y0 < other.y1() + m
            && other.y0 < self.y1() + m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub subtask_id: SubtaskId,
    pub rect: Rect,
    pub depth: i32,
    pub background: bool,
}

/// Pixel dilation used when deciding adjacency.
pub const ADJACENCY_MARGIN: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    /// Paint order: background first, then by depth and id.
    pub placements: Vec<Placement>,
    /// Unordered foreground pairs `(a, b)` with `a < b`.
    pub adjacency: BTreeSet<(SubtaskId, SubtaskId)>,
}

/// Vertical offset, in cells, of a subject drawn `over` its target.
const OVER_LIFT: f64 = 0.3;

impl Layout {
    pub fn get(&self, id: SubtaskId) -> Option<&Placement> {
        self.placements.iter().find(|p| p.subtask_id == id)
    }

    fn sort_and_link(&mut self) {
        self.placements
            .sort_by_key(|p| (!p.background, p.depth, p.subtask_id));
        let fg: Vec<&Placement> = self.placements.iter().filter(|p| !p.background).collect();
        self.adjacency = fg
            .iter()
            .enumerate()
            .flat_map(|(i, a)| fg[i + 1..].iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.rect.near(&b.rect, ADJACENCY_MARGIN))
            .map(|(a, b)| {
                (
                    a.subtask_id.min(b.subtask_id),
                    a.subtask_id.max(b.subtask_id),
                )
            })
            .collect();
    }

    /// Moves a foreground box by `(dx, dy)` pixels and scales it about its
    /// centre, clamped to the frame.
    pub fn adjust(
        &mut self,
        id: SubtaskId,
        dx: i64,
        dy: i64,
        scale: f64,
    ) -> Result<(), IntegrationError> {
        let (width, height) = (self.width, self.height);
        let p = self
            .placements
            .iter_mut()
            .find(|p| p.subtask_id == id && !p.background)
            .ok_or(IntegrationError::MissingPlacement(id))?;
        let scale = if scale.is_finite() && scale > 0.0 {
            scale
        } else {
            1.0
        };
        let w = ((p.rect.w as f64 * scale).round() as usize).clamp(4, width);
        let h = ((p.rect.h as f64 * scale).round() as usize).clamp(4, height);
        let cx = p.rect.x0 as f64 + p.rect.w as f64 / 2.0 + dx as f64;
        let cy = p.rect.y0 as f64 + p.rect.h as f64 / 2.0 + dy as f64;
        p.rect = clamp_rect(
            cx - w as f64 / 2.0,
            cy - h as f64 / 2.0,
            w,
            h,
            width,
            height,
        );
        self.sort_and_link();
        Ok(())
    }
}

fn clamp_rect(x: f64, y: f64, w: usize, h: usize, width: usize, height: usize) -> Rect {
    let x0 = x.round().clamp(0.0, (width - w) as f64) as usize;
    let y0 = y.round().clamp(0.0, (height - h) as f64) as usize;
    Rect { x0, y0, w, h }
}

/// Maps grid cells to pixel boxes. Each foreground box is its cell (the
/// component already encodes the size tag); `over` subjects are lifted by a
/// fraction of a cell so they overlap their target. The background spans the frame.
pub fn resolve_layout(
    plan: &SubtaskPlan,
    width: usize,
    height: usize,
) -> Result<Layout, IntegrationError> {
    let grid = resolve_grid(plan)?;
    let edge = |i: usize, n: usize| i * n / 3;
    let mut placements = Vec::with_capacity(plan.k());
    for s in &plan.subtasks {
        if s.is_background() {
            placements.push(Placement {
                subtask_id: s.id,
                rect: Rect {
                    x0: 0,
                    y0: 0,
                    w: width,
                    h: height,
                },
                depth: s.depth(),
                background: true,
            });
            continue;
        }
        let cell = grid[&s.id];
        let (x0, x1) = (edge(cell.col(), width), edge(cell.col() + 1, width));
        let (y0, y1) = (edge(cell.row(), height), edge(cell.row() + 1, height));
        let is_over = s
            .relations()
            .iter()
            .any(|r| r.relation == crate::planner::RelationKind::Over);
        let lift = if is_over {
            OVER_LIFT * (y1 - y0) as f64
        } else {
            0.0
        };
        placements.push(Placement {
            subtask_id: s.id,
            rect: clamp_rect(x0 as f64, y0 as f64 - lift, x1 - x0, y1 - y0, width, height),
            depth: s.depth(),
            background: false,
        });
    }
    let mut layout = Layout {
        width,
        height,
        placements,
        adjacency: BTreeSet::new(),
    };
    layout.sort_and_link();
    Ok(layout)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneStage {
    Composited,
    Harmonized,
    Blended,
}

/// A component's coverage after placement, local to its rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedMask {
    pub rect: Rect,
    pub alpha: Vec<f64>,
}

impl PlacedMask {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        if self.rect.contains(x, y) {
            self.alpha[(y - self.rect.y0) * self.rect.w + (x - self.rect.x0)]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub layout: Layout,
    pub stage: SceneStage,
    /// Foreground masks in paint order.
    pub masks: Vec<(SubtaskId, PlacedMask)>,
}

impl Scene {
    pub fn mask(&self, id: SubtaskId) -> Option<&PlacedMask> {
        self.masks.iter().find(|(i, _)| *i == id).map(|(_, m)| m)
    }

    pub(crate) fn expect_stage(&self, expected: SceneStage) -> Result<(), IntegrationError> {
        if self.stage != expected {
            return Err(IntegrationError::StageOrder {
                expected,
                actual: self.stage,
            });
        }
        Ok(())
    }
}

/// Paints components back to front with source-over alpha.
pub fn composite(components: &[Component], layout: &Layout) -> Result<Scene, IntegrationError> {
    let by_id: BTreeMap<SubtaskId, &Component> =
        components.iter().map(|c| (c.subtask_id, c)).collect();
    for c in components {
        if layout.get(c.subtask_id).is_none() {
            return Err(IntegrationError::MissingPlacement(c.subtask_id));
        }
    }
    let (width, height) = (layout.width, layout.height);
    let mut canvas = vec![0.0; width * height * 3];
    let mut masks = Vec::new();
    for p in &layout.placements {
        let c = by_id
            .get(&p.subtask_id)
            .ok_or(IntegrationError::MissingComponent(p.subtask_id))?;
        let (sw, sh) = c.layer.image.dims();
        let Rect { x0, y0, w, h } = p.rect;
        let rgb = resample_bilinear(c.layer.image.samples(), sw, sh, 3, w, h);
        let alpha = resample_bilinear(&c.layer.alpha, sw, sh, 1, w, h);
        for y in 0..h {
            for x in 0..w {
                let a = alpha[y * w + x];
                let dst = ((y0 + y) * width + x0 + x) * 3;
                for ch in 0..3 {
                    let src = rgb[(y * w + x) * 3 + ch];
                    canvas[dst + ch] = src * a + canvas[dst + ch] * (1.0 - a);
                }
            }
        }
        if !p.background {
            masks.push((
                p.subtask_id,
                PlacedMask {
                    rect: p.rect,
                    alpha,
                },
            ));
        }
    }
    Ok(Scene {
        image: Image::from_samples(width, height, canvas)?,
        layout: layout.clone(),
        stage: SceneStage::Composited,
        masks,
    })
}

/// Outcome of the full integration pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub harmonize_strength: f64,
    pub coherence_before: f64,
    pub coherence_after: f64,
    pub stage: SceneStage,
}

/// Composites, then (unless `paste_only`) harmonizes and blends seams.
pub fn integrate(
    components: &[Component],
    layout: &Layout,
    paste_only: bool,
) -> Result<(Scene, IntegrationReport), IntegrationError> {
    let scene = composite(components, layout)?;
    let before = scene_coherence(&scene);
    if paste_only {
        let report = IntegrationReport {
            harmonize_strength: 0.0,
            coherence_before: before,
            coherence_after: before,
            stage: scene.stage,
        };
        return Ok((scene, report));
    }
    let (harmonized, strength) = harmonize(&scene)?;
    let blended = blend_seams(&harmonized)?;
    let report = IntegrationReport {
        harmonize_strength: strength,
        coherence_before: before,
        coherence_after: scene_coherence(&blended),
        stage: blended.stage,
    };
    Ok((blended, report))
}
