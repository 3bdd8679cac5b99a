//! Per-subtask component generation: a deterministic procedural renderer and
//! the retry schedule shared with external backends.

mod glyph;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::color::hsv_to_rgb;
use crate::config::GeneratorParams;
use crate::image::{ContentDigest, Image, ImageError, Layer};
use crate::planner::{HueTag, Lighting, SizeTag, Subtask, SubtaskId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("no glyph for entity {0:?}")]
    UnknownEntity(String),
    #[error("subtask {subtask_id} exhausted {max_retries} retries")]
    RetriesExhausted {
        subtask_id: SubtaskId,
        max_retries: u32,
    },
    #[error("generator service unavailable: {0}")]
    GeneratorUnavailable(String),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// One generated element with its alpha plane and retry bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub subtask_id: SubtaskId,
    pub layer: Layer,
    pub seed_used: u64,
    pub attempt: u32,
    pub score: Option<f64>,
    /// Entity tag of the glyph drawn, when the backend reports one.
    pub glyph: Option<String>,
}

impl Component {
    pub fn image(&self) -> &Image {
        &self.layer.image
    }

    pub fn digest(&self) -> ContentDigest {
        self.layer.digest()
    }
}

pub trait GeneratorBackend: Send + Sync {
    fn generate(
        &self,
        subtask: &Subtask,
        seed: u64,
        params: &GeneratorParams,
    ) -> Result<Component, GeneratorError>;
    fn model_id(&self) -> String;
}

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of retry `next_attempt`, offset from the previous attempt's seed.
pub fn retry_seed(previous: u64, next_attempt: u32) -> u64 {
    previous.wrapping_add(SEED_STRIDE.wrapping_mul(u64::from(next_attempt)))
}

/// Seed of a subtask's first attempt within a session.
pub fn subtask_seed(session_seed: u64, id: SubtaskId) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed ^ (u64::from(id) << 32));
    rng.random()
}

/// Draws the next attempt with a seed offset derived from the attempt number.
pub fn regenerate(
    backend: &dyn GeneratorBackend,
    component: &Component,
    subtask: &Subtask,
    params: &GeneratorParams,
    max_retries: u32,
) -> Result<Component, GeneratorError> {
    if component.attempt >= max_retries {
        return Err(GeneratorError::RetriesExhausted {
            subtask_id: subtask.id,
            max_retries,
        });
    }
    let next = component.attempt + 1;
    let mut out = backend.generate(subtask, retry_seed(component.seed_used, next), params)?;
    out.attempt = next;
    Ok(out)
}

/// Hue used when a subtask carries no color tag.
pub fn default_color(entity: &str) -> HueTag {
    match entity {
        "dragon" => HueTag::Green,
        "castle" => HueTag::Violet,
        "tree" => HueTag::Lime,
        "house" => HueTag::Orange,
        "bird" => HueTag::Blue,
        "moon" => HueTag::Yellow,
        "sun" => HueTag::Orange,
        "mountain" => HueTag::Azure,
        "boat" => HueTag::Red,
        "star" => HueTag::Yellow,
        "circle" => HueTag::Cyan,
        "square" => HueTag::Purple,
        _ => HueTag::Teal,
    }
}

/// Hue a component of `subtask` is expected to carry.
pub fn expected_color(subtask: &Subtask) -> HueTag {
    subtask
        .attributes
        .color
        .unwrap_or_else(|| default_color(&subtask.entity))
}

pub fn expected_size(subtask: &Subtask) -> SizeTag {
    subtask.attributes.size.unwrap_or(SizeTag::Medium)
}

/// Deterministic glyph renderer. Diffusion parameters are accepted and
/// ignored apart from `resolution`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProceduralGenerator;

impl ProceduralGenerator {
    fn foreground(
        &self,
        subtask: &Subtask,
        seed: u64,
        size: usize,
    ) -> Result<Layer, GeneratorError> {
        let attrs = &subtask.attributes;
        let mut prims = glyph::glyph(&subtask.entity, attrs.style)
            .ok_or_else(|| GeneratorError::UnknownEntity(subtask.entity.clone()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hue = expected_color(subtask).center_degrees() + rng.random_range(-8.0..8.0);
        let sat = rng.random_range(0.55..0.7);
        let val = rng.random_range(0.6..0.72);
        glyph::jitter(&mut prims, &mut rng);
        let (degrees, squash) = glyph::pose_transform(attrs.pose);
        let tilt = rng.random_range(-3.0..3.0);
        glyph::place(
            &mut prims,
            degrees + tilt,
            squash,
            expected_size(subtask).scale(),
            size,
        );
        let (alpha, shade) = glyph::rasterize(&prims, size);
        let image = Image::from_fn(size, size, |x, y| {
            hsv_to_rgb(hue, sat, (val * shade[y * size + x]).min(0.85))
        })?;
        Ok(Layer::new(image, alpha)?)
    }

    fn background(
        &self,
        lighting: Lighting,
        seed: u64,
        size: usize,
    ) -> Result<Layer, GeneratorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (top, bottom) = gradient_stops(lighting);
        let dv = rng.random_range(-0.02..0.02);
        let dh = rng.random_range(-4.0..4.0);
        let top = [top[0] + dh, top[1], (top[2] + dv).clamp(0.1, 0.9)];
        let bottom = [bottom[0] + dh, bottom[1], (bottom[2] + dv).clamp(0.1, 0.9)];
        let rows: Vec<[f64; 3]> = (0..size)
            .map(|y| {
                let t = y as f64 / (size - 1) as f64;
                let a = hsv_to_rgb(top[0], top[1], top[2]);
                let b = hsv_to_rgb(bottom[0], bottom[1], bottom[2]);
                [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
            })
            .collect();
        Ok(Layer::opaque(Image::from_fn(size, size, |_, y| rows[y])?))
    }
}

/// Top and bottom HSV stops of each background gradient.
pub fn gradient_stops(lighting: Lighting) -> ([f64; 3], [f64; 3]) {
    match lighting {
        Lighting::Sunset => ([25.0, 0.7, 0.85], [300.0, 0.4, 0.45]),
        Lighting::Night => ([230.0, 0.6, 0.15], [240.0, 0.5, 0.32]),
        Lighting::Noon => ([210.0, 0.5, 0.85], [195.0, 0.25, 0.9]),
        Lighting::Neutral => ([210.0, 0.1, 0.75], [30.0, 0.1, 0.6]),
    }
}

impl GeneratorBackend for ProceduralGenerator {
    fn generate(
        &self,
        subtask: &Subtask,
        seed: u64,
        params: &GeneratorParams,
    ) -> Result<Component, GeneratorError> {
        params
            .validate()
            .map_err(|e| GeneratorError::InvalidParams(e.0))?;
        let size = params.resolution;
        let (layer, glyph) = if subtask.is_background() {
            let lighting = subtask.attributes.lighting.unwrap_or(Lighting::Neutral);
            (
                self.background(lighting, seed, size)?,
                Some(subtask.entity.clone()),
            )
        } else {
            (
                self.foreground(subtask, seed, size)?,
                Some(subtask.entity.clone()),
            )
        };
        Ok(Component {
            subtask_id: subtask.id,
            layer,
            seed_used: seed,
            attempt: 0,
            score: None,
            glyph,
        })
    }

    fn model_id(&self) -> String {
        "procedural-glyphs/1".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::rgb_to_hsv;
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

    fn sky(lighting: Lighting) -> Subtask {
        Subtask {
            id: 2,
            entity: "sky".into(),
            kind: SubtaskKind::Background,
            attributes: Attributes {
                lighting: Some(lighting),
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

    #[test]
    fn same_seed_same_bytes_different_seed_different_bytes() {
        let g = ProceduralGenerator;
        let s = subtask("dragon", Some(HueTag::Red));
        let a = g.generate(&s, 7, &params()).unwrap();
        let b = g.generate(&s, 7, &params()).unwrap();
        let c = g.generate(&s, 8, &params()).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.image().to_rgb8(), c.image().to_rgb8());
        assert_eq!(a.attempt, 0);
    }

    #[test]
    fn sunset_top_row_is_warm() {
        let c = ProceduralGenerator
            .generate(&sky(Lighting::Sunset), 3, &params())
            .unwrap();
        assert!(c.layer.alpha.iter().all(|&a| a == 1.0));
        let img = c.image();
        let mean = (0..img.width()).fold([0.0; 3], |acc, x| {
            let p = img.pixel(x, 0);
            [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]
        });
        let (h, _, _) = rgb_to_hsv(mean.map(|v| v / img.width() as f64));
        assert!(h <= 60.0 || h >= 330.0, "hue {h}");
    }

    #[test]
    fn foreground_alpha_vanishes_outside_glyph() {
        let c = ProceduralGenerator
            .generate(&subtask("circle", None), 1, &params())
            .unwrap();
        assert_eq!(c.layer.alpha_at(0, 0), 0.0);
        assert_eq!(c.layer.alpha_at(32, 32), 1.0);
        assert_eq!(c.glyph.as_deref(), Some("circle"));
    }

    #[test]
    fn opaque_pixels_stay_in_the_requested_hue_band() {
        for (i, &hue) in HueTag::ALL.iter().enumerate() {
            let c = ProceduralGenerator
                .generate(&subtask("dragon", Some(hue)), i as u64, &params())
                .unwrap();
            let mut opaque = 0;
            let mut inside = 0;
            for y in 0..64 {
                for x in 0..64 {
                    if c.layer.alpha_at(x, y) >= 0.5 {
                        opaque += 1;
                        let (h, _, _) = rgb_to_hsv(c.image().pixel(x, y));
                        inside += usize::from(hue.contains(h));
                    }
                }
            }
            assert!(
                inside as f64 >= 0.6 * opaque as f64,
                "{hue}: {inside}/{opaque}"
            );
        }
    }

    #[test]
    fn unknown_entity_is_an_error() {
        assert_eq!(
            ProceduralGenerator.generate(&subtask("unicorn", None), 0, &params()),
            Err(GeneratorError::UnknownEntity("unicorn".into()))
        );
    }

    #[test]
    fn regeneration_schedule() {
        let g = ProceduralGenerator;
        let s = subtask("tree", None);
        let first = g.generate(&s, 11, &params()).unwrap();
        let second = regenerate(&g, &first, &s, &params(), 3).unwrap();
        assert_eq!(second.attempt, 1);
        assert_ne!(second.seed_used, first.seed_used);
        assert_ne!(second.image().to_rgb8(), first.image().to_rgb8());
        let mut last = second;
        while last.attempt < 3 {
            last = regenerate(&g, &last, &s, &params(), 3).unwrap();
        }
        assert_eq!(
            regenerate(&g, &last, &s, &params(), 3),
            Err(GeneratorError::RetriesExhausted {
                subtask_id: 1,
                max_retries: 3
            })
        );
    }
}
