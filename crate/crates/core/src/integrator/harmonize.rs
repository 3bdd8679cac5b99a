//! Histogram matching of foreground regions toward the scene palette.

use super::features::{scene_coherence, scene_coherence_of};
use super::{IntegrationError, Scene, SceneStage};
use crate::image::Image;

const BINS: usize = 256;

/// Matching strengths tried in order until coherence does not get worse.
pub const HARMONIZE_STRENGTHS: [f64; 4] = [1.0, 0.5, 0.25, 0.0];

/// Piecewise-linear cumulative distribution over `BINS` equal bins of `[0, 1]`.
struct Cdf(Vec<f64>);

impl Cdf {
    fn new(samples: impl Iterator<Item = (f64, f64)>) -> Option<Cdf> {
        let mut hist = vec![0.0; BINS];
        let mut total = 0.0;
        for (v, w) in samples {
            if w > 0.0 {
                hist[((v * BINS as f64) as usize).min(BINS - 1)] += w;
                total += w;
            }
        }
        if total <= 0.0 {
            return None;
        }
        let mut c = Vec::with_capacity(BINS + 1);
        c.push(0.0);
        let mut acc = 0.0;
        for h in hist {
            acc += h;
            c.push(acc / total);
        }
        Some(Cdf(c))
    }

    fn forward(&self, v: f64) -> f64 {
        let x = v.clamp(0.0, 1.0) * BINS as f64;
        let b = (x as usize).min(BINS - 1);
        self.0[b] + (self.0[b + 1] - self.0[b]) * (x - b as f64)
    }

    fn inverse(&self, u: f64) -> f64 {
        let mut b = self.0[1..].partition_point(|&c| c < u).min(BINS - 1);
        // land inside a bin that actually holds mass
        while b < BINS - 1 && self.0[b + 1] <= self.0[b] {
            b += 1;
        }
        let (lo, hi) = (self.0[b], self.0[b + 1]);
        let t = if hi > lo {
            ((u - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (b as f64 + t) / BINS as f64
    }
}

/// Moves every foreground pixel `strength` of the way toward its matched
/// value, weighted by the region's coverage. Strength 0 returns the input.
pub fn harmonize_with_strength(scene: &Scene, strength: f64) -> Image {
    let image = &scene.image;
    if strength == 0.0 || scene.masks.is_empty() {
        return image.clone();
    }
    let (width, _) = image.dims();
    let src = image.samples();
    let mut out = src.to_vec();
    let reference: Vec<Option<Cdf>> = (0..3)
        .map(|c| Cdf::new(src.chunks_exact(3).map(|p| (p[c], 1.0))))
        .collect();
    for (_, mask) in &scene.masks {
        let r = mask.rect;
        let pixels = || (r.y0..r.y1()).flat_map(move |y| (r.x0..r.x1()).map(move |x| (x, y)));
        for c in 0..3 {
            let Some(reference) = &reference[c] else {
                continue;
            };
            let Some(source) =
                Cdf::new(pixels().map(|(x, y)| (src[(y * width + x) * 3 + c], mask.at(x, y))))
            else {
                continue;
            };
            for (x, y) in pixels() {
                let a = mask.at(x, y);
                if a <= 0.0 {
                    continue;
                }
                let i = (y * width + x) * 3 + c;
                let v = out[i];
                let target = reference.inverse(source.forward(v));
                out[i] = v + a * strength * (target - v);
            }
        }
    }
    Image::from_samples(image.width(), image.height(), out).expect("dimensions unchanged")
}

/// Harmonizes at the largest strength that does not increase the scene's
/// coherence loss. Returns the scene and the strength used.
pub fn harmonize(scene: &Scene) -> Result<(Scene, f64), IntegrationError> {
    scene.expect_stage(SceneStage::Composited)?;
    let before = scene_coherence(scene);
    for strength in HARMONIZE_STRENGTHS {
        let image = harmonize_with_strength(scene, strength);
        if strength == 0.0 || scene_coherence_of(&image, scene) <= before {
            let mut out = scene.clone();
            out.image = image;
            out.stage = SceneStage::Harmonized;
            return Ok((out, strength));
        }
    }
    unreachable!("strength 0 always succeeds")
}
