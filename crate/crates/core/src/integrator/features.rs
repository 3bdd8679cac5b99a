//! Hand-crafted region descriptor and the adjacency coherence loss.

use std::collections::{BTreeMap, BTreeSet};

use super::{PlacedMask, Rect, Scene};
use crate::image::Image;
use crate::planner::SubtaskId;

pub const COLOR_BINS: usize = 16;
pub const ORIENTATION_BINS: usize = 8;
pub const FEATURE_DIM: usize = 3 * COLOR_BINS + ORIENTATION_BINS;

/// Three opacity-weighted 16-bin channel histograms followed by an 8-bin
/// gradient orientation histogram, L2-normalized (or all zero).
pub type FeatureVector = [f64; FEATURE_DIM];

fn orientation_bin(gx: f64, gy: f64) -> usize {
    // rotate into the first quadrant so 90-degree turns shift bins exactly
    let (mut x, mut y, mut q) = (gx, gy, 0);
    while !(x > 0.0 && y >= 0.0) {
        (x, y) = (y, -x);
        q += 1;
        if q == 4 {
            return 0;
        }
    }
    let half = usize::from(y >= x);
    (2 * q + half) % ORIENTATION_BINS
}

/// Features of the pixels of `image` inside `region`, weighted by `mask`
/// (`mask(x, y)` in absolute coordinates).
pub fn extract_features(
    image: &Image,
    region: Rect,
    mask: impl Fn(usize, usize) -> f64,
) -> FeatureVector {
    let (width, height) = image.dims();
    let luma = image.luma();
    let mut v = [0.0; FEATURE_DIM];
    let mut color_weight = 0.0;
    let mut grad_weight = 0.0;
    for y in region.y0..region.y1().min(height) {
        for x in region.x0..region.x1().min(width) {
            let a = mask(x, y);
            if a <= 0.0 {
                continue;
            }
            let p = image.pixel(x, y);
            for (c, value) in p.into_iter().enumerate() {
                let bin = ((value * COLOR_BINS as f64) as usize).min(COLOR_BINS - 1);
                v[c * COLOR_BINS + bin] += a;
            }
            color_weight += a;
            let l = |x: usize, y: usize| luma[y * width + x];
            let gx = (l((x + 1).min(width - 1), y) - l(x.saturating_sub(1), y)) / 2.0;
            let gy = (l(x, (y + 1).min(height - 1)) - l(x, y.saturating_sub(1))) / 2.0;
            let m = gx.hypot(gy) * a;
            if m > 0.0 {
                v[3 * COLOR_BINS + orientation_bin(gx, gy)] += m;
                grad_weight += m;
            }
        }
    }
    if color_weight > 0.0 {
        v[..3 * COLOR_BINS]
            .iter_mut()
            .for_each(|x| *x /= color_weight);
    }
    if grad_weight > 0.0 {
        v[3 * COLOR_BINS..]
            .iter_mut()
            .for_each(|x| *x /= grad_weight);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// `sum over (i, j) in N of |phi_i - phi_j|^2`. Pairs lacking a feature are skipped.
pub fn coherence_loss(
    features: &BTreeMap<SubtaskId, FeatureVector>,
    adjacency: &BTreeSet<(SubtaskId, SubtaskId)>,
) -> f64 {
    adjacency
        .iter()
        .filter_map(|(a, b)| Some((features.get(a)?, features.get(b)?)))
        .map(|(fa, fb)| {
            fa.iter()
                .zip(fb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum()
}

pub(crate) fn region_features(image: &Image, mask: &PlacedMask) -> FeatureVector {
    extract_features(image, mask.rect, |x, y| mask.at(x, y))
}

/// Coherence loss of a scene's placed foreground regions.
pub fn scene_coherence(scene: &Scene) -> f64 {
    scene_coherence_of(&scene.image, scene)
}

pub(crate) fn scene_coherence_of(image: &Image, scene: &Scene) -> f64 {
    let features = scene
        .masks
        .iter()
        .map(|(id, m)| (*id, region_features(image, m)))
        .collect();
    coherence_loss(&features, &scene.layout.adjacency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(img: &Image) -> Rect {
        Rect {
            x0: 0,
            y0: 0,
            w: img.width(),
            h: img.height(),
        }
    }

    #[test]
    fn uniform_region_has_no_gradient_mass() {
        let img = Image::filled(16, 16, [0.9, 0.1, 0.1]).unwrap();
        let v = extract_features(&img, full(&img), |_, _| 1.0);
        assert!(v[3 * COLOR_BINS..].iter().all(|x| *x == 0.0));
        let nonzero: Vec<usize> = (0..3 * COLOR_BINS).filter(|i| v[*i] > 0.0).collect();
        assert_eq!(nonzero, [14, 16 + 1, 32 + 1]);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transparent_region_is_the_zero_vector() {
        let img = Image::filled(16, 16, [0.5; 3]).unwrap();
        assert_eq!(
            extract_features(&img, full(&img), |_, _| 0.0),
            [0.0; FEATURE_DIM]
        );
    }

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    fn rotate90(img: &Image) -> Image {
        let (w, h) = img.dims();
        Image::from_fn(h, w, |x, y| img.pixel(y, h - 1 - x)).unwrap()
    }

    #[test]
    fn rotation_keeps_colour_histograms() {
        let img = random_image(4, 24, 20);
        let a = extract_features(&img, full(&img), |_, _| 1.0);
        let r = rotate90(&img);
        let b = extract_features(&r, full(&r), |_, _| 1.0);
        // the orientation block permutes under rotation, so compare the
        // colour blocks after undoing the global normalization
        let ca: Vec<f64> = a[..48].to_vec();
        let cb: Vec<f64> = b[..48].to_vec();
        let sa: f64 = ca.iter().sum();
        let sb: f64 = cb.iter().sum();
        for (x, y) in ca.iter().zip(&cb) {
            assert!((x / sa - y / sb).abs() < 1e-12);
        }
        let mut oa: Vec<f64> = a[48..].to_vec();
        let mut ob: Vec<f64> = b[48..].to_vec();
        oa.sort_by(f64::total_cmp);
        ob.sort_by(f64::total_cmp);
        for (x, y) in oa.iter().zip(&ob) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn random_regions_have_unit_norm() {
        for seed in 0..20 {
            let img = random_image(seed, 20, 20);
            let v = extract_features(&img, full(&img), |x, _| x as f64 / 19.0);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn orientation_bins_follow_octants() {
        assert_eq!(orientation_bin(1.0, 0.0), 0);
        assert_eq!(orientation_bin(1.0, 0.5), 0);
        assert_eq!(orientation_bin(0.5, 1.0), 1);
        assert_eq!(orientation_bin(0.0, 1.0), 2);
        assert_eq!(orientation_bin(-1.0, 0.0), 4);
        assert_eq!(orientation_bin(0.0, -1.0), 6);
        assert_eq!(orientation_bin(1.0, -0.5), 7);
    }

    #[test]
    fn loss_fixtures() {
        let mut e1 = [0.0; FEATURE_DIM];
        let mut e2 = [0.0; FEATURE_DIM];
        e1[0] = 1.0;
        e2[1] = 1.0;
        let pair: BTreeSet<_> = [(1, 2)].into();
        let same: BTreeMap<_, _> = [(1, e1), (2, e1)].into();
        let ortho: BTreeMap<_, _> = [(1, e1), (2, e2)].into();
        assert_eq!(coherence_loss(&same, &pair), 0.0);
        assert_eq!(coherence_loss(&ortho, &pair), 2.0);
        assert_eq!(coherence_loss(&ortho, &BTreeSet::new()), 0.0);
    }
}
