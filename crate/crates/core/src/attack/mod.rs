//! Deterministic image attacks and the watermark robustness benchmark.

mod bench;
mod jpeg;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{
    mark_corpus, run_bench, standard_grid, BenchCell, BenchMode, RobustnessReport, CSV_HEADER,
    POSTHOC_EXPORT_QUALITY,
};
pub use jpeg::{jpeg_roundtrip, quality_scale, scaled_table, CHROMA_TABLE, LUMA_TABLE};

use crate::image::{Image, ImageError};
use crate::protector::{extract_at, ExtractionResult, ProtectError, WatermarkKey, BLOCK};

/// Name recorded in reports for the noise source.
pub const NOISE_GENERATOR: &str = "chacha20 + rand_distr StandardNormal (ziggurat)";
pub const RESIZE_KERNEL: &str = "bilinear, pixel-centre aligned";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid attack: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Protect(#[from] ProtectError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    None,
    Jpeg {
        quality: u8,
    },
    GaussianNoise {
        sigma: f64,
        seed: u64,
    },
    Crop {
        fraction: f64,
        /// Block-aligned top-left corner of the kept region; centred when absent.
        #[serde(default)]
        anchor: Option<(usize, usize)>,
    },
    Resize {
        factor: f64,
    },
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::InvalidSpec(m.into()));
        match *self {
            AttackSpec::Jpeg { quality } if !(1..=100).contains(&quality) => {
                bad("quality must lie in 1..=100")
            }
            AttackSpec::GaussianNoise { sigma, .. } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad("sigma must be >= 0")
            }
            AttackSpec::Crop { fraction, .. } if !(0.0..0.5).contains(&fraction) => {
                bad("crop fraction must lie in [0, 0.5)")
            }
            AttackSpec::Crop {
                anchor: Some((x, y)),
                ..
            } if x % BLOCK != 0 || y % BLOCK != 0 => bad("crop anchor must be block aligned"),
            AttackSpec::Resize { factor } if !(factor > 0.0 && factor <= 4.0) => {
                bad("resize factor must lie in (0, 4]")
            }
            _ => Ok(()),
        }
    }

    /// Short attack name for reports.
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Jpeg { .. } => "jpeg",
            AttackSpec::GaussianNoise { .. } => "gaussian_noise",
            AttackSpec::Crop { .. } => "crop",
            AttackSpec::Resize { .. } => "resize",
        }
    }

    /// Main parameter as report text.
    pub fn param(&self) -> String {
        match self {
            AttackSpec::None => String::new(),
            AttackSpec::Jpeg { quality } => quality.to_string(),
            AttackSpec::GaussianNoise { sigma, .. } => sigma.to_string(),
            AttackSpec::Crop { fraction, .. } => fraction.to_string(),
            AttackSpec::Resize { factor } => factor.to_string(),
        }
    }
}

/// I.i.d. normal perturbation of every sample, clamped.
pub fn gaussian_noise(image: &Image, sigma: f64, seed: u64) -> Image {
    if sigma == 0.0 {
        return image.clone();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    image.map_samples(|_, v| {
        let n: f64 = StandardNormal.sample(&mut rng);
        v + sigma * n
    })
}

/// Side of the kept square-ish region: the smallest multiple of 8 whose
/// area share is at least `1 - fraction`.
fn kept_side(dim: usize, fraction: f64) -> usize {
    let side = ((dim as f64 * (1.0 - fraction).sqrt()) / BLOCK as f64).ceil() as usize * BLOCK;
    side.min(dim / BLOCK * BLOCK).max(BLOCK)
}

/// Removes about `fraction` of the area as a border, keeping a block-aligned
/// region. Returns the region and its offset in the input.
pub fn crop(
    image: &Image,
    fraction: f64,
    anchor: Option<(usize, usize)>,
) -> Result<(Image, (usize, usize)), AttackError> {
    AttackSpec::Crop { fraction, anchor }.validate()?;
    if fraction == 0.0 && anchor.is_none() {
        return Ok((image.clone(), (0, 0)));
    }
    let (w, h) = image.dims();
    let (kw, kh) = (kept_side(w, fraction), kept_side(h, fraction));
    let (ox, oy) = anchor.unwrap_or(((w - kw) / 2 / BLOCK * BLOCK, (h - kh) / 2 / BLOCK * BLOCK));
    if ox + kw > w || oy + kh > h {
        return Err(AttackError::InvalidSpec(format!(
            "crop anchor ({ox}, {oy}) leaves the frame"
        )));
    }
    Ok((image.sub_image(ox, oy, kw, kh)?, (ox, oy)))
}

/// Bilinear resample to `round(dim * factor)`.
pub fn resize(image: &Image, factor: f64) -> Result<Image, AttackError> {
    AttackSpec::Resize { factor }.validate()?;
    let (w, h) = image.dims();
    let nw = (w as f64 * factor).round() as usize;
    let nh = (h as f64 * factor).round() as usize;
    Ok(image.resize(nw, nh)?)
}

/// Attacked image plus where it sits in the original frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Attacked {
    pub image: Image,
    pub offset: (usize, usize),
}

pub fn apply_attack(image: &Image, spec: &AttackSpec) -> Result<Attacked, AttackError> {
    spec.validate()?;
    let image = match *spec {
        AttackSpec::None => image.clone(),
        AttackSpec::Jpeg { quality } => jpeg_roundtrip(image, quality),
        AttackSpec::GaussianNoise { sigma, seed } => gaussian_noise(image, sigma, seed),
        AttackSpec::Crop { fraction, anchor } => {
            let (image, offset) = crop(image, fraction, anchor)?;
            return Ok(Attacked { image, offset });
        }
        AttackSpec::Resize { factor } => resize(image, factor)?,
    };
    Ok(Attacked {
        image,
        offset: (0, 0),
    })
}

/// Attacks a watermarked image and extracts from the result, resizing back
/// to the key's dimensions or indexing surviving blocks as needed.
pub fn attack_and_extract(
    marked: &Image,
    key: &WatermarkKey,
    spec: &AttackSpec,
) -> Result<ExtractionResult, AttackError> {
    let attacked = apply_attack(marked, spec)?;
    let image = match spec {
        AttackSpec::Resize { .. } => attacked.image.resize(key.width, key.height)?,
        _ => attacked.image,
    };
    Ok(extract_at(&image, key, attacked.offset)?)
}

/// Attacks used to measure recoverability inside the pipeline.
pub fn quick_suite(seed: u64) -> Vec<AttackSpec> {
    vec![
        AttackSpec::Jpeg { quality: 70 },
        AttackSpec::GaussianNoise { sigma: 0.03, seed },
        AttackSpec::Crop {
            fraction: 0.25,
            anchor: None,
        },
    ]
}

/// `1 - mean bit accuracy` over `suite`; an attack that errors counts as zero accuracy.
pub fn recoverability_penalty(marked: &Image, key: &WatermarkKey, suite: &[AttackSpec]) -> f64 {
    if suite.is_empty() {
        return 0.0;
    }
    let total: f64 = suite
        .iter()
        .map(|s| attack_and_extract(marked, key, s).map_or(0.0, |r| r.bit_accuracy))
        .sum();
    1.0 - total / suite.len() as f64
}
