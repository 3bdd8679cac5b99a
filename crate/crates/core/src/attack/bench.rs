use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    attack_and_extract, jpeg_roundtrip, AttackError, AttackSpec, NOISE_GENERATOR, RESIZE_KERNEL,
};
use crate::image::{content_hash, Image};
use crate::protector::{embed, WatermarkKey, RECOVERY_THRESHOLD};

pub const CSV_HEADER: &str = "attack,param,corpus_n,recovery_rate,mean_bit_accuracy";

/// Quality of the export that precedes a post-hoc embed.
pub const POSTHOC_EXPORT_QUALITY: u8 = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// Watermark embedded into the scene as produced.
    Integrated,
    /// Scene exported as JPEG first, watermark added afterwards.
    Posthoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub attack: AttackSpec,
    pub label: String,
    pub param: String,
    pub corpus_n: usize,
    pub recovered: usize,
    pub recovery_rate: f64,
    pub mean_bit_accuracy: f64,
    /// `(corpus index, message)` for images whose attack failed; they count as unrecovered.
    pub errors: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub cells: Vec<BenchCell>,
    /// SHA-256 over the per-image content digests, in corpus order.
    pub corpus_digest: String,
    pub mode: BenchMode,
    pub recovery_threshold: f64,
    pub noise_generator: String,
    pub resize_kernel: String,
}

impl RobustnessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4}",
                c.label, c.param, c.corpus_n, c.recovery_rate, c.mean_bit_accuracy
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn cell(&self, attack: &AttackSpec) -> Option<&BenchCell> {
        self.cells.iter().find(|c| &c.attack == attack)
    }
}

/// JPEG 50/70/95, noise sigma 0.01/0.03/0.05, crop 10/25/30 %, resize 0.5x/2x.
/// Noise cells carry `seed`; image `i` is perturbed with `seed + i`.
pub fn standard_grid(seed: u64) -> Vec<AttackSpec> {
    let mut grid = vec![AttackSpec::None];
    grid.extend([50, 70, 95].map(|quality| AttackSpec::Jpeg { quality }));
    grid.extend([0.01, 0.03, 0.05].map(|sigma| AttackSpec::GaussianNoise { sigma, seed }));
    grid.extend([0.10, 0.25, 0.30].map(|fraction| AttackSpec::Crop {
        fraction,
        anchor: None,
    }));
    grid.extend([0.5, 2.0].map(|factor| AttackSpec::Resize { factor }));
    grid
}

fn per_image(spec: &AttackSpec, index: usize) -> AttackSpec {
    match *spec {
        AttackSpec::GaussianNoise { sigma, seed } => AttackSpec::GaussianNoise {
            sigma,
            seed: seed.wrapping_add(index as u64),
        },
        ref s => s.clone(),
    }
}

fn corpus_digest(corpus: &[Image]) -> String {
    let mut h = Sha256::new();
    for img in corpus {
        h.update(content_hash(img).0);
    }
    hex::encode(h.finalize())
}

/// Marks the corpus as `mode` dictates.
pub fn mark_corpus(
    corpus: &[Image],
    keys: &[WatermarkKey],
    mode: BenchMode,
) -> Result<Vec<Image>, AttackError> {
    if corpus.len() != keys.len() {
        return Err(AttackError::InvalidSpec(format!(
            "{} images but {} keys",
            corpus.len(),
            keys.len()
        )));
    }
    corpus
        .par_iter()
        .zip(keys)
        .map(|(img, key)| {
            let base = match mode {
                BenchMode::Integrated => img.clone(),
                BenchMode::Posthoc => jpeg_roundtrip(img, POSTHOC_EXPORT_QUALITY),
            };
            Ok(embed(&base, key)?)
        })
        .collect()
}

/// Runs every attack in `grid` on every corpus image and aggregates recovery.
pub fn run_bench(
    corpus: &[Image],
    keys: &[WatermarkKey],
    grid: &[AttackSpec],
    mode: BenchMode,
) -> Result<RobustnessReport, AttackError> {
    for spec in grid {
        spec.validate()?;
    }
    let marked = mark_corpus(corpus, keys, mode)?;
    let cells = grid
        .iter()
        .map(|spec| {
            let results: Vec<Result<(bool, f64), String>> = marked
                .par_iter()
                .zip(keys)
                .enumerate()
                .map(|(i, (img, key))| {
                    attack_and_extract(img, key, &per_image(spec, i))
                        .map(|r| (r.recovered, r.bit_accuracy))
                        .map_err(|e| e.to_string())
                })
                .collect();
            let n = results.len();
            let mut recovered = 0;
            let mut acc = 0.0;
            let mut errors = Vec::new();
            for (i, r) in results.into_iter().enumerate() {
                match r {
                    Ok((ok, a)) => {
                        recovered += usize::from(ok);
                        acc += a;
                    }
                    Err(e) => errors.push((i, e)),
                }
            }
            let denom = n.max(1) as f64;
            BenchCell {
                label: spec.name().to_owned(),
                param: spec.param(),
                attack: spec.clone(),
                corpus_n: n,
                recovered,
                recovery_rate: recovered as f64 / denom,
                mean_bit_accuracy: acc / denom,
                errors,
            }
        })
        .collect();
    Ok(RobustnessReport {
        cells,
        corpus_digest: corpus_digest(corpus),
        mode,
        recovery_threshold: RECOVERY_THRESHOLD,
        noise_generator: NOISE_GENERATOR.to_owned(),
        resize_kernel: RESIZE_KERNEL.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProtectionParams;
    use crate::protector::{derive_key, WatermarkSalt};
    use chrono::{TimeZone, Utc};

    fn textured(seed: u64) -> Image {
        Image::from_fn(64, 64, |x, y| {
            let t = (x as f64 * 0.21 + y as f64 * 0.13 + seed as f64).sin() * 0.2 + 0.5;
            [t, 0.4, 1.0 - t]
        })
        .unwrap()
    }

    fn setup(n: u64) -> (Vec<Image>, Vec<WatermarkKey>) {
        let salt = WatermarkSalt::new(b"bench-test".to_vec());
        let t = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let corpus: Vec<Image> = (0..n).map(textured).collect();
        let keys = corpus
            .iter()
            .map(|img| {
                derive_key(
                    &content_hash(img),
                    &t,
                    &salt,
                    &ProtectionParams::default(),
                    img.dims(),
                )
                .unwrap()
            })
            .collect();
        (corpus, keys)
    }

    #[test]
    fn identity_cell_recovers_everything() {
        let (corpus, keys) = setup(3);
        let report = run_bench(&corpus, &keys, &[AttackSpec::None], BenchMode::Integrated).unwrap();
        assert_eq!(report.cells[0].recovered, 3);
        assert_eq!(report.cells[0].recovery_rate, 1.0);
        let csv = report.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn failing_attacks_are_recorded_per_image() {
        let (corpus, keys) = setup(2);
        assert!(run_bench(
            &corpus,
            &keys,
            &[AttackSpec::Jpeg { quality: 0 }],
            BenchMode::Integrated
        )
        .is_err());
        // 64 * 0.2 rounds to 13, below the minimum side
        let report = run_bench(
            &corpus,
            &keys,
            &[AttackSpec::Resize { factor: 0.2 }],
            BenchMode::Integrated,
        )
        .unwrap();
        assert_eq!(report.cells[0].errors.len(), 2);
        assert_eq!(report.cells[0].recovery_rate, 0.0);
    }

    #[test]
    fn grid_shape() {
        let g = standard_grid(7);
        assert_eq!(g.len(), 12);
        assert_eq!(
            per_image(&g[4], 3),
            AttackSpec::GaussianNoise {
                sigma: 0.01,
                seed: 10
            }
        );
    }
}
