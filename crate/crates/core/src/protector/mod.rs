//! Spread-spectrum watermarking of mid-band luma DCT coefficients.

pub mod dct;
mod provenance;

use std::fmt;

use chrono::{DateTime, SecondsFormat, Utc};
use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

pub use dct::{dct8, idct8, zigzag, Block};
pub use provenance::{hash_user, ModelIds, ProvenanceRecord, WatermarkRecord, PROVENANCE_SCHEMA};

use crate::config::{ProtectionParams, PSNR_FLOOR_DB};
use crate::image::{sum_squared_diff, ContentDigest, Image, ImageError};

pub const BLOCK: usize = 8;
/// Inclusive zig-zag range of the embedding band.
pub const BAND: (usize, usize) = (6, 14);
pub const BAND_LEN: usize = BAND.1 - BAND.0 + 1;
pub const PAYLOAD_BITS: usize = 64;
pub const RECOVERY_THRESHOLD: f64 = 0.99;
pub const KEY_DERIVATION: &str = "hmac-sha256(salt; content-digest || rfc3339-timestamp)";
pub const SALT_ENV: &str = "AGENTMARK_WM_SALT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtectError {
    #[error("{needed} chips needed but the image offers {available} slots")]
    CapacityExceeded { needed: usize, available: usize },
    #[error("image is {actual:?}, key was derived for {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid watermark parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Secret mixed into key derivation. Never serialized or printed.
#[derive(Clone, PartialEq, Eq)]
pub struct WatermarkSalt(Vec<u8>);

impl WatermarkSalt {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    /// Reads the salt from `AGENTMARK_WM_SALT`.
    pub fn from_env() -> Option<Self> {
        std::env::var(SALT_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .map(|s| Self(s.into_bytes()))
    }
}

impl fmt::Debug for WatermarkSalt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("WatermarkSalt(<redacted>)")
    }
}

/// Number of mid-band slots in the full 8x8 blocks of a `w x h` image.
/// Partial blocks at the right and bottom edges carry no chips.
pub fn available_slots(width: usize, height: usize) -> usize {
    (width / BLOCK) * (height / BLOCK) * BAND_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkParams {
    pub chips_per_bit: usize,
    /// Amplitude requested by configuration.
    pub amplitude_requested: f64,
    /// Amplitude actually used, capped by the imperceptibility budget.
    pub amplitude: f64,
}

impl WatermarkParams {
    /// Fills in `chips_per_bit` (largest that fits when unset) and caps the
    /// amplitude so the pre-clamp perturbation stays within the PSNR floor.
    pub fn resolve(
        p: &ProtectionParams,
        width: usize,
        height: usize,
    ) -> Result<Self, ProtectError> {
        if !(p.amplitude >= 0.0 && p.amplitude.is_finite()) {
            return Err(ProtectError::InvalidParams(
                "amplitude must be finite and non-negative".into(),
            ));
        }
        let available = available_slots(width, height);
        let chips_per_bit = match p.chips_per_bit {
            Some(0) => {
                return Err(ProtectError::InvalidParams(
                    "chips_per_bit must be positive".into(),
                ))
            }
            Some(c) => c,
            None => (available / PAYLOAD_BITS).max(1),
        };
        let needed = chips_per_bit * PAYLOAD_BITS;
        if needed > available {
            return Err(ProtectError::CapacityExceeded { needed, available });
        }
        Ok(Self {
            chips_per_bit,
            amplitude_requested: p.amplitude,
            amplitude: p.amplitude.min(amplitude_cap(width, height, needed)),
        })
    }
}

/// Largest chip amplitude whose orthonormal-domain energy keeps the
/// per-sample MSE at the PSNR floor.
pub fn amplitude_cap(width: usize, height: usize, chips: usize) -> f64 {
    let mse = 10f64.powf(-PSNR_FLOOR_DB / 10.0);
    (mse * (width * height) as f64 / chips as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkKey {
    pub seed: u64,
    pub payload: u64,
    pub params: WatermarkParams,
    pub width: usize,
    pub height: usize,
}

/// Canonical timestamp text used in key derivation and provenance.
pub fn timestamp_text(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Derives seed and payload from `HMAC-SHA256(salt, digest || timestamp)`.
pub fn derive_key(
    digest: &ContentDigest,
    timestamp: &DateTime<Utc>,
    salt: &WatermarkSalt,
    params: &ProtectionParams,
    dims: (usize, usize),
) -> Result<WatermarkKey, ProtectError> {
    let params = WatermarkParams::resolve(params, dims.0, dims.1)?;
    let mut mac = Hmac::<Sha256>::new_from_slice(&salt.0).expect("hmac accepts any key length");
    mac.update(&digest.0);
    mac.update(timestamp_text(timestamp).as_bytes());
    let out = mac.finalize().into_bytes();
    let word = |i: usize| u64::from_be_bytes(out[i..i + 8].try_into().expect("8 bytes"));
    Ok(WatermarkKey {
        seed: word(0),
        payload: word(8),
        params,
        width: dims.0,
        height: dims.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chip {
    pub block: usize,
    /// Zig-zag position.
    pub coef: usize,
    pub bit: usize,
    pub sign: i8,
}

/// Chip assignment: a keyed permutation of every slot, truncated to
/// `64 * chips_per_bit` chips; chip `k` carries bit `k % 64`.
pub fn pattern(key: &WatermarkKey) -> Result<Vec<Chip>, ProtectError> {
    let available = available_slots(key.width, key.height);
    let needed = key.params.chips_per_bit * PAYLOAD_BITS;
    if needed > available || key.params.chips_per_bit == 0 {
        return Err(ProtectError::CapacityExceeded { needed, available });
    }
    let mut slots: Vec<u32> = (0..available as u32).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(key.seed);
    for i in (1..slots.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        slots.swap(i, j);
    }
    Ok(slots[..needed]
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let s = s as usize;
            Chip {
                block: s / BAND_LEN,
                coef: BAND.0 + s % BAND_LEN,
                bit: k % PAYLOAD_BITS,
                sign: if rng.next_u32() & 1 == 1 { 1 } else { -1 },
            }
        })
        .collect())
}

fn bit_value(payload: u64, bit: usize) -> f64 {
    if payload >> bit & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

fn check_dims(image: &Image, key: &WatermarkKey) -> Result<(), ProtectError> {
    if image.dims() != (key.width, key.height) {
        return Err(ProtectError::DimensionMismatch {
            expected: (key.width, key.height),
            actual: image.dims(),
        });
    }
    Ok(())
}

/// Pixel-domain luma perturbation the key adds, before clamping.
pub fn luma_delta(key: &WatermarkKey) -> Result<Vec<f64>, ProtectError> {
    let (w, h) = (key.width, key.height);
    let blocks_x = w / BLOCK;
    let mut coefs = vec![[[0.0; 8]; 8]; blocks_x * (h / BLOCK)];
    let z = zigzag();
    for c in pattern(key)? {
        let (r, col) = z[c.coef];
        coefs[c.block][r][col] +=
            key.params.amplitude * f64::from(c.sign) * bit_value(key.payload, c.bit);
    }
    let mut delta = vec![0.0; w * h];
    for (b, block) in coefs.iter().enumerate() {
        if block.iter().flatten().all(|v| *v == 0.0) {
            continue;
        }
        let px = idct8(block);
        let (bx, by) = ((b % blocks_x) * BLOCK, (b / blocks_x) * BLOCK);
        for (r, row) in px.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                delta[(by + r) * w + bx + c] = *v;
            }
        }
    }
    Ok(delta)
}

/// Adds the keyed pattern to the luma of every full block; the same luma
/// change goes to R, G and B so chroma is untouched.
pub fn embed(image: &Image, key: &WatermarkKey) -> Result<Image, ProtectError> {
    check_dims(image, key)?;
    if key.params.amplitude == 0.0 {
        return Ok(image.clone());
    }
    let delta = luma_delta(key)?;
    Ok(image.map_samples(|i, v| v + delta[i / 3]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub bit_accuracy: f64,
    pub recovered: bool,
    /// Signed correlation per payload bit (zero where no chip survived).
    pub correlations: Vec<f64>,
    /// Chips that contributed to each bit.
    pub chips: Vec<usize>,
    /// Bits with at least one contributing chip.
    pub bits_evaluated: usize,
}

fn block_dct(luma: &[f64], width: usize, bx: usize, by: usize) -> Block {
    let mut b = [[0.0; 8]; 8];
    for (r, row) in b.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = luma[(by + r) * width + bx + c];
        }
    }
    dct8(&b)
}

/// Blind extraction from an image that shows the watermarked frame starting
/// at block-aligned `offset`; chips in blocks outside the view are skipped.
pub fn extract_at(
    image: &Image,
    key: &WatermarkKey,
    offset: (usize, usize),
) -> Result<ExtractionResult, ProtectError> {
    if !offset.0.is_multiple_of(BLOCK) || !offset.1.is_multiple_of(BLOCK) {
        return Err(ProtectError::InvalidParams(
            "offset must be block aligned".into(),
        ));
    }
    let (w, h) = image.dims();
    let blocks_x = key.width / BLOCK;
    let luma = image.luma();
    let z = zigzag();
    let mut corr = vec![0.0; PAYLOAD_BITS];
    let mut chips = vec![0usize; PAYLOAD_BITS];
    let mut cache: std::collections::HashMap<usize, Block> = std::collections::HashMap::new();
    for c in pattern(key)? {
        let (gx, gy) = ((c.block % blocks_x) * BLOCK, (c.block / blocks_x) * BLOCK);
        if gx < offset.0 || gy < offset.1 {
            continue;
        }
        let (lx, ly) = (gx - offset.0, gy - offset.1);
        if lx + BLOCK > w || ly + BLOCK > h {
            continue;
        }
        let coefs = cache
            .entry(c.block)
            .or_insert_with(|| block_dct(&luma, w, lx, ly));
        let (r, col) = z[c.coef];
        corr[c.bit] += f64::from(c.sign) * coefs[r][col];
        chips[c.bit] += 1;
    }
    let mut correct = 0;
    let mut evaluated = 0;
    for bit in 0..PAYLOAD_BITS {
        if chips[bit] == 0 {
            continue;
        }
        evaluated += 1;
        let decided = if corr[bit] > 0.0 { 1.0 } else { -1.0 };
        if decided == bit_value(key.payload, bit) {
            correct += 1;
        }
    }
    let bit_accuracy = if evaluated == 0 {
        0.0
    } else {
        correct as f64 / evaluated as f64
    };
    Ok(ExtractionResult {
        bit_accuracy,
        recovered: bit_accuracy >= RECOVERY_THRESHOLD,
        correlations: corr,
        chips,
        bits_evaluated: evaluated,
    })
}

/// Blind extraction from an image with the key's dimensions.
pub fn extract(image: &Image, key: &WatermarkKey) -> Result<ExtractionResult, ProtectError> {
    check_dims(image, key)?;
    extract_at(image, key, (0, 0))
}

/// `|I' - I|^2 + alpha * R`.
pub fn protection_loss(
    original: &Image,
    protected: &Image,
    recoverability_penalty: f64,
    alpha: f64,
) -> Result<f64, ProtectError> {
    Ok(sum_squared_diff(original, protected)? + alpha * recoverability_penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{content_hash, psnr};
    use chrono::TimeZone;

    fn key_for(img: &Image, params: &ProtectionParams) -> Result<WatermarkKey, ProtectError> {
        let t = Utc.with_ymd_and_hms(2025, 1, 2, 3, 4, 5).unwrap();
        derive_key(
            &content_hash(img),
            &t,
            &WatermarkSalt::new("pepper"),
            params,
            img.dims(),
        )
    }

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            [
                0.2 + 0.5 * x as f64 / w as f64,
                0.4,
                0.3 + 0.4 * y as f64 / h as f64,
            ]
        })
        .unwrap()
    }

    #[test]
    fn key_derivation_is_deterministic_and_time_sensitive() {
        let img = gradient(64, 64);
        let p = ProtectionParams::default();
        let a = key_for(&img, &p).unwrap();
        assert_eq!(a, key_for(&img, &p).unwrap());
        let t2 = Utc.with_ymd_and_hms(2025, 1, 2, 3, 4, 6).unwrap();
        let b = derive_key(
            &content_hash(&img),
            &t2,
            &WatermarkSalt::new("pepper"),
            &p,
            img.dims(),
        )
        .unwrap();
        assert_ne!(a.payload, b.payload);
        assert_ne!(a.seed, b.seed);
    }

    #[test]
    fn tiny_images_lack_capacity() {
        let img = gradient(16, 16);
        let p = ProtectionParams {
            chips_per_bit: Some(1),
            ..Default::default()
        };
        assert_eq!(
            key_for(&img, &p),
            Err(ProtectError::CapacityExceeded {
                needed: 64,
                available: 36
            })
        );
    }

    #[test]
    fn defaults_at_256() {
        let k = key_for(&gradient(256, 256), &ProtectionParams::default()).unwrap();
        assert_eq!(k.params.chips_per_bit, 144);
        assert!(k.params.amplitude <= amplitude_cap(256, 256, 144 * 64));
    }

    #[test]
    fn pattern_uses_each_slot_once() {
        let k = key_for(&gradient(64, 64), &ProtectionParams::default()).unwrap();
        let p = pattern(&k).unwrap();
        assert_eq!(p.len(), 64 * k.params.chips_per_bit);
        let mut slots: Vec<_> = p.iter().map(|c| (c.block, c.coef)).collect();
        slots.sort();
        slots.dedup();
        assert_eq!(slots.len(), p.len());
        assert!(p.iter().all(|c| (BAND.0..=BAND.1).contains(&c.coef)));
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let img = gradient(64, 64);
        let k = key_for(
            &img,
            &ProtectionParams {
                amplitude: 0.0,
                chips_per_bit: None,
            },
        )
        .unwrap();
        assert_eq!(embed(&img, &k).unwrap(), img);
    }

    #[test]
    fn round_trip_and_mirror() {
        let img = gradient(128, 96);
        let k = key_for(&img, &ProtectionParams::default()).unwrap();
        let marked = embed(&img, &k).unwrap();
        assert!(psnr(&img, &marked).unwrap().unwrap() >= 40.0);
        let r = extract(&marked, &k).unwrap();
        assert_eq!(r.bit_accuracy, 1.0);
        assert!(r.recovered);
        // flipping every chip's sign mirrors the payload
        let delta = luma_delta(&k).unwrap();
        let mirrored = img.map_samples(|i, v| v - delta[i / 3]);
        assert_eq!(extract(&mirrored, &k).unwrap().bit_accuracy, 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let k = key_for(&gradient(64, 64), &ProtectionParams::default()).unwrap();
        assert!(matches!(
            extract(&gradient(64, 72), &k),
            Err(ProtectError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn loss_fixtures() {
        let a = gradient(32, 32);
        assert_eq!(protection_loss(&a, &a, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(protection_loss(&a, &a, 1.0, 2.0).unwrap(), 2.0);
    }

    #[test]
    fn salt_is_redacted() {
        assert!(!format!("{:?}", WatermarkSalt::new("pepper")).contains("pepper"));
    }
}
