//! Canonical RGB raster, the binary PPM interchange format and content digests.
//!
//! Samples are kept as `f64` in `[0, 1]`; quantization to 8 bits happens only
//! when an image crosses an I/O boundary (PPM bytes, digests).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Smallest width or height accepted for an [`Image`].
pub const MIN_DIMENSION: usize = 16;

/// Name of the digest used for [`content_hash`], recorded in provenance.
pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image dimensions {width}x{height} are below the {MIN_DIMENSION}px minimum")]
    TooSmall { width: usize, height: usize },
    #[error("sample buffer has {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("malformed PPM: {0}")]
    MalformedPpm(String),
    #[error("unsupported image encoding: {0}")]
    Decode(String),
}

/// Owned RGB image with row-major interleaved samples in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), ImageError> {
    if width < MIN_DIMENSION || height < MIN_DIMENSION {
        return Err(ImageError::TooSmall { width, height });
    }
    Ok(())
}

impl Image {
    /// Builds an image from interleaved RGB samples. Out-of-range samples are
    /// clamped; non-finite samples are rejected.
    pub fn from_samples(
        width: usize,
        height: usize,
        mut data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(ImageError::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        for (index, v) in data.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite { index });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        let px = rgb.map(|c| c.clamp(0.0, 1.0));
        let data = (0..width * height).flat_map(|_| px).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in f(x, y) {
                    data.push(if c.is_finite() {
                        c.clamp(0.0, 1.0)
                    } else {
                        0.0
                    });
                }
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel, clamping every channel into `[0, 1]`.
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }

    /// Applies `f` to every sample and clamps the result.
    pub fn map_samples(&self, mut f: impl FnMut(usize, f64) -> f64) -> Image {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let out = f(i, v);
                if out.is_finite() {
                    out.clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Copies the rectangle at `(x0, y0)` of size `w x h`.
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image, ImageError> {
        check_dims(w, h)?;
        if x0 + w > self.width || y0 + h > self.height {
            return Err(ImageError::DimensionMismatch {
                left: (self.width, self.height),
                right: (x0 + w, y0 + h),
            });
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    /// 8-bit samples, `round(x * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Image, ImageError> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Image::from_samples(width, height, data)
    }

    /// Canonical interchange bytes: `P6\n<w> <h>\n255\n` followed by RGB bytes.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        out
    }

    /// Parses binary PPM. Comments and arbitrary whitespace between header
    /// fields are accepted; only `maxval = 255` is supported.
    pub fn from_ppm(bytes: &[u8]) -> Result<Image, ImageError> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::MalformedPpm("truncated header".into()));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| ImageError::MalformedPpm("non-ASCII header".into()))?,
            );
        }
        if fields[0] != "P6" {
            return Err(ImageError::MalformedPpm(format!("magic {:?}", fields[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| ImageError::MalformedPpm(format!("bad {what} {s:?}")))
        };
        let width = parse(fields[1], "width")?;
        let height = parse(fields[2], "height")?;
        if parse(fields[3], "maxval")? != 255 {
            return Err(ImageError::MalformedPpm(
                "only maxval 255 is supported".into(),
            ));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| ImageError::MalformedPpm("dimensions overflow".into()))?;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| ImageError::MalformedPpm(format!("expected {n} raster bytes")))?;
        Image::from_rgb8(width, height, raster)
    }

    /// Decodes PPM or PNG bytes (external backends may return either).
    pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
        if bytes.starts_with(b"P6") {
            return Image::from_ppm(bytes);
        }
        let decoded =
            image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        let rgb = decoded.to_rgb8();
        Image::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
    }

    /// Encodes the 8-bit quantized image as PNG (presentation only).
    pub fn to_png(&self) -> Vec<u8> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    /// Bilinear resample to `w x h` (pixel-centre aligned, edge-clamped).
    pub fn resize(&self, w: usize, h: usize) -> Result<Image, ImageError> {
        check_dims(w, h)?;
        let data = resample_bilinear(&self.data, self.width, self.height, 3, w, h);
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    /// BT.601 luma plane.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect()
    }
}

/// Bilinear resampling of an interleaved `channels`-plane raster. Sample
/// centres map as `(x + 0.5) * sw / dw - 0.5`, clamped to the source edge.
pub fn resample_bilinear(
    src: &[f64],
    sw: usize,
    sh: usize,
    channels: usize,
    dw: usize,
    dh: usize,
) -> Vec<f64> {
    let axis = |d: usize, s: usize| -> Vec<(usize, usize, f64)> {
        (0..d)
            .map(|i| {
                let p = ((i as f64 + 0.5) * s as f64 / d as f64 - 0.5).clamp(0.0, (s - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, p - i0 as f64)
            })
            .collect()
    };
    let xs = axis(dw, sw);
    let ys = axis(dh, sh);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut out = Vec::with_capacity(dw * dh * channels);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..channels {
                let at = |x: usize, y: usize| src[(y * sw + x) * channels + c];
                let top = lerp(at(x0, y0), at(x1, y0), tx);
                let bottom = lerp(at(x0, y1), at(x1, y1), tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    out
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// 256-bit content digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentDigest(pub [u8; 32]);

impl ContentDigest {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

impl fmt::Debug for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentDigest({})", self.to_hex())
    }
}

impl fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContentDigest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentDigest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentDigest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Digest of the canonical PPM serialization.
pub fn content_hash(image: &Image) -> ContentDigest {
    ContentDigest::of_bytes(&image.to_ppm())
}

/// PSNR in dB on the `[0, 1]` scale. `None` when the images are identical.
pub fn psnr(a: &Image, b: &Image) -> Result<Option<f64>, ImageError> {
    let mse = mse(a, b)?;
    Ok((mse > 0.0).then(|| 10.0 * (1.0 / mse).log10()))
}

/// Mean squared sample difference.
pub fn mse(a: &Image, b: &Image) -> Result<f64, ImageError> {
    Ok(sum_squared_diff(a, b)? / a.data.len() as f64)
}

/// `||a - b||^2` summed over every sample.
pub fn sum_squared_diff(a: &Image, b: &Image) -> Result<f64, ImageError> {
    if a.dims() != b.dims() {
        return Err(ImageError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// An RGB image paired with a per-pixel coverage plane.
#[derive(Clone, PartialEq)]
pub struct Layer {
    pub image: Image,
    pub alpha: Vec<f64>,
}

impl fmt::Debug for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Layer")
            .field("image", &self.image)
            .finish_non_exhaustive()
    }
}

impl Layer {
    pub fn opaque(image: Image) -> Layer {
        let alpha = vec![1.0; image.width() * image.height()];
        Layer { image, alpha }
    }

    pub fn new(image: Image, alpha: Vec<f64>) -> Result<Layer, ImageError> {
        let expected = image.width() * image.height();
        if alpha.len() != expected {
            return Err(ImageError::BufferLength {
                expected,
                actual: alpha.len(),
            });
        }
        if let Some(index) = alpha.iter().position(|a| !a.is_finite()) {
            return Err(ImageError::NonFinite { index });
        }
        let alpha = alpha.into_iter().map(|a| a.clamp(0.0, 1.0)).collect();
        Ok(Layer { image, alpha })
    }

    pub fn alpha_at(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.image.width() + x]
    }

    /// Digest over the PPM bytes followed by the 8-bit alpha plane.
    pub fn digest(&self) -> ContentDigest {
        let mut h = Sha256::new();
        h.update(self.image.to_ppm());
        h.update(self.alpha.iter().map(|&a| quantize(a)).collect::<Vec<_>>());
        ContentDigest(h.finalize().into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_is_bit_exact() {
        let img = Image::filled(16, 17, [1.0, 0.0, 0.5]).unwrap();
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n16 17\n255\n"));
        assert_eq!(bytes.len(), 13 + 16 * 17 * 3);
        assert_eq!(&bytes[13..16], &[255, 0, 128]);
        assert_eq!(Image::from_ppm(&bytes).unwrap().to_ppm(), bytes);
    }

    #[test]
    fn ppm_reader_tolerates_comments() {
        let mut bytes = b"P6\n# made by hand\n16 16\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(7u8, 16 * 16 * 3));
        let img = Image::from_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(3, 3), [7.0 / 255.0; 3]);
    }

    #[test]
    fn truncated_ppm_is_rejected() {
        let bytes = Image::filled(16, 16, [0.2; 3]).unwrap().to_ppm();
        assert!(matches!(
            Image::from_ppm(&bytes[..bytes.len() - 1]),
            Err(ImageError::MalformedPpm(_))
        ));
        assert!(Image::from_ppm(b"P5\n16 16\n255\n").is_err());
    }

    #[test]
    fn small_and_non_finite_images_are_rejected() {
        assert!(matches!(
            Image::filled(15, 16, [0.0; 3]),
            Err(ImageError::TooSmall { .. })
        ));
        let mut data = vec![0.5; 16 * 16 * 3];
        data[5] = f64::NAN;
        assert!(matches!(
            Image::from_samples(16, 16, data),
            Err(ImageError::NonFinite { index: 5 })
        ));
    }

    #[test]
    fn samples_are_clamped() {
        let img = Image::from_samples(16, 16, vec![2.0; 16 * 16 * 3]).unwrap();
        assert!(img.samples().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_images_hash_identically() {
        let a = Image::filled(32, 32, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(content_hash(&a), content_hash(&a.clone()));
    }

    #[test]
    fn one_quantized_step_changes_digest() {
        let a = Image::filled(32, 32, [0.5; 3]).unwrap();
        let mut b = a.clone();
        let [r, g, bl] = b.pixel(4, 9);
        b.set_pixel(4, 9, [r + 1.0 / 255.0, g, bl]);
        assert_ne!(a.to_rgb8(), b.to_rgb8());
        assert_ne!(content_hash(&a), content_hash(&b));
    }

    #[test]
    fn zero_image_digest_golden() {
        // sha256(b"P6\n16 16\n255\n" + 768 zero bytes), computed with Python's hashlib
        let img = Image::filled(16, 16, [0.0; 3]).unwrap();
        assert_eq!(
            content_hash(&img).to_hex(),
            "498fc6af35b825a3125e21b0e91fdd6eb8cf0dfb21e0f5d68ddc4edfca2efef9"
        );
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(16, 16, [0.5; 3]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), None);
        let b = a.map_samples(|_, v| v + 1.0 / 255.0);
        let p1 = psnr(&a, &b).unwrap().unwrap();
        assert!((p1 - 20.0 * 255f64.log10()).abs() < 1e-9, "{p1}");
        assert!((p1 - 48.13).abs() < 0.01);
        let c = a.map_samples(|_, v| v + 2.0 / 255.0);
        let p2 = psnr(&a, &c).unwrap().unwrap();
        assert!((p2 - 42.11).abs() < 0.01, "{p2}");
        let small = Image::filled(16, 32, [0.5; 3]).unwrap();
        assert!(matches!(
            psnr(&a, &small),
            Err(ImageError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn resize_identity_and_constant_invariance() {
        let img = Image::from_fn(20, 18, |x, y| [x as f64 / 19.0, y as f64 / 17.0, 0.3]).unwrap();
        assert_eq!(img.resize(20, 18).unwrap(), img);
        let flat = Image::filled(32, 32, [0.3, 0.6, 0.9]).unwrap();
        let back = flat.resize(64, 64).unwrap().resize(32, 32).unwrap();
        assert_eq!(back, flat);
    }

    #[test]
    fn upsampling_interpolates_between_centres() {
        let src = [0.0, 1.0];
        let out = resample_bilinear(&src, 2, 1, 1, 4, 1);
        assert_eq!(out, [0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn png_transcode_round_trips_quantized_samples() {
        let img = Image::from_fn(20, 18, |x, y| [x as f64 / 19.0, y as f64 / 17.0, 0.3]).unwrap();
        let back = Image::decode(&img.to_png()).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }
}
