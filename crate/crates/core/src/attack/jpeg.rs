//! Baseline JPEG round trip without entropy coding: 8-bit YCbCr 4:4:4,
//! scaled Annex K tables, 8x8 DCT quantization and reconstruction.
//!
//! Colour conversion and both transforms use the 16- and 13-bit fixed-point
//! arithmetic of the widespread libjpeg "islow" path, so decoded samples agree
//! with that codec exactly rather than to within rounding.

use crate::image::Image;

pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113,
    92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

pub const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

/// Percentage scale of the conventional quality rule.
pub fn quality_scale(quality: u8) -> u32 {
    let q = u32::from(quality.clamp(1, 100));
    if q < 50 {
        5000 / q
    } else {
        200 - 2 * q
    }
}

/// Row-major table scaled for `quality`, entries clamped to `[1, 255]`.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let s = quality_scale(quality);
    base.map(|t| ((u32::from(t) * s + 50) / 100).clamp(1, 255) as u16)
}

const CONST_BITS: u32 = 13;
const PASS1_BITS: u32 = 2;
const SCALE_BITS: u32 = 16;
const ONE_HALF: i64 = 1 << (SCALE_BITS - 1);

const F_0_298: i64 = 2446;
const F_0_390: i64 = 3196;
const F_0_541: i64 = 4433;
const F_0_765: i64 = 6270;
const F_0_899: i64 = 7373;
const F_1_175: i64 = 9633;
const F_1_501: i64 = 12299;
const F_1_847: i64 = 15137;
const F_1_961: i64 = 16069;
const F_2_053: i64 = 16819;
const F_2_562: i64 = 20995;
const F_3_072: i64 = 25172;

fn fix16(x: f64) -> i64 {
    (x * f64::from(1u32 << SCALE_BITS) + 0.5) as i64
}

fn descale(x: i64, n: u32) -> i64 {
    (x + (1 << (n - 1))) >> n
}

/// Odd-part rotation shared by both transforms; inputs in natural order 1,3,5,7
/// for the forward direction.
fn odd_part(t4: i64, t5: i64, t6: i64, t7: i64) -> [i64; 4] {
    let z5 = (t4 + t6 + t5 + t7) * F_1_175;
    let z1 = -(t4 + t7) * F_0_899;
    let z2 = -(t5 + t6) * F_2_562;
    let z3 = -(t4 + t6) * F_1_961 + z5;
    let z4 = -(t5 + t7) * F_0_390 + z5;
    [
        t4 * F_0_298 + z1 + z3,
        t5 * F_2_053 + z2 + z4,
        t6 * F_3_072 + z2 + z3,
        t7 * F_1_501 + z1 + z4,
    ]
}

/// One 1-D pass of the scaled integer forward DCT. `first` selects the row pass.
fn fdct_1d(d: [i64; 8], first: bool) -> [i64; 8] {
    let (t0, t7) = (d[0] + d[7], d[0] - d[7]);
    let (t1, t6) = (d[1] + d[6], d[1] - d[6]);
    let (t2, t5) = (d[2] + d[5], d[2] - d[5]);
    let (t3, t4) = (d[3] + d[4], d[3] - d[4]);
    let (t10, t13, t11, t12) = (t0 + t3, t0 - t3, t1 + t2, t1 - t2);
    let shift = if first {
        CONST_BITS - PASS1_BITS
    } else {
        CONST_BITS + PASS1_BITS
    };
    let mut out = [0; 8];
    if first {
        out[0] = (t10 + t11) << PASS1_BITS;
        out[4] = (t10 - t11) << PASS1_BITS;
    } else {
        out[0] = descale(t10 + t11, PASS1_BITS);
        out[4] = descale(t10 - t11, PASS1_BITS);
    }
    let z1 = (t12 + t13) * F_0_541;
    out[2] = descale(z1 + t13 * F_0_765, shift);
    out[6] = descale(z1 - t12 * F_1_847, shift);
    let [o7, o5, o3, o1] = odd_part(t4, t5, t6, t7);
    out[7] = descale(o7, shift);
    out[5] = descale(o5, shift);
    out[3] = descale(o3, shift);
    out[1] = descale(o1, shift);
    out
}

/// One 1-D pass of the integer inverse DCT, before the final descale.
fn idct_1d(v: [i64; 8]) -> [i64; 8] {
    let z1 = (v[2] + v[6]) * F_0_541;
    let tmp2 = z1 - v[6] * F_1_847;
    let tmp3 = z1 + v[2] * F_0_765;
    let tmp0 = (v[0] + v[4]) << CONST_BITS;
    let tmp1 = (v[0] - v[4]) << CONST_BITS;
    let (t10, t13, t11, t12) = (tmp0 + tmp3, tmp0 - tmp3, tmp1 + tmp2, tmp1 - tmp2);
    let [o0, o1, o2, o3] = odd_part(v[7], v[5], v[3], v[1]);
    [
        t10 + o3,
        t11 + o2,
        t12 + o1,
        t13 + o0,
        t13 - o0,
        t12 - o1,
        t11 - o2,
        t10 - o3,
    ]
}

/// Quantize and dequantize one level-shifted block in place, in the same
/// fixed-point arithmetic as the common reference codec.
fn requantize(block: &mut [[i64; 8]; 8], table: &[u16; 64]) {
    let mut ws = [[0i64; 8]; 8];
    for r in 0..8 {
        ws[r] = fdct_1d(block[r], true);
    }
    for c in 0..8 {
        let col = fdct_1d(std::array::from_fn(|r| ws[r][c]), false);
        for (row, v) in ws.iter_mut().zip(col) {
            row[c] = v;
        }
    }
    // quantized then dequantized coefficients
    let mut coef = [[0i64; 8]; 8];
    for r in 0..8 {
        for c in 0..8 {
            let q = i64::from(table[r * 8 + c]);
            let div = q << 3;
            let x = ws[r][c];
            let level = (x.abs() + (div >> 1)) / div;
            coef[r][c] = x.signum() * level * q;
        }
    }
    let mut mid = [[0i64; 8]; 8];
    for c in 0..8 {
        let col = idct_1d(std::array::from_fn(|r| coef[r][c]));
        for r in 0..8 {
            mid[r][c] = descale(col[r], CONST_BITS - PASS1_BITS);
        }
    }
    for r in 0..8 {
        let row = idct_1d(mid[r]);
        for c in 0..8 {
            block[r][c] = (descale(row[c], CONST_BITS + PASS1_BITS + 3) + 128).clamp(0, 255);
        }
    }
}

/// Compresses and decompresses `image` at `quality`. Dimensions that are not
/// multiples of 8 are edge-replicated and cropped back.
pub fn jpeg_roundtrip(image: &Image, quality: u8) -> Image {
    let (w, h) = image.dims();
    let (pw, ph) = (w.div_ceil(8) * 8, h.div_ceil(8) * 8);
    let rgb = image.to_rgb8();
    let offset = 128 << SCALE_BITS;
    let mut planes = [
        vec![0i64; pw * ph],
        vec![0i64; pw * ph],
        vec![0i64; pw * ph],
    ];
    for y in 0..ph {
        for x in 0..pw {
            let i = (y.min(h - 1) * w + x.min(w - 1)) * 3;
            let [r, g, b] = [rgb[i], rgb[i + 1], rgb[i + 2]].map(i64::from);
            let j = y * pw + x;
            planes[0][j] =
                (fix16(0.299) * r + fix16(0.587) * g + fix16(0.114) * b + ONE_HALF) >> SCALE_BITS;
            planes[1][j] =
                (-fix16(0.168_74) * r - fix16(0.331_26) * g + fix16(0.5) * b + offset + ONE_HALF
                    - 1)
                    >> SCALE_BITS;
            planes[2][j] =
                (fix16(0.5) * r - fix16(0.418_69) * g - fix16(0.081_31) * b + offset + ONE_HALF
                    - 1)
                    >> SCALE_BITS;
        }
    }
    let tables = [
        scaled_table(&LUMA_TABLE, quality),
        scaled_table(&CHROMA_TABLE, quality),
        scaled_table(&CHROMA_TABLE, quality),
    ];
    for (plane, table) in planes.iter_mut().zip(&tables) {
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [[0i64; 8]; 8];
                for (r, row) in block.iter_mut().enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = plane[(by + r) * pw + bx + c] - 128;
                    }
                }
                requantize(&mut block, table);
                for (r, row) in block.iter().enumerate() {
                    plane[(by + r) * pw + bx..][..8].copy_from_slice(row);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(w * h * 3);
    let to_unit = |v: i64| v.clamp(0, 255) as f64 / 255.0;
    for y in 0..h {
        for x in 0..w {
            let j = y * pw + x;
            let (yy, cb, cr) = (planes[0][j], planes[1][j] - 128, planes[2][j] - 128);
            out.push(to_unit(yy + ((fix16(1.402) * cr + ONE_HALF) >> SCALE_BITS)));
            out.push(to_unit(
                yy + ((-fix16(0.344_14) * cb + ONE_HALF - fix16(0.714_14) * cr) >> SCALE_BITS),
            ));
            out.push(to_unit(yy + ((fix16(1.772) * cb + ONE_HALF) >> SCALE_BITS)));
        }
    }
    Image::from_samples(w, h, out).expect("same dimensions")
}
