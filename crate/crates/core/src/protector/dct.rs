//! Orthonormal 8x8 type-II DCT and the JPEG zig-zag order.

use std::sync::OnceLock;

pub type Block = [[f64; 8]; 8];

fn basis() -> &'static Block {
    static C: OnceLock<Block> = OnceLock::new();
    C.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (k, row) in c.iter_mut().enumerate() {
            let a = if k == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * n + 1) * k) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

/// `C X C^T`.
pub fn dct8(x: &Block) -> Block {
    let c = basis();
    let mut tmp = [[0.0; 8]; 8];
    for k in 0..8 {
        for j in 0..8 {
            tmp[k][j] = (0..8).map(|n| c[k][n] * x[n][j]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for k in 0..8 {
        for l in 0..8 {
            out[k][l] = (0..8).map(|j| tmp[k][j] * c[l][j]).sum();
        }
    }
    out
}

/// `C^T Y C`.
pub fn idct8(y: &Block) -> Block {
    let c = basis();
    let mut tmp = [[0.0; 8]; 8];
    for n in 0..8 {
        for l in 0..8 {
            tmp[n][l] = (0..8).map(|k| c[k][n] * y[k][l]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for n in 0..8 {
        for m in 0..8 {
            out[n][m] = (0..8).map(|l| tmp[n][l] * c[l][m]).sum();
        }
    }
    out
}

/// `(row, col)` of each zig-zag position.
pub fn zigzag() -> &'static [(usize, usize); 64] {
    static Z: OnceLock<[(usize, usize); 64]> = OnceLock::new();
    Z.get_or_init(|| {
        let mut z = [(0, 0); 64];
        let mut i = 0;
        for s in 0..15usize {
            let cells: Vec<(usize, usize)> = (0..=s)
                .filter(|r| *r < 8 && s - r < 8)
                .map(|r| (r, s - r))
                .collect();
            // odd anti-diagonals run top-right to bottom-left
            let ordered: Vec<_> = if s % 2 == 1 {
                cells
            } else {
                cells.into_iter().rev().collect()
            };
            for rc in ordered {
                z[i] = rc;
                i += 1;
            }
        }
        z
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zigzag_prefix_matches_jpeg() {
        let z = zigzag();
        assert_eq!(&z[..6], &[(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2)]);
        assert_eq!(z[14], (0, 4));
        assert_eq!(z[63], (7, 7));
    }

    #[test]
    fn constant_block_is_dc_only() {
        let y = dct8(&[[0.25; 8]; 8]);
        assert!((y[0][0] - 2.0).abs() < 1e-12);
        assert!(y.iter().flatten().skip(1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = [[0.0; 8]; 8];
        x.iter_mut()
            .flatten()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let back = idct8(&dct8(&x));
        for (a, b) in back.iter().flatten().zip(x.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
