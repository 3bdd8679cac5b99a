//! Gradient-domain seam blending solved with Gauss-Seidel sweeps.

use rayon::prelude::*;

use super::{IntegrationError, Scene, SceneStage};
use crate::image::Image;
use crate::planner::SubtaskId;

/// Half-width of the band around label boundaries that gets re-solved.
pub const SEAM_RADIUS: usize = 2;
pub const MAX_SWEEPS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-8;

/// Topmost foreground id covering each pixel at alpha >= 0.5, 0 for background.
pub fn label_map(scene: &Scene) -> Vec<SubtaskId> {
    let (w, h) = scene.image.dims();
    let mut labels = vec![0; w * h];
    for (id, mask) in &scene.masks {
        let r = mask.rect;
        for y in r.y0..r.y1() {
            for x in r.x0..r.x1() {
                if mask.at(x, y) >= 0.5 {
                    labels[y * w + x] = *id;
                }
            }
        }
    }
    labels
}

/// Pixels within `radius` (Chebyshev) of a pixel whose 4-neighbourhood spans two labels.
pub fn seam_band(labels: &[SubtaskId], w: usize, h: usize, radius: usize) -> Vec<bool> {
    let label = |x: usize, y: usize| labels[y * w + x];
    let mut band = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = label(x, y);
            let seam = (x > 0 && label(x - 1, y) != l)
                || (x + 1 < w && label(x + 1, y) != l)
                || (y > 0 && label(x, y - 1) != l)
                || (y + 1 < h && label(x, y + 1) != l);
            if !seam {
                continue;
            }
            for by in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for bx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    band[by * w + bx] = true;
                }
            }
        }
    }
    band
}

/// Guidance `v_pq` for the edge from `p` to its neighbour `q = p + d`:
/// the composite difference, or across a label boundary the mean of the
/// parallel differences just before and after it.
pub fn guidance(
    f: &[f64],
    labels: &[SubtaskId],
    w: usize,
    h: usize,
    p: (usize, usize),
    d: (isize, isize),
) -> f64 {
    let at = |x: isize, y: isize| -> Option<usize> {
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
            .then(|| y as usize * w + x as usize)
    };
    let (px, py) = (p.0 as isize, p.1 as isize);
    let ip = at(px, py).expect("p inside");
    let iq = at(px + d.0, py + d.1).expect("q inside");
    if labels[ip] == labels[iq] {
        return f[ip] - f[iq];
    }
    let before = at(px - d.0, py - d.1).map(|i| f[i] - f[ip]);
    let after = at(px + 2 * d.0, py + 2 * d.1).map(|i| f[iq] - f[i]);
    match (before, after) {
        (Some(a), Some(b)) => (a + b) / 2.0,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 0.0,
    }
}

const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Solves the discrete Poisson equation on `band` for one channel, with
/// Dirichlet values from `f` outside the band and Neumann at image borders.
pub fn blend_channel(
    f: &[f64],
    labels: &[SubtaskId],
    band: &[bool],
    w: usize,
    h: usize,
) -> Result<Vec<f64>, IntegrationError> {
    struct Row {
        idx: usize,
        diag: f64,
        rhs: f64,
        band_nbrs: Vec<usize>,
    }
    let mut rows = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !band[i] {
                continue;
            }
            let mut row = Row {
                idx: i,
                diag: 0.0,
                rhs: 0.0,
                band_nbrs: Vec::new(),
            };
            for d in DIRS {
                let (qx, qy) = (x as isize + d.0, y as isize + d.1);
                if qx < 0 || qy < 0 || qx as usize >= w || qy as usize >= h {
                    continue;
                }
                let q = qy as usize * w + qx as usize;
                row.diag += 1.0;
                row.rhs += guidance(f, labels, w, h, (x, y), d);
                if band[q] {
                    row.band_nbrs.push(q);
                } else {
                    row.rhs += f[q];
                }
            }
            rows.push(row);
        }
    }
    let mut u = f.to_vec();
    for _ in 0..MAX_SWEEPS {
        for r in &rows {
            let s: f64 = r.band_nbrs.iter().map(|&q| u[q]).sum();
            u[r.idx] = (r.rhs + s) / r.diag;
        }
        let mut residual = 0.0f64;
        for r in &rows {
            let s: f64 = r.band_nbrs.iter().map(|&q| u[q]).sum();
            let res = (r.diag * u[r.idx] - s - r.rhs).abs();
            if !res.is_finite() {
                return Err(IntegrationError::SolverDiverged);
            }
            residual = residual.max(res);
        }
        if residual < TOLERANCE {
            break;
        }
    }
    Ok(u)
}

/// Re-solves a narrow band around every label boundary in the gradient
/// domain. Pixels outside the band are untouched.
pub fn blend_seams(scene: &Scene) -> Result<Scene, IntegrationError> {
    scene.expect_stage(SceneStage::Harmonized)?;
    let (w, h) = scene.image.dims();
    let labels = label_map(scene);
    let band = seam_band(&labels, w, h, SEAM_RADIUS);
    let mut out = scene.clone();
    out.stage = SceneStage::Blended;
    if !band.iter().any(|b| *b) {
        return Ok(out);
    }
    let src = scene.image.samples();
    let planes: Vec<Vec<f64>> = (0..3)
        .into_par_iter()
        .map(|c| {
            let f: Vec<f64> = src.chunks_exact(3).map(|p| p[c]).collect();
            blend_channel(&f, &labels, &band, w, h)
        })
        .collect::<Result<_, _>>()?;
    let data = (0..w * h)
        .flat_map(|i| [planes[0][i], planes[1][i], planes[2][i]])
        .collect();
    out.image = Image::from_samples(w, h, data)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(w: usize, h: usize, at: usize) -> Vec<SubtaskId> {
        (0..w * h).map(|i| u32::from(i % w >= at)).collect()
    }

    #[test]
    fn band_hugs_the_boundary() {
        let labels = split(16, 16, 8);
        let band = seam_band(&labels, 16, 16, 2);
        let cols: Vec<usize> = (0..16).filter(|x| band[*x]).collect();
        assert_eq!(cols, [5, 6, 7, 8, 9, 10]);
    }

    #[test]
    fn constant_seam_is_already_harmonic() {
        let labels = split(16, 16, 8);
        let band = seam_band(&labels, 16, 16, 2);
        let f = vec![0.4; 256];
        let u = blend_channel(&f, &labels, &band, 16, 16).unwrap();
        assert!(u.iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn hard_edge_becomes_a_monotone_ramp() {
        let labels = split(16, 16, 8);
        let band = seam_band(&labels, 16, 16, 2);
        let f: Vec<f64> = (0..256)
            .map(|i| if i % 16 >= 8 { 1.0 } else { 0.0 })
            .collect();
        let u = blend_channel(&f, &labels, &band, 16, 16).unwrap();
        for y in 0..16 {
            let row = &u[y * 16..y * 16 + 16];
            assert!(row.windows(2).all(|p| p[1] >= p[0] - 1e-9), "{row:?}");
            assert!(row[7] > 0.0 && row[8] < 1.0);
            assert_eq!(row[4], 0.0);
            assert_eq!(row[11], 1.0);
        }
    }
}
