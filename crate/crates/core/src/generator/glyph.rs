//! Multi-primitive glyph table and its anti-aliased rasterizer.

use rand::Rng;

use crate::planner::{Pose, Style};

/// One filled polygon. `shade` scales the glyph's base value; a `hole`
/// erases whatever earlier primitives painted.
#[derive(Debug, Clone)]
pub(crate) struct Prim {
    pub pts: Vec<[f64; 2]>,
    pub shade: f64,
    pub hole: bool,
}

const DARK: f64 = 0.75;
const LIGHT: f64 = 1.15;

fn poly(pts: &[[f64; 2]], shade: f64) -> Prim {
    Prim {
        pts: pts.to_vec(),
        shade,
        hole: false,
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64, shade: f64) -> Prim {
    poly(&[[x0, y0], [x1, y0], [x1, y1], [x0, y1]], shade)
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, shade: f64) -> Prim {
    let pts = (0..40)
        .map(|i| {
            let t = i as f64 / 40.0 * std::f64::consts::TAU;
            [cx + rx * t.cos(), cy + ry * t.sin()]
        })
        .collect();
    Prim {
        pts,
        shade,
        hole: false,
    }
}

fn hole(mut p: Prim) -> Prim {
    p.hole = true;
    p
}

/// A thick polyline as a chain of quads.
fn stroke(path: &[[f64; 2]], width: f64, shade: f64) -> Vec<Prim> {
    path.windows(2)
        .map(|w| {
            let [a, b] = [w[0], w[1]];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy).max(1e-12);
            let (nx, ny) = (-dy / len * width / 2.0, dx / len * width / 2.0);
            poly(
                &[
                    [a[0] + nx, a[1] + ny],
                    [b[0] + nx, b[1] + ny],
                    [b[0] - nx, b[1] - ny],
                    [a[0] - nx, a[1] - ny],
                ],
                shade,
            )
        })
        .collect()
}

fn star_points(cx: f64, cy: f64, r_out: f64, r_in: f64, n: usize) -> Vec<[f64; 2]> {
    (0..2 * n)
        .map(|i| {
            let r = if i % 2 == 0 { r_out } else { r_in };
            let t = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / n as f64;
            [cx + r * t.cos(), cy + r * t.sin()]
        })
        .collect()
}

/// Primitives for `entity` in a unit box (y down), before jitter and pose.
pub(crate) fn glyph(entity: &str, style: Option<Style>) -> Option<Vec<Prim>> {
    let mut p = Vec::new();
    match entity {
        "dragon" => {
            p.push(poly(&[[0.40, 0.50], [0.56, 0.50], [0.44, 0.12]], LIGHT));
            p.push(poly(&[[0.50, 0.50], [0.66, 0.50], [0.72, 0.16]], LIGHT));
            p.extend(stroke(
                &[[0.30, 0.58], [0.18, 0.62], [0.08, 0.52], [0.03, 0.40]],
                0.05,
                DARK,
            ));
            p.push(ellipse(0.50, 0.56, 0.24, 0.11, 1.0));
            p.extend(stroke(&[[0.68, 0.52], [0.78, 0.42]], 0.07, 1.0));
            p.push(ellipse(0.82, 0.38, 0.08, 0.06, 1.0));
            p.push(rect(0.38, 0.62, 0.43, 0.76, DARK));
            p.push(rect(0.56, 0.62, 0.61, 0.76, DARK));
        }
        "castle" => {
            let tall = matches!(style, Some(Style::Gothic));
            p.push(rect(0.20, 0.45, 0.80, 0.95, 1.0));
            p.push(rect(0.08, 0.28, 0.30, 0.95, DARK));
            p.push(rect(0.70, 0.28, 0.92, 0.95, DARK));
            match style {
                Some(Style::Gothic) | Some(Style::Ancient) => {
                    let peak = if tall { 0.02 } else { 0.12 };
                    p.push(poly(&[[0.06, 0.28], [0.19, peak], [0.32, 0.28]], LIGHT));
                    p.push(poly(&[[0.68, 0.28], [0.81, peak], [0.94, 0.28]], LIGHT));
                }
                _ => {
                    for i in 0..3 {
                        let x = 0.08 + i as f64 * 0.08;
                        p.push(rect(x, 0.21, x + 0.05, 0.29, DARK));
                        p.push(rect(x + 0.62, 0.21, x + 0.67, 0.29, DARK));
                    }
                    for i in 0..4 {
                        let x = 0.32 + i as f64 * 0.1;
                        p.push(rect(x, 0.39, x + 0.06, 0.46, 1.0));
                    }
                }
            }
            p.push(poly(
                &[
                    [0.42, 0.95],
                    [0.42, 0.74],
                    [0.50, 0.66],
                    [0.58, 0.74],
                    [0.58, 0.95],
                ],
                DARK,
            ));
        }
        "tree" => {
            p.push(rect(0.44, 0.55, 0.56, 0.97, DARK));
            p.push(ellipse(0.50, 0.36, 0.26, 0.24, 1.0));
            p.push(ellipse(0.33, 0.50, 0.17, 0.14, 1.0));
            p.push(ellipse(0.67, 0.50, 0.17, 0.14, LIGHT));
        }
        "house" => {
            p.push(rect(0.18, 0.50, 0.82, 0.95, 1.0));
            let roof = if matches!(style, Some(Style::Modern)) {
                0.38
            } else {
                0.18
            };
            p.push(poly(&[[0.10, 0.52], [0.50, roof], [0.90, 0.52]], DARK));
            p.push(rect(0.44, 0.70, 0.58, 0.95, DARK));
            p.push(rect(0.25, 0.60, 0.37, 0.72, LIGHT));
            p.push(rect(0.65, 0.60, 0.77, 0.72, LIGHT));
        }
        "bird" => {
            p.push(poly(&[[0.35, 0.52], [0.55, 0.50], [0.30, 0.18]], LIGHT));
            p.push(ellipse(0.48, 0.56, 0.22, 0.10, 1.0));
            p.push(ellipse(0.70, 0.48, 0.07, 0.07, 1.0));
            p.push(poly(&[[0.76, 0.45], [0.86, 0.49], [0.76, 0.52]], DARK));
            p.push(poly(&[[0.28, 0.56], [0.14, 0.46], [0.14, 0.66]], DARK));
        }
        "moon" => {
            p.push(ellipse(0.50, 0.50, 0.40, 0.40, 1.0));
            p.push(hole(ellipse(0.68, 0.40, 0.33, 0.33, 1.0)));
        }
        "sun" => {
            for i in 0..8 {
                let t = i as f64 * std::f64::consts::FRAC_PI_4;
                let (c, s) = (t.cos(), t.sin());
                let (pc, ps) = (-s * 0.06, c * 0.06);
                p.push(poly(
                    &[
                        [0.5 + 0.28 * c + pc, 0.5 + 0.28 * s + ps],
                        [0.5 + 0.46 * c, 0.5 + 0.46 * s],
                        [0.5 + 0.28 * c - pc, 0.5 + 0.28 * s - ps],
                    ],
                    LIGHT,
                ));
            }
            p.push(ellipse(0.50, 0.50, 0.30, 0.30, 1.0));
        }
        "mountain" => {
            p.push(poly(&[[0.00, 0.95], [0.42, 0.15], [0.86, 0.95]], 1.0));
            p.push(poly(&[[0.40, 0.95], [0.72, 0.38], [1.00, 0.95]], DARK));
            p.push(poly(&[[0.32, 0.34], [0.42, 0.15], [0.52, 0.34]], LIGHT));
        }
        "boat" => {
            p.push(poly(
                &[[0.05, 0.66], [0.95, 0.66], [0.78, 0.88], [0.22, 0.88]],
                1.0,
            ));
            p.push(rect(0.47, 0.12, 0.52, 0.66, DARK));
            p.push(poly(&[[0.54, 0.14], [0.54, 0.60], [0.86, 0.60]], LIGHT));
            p.push(poly(&[[0.45, 0.20], [0.45, 0.60], [0.20, 0.60]], LIGHT));
        }
        "star" => p.push(poly(&star_points(0.5, 0.52, 0.46, 0.19, 5), 1.0)),
        "circle" => p.push(ellipse(0.5, 0.5, 0.45, 0.45, 1.0)),
        "square" => p.push(rect(0.1, 0.1, 0.9, 0.9, 1.0)),
        _ => return None,
    }
    if matches!(style, Some(Style::Stone) | Some(Style::Wooden)) {
        // textured materials get a darker base
        for prim in &mut p {
            prim.shade *= 0.92;
        }
    }
    Some(p)
}

/// Moves each primitive by up to 0.02 and scales it by up to 5% about its centroid.
pub(crate) fn jitter(prims: &mut [Prim], rng: &mut impl Rng) {
    for prim in prims {
        let n = prim.pts.len() as f64;
        let cx = prim.pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = prim.pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let dx = rng.random_range(-0.02..0.02);
        let dy = rng.random_range(-0.02..0.02);
        let k = rng.random_range(0.95..1.05);
        for p in &mut prim.pts {
            *p = [cx + (p[0] - cx) * k + dx, cy + (p[1] - cy) * k + dy];
        }
    }
}

/// Rotation in degrees and vertical squash for a pose.
pub(crate) fn pose_transform(pose: Option<Pose>) -> (f64, f64) {
    match pose {
        Some(Pose::Flying) => (-15.0, 1.0),
        Some(Pose::Sitting) => (0.0, 0.8),
        Some(Pose::Sleeping) => (90.0, 1.0),
        Some(Pose::Swimming) => (8.0, 0.9),
        Some(Pose::Floating) => (4.0, 1.0),
        Some(Pose::Standing) | None => (0.0, 1.0),
    }
}

/// Rotates and squashes about the unit-box centre, then fits the painted
/// extent (holes excluded) to `extent * size` pixels centred in a
/// `size x size` canvas.
pub(crate) fn place(prims: &mut [Prim], degrees: f64, squash: f64, extent: f64, size: usize) {
    let (s, c) = degrees.to_radians().sin_cos();
    for prim in prims.iter_mut() {
        for p in &mut prim.pts {
            let (x, y) = (p[0] - 0.5, (p[1] - 0.5) * squash);
            *p = [x * c - y * s, x * s + y * c];
        }
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in prims.iter().filter(|p| !p.hole).flat_map(|p| &p.pts) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let k = extent * size as f64 / span;
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half = size as f64 / 2.0;
    for prim in prims.iter_mut() {
        for p in &mut prim.pts {
            *p = [(p[0] - mid[0]) * k + half, (p[1] - mid[1]) * k + half];
        }
    }
}

fn inside(pts: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut c = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (a, b) = (pts[i], pts[j]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            c = !c;
        }
        j = i;
    }
    c
}

const SS: usize = 3;

/// Rasterizes placed primitives with 3x3 supersampling. Returns, per pixel,
/// the coverage fraction and the mean shade of covered samples (1.0 where
/// nothing is covered).
pub(crate) fn rasterize(prims: &[Prim], size: usize) -> (Vec<f64>, Vec<f64>) {
    let boxes: Vec<([f64; 2], [f64; 2])> = prims
        .iter()
        .map(|p| {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for q in &p.pts {
                for a in 0..2 {
                    lo[a] = lo[a].min(q[a]);
                    hi[a] = hi[a].max(q[a]);
                }
            }
            (lo, hi)
        })
        .collect();
    let mut alpha = vec![0.0; size * size];
    let mut shade = vec![1.0; size * size];
    for py in 0..size {
        for px in 0..size {
            let mut covered = 0usize;
            let mut acc = 0.0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let x = px as f64 + (sx as f64 + 0.5) / SS as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / SS as f64;
                    let mut hit: Option<f64> = None;
                    for (prim, (lo, hi)) in prims.iter().zip(&boxes) {
                        if x < lo[0]
                            || x > hi[0]
                            || y < lo[1]
                            || y > hi[1]
                            || !inside(&prim.pts, x, y)
                        {
                            continue;
                        }
                        hit = if prim.hole { None } else { Some(prim.shade) };
                    }
                    if let Some(s) = hit {
                        covered += 1;
                        acc += s;
                    }
                }
            }
            if covered > 0 {
                let i = py * size + px;
                alpha[i] = covered as f64 / (SS * SS) as f64;
                shade[i] = acc / covered as f64;
            }
        }
    }
    (alpha, shade)
}
