//! Brute-force forward geometry: area coverage of each target pixel by the
//! transformed union of handle-pixel squares, estimated on a subsample grid.

use lro_core::geometry::{BinaryMask, Point};

const SUB: usize = 8;

fn covered(mask: &BinaryMask, p: Point) -> bool {
    // pixel (x, y) owns the square [x - 0.5, x + 0.5) × [y - 0.5, y + 0.5)
    let (x, y) = ((p.x + 0.5).floor(), (p.y + 0.5).floor());
    x >= 0.0 && y >= 0.0 && mask.contains(x as i64, y as i64)
}

/// Fraction of each pixel's square covered by the image of `mask` under `inverse⁻¹`.
pub fn coverage(mask: &BinaryMask, inverse: impl Fn(Point) -> Point) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut hits = 0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let p = Point::new(
                        x as f64 - 0.5 + (sx as f64 + 0.5) / SUB as f64,
                        y as f64 - 0.5 + (sy as f64 + 0.5) / SUB as f64,
                    );
                    if covered(mask, inverse(p)) {
                        hits += 1;
                    }
                }
            }
            out[y * w + x] = hits as f64 / (SUB * SUB) as f64;
        }
    }
    out
}

pub fn translated(mask: &BinaryMask, offset: (f64, f64)) -> (BinaryMask, Vec<f64>) {
    let cov = coverage(mask, |q| Point::new(q.x - offset.0, q.y - offset.1));
    (threshold(mask.dims(), &cov), cov)
}

/// Rotation by `angle` in the y-down image frame: `(x, y) ↦ c + R(angle)·(p − c)`.
pub fn rotated(mask: &BinaryMask, center: Point, angle: f64) -> (BinaryMask, Vec<f64>) {
    let (s, c) = angle.sin_cos();
    let cov = coverage(mask, |q| {
        let (dx, dy) = (q.x - center.x, q.y - center.y);
        Point::new(center.x + c * dx + s * dy, center.y - s * dx + c * dy)
    });
    (threshold(mask.dims(), &cov), cov)
}

fn threshold((w, h): (usize, usize), cov: &[f64]) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| cov[y * w + x] >= 0.5)
}

/// Agreement statistics of `engine` against the oracle.
#[derive(Debug, Clone, Copy)]
pub struct Agreement {
    /// `|A ∩ B| / |A ∪ B|`.
    pub over_union: f64,
    /// Fraction of all grid pixels with equal membership.
    pub over_grid: f64,
    /// Disagreeing pixels that are not partially covered and have no neighbour of
    /// different oracle membership.
    pub interior_disagreements: usize,
}

pub fn agreement(engine: &BinaryMask, oracle: &BinaryMask, cov: &[f64]) -> Agreement {
    let (w, h) = oracle.dims();
    let (mut inter, mut union, mut same, mut interior) = (0usize, 0usize, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (engine.get(x, y), oracle.get(x, y));
            inter += (a && b) as usize;
            union += (a || b) as usize;
            same += (a == b) as usize;
            if a != b && !on_boundary(oracle, cov, x, y) {
                interior += 1;
            }
        }
    }
    Agreement {
        over_union: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        over_grid: same as f64 / (w * h) as f64,
        interior_disagreements: interior,
    }
}

fn on_boundary(oracle: &BinaryMask, cov: &[f64], x: usize, y: usize) -> bool {
    let (w, _) = oracle.dims();
    let c = cov[y * w + x];
    if c > 0.0 && c < 1.0 {
        return true;
    }
    let me = oracle.get(x, y);
    (-1i64..=1).any(|dy| {
        (-1i64..=1).any(|dx| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            let inside = nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < oracle.height();
            inside && oracle.get(nx as usize, ny as usize) != me
        })
    })
}

/// 32×32 masks: disk, square, bar, L-shape, ring and a seeded random blob.
pub fn mask_suite() -> Vec<(&'static str, BinaryMask)> {
    let n = 32;
    let disk = BinaryMask::from_fn(n, n, |x, y| {
        let (dx, dy) = (x as f64 - 15.5, y as f64 - 15.5);
        dx * dx + dy * dy <= 36.0
    });
    let square = BinaryMask::from_fn(n, n, |x, y| (12..20).contains(&x) && (12..20).contains(&y));
    let bar = BinaryMask::from_fn(n, n, |x, y| (8..24).contains(&x) && (14..18).contains(&y));
    let lshape = BinaryMask::from_fn(n, n, |x, y| {
        (10..22).contains(&x) && (9..23).contains(&y) && (x < 14 || y >= 19)
    });
    let ring = BinaryMask::from_fn(n, n, |x, y| {
        let (dx, dy) = (x as f64 - 15.5, y as f64 - 15.5);
        let r2 = dx * dx + dy * dy;
        (16.0..=64.0).contains(&r2)
    });
    // deterministic lumpy blob: union of offset disks
    let centers = [(13.0, 14.0, 3.5), (18.0, 15.0, 4.0), (15.0, 19.0, 3.0), (19.0, 11.0, 2.5)];
    let lumpy = BinaryMask::from_fn(n, n, |x, y| {
        centers
            .iter()
            .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    });
    vec![
        ("disk", disk),
        ("square", square),
        ("bar", bar),
        ("lshape", lshape),
        ("ring", ring),
        ("lumpy", lumpy),
    ]
}

/// Every 15° from 15° to 345°.
pub fn angle_grid() -> Vec<f64> {
    (1..24).map(|i| (15.0 * i as f64).to_radians()).collect()
}
