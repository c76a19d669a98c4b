//! Point-based motion supervision with nearest-feature point tracking, run at a
//! single timestep as a comparison method.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::features::FeatureMap;
use crate::geometry::{BinaryMask, Pixel, Point};
use crate::grid::Grid;
use crate::instruction::EditSpec;
use crate::lro::{finish, prepare, Components, LroError, Optimizer, Result, RunEvent, RunOptions, RunResult, TraceEntry};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    /// Half-width of the square supervision neighbourhood.
    pub motion_radius: usize,
    /// Half-width of the square tracking window.
    pub track_radius: usize,
    pub iterations: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            motion_radius: 1,
            track_radius: 3,
            iterations: 60,
        }
    }
}

/// A handle point on the feature grid and the feature vector it started with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPoint<T> {
    pub position: Pixel,
    pub initial_features: Vec<T>,
}

fn offset(p: Pixel, dx: i64, dy: i64, w: usize, h: usize) -> Option<Pixel> {
    let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
    (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then(|| Pixel::new(x as usize, y as usize))
}

fn nearest(p: Point, w: usize, h: usize) -> Option<Pixel> {
    let (x, y) = (p.x.round(), p.y.round());
    (x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h).then(|| Pixel::new(x as usize, y as usize))
}

/// Unit step from `p` toward `g`, or `None` once `g` rounds to `p`.
fn direction(p: Pixel, g: Point) -> Option<Point> {
    let d = g - p.to_point();
    (g.x.round() as i64 != p.x as i64 || g.y.round() as i64 != p.y as i64).then(|| d.scale(1.0 / d.norm()))
}

/// `(q, q + d_i)` pairs compared by the motion term: `q` ranges over the window of
/// radius `radius` around each point and `q + d_i` is rounded to the nearest cell.
pub fn motion_pairs(points: &[Pixel], targets: &[Point], radius: usize, w: usize, h: usize) -> Vec<(Pixel, Pixel)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for (&p, &g) in points.iter().zip(targets) {
        let Some(d) = direction(p, g) else {
            continue;
        };
        for dy in -r..=r {
            for dx in -r..=r {
                let Some(q) = offset(p, dx, dy, w, h) else {
                    continue;
                };
                if let Some(qd) = nearest(q.to_point() + d, w, h) {
                    out.push((q, qd));
                }
            }
        }
    }
    out
}

/// Motion-supervision loss on features and its subgradient with respect to `cur`.
///
/// `Σ_i Σ_{q ∈ π(p_i)} ‖cur[q + d_i] − detached[q]‖₁ + λ_M ‖(cur − reference) ⊙ m_feat‖₁`,
/// with `q + d_i` rounded to the nearest grid cell and `detached` held constant.
#[allow(clippy::too_many_arguments)]
pub fn motion_loss<T: Scalar>(
    cur: &FeatureMap<T>,
    detached: &FeatureMap<T>,
    reference: &FeatureMap<T>,
    points: &[Pixel],
    targets: &[Point],
    radius: usize,
    m_feat: &BinaryMask,
    lambda_m: T,
) -> (T, FeatureMap<T>) {
    let mut loss = T::zero();
    let mut cot = Grid::zeros(cur.dims());
    for (q, qd) in motion_pairs(points, targets, radius, cur.width(), cur.height()) {
        let src = detached.pixel(q.y, q.x);
        let now = cur.pixel(qd.y, qd.x);
        let gr = cot.pixel_mut(qd.y, qd.x);
        for c in 0..now.len() {
            let res = now[c] - src[c];
            loss += res.abs();
            gr[c] += res.sign0();
        }
    }
    if lambda_m != T::zero() {
        for p in m_feat.pixels() {
            let (now, old) = (cur.pixel(p.y, p.x), reference.pixel(p.y, p.x));
            let gr = cot.pixel_mut(p.y, p.x);
            for c in 0..now.len() {
                let res = now[c] - old[c];
                loss += lambda_m * res.abs();
                gr[c] += lambda_m * res.sign0();
            }
        }
    }
    (loss, cot)
}

type TieKey = (i64, i64, i64, i64);

/// Moves each point to the cell of its `(2r+1)²` window whose features are closest in L1
/// to its initial features. Ties go to the smallest `(|dy|, |dx|, dy, dx)`.
pub fn track_points<T: Scalar>(features: &FeatureMap<T>, points: &[TrackedPoint<T>], radius: usize) -> Vec<Pixel> {
    let (w, h) = (features.width(), features.height());
    let r = radius as i64;
    points
        .iter()
        .map(|tp| {
            // (distance, tie-break key, cell)
            let mut best: Option<(T, TieKey, Pixel)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    let Some(q) = offset(tp.position, dx, dy, w, h) else {
                        continue;
                    };
                    let dist: T = features
                        .pixel(q.y, q.x)
                        .iter()
                        .zip(&tp.initial_features)
                        .map(|(&a, &b)| (a - b).abs())
                        .sum();
                    let key = (dy.abs(), dx.abs(), dy, dx);
                    let better = match &best {
                        None => true,
                        Some((bd, bk, _)) => dist < *bd || (dist == *bd && key < *bk),
                    };
                    if better {
                        best = Some((dist, key, q));
                    }
                }
            }
            best.map_or(tp.position, |b| b.2)
        })
        .collect()
}

/// Feature cell holding image point `p`.
fn to_feature(p: Point, feature: (usize, usize)) -> Pixel {
    let x = (p.x.max(0.0) / 2.0).floor() as usize;
    let y = (p.y.max(0.0) / 2.0).floor() as usize;
    Pixel::new(x.min(feature.0 - 1), y.min(feature.1 - 1))
}

/// Alternates motion supervision and point tracking at `t = T`, then denoises and decodes.
///
/// Every instruction contributes its handle point `h` and target `g`; the loss trace
/// holds one entry per iteration (`t = T`, `k` = iteration, `eta` = iteration fraction).
pub fn baseline_run<T: Scalar>(
    spec: &EditSpec,
    c: &Components<'_, T>,
    bp: &BaselineParams,
    opts: &RunOptions<'_>,
) -> Result<RunResult<T>> {
    let start = Instant::now();
    let depth = spec.params.inversion_depth();
    let prep = prepare(spec, c, depth)?;
    let t = depth;
    let lambda_m = T::of(spec.params.lambda_m);
    let step_size = T::of(spec.params.step_size);
    let mut z = prep.z_t.clone();
    let reference = c.extractor.apply(&z, t);
    let mut tracked: Vec<TrackedPoint<T>> = spec
        .instructions
        .iter()
        .map(|i| {
            let p = to_feature(i.handle, prep.feature);
            TrackedPoint {
                position: p,
                initial_features: reference.pixel(p.y, p.x).to_vec(),
            }
        })
        .collect();
    let origin: Vec<Pixel> = tracked.iter().map(|p| p.position).collect();
    let targets: Vec<Point> = spec
        .instructions
        .iter()
        .zip(&origin)
        .map(|(i, o)| o.to_point() + (i.target - i.handle).scale(0.5))
        .collect();
    let image_path = |tracked: &[TrackedPoint<T>]| -> Vec<Point> {
        spec.instructions
            .iter()
            .zip(tracked.iter().zip(&origin))
            .map(|(inst, (tp, o))| {
                let moved = Point::new(tp.position.x as f64 - o.x as f64, tp.position.y as f64 - o.y as f64);
                inst.handle + moved.scale(2.0)
            })
            .collect()
    };
    let mut paths = vec![image_path(&tracked)];
    let mut optimizer = Optimizer::new(&spec.params, z.dims());
    let mut trace = Vec::with_capacity(bp.iterations);
    let mut cancelled = false;
    for k in 0..bp.iterations {
        if opts.cancelled() {
            cancelled = true;
            break;
        }
        let feat = c.extractor.apply(&z, t);
        let points: Vec<Pixel> = tracked.iter().map(|p| p.position).collect();
        let (loss, cot) = motion_loss(
            &feat,
            &feat,
            &reference,
            &points,
            &targets,
            bp.motion_radius,
            &prep.m_feat,
            lambda_m,
        );
        if !loss.is_finite() {
            return Err(LroError::NonFinite { t, k });
        }
        optimizer.step(&mut z.data, &c.extractor.adjoint(&cot, t), step_size);
        let moved = track_points(&c.extractor.apply(&z, t), &tracked, bp.track_radius);
        for (tp, p) in tracked.iter_mut().zip(moved) {
            tp.position = p;
        }
        paths.push(image_path(&tracked));
        let eta = (k + 1) as f64 / bp.iterations as f64;
        let loss = loss.f64();
        trace.push(TraceEntry { t, k, eta, loss });
        opts.emit(&RunEvent {
            session_id: opts.session_id.to_string(),
            t,
            k,
            loss,
            eta,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            rho_preview: None,
        });
    }
    let (latent, image) = finish(&z, c)?;
    // one path per instruction, one point per iteration
    let tracked_paths = (0..spec.instructions.len())
        .map(|i| paths.iter().map(|step| step[i]).collect())
        .collect();
    Ok(RunResult {
        image,
        latent,
        loss_trace: trace,
        snapshots: Vec::new(),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        cancelled,
        tracked_paths,
    })
}

/// Largest distance between a tracked path and uniform progress along the straight
/// segment `h → g`, in image pixels.
pub fn path_deviation(path: &[Point], handle: Point, target: Point) -> f64 {
    let n = path.len().saturating_sub(1).max(1) as f64;
    path.iter()
        .enumerate()
        .map(|(k, p)| p.distance(handle + (target - handle).scale(k as f64 / n)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use crate::grid::Dims;

    use super::*;

    #[test]
    fn handle_at_target_contributes_nothing() {
        let f = Grid::<f64>::from_fn(Dims::new(5, 5, 1), |y, x, _| (y * 5 + x) as f64);
        let (l, g) = motion_loss(
            &f,
            &f,
            &f,
            &[Pixel::new(2, 2)],
            &[Point::new(2.2, 1.9)],
            1,
            &BinaryMask::new(5, 5),
            1.0,
        );
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn unit_residual_counts_neighbourhood() {
        // features increase by one per column, target straight right: every residual is 1
        let f = Grid::<f64>::from_fn(Dims::new(7, 7, 1), |_, x, _| x as f64);
        let (l, g) = motion_loss(
            &f,
            &f,
            &f,
            &[Pixel::new(3, 3)],
            &[Point::new(6.0, 3.0)],
            1,
            &BinaryMask::new(7, 7),
            1.0,
        );
        assert_eq!(l, 9.0);
        assert_eq!(g.get(3, 4, 0), 1.0);
        assert_eq!(g.get(3, 3, 0), 1.0);
        assert_eq!(g.get(3, 2, 0), 0.0);
    }

    #[test]
    fn tracking_tie_keeps_point_and_follows_shift() {
        let flat = Grid::<f64>::filled(Dims::new(9, 9, 2), 0.5);
        let tp = TrackedPoint {
            position: Pixel::new(4, 4),
            initial_features: vec![0.5, 0.5],
        };
        assert_eq!(track_points(&flat, std::slice::from_ref(&tp), 3), vec![Pixel::new(4, 4)]);
        let mut bump = Grid::<f64>::zeros(Dims::new(9, 9, 2));
        bump.set(4, 5, 0, 1.0);
        let tp = TrackedPoint {
            position: Pixel::new(4, 4),
            initial_features: vec![1.0, 0.0],
        };
        assert_eq!(track_points(&bump, &[tp], 1), vec![Pixel::new(5, 4)]);
    }

    #[test]
    fn deviation_of_straight_uniform_path_is_zero() {
        let h = Point::new(0.0, 0.0);
        let g = Point::new(4.0, 0.0);
        let path: Vec<Point> = (0..=4).map(|k| Point::new(k as f64, 0.0)).collect();
        assert_eq!(path_deviation(&path, h, g), 0.0);
        let halted = vec![h; 5];
        assert_eq!(path_deviation(&halted, h, g), 4.0);
    }
}
