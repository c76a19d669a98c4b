//! Masks, points, rigid 2D transforms of regions and the progressive drag schedule.
//!
//! All coordinates live in the image frame: origin top-left, `x` to the right,
//! `y` downward, integer coordinates at pixel centers. Rotations apply the
//! standard rotation matrix directly in this frame, so a positive angle turns
//! `+x` toward `+y` (clockwise on screen).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruction::{DragInstruction, DragType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate drag: the transformed region has no pixel on the grid")]
    DegenerateDrag,
    #[error("degenerate rotation: handle or target coincides with the rotation center")]
    DegenerateRotation,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Round half away from zero (`f64::round` semantics), used for every snap to the grid.
#[inline]
pub fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl std::ops::Add for Point {
    type Output = Point;

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Integer grid coordinate. Ordered row-major (`y` first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub y: usize,
    pub x: usize,
}

impl Pixel {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { y, x }
    }

    pub fn chebyshev(self, o: Pixel) -> usize {
        self.x.abs_diff(o.x).max(self.y.abs_diff(o.y))
    }

    pub fn to_point(self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::new(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = Pixel>) -> Self {
        let mut m = Self::new(width, height);
        for p in pixels {
            m.set(p.x, p.y, true);
        }
        m
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.bits[y * self.width + x]
    }

    /// Membership test that accepts off-grid coordinates (always `false`).
    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) outside mask");
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Pixel::new(i % self.width, i / self.width))
    }

    pub fn invert(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a && b)
    }

    fn combine(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dims mismatch");
        Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        let r = radius as i64;
        Self::from_fn(self.width, self.height, |x, y| {
            (-r..=r).any(|dy| (-r..=r).any(|dx| self.contains(x as i64 + dx, y as i64 + dy)))
        })
    }

    /// Set pixels that have an unset (or off-grid) 4-neighbour.
    pub fn boundary(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            self.contains(x, y)
                && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|(dx, dy)| !self.contains(x + dx, y + dy))
        })
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for p in self.pixels() {
            bb = Some(match bb {
                None => (p.x, p.y, p.x, p.y),
                Some((x0, y0, x1, y1)) => (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
            });
        }
        bb
    }

    pub fn centroid(&self) -> Option<Point> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self
            .pixels()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x as f64, sy + p.y as f64));
        Some(Point::new(sx / n as f64, sy / n as f64))
    }
}

/// Target pixel → source pixel correspondence of one drag state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoordinateMap {
    entries: BTreeMap<Pixel, Pixel>,
}

impl CoordinateMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn identity(mask: &BinaryMask) -> Self {
        Self {
            entries: mask.pixels().map(|p| (p, p)).collect(),
        }
    }

    pub fn insert(&mut self, target: Pixel, source: Pixel) {
        self.entries.insert(target, source);
    }

    pub fn get(&self, target: Pixel) -> Option<Pixel> {
        self.entries.get(&target).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in row-major target order.
    pub fn iter(&self) -> impl Iterator<Item = (Pixel, Pixel)> + '_ {
        self.entries.iter().map(|(&t, &s)| (t, s))
    }

    /// Checks totality on `rho` and containment of every source in `handle`.
    pub fn check(&self, rho: &BinaryMask, handle: &BinaryMask) -> std::result::Result<(), String> {
        if self.entries.len() != rho.count() {
            return Err(format!(
                "map has {} entries but rho has {} pixels",
                self.entries.len(),
                rho.count()
            ));
        }
        for (t, s) in self.iter() {
            if !rho.get(t.x, t.y) {
                return Err(format!("target {t:?} outside rho"));
            }
            if !handle.get(s.x, s.y) {
                return Err(format!("source {s:?} (for {t:?}) outside handle region"));
            }
        }
        Ok(())
    }
}

/// One intermediate drag state: the target region and its target → source map.
#[derive(Debug, Clone, PartialEq)]
pub struct DragState {
    pub rho: BinaryMask,
    pub pi: CoordinateMap,
}

impl DragState {
    pub fn identity(mask: &BinaryMask) -> Self {
        Self {
            rho: mask.clone(),
            pi: CoordinateMap::identity(mask),
        }
    }
}

/// PBSI window: timesteps `t_max ..= t_prime`, `iterations` optimizer steps per timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub t: usize,
    pub t_prime: usize,
    pub k: usize,
}

impl Schedule {
    pub fn new(t: usize, t_prime: usize, k: usize) -> Result<Self> {
        if t <= t_prime {
            return Err(GeometryError::Argument(format!(
                "schedule needs T > T' (got T={t}, T'={t_prime})"
            )));
        }
        if k == 0 {
            return Err(GeometryError::Argument("schedule needs K >= 1".into()));
        }
        Ok(Self { t, t_prime, k })
    }

    /// Number of (t, k) pairs in the window.
    pub fn len(&self) -> usize {
        self.k * (self.t - self.t_prime + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(t, k)` pairs in execution order: `t` descending, `k` ascending.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.t_prime..=self.t)
            .rev()
            .flat_map(move |t| (0..self.k).map(move |k| (t, k)))
    }
}

/// Drag fraction `(K(T − t) + k) / (K(T − T' + 1))`.
pub fn eta(t: usize, k: usize, s: &Schedule) -> Result<f64> {
    if t < s.t_prime || t > s.t || k >= s.k {
        return Err(GeometryError::Argument(format!(
            "(t={t}, k={k}) outside schedule T={}, T'={}, K={}",
            s.t, s.t_prime, s.k
        )));
    }
    let num = s.k * (s.t - t) + k;
    Ok(num as f64 / s.len() as f64)
}

/// Translates `mask` by `offset = (dx, dy)` pixels, rounding each moved pixel to the grid.
pub fn translate_region(mask: &BinaryMask, offset: (f64, f64)) -> Result<(BinaryMask, CoordinateMap)> {
    if mask.is_empty() {
        return Err(GeometryError::Argument("empty handle region".into()));
    }
    if !(offset.0.is_finite() && offset.1.is_finite()) {
        return Err(GeometryError::Argument("non-finite offset".into()));
    }
    let (w, h) = mask.dims();
    let mut rho = BinaryMask::new(w, h);
    let mut pi = CoordinateMap::new();
    for p in mask.pixels() {
        let qx = round_half_away(p.x as f64 + offset.0);
        let qy = round_half_away(p.y as f64 + offset.1);
        if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
            continue;
        }
        let q = Pixel::new(qx as usize, qy as usize);
        rho.set(q.x, q.y, true);
        pi.insert(q, p);
    }
    if rho.is_empty() {
        return Err(GeometryError::DegenerateDrag);
    }
    Ok((rho, pi))
}

#[derive(Debug, Clone, Copy)]
struct Rotation {
    center: Point,
    cos: f64,
    sin: f64,
}

impl Rotation {
    fn new(center: Point, angle: f64) -> Self {
        Self {
            center,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn forward(&self, p: Point) -> Point {
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        Point::new(
            self.center.x + self.cos * dx - self.sin * dy,
            self.center.y + self.sin * dx + self.cos * dy,
        )
    }

    fn inverse(&self, q: Point) -> Point {
        let (dx, dy) = (q.x - self.center.x, q.y - self.center.y);
        Point::new(
            self.center.x + self.cos * dx + self.sin * dy,
            self.center.y - self.sin * dx + self.cos * dy,
        )
    }
}

/// Rotates a point about `center` by `angle` radians (image frame).
pub fn rotate_point(p: Point, center: Point, angle: f64) -> Point {
    Rotation::new(center, angle).forward(p)
}

/// Rotates `mask` about `center` by `angle` radians.
///
/// A grid pixel `q` joins the target region when its rounded inverse-rotated
/// position is a handle pixel, or when some handle pixel lands on `q` under the
/// forward rotation. The map takes the rounded preimage in the first case and
/// the forward source nearest the continuous preimage in the second, which is
/// always within Chebyshev distance 1 of the rounded preimage.
pub fn rotate_region(mask: &BinaryMask, center: Point, angle: f64) -> Result<(BinaryMask, CoordinateMap)> {
    if mask.is_empty() {
        return Err(GeometryError::Argument("empty handle region".into()));
    }
    if !angle.is_finite() || !center.is_finite() {
        return Err(GeometryError::Argument("non-finite rotation".into()));
    }
    let (w, h) = mask.dims();
    let rot = Rotation::new(center, angle);

    // forward hits: target pixel -> handle pixels landing on it
    let mut hits: BTreeMap<Pixel, Vec<Pixel>> = BTreeMap::new();
    for p in mask.pixels() {
        let f = rot.forward(p.to_point());
        let (qx, qy) = (round_half_away(f.x), round_half_away(f.y));
        if qx >= 0 && qy >= 0 && (qx as usize) < w && (qy as usize) < h {
            hits.entry(Pixel::new(qx as usize, qy as usize)).or_default().push(p);
        }
    }

    let mut rho = BinaryMask::new(w, h);
    let mut pi = CoordinateMap::new();
    for y in 0..h {
        for x in 0..w {
            let q = Pixel::new(x, y);
            let pre = rot.inverse(q.to_point());
            let (rx, ry) = (round_half_away(pre.x), round_half_away(pre.y));
            let source = if mask.contains(rx, ry) {
                Some(Pixel::new(rx as usize, ry as usize))
            } else {
                hits.get(&q).and_then(|cands| {
                    cands
                        .iter()
                        .copied()
                        .filter(|s| (s.x as i64 - rx).abs() <= 1 && (s.y as i64 - ry).abs() <= 1)
                        .min_by(|a, b| {
                            a.to_point()
                                .distance(pre)
                                .total_cmp(&b.to_point().distance(pre))
                        })
                })
            };
            if let Some(s) = source {
                rho.set(x, y, true);
                pi.insert(q, s);
            }
        }
    }
    if rho.is_empty() {
        return Err(GeometryError::DegenerateDrag);
    }
    Ok((rho, pi))
}

/// Signed angle in `(−π, π]` from `c → h` to `c → g`.
pub fn signed_angle(h: Point, c: Point, g: Point) -> Result<f64> {
    let a = h - c;
    let b = g - c;
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(GeometryError::DegenerateRotation);
    }
    let cross = a.x * b.y - a.y * b.x;
    let dot = a.x * b.x + a.y * b.y;
    let angle = cross.atan2(dot);
    Ok(if angle <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        angle
    })
}

/// Drag state of `inst` at drag fraction `fraction` (0 = untouched, 1 = full drag).
pub fn drag_state_at(inst: &DragInstruction, fraction: f64) -> Result<DragState> {
    let (rho, pi) = match inst.drag_type {
        DragType::Rotation => {
            let c = inst
                .center
                .ok_or_else(|| GeometryError::Argument("rotation without center".into()))?;
            if inst.handle == inst.target {
                return Ok(DragState::identity(&inst.handle_region));
            }
            let angle = signed_angle(inst.handle, c, inst.target)?;
            rotate_region(&inst.handle_region, c, fraction * angle)?
        }
        DragType::Translation | DragType::Deformation => {
            let d = inst.target - inst.handle;
            translate_region(&inst.handle_region, (fraction * d.x, fraction * d.y))?
        }
    };
    Ok(DragState { rho, pi })
}

/// Intermediate state of `inst` at iteration `(t, k)` of the schedule.
pub fn intermediate_state(inst: &DragInstruction, t: usize, k: usize, s: &Schedule) -> Result<DragState> {
    drag_state_at(inst, eta(t, k, s)?)
}

/// Feature-grid extent for an image: `ceil(dims / 2)`.
pub fn feature_dims(image_width: usize, image_height: usize) -> (usize, usize) {
    (image_width.div_ceil(2), image_height.div_ceil(2))
}

fn check_feature_dims(image: (usize, usize), feature: (usize, usize)) -> Result<()> {
    if feature_dims(image.0, image.1) != feature {
        return Err(GeometryError::Argument(format!(
            "feature dims {feature:?} are not ceil({image:?} / 2)"
        )));
    }
    Ok(())
}

/// Downsamples a mask to the feature grid; a feature pixel is set when any covered image pixel is.
pub fn mask_to_feature_grid(mask: &BinaryMask, feature: (usize, usize)) -> Result<BinaryMask> {
    check_feature_dims(mask.dims(), feature)?;
    let mut out = BinaryMask::new(feature.0, feature.1);
    for p in mask.pixels() {
        out.set(p.x / 2, p.y / 2, true);
    }
    Ok(out)
}

/// Rescales a coordinate map by one half; the first image target (row-major) of each
/// feature cell supplies that cell's source.
pub fn map_to_feature_grid(
    map: &CoordinateMap,
    image: (usize, usize),
    feature: (usize, usize),
) -> Result<CoordinateMap> {
    check_feature_dims(image, feature)?;
    let mut out = CoordinateMap::new();
    for (t, s) in map.iter() {
        let ft = Pixel::new(t.x / 2, t.y / 2);
        if out.get(ft).is_none() {
            out.insert(ft, Pixel::new(s.x / 2, s.y / 2));
        }
    }
    Ok(out)
}

/// Both halves of a drag state at feature resolution.
pub fn state_to_feature_grid(state: &DragState, feature: (usize, usize)) -> Result<DragState> {
    Ok(DragState {
        rho: mask_to_feature_grid(&state.rho, feature)?,
        pi: map_to_feature_grid(&state.pi, state.rho.dims(), feature)?,
    })
}
