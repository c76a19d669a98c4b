//! Synthetic fixtures, a pixel-space oracle warp, and the benchmark harness.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{baseline_run, path_deviation, BaselineParams};
use crate::geometry::{BinaryMask, Point};
use crate::instruction::{
    decode_png, encode_png, load_spec, luminance, serialize_spec_with_image_path, DragInstruction, DragType, EditSpec,
    HyperParams, OptimizerKind, SpecError,
};
use crate::lro::{frozen_run, pbsi_run, LroError, RunOptions, RunResult};
use crate::metrics::{MetricsError, MetricsReport, PatchDistance};
use crate::pipeline::{ComponentSelection, Pipeline};

pub const FIXTURE_SIZE: usize = 64;
pub const BACKGROUND: [u8; 3] = [51, 51, 51];
pub const SHAPE_COLOR: [u8; 3] = [235, 235, 235];
/// Surround of the shape included in the handle region.
pub const HANDLE_MARGIN: usize = 3;
/// Margin around the handle and target regions left editable.
pub const EDIT_MARGIN: usize = 6;
/// Marks fixtures whose success the bench command enforces.
pub const ACCEPTANCE_TAG: &str = "acceptance";
/// Step size of the plain gradient optimizer used by generated fixtures.
pub const FIXTURE_STEP_SIZE: f64 = 0.4;

/// Hyperparameters carried by generated fixtures.
///
/// Adam moves each latent coordinate by at most its step size per iteration, so at the
/// default rate a 10 px drag cannot follow the handle region; the fixtures use a plain
/// gradient step large enough to keep up.
pub fn fixture_params() -> HyperParams {
    HyperParams {
        optimizer: OptimizerKind::PlainGradient,
        step_size: FIXTURE_STEP_SIZE,
        ..HyperParams::default()
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("empty suite")]
    Empty,
    #[error("{path}: {message}")]
    Suite { path: PathBuf, message: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Run(#[from] LroError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Blob,
    Bar,
    Lshape,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [Self::Blob, Self::Bar, Self::Lshape];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Blob => "blob",
            Self::Bar => "bar",
            Self::Lshape => "lshape",
        }
    }

    /// Shape pixels relative to the top-left of the bounding box, and the box size.
    fn stencil(self) -> (usize, usize, fn(usize, usize) -> bool) {
        match self {
            Self::Blob => (8, 8, |_, _| true),
            Self::Bar => (16, 4, |_, _| true),
            Self::Lshape => (12, 14, |x, y| x < 4 || y >= 10),
        }
    }

    /// Rotation pivot relative to the top-left pixel center. Pivots sit on pixel
    /// corners with even offsets, so quarter turns map 2×2 feature cells onto cells.
    fn pivot(self) -> Point {
        match self {
            // left of the blob
            Self::Blob => Point::new(-4.5, 3.5),
            // middle of the bar's left edge
            Self::Bar => Point::new(-0.5, 1.5),
            // outer corner of the L
            Self::Lshape => Point::new(-0.5, 13.5),
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a fixture shows and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeMeta {
    pub kind: ShapeKind,
    /// `(x0, y0, x1, y1)` inclusive.
    pub bounds: (usize, usize, usize, usize),
    pub color: [u8; 3],
    pub background: [u8; 3],
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub image: RgbImage,
    pub spec: EditSpec,
    pub oracle_image: RgbImage,
    pub meta: ShapeMeta,
}

impl Fixture {
    /// Luminance halfway between shape and background.
    pub fn threshold(&self) -> f64 {
        0.5 * (luminance(self.meta.color) + luminance(self.meta.background))
    }

    pub fn acceptance(&self) -> bool {
        self.spec
            .intent_note
            .as_deref()
            .is_some_and(|n| n.starts_with(ACCEPTANCE_TAG))
    }
}

/// Pixels whose luminance exceeds `threshold`.
pub fn shape_mask(image: &RgbImage, threshold: f64) -> BinaryMask {
    BinaryMask::from_fn(image.width() as usize, image.height() as usize, |x, y| {
        luminance(image.get_pixel(x as u32, y as u32).0) > threshold
    })
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.intersect(b).count();
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn rotate_about(p: Point, c: Point, angle: f64) -> Point {
    let (s, co) = angle.sin_cos();
    let (dx, dy) = (p.x - c.x, p.y - c.y);
    Point::new(c.x + co * dx - s * dy, c.y + s * dx + co * dy)
}

fn bounding_box_mask(mask: &BinaryMask, margin: usize) -> BinaryMask {
    let (w, h) = mask.dims();
    match mask.bounding_box() {
        None => BinaryMask::new(w, h),
        Some((x0, y0, x1, y1)) => BinaryMask::from_fn(w, h, |x, y| {
            x + margin >= x0 && x <= x1 + margin && y + margin >= y0 && y <= y1 + margin
        }),
    }
}

/// Deterministic single-shape fixture.
///
/// `magnitude` is pixels for translation and deformation, degrees for rotation. The
/// handle region is the shape plus a [`HANDLE_MARGIN`] surround; everything farther
/// than [`EDIT_MARGIN`] from the handle and target boxes is uneditable.
pub fn gen_fixture(kind: ShapeKind, op: DragType, magnitude: f64, seed: u64) -> Fixture {
    let n = FIXTURE_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sw, sh, inside) = kind.stencil();
    // even offsets keep shapes aligned with the feature grid
    let jitter = |rng: &mut ChaCha8Rng| 2 * rng.random_range(-1i64..=1);
    let (x0, y0) = match op {
        DragType::Translation | DragType::Deformation => {
            let span = sw as f64 + magnitude.abs();
            let left = 2 * ((n as f64 - span) / 4.0).round() as i64 + if magnitude < 0.0 { magnitude.abs() as i64 } else { 0 };
            (left + jitter(&mut rng), (n - sh) as i64 / 2 + jitter(&mut rng))
        }
        DragType::Rotation => {
            let p = kind.pivot();
            // pivot near the image center
            let cx = 2 * ((n as f64 / 2.0 - p.x) / 2.0).round() as i64;
            let cy = 2 * ((n as f64 / 2.0 - p.y) / 2.0).round() as i64;
            (cx + jitter(&mut rng), cy + jitter(&mut rng))
        }
    };
    let (x0, y0) = (x0.clamp(0, (n - sw) as i64) as usize, y0.clamp(0, (n - sh) as i64) as usize);
    let shape = BinaryMask::from_fn(n, n, |x, y| {
        x >= x0 && y >= y0 && x < x0 + sw && y < y0 + sh && inside(x - x0, y - y0)
    });
    let image = RgbImage::from_fn(n as u32, n as u32, |x, y| {
        Rgb(if shape.get(x as usize, y as usize) { SHAPE_COLOR } else { BACKGROUND })
    });
    let handle_region = shape.dilate(HANDLE_MARGIN);
    let center_of_box = Point::new(x0 as f64 + (sw as f64 - 1.0) / 2.0, y0 as f64 + (sh as f64 - 1.0) / 2.0);
    let handle = shape.centroid().unwrap_or(center_of_box);
    let (target, center) = match op {
        DragType::Translation | DragType::Deformation => (handle + Point::new(magnitude, 0.0), None),
        DragType::Rotation => {
            let c = Point::new(x0 as f64, y0 as f64) + kind.pivot();
            (rotate_about(handle, c, magnitude.to_radians()), Some(c))
        }
    };
    let inst = DragInstruction {
        drag_type: op,
        handle_region,
        handle,
        target,
        center,
    };
    let mut spec = EditSpec {
        image: image.clone(),
        uneditable_mask: BinaryMask::new(n, n),
        instructions: vec![inst],
        params: fixture_params(),
        intent_note: None,
    };
    let oracle_image = oracle_warp(&image, &spec);
    let moved = shape_mask(&oracle_image, 0.5 * (luminance(SHAPE_COLOR) + luminance(BACKGROUND)));
    let editable = bounding_box_mask(&spec.instructions[0].handle_region.union(&moved.dilate(HANDLE_MARGIN)), EDIT_MARGIN);
    spec.uneditable_mask = editable.invert();
    let op_name = match op {
        DragType::Translation => "translate",
        DragType::Deformation => "deform",
        DragType::Rotation => "rotate",
    };
    let name = format!("{kind}_{op_name}{}", magnitude.round() as i64);
    spec.intent_note = Some(format!("{kind} {op_name} {magnitude} seed {seed}"));
    let bounds = shape.bounding_box().expect("shape is non-empty");
    Fixture {
        name,
        image,
        spec,
        oracle_image,
        meta: ShapeMeta {
            kind,
            bounds,
            color: SHAPE_COLOR,
            background: BACKGROUND,
        },
    }
}

/// `{blob, bar, lshape} × {translate 3 px, translate 20 px, rotate 45°, rotate 90°}`.
pub fn standard_suite(seed: u64) -> Vec<Fixture> {
    let ops = [
        (DragType::Translation, 3.0),
        (DragType::Translation, 20.0),
        (DragType::Rotation, 45.0),
        (DragType::Rotation, 90.0),
    ];
    ShapeKind::ALL
        .iter()
        .flat_map(|&k| ops.iter().map(move |&(op, m)| gen_fixture(k, op, m, seed)))
        .collect()
}

/// The standard suite plus the 10 px blob translation; the blob translation and the
/// L-shape quarter turn are tagged for acceptance.
pub fn acceptance_suite(seed: u64) -> Vec<Fixture> {
    let mut suite = standard_suite(seed);
    suite.push(gen_fixture(ShapeKind::Blob, DragType::Translation, 10.0, seed));
    for f in &mut suite {
        if f.name == "blob_translate10" || f.name == "lshape_rotate90" {
            tag_acceptance(f);
        }
    }
    suite
}

/// Tags `fixture` so that the bench command fails when it fails.
pub fn tag_acceptance(fixture: &mut Fixture) {
    let note = fixture.spec.intent_note.take().unwrap_or_default();
    fixture.spec.intent_note = Some(format!("{ACCEPTANCE_TAG}: {note}"));
}

fn median(mut v: Vec<u8>) -> u8 {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Forward pixel-space application of every instruction at full drag.
///
/// Handle regions are first filled with the per-channel median colour of their
/// 2-pixel surround; then each handle pixel is pushed through the transform at 3×3
/// sub-pixel offsets and painted at every rounded landing spot inside the image.
pub fn oracle_warp(image: &RgbImage, spec: &EditSpec) -> RgbImage {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut out = image.clone();
    for inst in &spec.instructions {
        let region = &inst.handle_region;
        let mut ring: [Vec<u8>; 3] = Default::default();
        for y in 0..h {
            for x in 0..w {
                if region.contains(x, y) {
                    continue;
                }
                let near = (-2..=2).any(|dy| (-2..=2).any(|dx| region.contains(x + dx, y + dy)));
                if near {
                    let p = image.get_pixel(x as u32, y as u32).0;
                    for c in 0..3 {
                        ring[c].push(p[c]);
                    }
                }
            }
        }
        if ring[0].is_empty() {
            continue;
        }
        let fill = Rgb([median(ring[0].clone()), median(ring[1].clone()), median(ring[2].clone())]);
        for p in region.pixels() {
            out.put_pixel(p.x as u32, p.y as u32, fill);
        }
    }
    for inst in &spec.instructions {
        let transform: Box<dyn Fn(Point) -> Point> = match (inst.drag_type, inst.center) {
            (DragType::Rotation, Some(c)) => {
                let (a, b) = (inst.handle - c, inst.target - c);
                let angle = (a.x * b.y - a.y * b.x).atan2(a.x * b.x + a.y * b.y);
                Box::new(move |p| rotate_about(p, c, angle))
            }
            _ => {
                let d = inst.target - inst.handle;
                Box::new(move |p| p + d)
            }
        };
        for p in inst.handle_region.pixels() {
            let colour = *image.get_pixel(p.x as u32, p.y as u32);
            for sy in [-1.0 / 3.0, 0.0, 1.0 / 3.0] {
                for sx in [-1.0 / 3.0, 0.0, 1.0 / 3.0] {
                    let q = transform(Point::new(p.x as f64 + sx, p.y as f64 + sy));
                    let (qx, qy) = (q.x.round() as i64, q.y.round() as i64);
                    if qx >= 0 && qy >= 0 && qx < w && qy < h {
                        out.put_pixel(qx as u32, qy as u32, colour);
                    }
                }
            }
        }
    }
    out
}

/// Writes `dir/fixtures/<name>/{image.png, spec.json, oracle.png}`.
pub fn write_suite(dir: &Path, fixtures: &[Fixture]) -> Result<()> {
    for f in fixtures {
        let d = dir.join("fixtures").join(&f.name);
        std::fs::create_dir_all(&d)?;
        std::fs::write(d.join("image.png"), encode_png(&f.image))?;
        std::fs::write(d.join("oracle.png"), encode_png(&f.oracle_image))?;
        std::fs::write(d.join("spec.json"), serialize_spec_with_image_path(&f.spec, "image.png")?)?;
    }
    Ok(())
}

fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path)?;
    decode_png(&bytes).map_err(|message| BenchError::Suite {
        path: path.to_path_buf(),
        message,
    })
}

/// Loads a suite written by [`write_suite`]; `dir` may be the suite root or its
/// `fixtures` directory. Shape and background colours are read back from the image
/// (brightest pixel, top-left pixel).
pub fn load_suite(dir: &Path) -> Result<Vec<Fixture>> {
    let root = if dir.join("fixtures").is_dir() {
        dir.join("fixtures")
    } else {
        dir.to_path_buf()
    };
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(|e| BenchError::Suite {
            path: root.clone(),
            message: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("spec.json").is_file())
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(BenchError::Empty);
    }
    entries
        .iter()
        .map(|d| {
            let image = read_png(&d.join("image.png"))?;
            let oracle_image = read_png(&d.join("oracle.png"))?;
            let spec = load_spec(&d.join("spec.json"), Some(image.clone()))?;
            let background = image.get_pixel(0, 0).0;
            let color = image
                .pixels()
                .map(|p| p.0)
                .max_by(|a, b| luminance(*a).total_cmp(&luminance(*b)))
                .unwrap_or(background);
            let thr = 0.5 * (luminance(color) + luminance(background));
            let bounds = shape_mask(&image, thr).bounding_box().unwrap_or((0, 0, 0, 0));
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let kind = ShapeKind::ALL
                .into_iter()
                .find(|k| name.starts_with(k.as_str()))
                .unwrap_or(ShapeKind::Blob);
            Ok(Fixture {
                name,
                image,
                spec,
                oracle_image,
                meta: ShapeMeta {
                    kind,
                    bounds,
                    color,
                    background,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pbsi,
    Baseline,
    /// Inversion and denoising with no optimization.
    Frozen,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pbsi => "pbsi",
            Self::Baseline => "baseline",
            Self::Frozen => "frozen",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pbsi" => Ok(Self::Pbsi),
            "baseline" => Ok(Self::Baseline),
            "frozen" => Ok(Self::Frozen),
            other => Err(format!("unknown method '{other}' (expected pbsi, baseline or frozen)")),
        }
    }
}

/// Oracle comparison of one edited image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeCheck {
    pub centroid_error: f64,
    pub iou: f64,
}

impl ShapeCheck {
    pub const MAX_CENTROID_ERROR: f64 = 1.5;
    pub const MIN_IOU: f64 = 0.7;

    pub fn success(&self) -> bool {
        self.centroid_error <= Self::MAX_CENTROID_ERROR && self.iou >= Self::MIN_IOU
    }
}

/// Thresholded-shape centroid distance and IoU between `edited` and the fixture oracle.
pub fn check_shape(fixture: &Fixture, edited: &RgbImage) -> ShapeCheck {
    let thr = fixture.threshold();
    let got = shape_mask(edited, thr);
    let want = shape_mask(&fixture.oracle_image, thr);
    let centroid_error = match (got.centroid(), want.centroid()) {
        (Some(a), Some(b)) => a.distance(b),
        _ => f64::INFINITY,
    };
    ShapeCheck {
        centroid_error,
        iou: iou(&got, &want),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub method: Method,
    pub acceptance: bool,
    pub report: Option<MetricsReport>,
    pub check: Option<ShapeCheck>,
    /// Largest tracked-point deviation from the straight path (baseline only).
    pub max_deviation: Option<f64>,
    pub error: Option<String>,
}

impl BenchRow {
    pub fn success(&self) -> bool {
        self.error.is_none() && self.check.is_some_and(|c| c.success())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: Method,
    pub rows: Vec<BenchRow>,
    /// Mean over fixtures that ran.
    pub aggregate: MetricsReport,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub method: Method,
    pub components: ComponentSelection,
    pub baseline: BaselineParams,
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            method: Method::Pbsi,
            components: ComponentSelection::default(),
            baseline: BaselineParams::default(),
            workers: 1,
        }
    }
}

/// Builds an f64 pipeline for `spec` and runs `method` on it.
pub fn run_spec(
    spec: &EditSpec,
    method: Method,
    components: ComponentSelection,
    baseline: &BaselineParams,
    opts: &RunOptions<'_>,
) -> std::result::Result<RunResult<f64>, LroError> {
    let pipe = Pipeline::<f64>::build(components, spec.width(), spec.height(), spec.params.t_max)?;
    let c = pipe.components();
    match method {
        Method::Pbsi => pbsi_run(spec, &c, opts),
        Method::Baseline => baseline_run(spec, &c, baseline, opts),
        Method::Frozen => frozen_run(spec, &c),
    }
}

/// Runs one fixture with the configured method.
pub fn run_fixture(fixture: &Fixture, cfg: &BenchConfig) -> std::result::Result<RunResult<f64>, LroError> {
    run_spec(&fixture.spec, cfg.method, cfg.components, &cfg.baseline, &RunOptions::default())
}

fn bench_row(fixture: &Fixture, cfg: &BenchConfig, d: &dyn PatchDistance) -> BenchRow {
    let mut row = BenchRow {
        name: fixture.name.clone(),
        method: cfg.method,
        acceptance: fixture.acceptance(),
        report: None,
        check: None,
        max_deviation: None,
        error: None,
    };
    let run = match run_fixture(fixture, cfg) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    match MetricsReport::compute(
        std::slice::from_ref(&fixture.image),
        std::slice::from_ref(&run.image),
        std::slice::from_ref(&fixture.spec),
        d,
        run.latency_ms,
    ) {
        Ok(r) => row.report = Some(r),
        Err(e) => row.error = Some(e.to_string()),
    }
    row.check = Some(check_shape(fixture, &run.image));
    row.max_deviation = fixture
        .spec
        .instructions
        .iter()
        .zip(&run.tracked_paths)
        .map(|(inst, path)| path_deviation(path, inst.handle, inst.target))
        .reduce(f64::max);
    row
}

/// Runs every fixture (on up to `cfg.workers` threads) and aggregates the metrics.
pub fn run_bench(fixtures: &[Fixture], cfg: &BenchConfig, d: &dyn PatchDistance) -> Result<BenchReport> {
    if fixtures.is_empty() {
        return Err(BenchError::Empty);
    }
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<BenchRow>>> = Mutex::new(vec![None; fixtures.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.clamp(1, fixtures.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(f) = fixtures.get(i) else {
                    break;
                };
                let row = bench_row(f, cfg, d);
                tracing::info!(fixture = %row.name, success = row.success(), "fixture done");
                rows.lock().expect("rows lock")[i] = Some(row);
            });
        }
    });
    let rows: Vec<BenchRow> = rows
        .into_inner()
        .expect("rows lock")
        .into_iter()
        .map(|r| r.expect("every fixture produces a row"))
        .collect();
    let reports: Vec<&MetricsReport> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
    if reports.is_empty() {
        return Err(BenchError::Suite {
            path: PathBuf::new(),
            message: format!("no fixture completed: {}", rows[0].error.clone().unwrap_or_default()),
        });
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let aggregate = MetricsReport {
        if_ed: mean(|r| r.if_ed),
        if_hh: mean(|r| r.if_hh),
        if_th: mean(|r| r.if_th),
        latency_ms: mean(|r| r.latency_ms),
    };
    Ok(BenchReport {
        method: cfg.method,
        rows,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let a = gen_fixture(ShapeKind::Lshape, DragType::Rotation, 45.0, 3);
        let b = gen_fixture(ShapeKind::Lshape, DragType::Rotation, 45.0, 3);
        assert_eq!(a.image, b.image);
        assert_eq!(a.oracle_image, b.oracle_image);
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn translation_oracle_moves_centroid_by_drag() {
        for m in [3.0, 10.0, 20.0] {
            let f = gen_fixture(ShapeKind::Blob, DragType::Translation, m, 0);
            let thr = f.threshold();
            let before = shape_mask(&f.image, thr).centroid().unwrap();
            let after = shape_mask(&f.oracle_image, thr).centroid().unwrap();
            assert_eq!(after - before, Point::new(m, 0.0));
            assert_eq!(shape_mask(&f.oracle_image, thr).count(), 64);
        }
    }

    #[test]
    fn rotation_oracle_keeps_area() {
        for kind in ShapeKind::ALL {
            for deg in [45.0, 90.0] {
                let f = gen_fixture(kind, DragType::Rotation, deg, 0);
                let thr = f.threshold();
                let a = shape_mask(&f.image, thr).count() as f64;
                let b = shape_mask(&f.oracle_image, thr).count() as f64;
                assert!((b / a - 1.0).abs() <= 0.1, "{kind} {deg}: {a} -> {b}");
            }
        }
    }

    #[test]
    fn hand_drawn_bar_rotation() {
        // 9×9 image, bar from (2,4) to (6,4), quarter turn about (4,4): vertical bar x = 4
        let img = RgbImage::from_fn(9, 9, |x, y| Rgb(if y == 4 && (2..=6).contains(&x) { SHAPE_COLOR } else { BACKGROUND }));
        let region = BinaryMask::from_fn(9, 9, |x, y| y == 4 && (2..=6).contains(&x));
        let spec = EditSpec {
            image: img.clone(),
            uneditable_mask: BinaryMask::new(9, 9),
            instructions: vec![DragInstruction {
                drag_type: DragType::Rotation,
                handle_region: region,
                handle: Point::new(6.0, 4.0),
                target: Point::new(4.0, 6.0),
                center: Some(Point::new(4.0, 4.0)),
            }],
            params: HyperParams::default(),
            intent_note: None,
        };
        let out = oracle_warp(&img, &spec);
        let expected =
            RgbImage::from_fn(9, 9, |x, y| Rgb(if x == 4 && (2..=6).contains(&y) { SHAPE_COLOR } else { BACKGROUND }));
        assert_eq!(out, expected);
    }

    #[test]
    fn identity_and_opposite_translations() {
        let f = gen_fixture(ShapeKind::Bar, DragType::Translation, 0.0, 1);
        assert_eq!(oracle_warp(&f.image, &f.spec), f.image);
        let g = gen_fixture(ShapeKind::Bar, DragType::Translation, 5.0, 1);
        let fwd = &g.spec.instructions[0];
        let mut back = g.spec.clone();
        back.instructions[0] = DragInstruction {
            handle_region: BinaryMask::from_fn(64, 64, |x, y| x >= 5 && fwd.handle_region.get(x - 5, y)),
            handle: fwd.target,
            target: fwd.handle,
            ..fwd.clone()
        };
        // flat background: the vacated fill is exact, so the round trip is too
        assert_eq!(oracle_warp(&g.oracle_image, &back), g.image);
    }

    #[test]
    fn suite_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let suite = standard_suite(0);
        assert_eq!(suite.len(), 12);
        write_suite(dir.path(), &suite).unwrap();
        let back = load_suite(dir.path()).unwrap();
        assert_eq!(back.len(), 12);
        for f in &back {
            let orig = suite.iter().find(|o| o.name == f.name).unwrap();
            assert_eq!(f.image, orig.image);
            assert_eq!(f.oracle_image, orig.oracle_image);
            assert_eq!(f.spec, orig.spec);
            assert_eq!(f.threshold(), orig.threshold());
        }
        assert!(matches!(load_suite(tempfile::tempdir().unwrap().path()), Err(BenchError::Empty)));
    }

    #[test]
    fn empty_suite_is_an_error() {
        assert!(matches!(
            run_bench(&[], &BenchConfig::default(), &crate::metrics::MaskedMae),
            Err(BenchError::Empty)
        ));
    }
}
