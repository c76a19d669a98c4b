//! Drag instructions, edit specifications and the JSON instruction file.
//!
//! An instruction file is a UTF-8 JSON document:
//!
//! ```json
//! {
//!   "image": "photo.png",
//!   "instructions": [
//!     {"type": "translation", "handle_region": "64x64:...", "handle": [20, 32], "target": [30, 32]}
//!   ],
//!   "params": {"t_prime": 33, "big_k": 10},
//!   "uneditable_mask": "mask.png"
//! }
//! ```
//!
//! Images are PNG paths (relative to the document) or `data:image/png;base64,` URIs.
//! Masks are PNG paths or run-length strings `WxH:r0,r1,...` whose runs alternate
//! 0/1 starting with 0 in row-major order. In the uneditable mask a set pixel
//! marks content that must not change.

use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BinaryMask, GeometryError, Point, Schedule};

const DATA_URI_PREFIX: &str = "data:image/png;base64,";
const HANDLE_JITTER: f64 = 2.0;
const MIN_IMAGE_SIDE: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DragType {
    Translation,
    Deformation,
    Rotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DragInstruction {
    pub drag_type: DragType,
    pub handle_region: BinaryMask,
    pub handle: Point,
    pub target: Point,
    /// Rotation center; present exactly for rotations.
    pub center: Option<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    PlainGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub big_k: usize,
    pub lambda_m: f64,
    pub optimizer: OptimizerKind,
    pub step_size: f64,
    pub strength: f64,
    pub t_max: usize,
    pub t_prime: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            big_k: 10,
            lambda_m: 1.0,
            optimizer: OptimizerKind::Adam,
            step_size: 2e-2,
            strength: 0.75,
            t_max: 50,
            t_prime: 33,
        }
    }
}

impl HyperParams {
    /// Inversion depth `T = round(t_max · strength)` (50 × 0.75 → 38).
    pub fn inversion_depth(&self) -> usize {
        (self.t_max as f64 * self.strength).round() as usize
    }

    pub fn schedule(&self) -> Result<Schedule, GeometryError> {
        Schedule::new(self.inversion_depth(), self.t_prime, self.big_k)
    }

    fn check(&self, out: &mut Vec<FieldError>) {
        let mut fail = |field: &str, msg: String| out.push(FieldError::new(format!("params.{field}"), msg));
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            fail("strength", format!("must lie in (0, 1], got {}", self.strength));
        }
        if self.t_max == 0 {
            fail("t_max", "must be at least 1".into());
        }
        if self.inversion_depth() <= self.t_prime {
            fail(
                "t_prime",
                format!(
                    "round(t_max * strength) = {} must exceed t_prime = {}",
                    self.inversion_depth(),
                    self.t_prime
                ),
            );
        }
        if self.big_k == 0 {
            fail("big_k", "must be at least 1".into());
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            fail("step_size", format!("must be positive, got {}", self.step_size));
        }
        if !(self.lambda_m.is_finite() && self.lambda_m >= 0.0) {
            fail("lambda_m", format!("must be non-negative, got {}", self.lambda_m));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                fail(name, format!("must lie in [0, 1), got {v}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            fail("adam_eps", format!("must be positive, got {}", self.adam_eps));
        }
    }
}

/// A validated edit request: image, uneditable mask, drag instructions and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSpec {
    pub image: RgbImage,
    /// Set pixels are uneditable.
    pub uneditable_mask: BinaryMask,
    pub instructions: Vec<DragInstruction>,
    pub params: HyperParams,
    pub intent_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("validation failed: {}", join_errors(.0))]
    Validation(Vec<FieldError>),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_errors(errs: &[FieldError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl SpecError {
    /// Field paths named by this error.
    pub fn paths(&self) -> Vec<String> {
        match self {
            SpecError::Parse { path, .. } => vec![path.clone()],
            SpecError::Validation(errs) => errs.iter().map(|e| e.path.clone()).collect(),
            SpecError::Io { .. } => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

// Field order is alphabetical so the serialized document has sorted keys.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
    instructions: Vec<InstructionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent_note: Option<String>,
    #[serde(default)]
    params: HyperParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uneditable_mask: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstructionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<[f64; 2]>,
    handle: [f64; 2],
    handle_region: String,
    target: [f64; 2],
    #[serde(rename = "type")]
    drag_type: DragType,
}

/// Encodes a mask as `WxH:` followed by alternating 0/1 run lengths, starting with 0.
pub fn encode_rle(mask: &BinaryMask) -> String {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in mask.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    let body = runs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    format!("{}x{}:{}", mask.width(), mask.height(), body)
}

pub fn decode_rle(s: &str) -> Result<BinaryMask, String> {
    let (head, body) = s.split_once(':').ok_or("missing ':' after WxH")?;
    let (w, h) = head.split_once('x').ok_or("header must be WxH")?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("mask dimensions must be positive".into());
    }
    let mut mask = BinaryMask::new(w, h);
    let mut pos = 0usize;
    let mut value = false;
    if !body.trim().is_empty() {
        for tok in body.split(',') {
            let n: usize = tok.trim().parse().map_err(|_| format!("bad run length {tok:?}"))?;
            if pos + n > w * h {
                return Err(format!("runs exceed {w}x{h} pixels"));
            }
            if value {
                for i in pos..pos + n {
                    mask.set(i % w, i / w, true);
                }
            }
            pos += n;
            value = !value;
        }
    }
    if pos != w * h {
        return Err(format!("runs cover {pos} of {} pixels", w * h));
    }
    Ok(mask)
}

fn is_rle(s: &str) -> bool {
    let Some((head, _)) = s.split_once(':') else {
        return false;
    };
    let mut parts = head.splitn(2, 'x');
    matches!(
        (parts.next(), parts.next()),
        (Some(a), Some(b)) if !a.is_empty() && !b.is_empty()
            && a.bytes().all(|c| c.is_ascii_digit())
            && b.bytes().all(|c| c.is_ascii_digit())
    )
}

/// Encodes an image as PNG bytes.
pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, String> {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| e.to_string())
}

/// Reads a mask PNG: pixels with luminance above mid-gray are set.
pub fn mask_from_image(img: &RgbImage) -> BinaryMask {
    BinaryMask::from_fn(img.width() as usize, img.height() as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        luminance(p) > 127.5
    })
}

pub fn mask_to_image(mask: &BinaryMask) -> RgbImage {
    RgbImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        let v = if mask.get(x as usize, y as usize) { 255 } else { 0 };
        image::Rgb([v, v, v])
    })
}

/// Rec. 601 luma of an 8-bit pixel, in 0..=255.
pub fn luminance(p: [u8; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let path = Path::new(p);
    match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path.to_path_buf(),
    }
}

fn load_image_field(field: &str, value: &str, base: Option<&Path>) -> Result<RgbImage, FieldError> {
    if let Some(b64) = value.strip_prefix(DATA_URI_PREFIX) {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64.trim())
            .map_err(|e| FieldError::new(field, format!("bad base64: {e}")))?;
        return decode_png(&bytes).map_err(|e| FieldError::new(field, format!("bad PNG: {e}")));
    }
    let path = resolve(base, value);
    let bytes = std::fs::read(&path)
        .map_err(|e| FieldError::new(field, format!("cannot read {}: {e}", path.display())))?;
    decode_png(&bytes).map_err(|e| FieldError::new(field, format!("bad PNG {}: {e}", path.display())))
}

fn load_mask_field(field: &str, value: &str, base: Option<&Path>) -> Result<BinaryMask, FieldError> {
    if is_rle(value) {
        decode_rle(value).map_err(|e| FieldError::new(field, e))
    } else {
        load_image_field(field, value, base).map(|img| mask_from_image(&img))
    }
}

fn point_from(v: [f64; 2]) -> Point {
    Point::new(v[0], v[1])
}

/// Parses an instruction document.
///
/// `base_dir` resolves relative paths; `image` supplies the raster when the
/// document has no `image` field (or overrides it).
pub fn parse_spec(document: &str, base_dir: Option<&Path>, image: Option<RgbImage>) -> Result<EditSpec, SpecError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| SpecError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut errors = Vec::new();
    let image = match (image, &doc.image) {
        (Some(img), _) => Some(img),
        (None, Some(v)) => load_image_field("image", v, base_dir).map_err(|e| errors.push(e)).ok(),
        (None, None) => {
            errors.push(FieldError::new("image", "missing image"));
            None
        }
    };
    let uneditable = doc
        .uneditable_mask
        .as_deref()
        .map(|v| load_mask_field("uneditable_mask", v, base_dir))
        .transpose()
        .map_err(|e| errors.push(e))
        .ok()
        .flatten();

    let mut instructions = Vec::new();
    for (i, inst) in doc.instructions.iter().enumerate() {
        let field = format!("instructions[{i}].handle_region");
        match load_mask_field(&field, &inst.handle_region, base_dir) {
            Ok(region) => instructions.push(DragInstruction {
                drag_type: inst.drag_type,
                handle_region: region,
                handle: point_from(inst.handle),
                target: point_from(inst.target),
                center: inst.center.map(point_from),
            }),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(SpecError::Validation(errors));
    }
    let image = image.expect("image present when no errors");
    let uneditable_mask = uneditable
        .unwrap_or_else(|| BinaryMask::new(image.width().max(1) as usize, image.height().max(1) as usize));
    let spec = EditSpec {
        image,
        uneditable_mask,
        instructions,
        params: doc.params,
        intent_note: doc.intent_note,
    };
    let failures = spec.check();
    if failures.is_empty() {
        Ok(spec)
    } else {
        Err(SpecError::Validation(failures))
    }
}

/// Reads and parses an instruction file, resolving paths against its directory.
pub fn load_spec(path: &Path, image: Option<RgbImage>) -> Result<EditSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spec(&text, path.parent(), image)
}

/// Canonical document: sorted keys, inline PNG image, RLE masks.
pub fn serialize_spec(spec: &EditSpec) -> Result<String, SpecError> {
    let failures = spec.check();
    if !failures.is_empty() {
        return Err(SpecError::Validation(failures));
    }
    Ok(render(spec, Some(&image_data_uri(&spec.image))))
}

/// Canonical document that leaves the image out (supplied separately).
pub fn serialize_spec_without_image(spec: &EditSpec) -> Result<String, SpecError> {
    let failures = spec.check();
    if !failures.is_empty() {
        return Err(SpecError::Validation(failures));
    }
    Ok(render(spec, None))
}

/// Canonical document with the image referenced by path.
pub fn serialize_spec_with_image_path(spec: &EditSpec, image_path: &str) -> Result<String, SpecError> {
    let failures = spec.check();
    if !failures.is_empty() {
        return Err(SpecError::Validation(failures));
    }
    Ok(render(spec, Some(image_path)))
}

pub fn image_data_uri(image: &RgbImage) -> String {
    format!(
        "{DATA_URI_PREFIX}{}",
        base64::engine::general_purpose::STANDARD.encode(encode_png(image))
    )
}

fn render(spec: &EditSpec, image: Option<&str>) -> String {
    let doc = Document {
        image: image.map(str::to_owned),
        instructions: spec
            .instructions
            .iter()
            .map(|i| InstructionDoc {
                center: i.center.map(Into::into),
                handle: i.handle.into(),
                handle_region: encode_rle(&i.handle_region),
                target: i.target.into(),
                drag_type: i.drag_type,
            })
            .collect(),
        intent_note: spec.intent_note.clone(),
        params: spec.params,
        uneditable_mask: Some(encode_rle(&spec.uneditable_mask)),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("document serializes");
    out.push('\n');
    out
}

impl EditSpec {
    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    /// Invariant violations, each with its field path.
    pub fn check(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let (w, h) = (self.image.width(), self.image.height());
        if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
            errs.push(FieldError::new("image", format!("image is {w}x{h}, minimum is 8x8")));
        }
        let dims = (w as usize, h as usize);
        if self.uneditable_mask.dims() != dims {
            errs.push(FieldError::new(
                "uneditable_mask",
                format!("mask is {:?}, image is {dims:?}", self.uneditable_mask.dims()),
            ));
        }
        if self.instructions.is_empty() {
            errs.push(FieldError::new("instructions", "at least one instruction is required"));
        }
        for (i, inst) in self.instructions.iter().enumerate() {
            let at = |f: &str| format!("instructions[{i}].{f}");
            match (inst.drag_type, inst.center) {
                (DragType::Rotation, None) => errs.push(FieldError::new(at("center"), "required for rotation")),
                (DragType::Translation | DragType::Deformation, Some(_)) => {
                    errs.push(FieldError::new(at("center"), "only allowed for rotation"))
                }
                _ => {}
            }
            let region = &inst.handle_region;
            if region.dims() != dims {
                errs.push(FieldError::new(
                    at("handle_region"),
                    format!("mask is {:?}, image is {dims:?}", region.dims()),
                ));
            } else if region.is_empty() {
                errs.push(FieldError::new(at("handle_region"), "handle region is empty"));
            }
            let points = [("handle", Some(inst.handle)), ("target", Some(inst.target)), ("center", inst.center)];
            for (name, p) in points {
                let Some(p) = p else { continue };
                if !p.is_finite() {
                    errs.push(FieldError::new(at(name), "coordinates must be finite"));
                } else if p.x < 0.0 || p.y < 0.0 || p.x > (w as f64 - 1.0) || p.y > (h as f64 - 1.0) {
                    errs.push(FieldError::new(at(name), format!("({}, {}) outside the image", p.x, p.y)));
                }
            }
            if inst.handle.is_finite() && region.dims() == dims && !region.is_empty() {
                let near = region.pixels().any(|q| {
                    (q.x as f64 - inst.handle.x).abs() <= HANDLE_JITTER && (q.y as f64 - inst.handle.y).abs() <= HANDLE_JITTER
                });
                if !near {
                    errs.push(FieldError::new(at("handle"), "handle point is not inside its handle region"));
                }
            }
        }
        self.params.check(&mut errs);
        errs
    }

    /// Non-fatal findings: handle regions touching the uneditable area, overlapping handle regions.
    pub fn validate(&self) -> Vec<Warning> {
        let mut warnings = Vec::new();
        for (i, inst) in self.instructions.iter().enumerate() {
            if inst.handle_region.dims() != self.uneditable_mask.dims() {
                continue;
            }
            let n = inst.handle_region.intersect(&self.uneditable_mask).count();
            if n > 0 {
                warnings.push(Warning {
                    path: format!("instructions[{i}].handle_region"),
                    message: format!("{n} pixel(s) inside the uneditable mask"),
                });
            }
        }
        for i in 0..self.instructions.len() {
            for j in i + 1..self.instructions.len() {
                let (a, b) = (&self.instructions[i].handle_region, &self.instructions[j].handle_region);
                if a.dims() == b.dims() && !a.intersect(b).is_empty() {
                    warnings.push(Warning {
                        path: format!("instructions[{j}].handle_region"),
                        message: format!("overlaps instructions[{i}].handle_region"),
                    });
                }
            }
        }
        warnings
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 7) as u8, (y * 5) as u8, 90]))
    }

    fn square(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side)
    }

    fn minimal_doc() -> String {
        let region = encode_rle(&square(16, 16, 4, 4, 3));
        format!(
            r#"{{"instructions": [{{"type": "translation", "handle_region": "{region}", "handle": [5, 5], "target": [9, 5]}}]}}"#
        )
    }

    #[test]
    fn minimal_document_parses() {
        let spec = parse_spec(&minimal_doc(), None, Some(image(16, 16))).unwrap();
        assert_eq!(spec.instructions.len(), 1);
        assert!(spec.uneditable_mask.is_empty());
        assert_eq!(spec.params, HyperParams::default());
        assert_eq!(spec.params.inversion_depth(), 38);
        assert!(spec.validate().is_empty());
    }

    #[test]
    fn rotation_without_center_names_center() {
        let doc = minimal_doc().replace("translation", "rotation");
        let err = parse_spec(&doc, None, Some(image(16, 16))).unwrap_err();
        assert!(matches!(err, SpecError::Validation(_)));
        assert_eq!(err.paths(), vec!["instructions[0].center".to_string()]);
    }

    #[test]
    fn schema_errors_carry_paths() {
        let doc = minimal_doc().replace("\"handle\"", "\"handel\"");
        let err = parse_spec(&doc, None, Some(image(16, 16))).unwrap_err();
        match err {
            SpecError::Parse { path, .. } => assert!(path.starts_with("instructions[0]"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        let doc = minimal_doc().replace("translation", "shear");
        assert!(matches!(
            parse_spec(&doc, None, Some(image(16, 16))),
            Err(SpecError::Parse { .. })
        ));
    }

    #[test]
    fn validation_lists_every_failure() {
        let doc = minimal_doc()
            .replace("[9, 5]", "[99, 5]")
            .replace("\"instructions\"", "\"params\": {\"big_k\": 0}, \"instructions\"");
        let err = parse_spec(&doc, None, Some(image(16, 16))).unwrap_err();
        let paths = err.paths();
        assert!(paths.contains(&"instructions[0].target".to_string()));
        assert!(paths.contains(&"params.big_k".to_string()));
    }

    #[test]
    fn missing_image_is_reported() {
        let err = parse_spec(&minimal_doc(), None, None).unwrap_err();
        assert_eq!(err.paths(), vec!["image".to_string()]);
    }

    #[test]
    fn handle_jitter_tolerance() {
        let mut spec = parse_spec(&minimal_doc(), None, Some(image(16, 16))).unwrap();
        spec.instructions[0].handle = Point::new(8.0, 8.0);
        assert!(spec.check().is_empty());
        spec.instructions[0].handle = Point::new(9.0, 5.0);
        assert_eq!(spec.check()[0].path, "instructions[0].handle");
    }

    #[test]
    fn round_trip_is_identity() {
        let spec = parse_spec(&minimal_doc(), None, Some(image(16, 16))).unwrap();
        let doc = serialize_spec(&spec).unwrap();
        let again = parse_spec(&doc, None, None).unwrap();
        assert_eq!(again, spec);
        assert_eq!(serialize_spec(&again).unwrap(), doc);
    }

    #[test]
    fn round_trip_rotation_with_mask_and_note() {
        let mut spec = EditSpec {
            image: image(20, 12),
            uneditable_mask: BinaryMask::new(20, 12),
            instructions: vec![DragInstruction {
                drag_type: DragType::Translation,
                handle_region: square(20, 12, 4, 4, 3),
                handle: Point::new(5.0, 5.0),
                target: Point::new(9.0, 5.0),
                center: None,
            }],
            params: HyperParams::default(),
            intent_note: None,
        };
        spec.instructions[0].drag_type = DragType::Rotation;
        spec.instructions[0].center = Some(Point::new(3.25, 4.5));
        spec.instructions[0].target = Point::new(4.125, 9.0);
        spec.uneditable_mask = BinaryMask::from_fn(20, 12, |x, _| x > 15);
        spec.intent_note = Some("turn the \"block\" ⟳".into());
        spec.params.optimizer = OptimizerKind::PlainGradient;
        spec.params.step_size = 0.1;
        let doc = serialize_spec(&spec).unwrap();
        assert_eq!(parse_spec(&doc, None, None).unwrap(), spec);
    }

    #[test]
    fn canonical_keys_are_sorted() {
        let spec = parse_spec(&minimal_doc(), None, Some(image(16, 16))).unwrap();
        let doc = serialize_spec_without_image(&spec).unwrap();
        let top: Vec<usize> = ["\"instructions\"", "\"params\"", "\"uneditable_mask\""]
            .iter()
            .map(|k| doc.find(k).unwrap())
            .collect();
        assert!(top.windows(2).all(|w| w[0] < w[1]));
        let inner: Vec<usize> = ["\"handle\"", "\"handle_region\"", "\"target\"", "\"type\""]
            .iter()
            .map(|k| doc.find(k).unwrap())
            .collect();
        assert!(inner.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn nan_coordinates_are_rejected() {
        let mut spec = parse_spec(&minimal_doc(), None, Some(image(16, 16))).unwrap();
        spec.instructions[0].target = Point::new(f64::NAN, 3.0);
        let err = serialize_spec(&spec).unwrap_err();
        assert_eq!(err.paths(), vec!["instructions[0].target".to_string()]);
    }

    #[test]
    fn warnings() {
        let mut spec = parse_spec(&minimal_doc(), None, Some(image(16, 16))).unwrap();
        let mut second = spec.instructions[0].clone();
        second.handle_region = square(16, 16, 10, 10, 3);
        second.handle = Point::new(11.0, 11.0);
        spec.instructions.push(second.clone());
        assert!(spec.validate().is_empty());

        spec.instructions[1].handle_region = square(16, 16, 5, 5, 3);
        assert_eq!(spec.validate().len(), 1);

        spec.instructions[1] = second;
        spec.uneditable_mask = BinaryMask::from_fn(16, 16, |x, _| x >= 6);
        let w = spec.validate();
        // 3x3 square at x 4..7 meets x >= 6 in one column of 3 pixels
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].path, "instructions[0].handle_region");
        assert!(w[0].message.starts_with("3 pixel"));
    }

    #[test]
    fn rle_cases() {
        let m = BinaryMask::from_pixels(3, 2, [crate::geometry::Pixel::new(0, 0), crate::geometry::Pixel::new(2, 1)]);
        assert_eq!(encode_rle(&m), "3x2:0,1,4,1");
        assert_eq!(decode_rle("3x2:0,1,4,1").unwrap(), m);
        assert_eq!(encode_rle(&BinaryMask::new(2, 2)), "2x2:4");
        assert!(decode_rle("3x2:0,1,4").is_err());
        assert!(decode_rle("3x2:9").is_err());
        assert!(decode_rle("0x2:0").is_err());
        assert!(is_rle("12x7:3,4") && !is_rle("masks/a.png") && !is_rle("C:x/a.png"));
    }

    #[test]
    fn masks_from_png_paths() {
        let dir = tempfile::tempdir().unwrap();
        let region = square(16, 16, 4, 4, 3);
        mask_to_image(&region).save(dir.path().join("region.png")).unwrap();
        image(16, 16).save(dir.path().join("img.png")).unwrap();
        let doc = r#"{"image": "img.png", "instructions": [{"type": "deformation", "handle_region": "region.png", "handle": [5, 5], "target": [6, 5]}]}"#;
        std::fs::write(dir.path().join("spec.json"), doc).unwrap();
        let spec = load_spec(&dir.path().join("spec.json"), None).unwrap();
        assert_eq!(spec.instructions[0].handle_region, region);
        assert_eq!(spec.image, image(16, 16));
    }

    proptest! {
        #[test]
        fn rle_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let m = BinaryMask::from_fn(w, h, |x, y| (seed >> ((x * 3 + y * 5) % 61)) & 1 == 1);
            prop_assert_eq!(decode_rle(&encode_rle(&m)).unwrap(), m);
        }
    }
}
