//! Image fidelity scores over editable, handle and dragged target regions.

use std::fmt::Write as _;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{drag_state_at, BinaryMask, GeometryError};
use crate::instruction::EditSpec;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no images to score")]
    Empty,
    #[error("image {index}: {message}")]
    Mismatch { index: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Distance between two rasters restricted to a mask; `0` for identical inputs, at most `1`.
pub trait PatchDistance: Send + Sync {
    fn distance(&self, a: &RgbImage, b: &RgbImage, mask: &BinaryMask) -> f64;
}

/// Mean absolute difference of `[0, 1]` RGB values over the masked pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaskedMae;

impl PatchDistance for MaskedMae {
    fn distance(&self, a: &RgbImage, b: &RgbImage, mask: &BinaryMask) -> f64 {
        let mut sum = 0u64;
        let mut n = 0u64;
        for p in mask.pixels() {
            let (pa, pb) = (a.get_pixel(p.x as u32, p.y as u32).0, b.get_pixel(p.x as u32, p.y as u32).0);
            for c in 0..3 {
                sum += pa[c].abs_diff(pb[c]) as u64;
            }
            n += 3;
        }
        if n == 0 {
            0.0
        } else {
            sum as f64 / (n as f64 * 255.0)
        }
    }
}

/// `(1 − SSIM) / 2` over the mask's bounding box with a 7×7 window clipped to the box.
/// Pixels outside the mask are zeroed in both rasters.
#[derive(Debug, Clone, Copy)]
pub struct WindowedSsim {
    pub radius: usize,
}

impl Default for WindowedSsim {
    fn default() -> Self {
        Self { radius: 3 }
    }
}

impl PatchDistance for WindowedSsim {
    fn distance(&self, a: &RgbImage, b: &RgbImage, mask: &BinaryMask) -> f64 {
        let Some((x0, y0, x1, y1)) = mask.bounding_box() else {
            return 0.0;
        };
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let crop = |img: &RgbImage, c: usize| -> Vec<f64> {
            let mut v = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x0 + x, y0 + y) {
                        v[y * w + x] = img.get_pixel((x0 + x) as u32, (y0 + y) as u32).0[c] as f64 / 255.0;
                    }
                }
            }
            v
        };
        const C1: f64 = 0.01 * 0.01;
        const C2: f64 = 0.03 * 0.03;
        let r = self.radius;
        let mut total = 0.0;
        for c in 0..3 {
            let (va, vb) = (crop(a, c), crop(b, c));
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let (ya, yb) = (y.saturating_sub(r), (y + r).min(h - 1));
                    let (xa, xb) = (x.saturating_sub(r), (x + r).min(w - 1));
                    let n = ((yb - ya + 1) * (xb - xa + 1)) as f64;
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for yy in ya..=yb {
                        for xx in xa..=xb {
                            let (p, q) = (va[yy * w + xx], vb[yy * w + xx]);
                            sa += p;
                            sb += q;
                            saa += p * p;
                            sbb += q * q;
                            sab += p * q;
                        }
                    }
                    let (ma, mb) = (sa / n, sb / n);
                    let var_a = (saa / n - ma * ma).max(0.0);
                    let var_b = (sbb / n - mb * mb).max(0.0);
                    let cov = sab / n - ma * mb;
                    acc += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
                }
            }
            total += acc / (w * h) as f64;
        }
        let ssim = total / 3.0;
        ((1.0 - ssim) / 2.0).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Mae,
    Ssim,
}

impl DistanceKind {
    pub fn build(self) -> Box<dyn PatchDistance> {
        match self {
            Self::Mae => Box::new(MaskedMae),
            Self::Ssim => Box::new(WindowedSsim::default()),
        }
    }
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mae => "mae",
            Self::Ssim => "ssim",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mae" => Ok(Self::Mae),
            "ssim" => Ok(Self::Ssim),
            other => Err(format!("unknown distance '{other}' (expected mae or ssim)")),
        }
    }
}

fn check_pair(index: usize, a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::Mismatch {
            index,
            message: format!("sizes differ: {:?} vs {:?}", a.dimensions(), b.dimensions()),
        });
    }
    Ok(())
}

fn check_lists(n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if n != m {
        return Err(MetricsError::Mismatch {
            index: n.min(m),
            message: format!("{n} originals but {m} edited images or specs"),
        });
    }
    Ok(())
}

/// `1 − mean_j d(x_j, x̄_j, ¬M_j)`.
pub fn if_ed(
    originals: &[RgbImage],
    editeds: &[RgbImage],
    uneditable: &[BinaryMask],
    d: &dyn PatchDistance,
) -> Result<f64> {
    check_lists(originals.len(), editeds.len())?;
    check_lists(originals.len(), uneditable.len())?;
    let mut sum = 0.0;
    for (j, ((x, xe), m)) in originals.iter().zip(editeds).zip(uneditable).enumerate() {
        check_pair(j, x, xe)?;
        sum += d.distance(x, xe, &m.invert());
    }
    Ok(1.0 - sum / originals.len() as f64)
}

/// `1 − mean_{j,i} d(x_j, x̄_j, ϑ_i)`.
pub fn if_hh(originals: &[RgbImage], editeds: &[RgbImage], specs: &[EditSpec], d: &dyn PatchDistance) -> Result<f64> {
    check_lists(originals.len(), editeds.len())?;
    check_lists(originals.len(), specs.len())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (j, ((x, xe), spec)) in originals.iter().zip(editeds).zip(specs).enumerate() {
        check_pair(j, x, xe)?;
        for inst in &spec.instructions {
            sum += d.distance(x, xe, &inst.handle_region);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(1.0 - sum / n as f64)
}

/// `1 − mean_{j,i} d(x_j[Π_i(q)], x̄_j[q])` over `q ∈ ρ_i`, the fully dragged target region.
/// Regions that leave the image entirely are skipped.
pub fn if_th(originals: &[RgbImage], editeds: &[RgbImage], specs: &[EditSpec], d: &dyn PatchDistance) -> Result<f64> {
    check_lists(originals.len(), editeds.len())?;
    check_lists(originals.len(), specs.len())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (j, ((x, xe), spec)) in originals.iter().zip(editeds).zip(specs).enumerate() {
        check_pair(j, x, xe)?;
        for (i, inst) in spec.instructions.iter().enumerate() {
            let state = match drag_state_at(inst, 1.0) {
                Ok(s) => s,
                Err(GeometryError::DegenerateDrag) => {
                    tracing::warn!(image = j, instruction = i, "target region leaves the image, skipped");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let mut gathered = RgbImage::new(x.width(), x.height());
            for (q, p) in state.pi.iter() {
                gathered.put_pixel(q.x as u32, q.y as u32, *x.get_pixel(p.x as u32, p.y as u32));
            }
            sum += d.distance(&gathered, xe, &state.rho);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(1.0 - sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub if_ed: f64,
    pub if_hh: f64,
    pub if_th: f64,
    pub latency_ms: f64,
}

impl MetricsReport {
    pub fn compute(
        originals: &[RgbImage],
        editeds: &[RgbImage],
        specs: &[EditSpec],
        d: &dyn PatchDistance,
        latency_ms: f64,
    ) -> Result<Self> {
        let masks: Vec<BinaryMask> = specs.iter().map(|s| s.uneditable_mask.clone()).collect();
        Ok(Self {
            if_ed: if_ed(originals, editeds, &masks, d)?,
            if_hh: if_hh(originals, editeds, specs, d)?,
            if_th: if_th(originals, editeds, specs, d)?,
            latency_ms,
        })
    }
}

pub const CSV_HEADER: [&str; 5] = ["method", "if_ed", "if_th", "if_hh", "latency_ms"];

/// `report.csv` body: a header row then one row per `(method, report)`.
pub fn to_csv(rows: &[(&str, MetricsReport)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for (method, r) in rows {
        w.write_record([
            method.to_string(),
            r.if_ed.to_string(),
            r.if_th.to_string(),
            r.if_hh.to_string(),
            r.latency_ms.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn pretty_table(rows: &[(&str, MetricsReport)]) -> String {
    let mut s = format!(
        "{:<10} {:>8} {:>8} {:>8} {:>12}\n",
        "method", "IF_ed ↑", "IF_th ↑", "IF_hh ↓", "latency_ms"
    );
    for (method, r) in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>12.1}",
            method, r.if_ed, r.if_th, r.if_hh, r.latency_ms
        );
    }
    s
}
