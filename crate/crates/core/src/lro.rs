//! Latent region optimization and the progressive backward self-intervention loop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{self, Codec, Denoiser, DiffusionError, LatentCode, NoiseSchedule};
use crate::features::{Extractor, FeatureError, FeatureMap};
use crate::geometry::{self, BinaryMask, CoordinateMap, GeometryError, Pixel, Point};
use crate::grid::{Dims, Grid};
use crate::instruction::{encode_rle, EditSpec, FieldError, HyperParams, OptimizerKind};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LroError {
    #[error("invalid spec: {}", format_fields(.0))]
    Spec(Vec<FieldError>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("component mismatch: {0}")]
    Components(String),
    #[error("non-finite loss at t={t}, k={k}")]
    NonFinite { t: usize, k: usize },
}

fn format_fields(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(|f| format!("{}: {}", f.path, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, LroError>;

/// Target region `ρ` and target → source map `Π` of one instruction at one `(t, k)`,
/// on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateState {
    pub rho: BinaryMask,
    pub pi: CoordinateMap,
    pub instruction_index: usize,
    pub t: usize,
    pub k: usize,
}

/// Progress record streamed once per `(t, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub session_id: String,
    pub t: usize,
    pub k: usize,
    pub loss: f64,
    pub eta: f64,
    pub elapsed_ms: f64,
    /// Image-resolution `ρ` of every instruction, RLE encoded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_preview: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub k: usize,
    pub eta: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult<T> {
    pub image: RgbImage,
    pub latent: LatentCode<T>,
    pub loss_trace: Vec<TraceEntry>,
    pub snapshots: Vec<LatentCode<T>>,
    pub latency_ms: f64,
    pub cancelled: bool,
    /// Tracked handle positions (image pixels) per iteration; baseline runs only.
    pub tracked_paths: Vec<Vec<Point>>,
}

/// Borrowed pipeline parts for one run.
#[derive(Clone, Copy)]
pub struct Components<'a, T> {
    pub denoiser: &'a dyn Denoiser<T>,
    pub extractor: &'a dyn Extractor<T>,
    pub codec: &'a dyn Codec<T>,
    pub noise: &'a NoiseSchedule<T>,
}

#[derive(Default, Clone, Copy)]
pub struct RunOptions<'a> {
    pub session_id: &'a str,
    pub rho_preview: bool,
    pub cancel: Option<&'a AtomicBool>,
    pub on_event: Option<&'a (dyn Fn(&RunEvent) + Sync)>,
    /// Keep the latent after every `n`-th PBSI timestep (0 keeps none).
    pub snapshot_every: usize,
}

impl RunOptions<'_> {
    pub(crate) fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::SeqCst))
    }

    pub(crate) fn emit(&self, e: &RunEvent) {
        if let Some(f) = self.on_event {
            f(e);
        }
    }
}

fn check_dims<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(FeatureError::Shape {
            expected: a.dims(),
            got: b.dims(),
        }
        .into());
    }
    Ok(())
}

fn check_mask<T: Scalar>(g: &Grid<T>, m: &BinaryMask) -> Result<()> {
    if m.dims() != (g.width(), g.height()) {
        return Err(FeatureError::Shape {
            expected: g.dims(),
            got: Dims::new(m.height(), m.width(), g.channels()),
        }
        .into());
    }
    Ok(())
}

/// `out[p] = reference[Π(p)]` for `p ∈ ρ`, zero elsewhere.
pub fn warp_reference<T: Scalar>(reference: &FeatureMap<T>, state: &IntermediateState) -> Result<FeatureMap<T>> {
    check_mask(reference, &state.rho)?;
    let mut out = Grid::zeros(reference.dims());
    for q in state.rho.pixels() {
        let p = source(state, q)?;
        out.pixel_mut(q.y, q.x).copy_from_slice(reference.pixel(p.y, p.x));
    }
    Ok(out)
}

fn source(state: &IntermediateState, q: Pixel) -> Result<Pixel> {
    state.pi.get(q).ok_or_else(|| {
        GeometryError::Argument(format!("coordinate map has no source for target ({}, {})", q.x, q.y)).into()
    })
}

/// `Σ_i ‖cur ⊙ ρ_i − warp(ref, Π_i) ⊙ ρ_i‖₁ + λ_M ‖(cur − ref) ⊙ m_feat‖₁` and its
/// subgradient with respect to `cur` (`sign(0) = 0`, overlapping regions summed).
pub fn lro_loss<T: Scalar>(
    cur: &FeatureMap<T>,
    reference: &FeatureMap<T>,
    states: &[IntermediateState],
    m_feat: &BinaryMask,
    lambda_m: T,
) -> Result<(T, FeatureMap<T>)> {
    check_dims(cur, reference)?;
    check_mask(cur, m_feat)?;
    let mut loss = T::zero();
    let mut cot = Grid::zeros(cur.dims());
    for state in states {
        check_mask(cur, &state.rho)?;
        for q in state.rho.pixels() {
            let p = source(state, q)?;
            let src = reference.pixel(p.y, p.x);
            let now = cur.pixel(q.y, q.x);
            let g = cot.pixel_mut(q.y, q.x);
            for c in 0..now.len() {
                let r = now[c] - src[c];
                loss += r.abs();
                g[c] += r.sign0();
            }
        }
    }
    if lambda_m != T::zero() {
        for p in m_feat.pixels() {
            let now = cur.pixel(p.y, p.x);
            let old = reference.pixel(p.y, p.x);
            let g = cot.pixel_mut(p.y, p.x);
            for c in 0..now.len() {
                let r = now[c] - old[c];
                loss += lambda_m * r.abs();
                g[c] += lambda_m * r.sign0();
            }
        }
    }
    Ok((loss, cot))
}

/// First-order optimizer state over one latent.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam {
        beta1: T,
        beta2: T,
        eps: T,
        m: Grid<T>,
        v: Grid<T>,
        steps: i32,
    },
    /// `z ← z − step · grad`.
    Plain,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(params: &HyperParams, dims: Dims) -> Self {
        match params.optimizer {
            OptimizerKind::Adam => Self::adam(params.adam_beta1, params.adam_beta2, params.adam_eps, dims),
            OptimizerKind::PlainGradient => Self::Plain,
        }
    }

    pub fn adam(beta1: f64, beta2: f64, eps: f64, dims: Dims) -> Self {
        Self::Adam {
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
            m: Grid::zeros(dims),
            v: Grid::zeros(dims),
            steps: 0,
        }
    }

    /// Clears the moments and the bias-correction counter.
    pub fn reset(&mut self) {
        if let Self::Adam { m, v, steps, .. } = self {
            m.scale(T::zero());
            v.scale(T::zero());
            *steps = 0;
        }
    }

    pub fn step(&mut self, z: &mut Grid<T>, grad: &Grid<T>, step_size: T) {
        assert_eq!(z.dims(), grad.dims(), "gradient shape");
        match self {
            Self::Plain => z.axpy(-step_size, grad),
            Self::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                steps,
            } => {
                *steps += 1;
                let one = T::one();
                let c1 = one - beta1.powi(*steps);
                let c2 = one - beta2.powi(*steps);
                let zs = z.as_mut_slice();
                let ms = m.as_mut_slice();
                let vs = v.as_mut_slice();
                for (i, &g) in grad.as_slice().iter().enumerate() {
                    ms[i] = *beta1 * ms[i] + (one - *beta1) * g;
                    vs[i] = *beta2 * vs[i] + (one - *beta2) * g * g;
                    let m_hat = ms[i] / c1;
                    let v_hat = vs[i] / c2;
                    zs[i] -= step_size * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Encoded and inverted input shared by the editing methods.
pub(crate) struct Prepared<T> {
    pub z_t: LatentCode<T>,
    pub feature: (usize, usize),
    pub m_feat: BinaryMask,
}

pub(crate) fn prepare<T: Scalar>(spec: &EditSpec, c: &Components<'_, T>, depth: usize) -> Result<Prepared<T>> {
    let errors = spec.check();
    if !errors.is_empty() {
        return Err(LroError::Spec(errors));
    }
    let (w, h) = (spec.width(), spec.height());
    let z0 = c.codec.encode(&spec.image);
    if z0.dims() != c.extractor.latent_dims() {
        return Err(LroError::Components(format!(
            "codec latent {:?} does not match extractor input {:?}",
            z0.dims(),
            c.extractor.latent_dims()
        )));
    }
    let feature = geometry::feature_dims(w, h);
    let fd = c.extractor.feature_dims();
    if (fd.width, fd.height) != feature {
        return Err(LroError::Components(format!(
            "extractor feature grid {}x{} is not {}x{}",
            fd.width, fd.height, feature.0, feature.1
        )));
    }
    let m_feat = geometry::mask_to_feature_grid(&spec.uneditable_mask, feature)?;
    let z_t = diffusion::invert(&z0, depth, c.denoiser, c.noise)?
        .pop()
        .unwrap_or(z0);
    Ok(Prepared { z_t, feature, m_feat })
}

pub(crate) fn finish<T: Scalar>(z: &LatentCode<T>, c: &Components<'_, T>) -> Result<(LatentCode<T>, RgbImage)> {
    let z0 = diffusion::sample(z, z.timestep, 0, c.denoiser, c.noise)?;
    let image = c.codec.decode(&z0);
    Ok((z0, image))
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs the full editing pipeline: encode, invert to `T`, optimize the latent at every
/// `(t, k)` of the schedule while denoising down to `T'`, finish denoising, decode.
///
/// Reference features at each timestep come from the unedited latent at that timestep
/// (the denoising path of the inverted input without interventions).
pub fn pbsi_run<T: Scalar>(spec: &EditSpec, c: &Components<'_, T>, opts: &RunOptions<'_>) -> Result<RunResult<T>> {
    let start = Instant::now();
    let params = &spec.params;
    let schedule = params.schedule()?;
    let prep = prepare(spec, c, schedule.t)?;
    let lambda_m = T::of(params.lambda_m);
    let step_size = T::of(params.step_size);

    let mut cur = prep.z_t.clone();
    let mut reference = prep.z_t;
    let mut optimizer = Optimizer::new(params, cur.dims());
    let mut trace = Vec::with_capacity(schedule.len());
    let mut snapshots = Vec::new();
    let mut cancelled = false;

    'window: for t in (schedule.t_prime..=schedule.t).rev() {
        let ref_feat = c.extractor.apply(&reference, t);
        optimizer.reset();
        for k in 0..schedule.k {
            if opts.cancelled() {
                cancelled = true;
                break 'window;
            }
            let eta = geometry::eta(t, k, &schedule)?;
            let mut states = Vec::with_capacity(spec.instructions.len());
            let mut previews = Vec::new();
            for (i, inst) in spec.instructions.iter().enumerate() {
                let full = geometry::drag_state_at(inst, eta)?;
                if opts.rho_preview {
                    previews.push(encode_rle(&full.rho));
                }
                let fs = geometry::state_to_feature_grid(&full, prep.feature)?;
                states.push(IntermediateState {
                    rho: fs.rho,
                    pi: fs.pi,
                    instruction_index: i,
                    t,
                    k,
                });
            }
            let feat = c.extractor.apply(&cur, t);
            let (loss, cot) = lro_loss(&feat, &ref_feat, &states, &prep.m_feat, lambda_m)?;
            if !loss.is_finite() {
                return Err(LroError::NonFinite { t, k });
            }
            let grad = c.extractor.adjoint(&cot, t);
            optimizer.step(&mut cur.data, &grad, step_size);
            let loss = loss.f64();
            trace.push(TraceEntry { t, k, eta, loss });
            opts.emit(&RunEvent {
                session_id: opts.session_id.to_string(),
                t,
                k,
                loss,
                eta,
                elapsed_ms: elapsed_ms(start),
                rho_preview: opts.rho_preview.then_some(previews),
            });
        }
        if opts.snapshot_every > 0 && (schedule.t - t) % opts.snapshot_every == 0 {
            snapshots.push(cur.clone());
        }
        cur = diffusion::ddim_step(&cur, t, c.denoiser, c.noise)?;
        reference = diffusion::ddim_step(&reference, t, c.denoiser, c.noise)?;
    }
    tracing::debug!(events = trace.len(), cancelled, "PBSI window finished");
    let (latent, image) = finish(&cur, c)?;
    Ok(RunResult {
        image,
        latent,
        loss_trace: trace,
        snapshots,
        latency_ms: elapsed_ms(start),
        cancelled,
        tracked_paths: Vec::new(),
    })
}

/// Inversion to `T` followed by plain denoising: the pipeline with every optimizer step
/// removed.
pub fn frozen_run<T: Scalar>(spec: &EditSpec, c: &Components<'_, T>) -> Result<RunResult<T>> {
    let start = Instant::now();
    let depth = spec.params.inversion_depth();
    let prep = prepare(spec, c, depth)?;
    let (latent, image) = finish(&prep.z_t, c)?;
    Ok(RunResult {
        image,
        latent,
        loss_trace: Vec::new(),
        snapshots: Vec::new(),
        latency_ms: elapsed_ms(start),
        cancelled: false,
        tracked_paths: Vec::new(),
    })
}
