//! Noise schedule, deterministic DDIM sampling and inversion, denoiser and codec contracts.

use std::io::{Read, Write};

use image::RgbImage;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::{Dims, Grid};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("timestep {t} outside 0..={t_max} for this step")]
    Timestep { t: usize, t_max: usize },
    #[error("bad latent snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// Cumulative noise schedule `ᾱ_0 = 1 > ᾱ_1 > … > ᾱ_{t_max}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alphas: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Linear betas over `1..=t_max`; timestep 0 is noise-free.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(DiffusionError::Argument("t_max must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::Argument(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let mut betas = vec![0.0f64; t_max + 1];
        for (t, b) in betas.iter_mut().enumerate().skip(1) {
            *b = if t_max == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * (t - 1) as f64 / (t_max - 1) as f64
            };
        }
        let mut alphas = vec![1.0f64; t_max + 1];
        for t in 1..=t_max {
            alphas[t] = alphas[t - 1] * (1.0 - betas[t]);
        }
        Ok(Self {
            betas: betas.into_iter().map(T::of).collect(),
            alphas: alphas.into_iter().map(T::of).collect(),
        })
    }

    pub fn t_max(&self) -> usize {
        self.alphas.len() - 1
    }

    /// `ᾱ_t`.
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alphas[t]
    }

    pub fn beta(&self, t: usize) -> T {
        self.betas[t]
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }
}

/// Default schedule: 50 steps, betas from 1e-4 to 2e-2.
pub fn make_schedule<T: Scalar>(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule<T>> {
    NoiseSchedule::linear(t_max, beta_start, beta_end)
}

/// A latent grid tagged with the timestep it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub data: Grid<T>,
    pub timestep: usize,
}

impl<T: Scalar> LatentCode<T> {
    pub fn new(data: Grid<T>, timestep: usize) -> Self {
        Self { data, timestep }
    }

    pub fn dims(&self) -> Dims {
        self.data.dims()
    }

    pub fn is_finite(&self) -> bool {
        self.data.is_finite()
    }

    /// Writes the `LRO1` snapshot: 16-byte header (magic, H, W, C as u32 LE) then f32 LE values.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims();
        w.write_all(b"LRO1")?;
        for v in [d.height, d.width, d.channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in self.data.as_slice() {
            w.write_all(&(v.f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R, timestep: usize) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != b"LRO1" {
            return Err(DiffusionError::Snapshot("missing LRO1 magic".into()));
        }
        let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let dims = Dims::new(field(1), field(2), field(3));
        let mut bytes = vec![0u8; dims.len() * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Ok(Self::new(Grid::from_vec(dims, data), timestep))
    }
}

/// Noise predictor `ε(z, t, condition)`; must be deterministic.
pub trait Denoiser<T: Scalar>: Send + Sync {
    fn predict(&self, z: &LatentCode<T>, t: usize, condition: Option<&[u32]>) -> Grid<T>;
}

/// `ε ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl<T: Scalar> Denoiser<T> for ZeroDenoiser {
    fn predict(&self, z: &LatentCode<T>, _t: usize, _condition: Option<&[u32]>) -> Grid<T> {
        Grid::zeros(z.dims())
    }
}

/// `ε = γ·z`.
#[derive(Debug, Clone, Copy)]
pub struct LinearDenoiser {
    pub gamma: f64,
}

impl Default for LinearDenoiser {
    fn default() -> Self {
        Self { gamma: 0.05 }
    }
}

impl<T: Scalar> Denoiser<T> for LinearDenoiser {
    fn predict(&self, z: &LatentCode<T>, _t: usize, _condition: Option<&[u32]>) -> Grid<T> {
        let g = T::of(self.gamma);
        z.data.map(|v| g * v)
    }
}

/// `ε = γ·(z − blur(z))` with a separable `[1, 2, 1] / 4` blur, edges clamped.
#[derive(Debug, Clone, Copy)]
pub struct SmoothingDenoiser {
    pub gamma: f64,
}

impl Default for SmoothingDenoiser {
    fn default() -> Self {
        Self { gamma: 0.05 }
    }
}

fn binomial_blur<T: Scalar>(g: &Grid<T>) -> Grid<T> {
    let d = g.dims();
    let (h, w) = (d.height as isize, d.width as isize);
    let quarter = T::of(0.25);
    let half = T::of(0.5);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let horiz = Grid::from_fn(d, |y, x, c| {
        let x = x as isize;
        quarter * g.get(y, clamp(x - 1, w), c) + half * g.get(y, x as usize, c) + quarter * g.get(y, clamp(x + 1, w), c)
    });
    Grid::from_fn(d, |y, x, c| {
        let y = y as isize;
        quarter * horiz.get(clamp(y - 1, h), x, c) + half * horiz.get(y as usize, x, c) + quarter * horiz.get(clamp(y + 1, h), x, c)
    })
}

impl<T: Scalar> Denoiser<T> for SmoothingDenoiser {
    fn predict(&self, z: &LatentCode<T>, _t: usize, _condition: Option<&[u32]>) -> Grid<T> {
        let g = T::of(self.gamma);
        z.data.zip_map(&binomial_blur(&z.data), |a, b| g * (a - b))
    }
}

/// Image ↔ latent mapping.
pub trait Codec<T: Scalar>: Send + Sync {
    fn latent_dims(&self, width: usize, height: usize) -> Dims;
    fn encode(&self, image: &RgbImage) -> LatentCode<T>;
    fn decode(&self, z: &LatentCode<T>) -> RgbImage;
}

#[inline]
fn to_unit<T: Scalar>(v: u8) -> T {
    T::of(v as f64 / 127.5 - 1.0)
}

#[inline]
fn from_unit<T: Scalar>(v: T) -> u8 {
    ((v.f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Latent = image rescaled to `[−1, 1]`, three channels at full resolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl<T: Scalar> Codec<T> for IdentityCodec {
    fn latent_dims(&self, width: usize, height: usize) -> Dims {
        Dims::new(height, width, 3)
    }

    fn encode(&self, image: &RgbImage) -> LatentCode<T> {
        let dims = <Self as Codec<T>>::latent_dims(self, image.width() as usize, image.height() as usize);
        let data = Grid::from_fn(dims, |y, x, c| to_unit(image.get_pixel(x as u32, y as u32).0[c]));
        LatentCode::new(data, 0)
    }

    fn decode(&self, z: &LatentCode<T>) -> RgbImage {
        let d = z.dims();
        RgbImage::from_fn(d.width as u32, d.height as u32, |x, y| {
            let p = z.data.pixel(y as usize, x as usize);
            image::Rgb([from_unit(p[0]), from_unit(p[1]), from_unit(p[2])])
        })
    }
}

/// 2×2 average-pool encoder with a bilinear decoder; the latent is `ceil(dims / 2)`.
///
/// Decoding needs the output size, which is the latent size doubled (odd source
/// sizes come back one pixel larger unless [`PoolCodec::with_output`] fixes it).
#[derive(Debug, Clone, Copy, Default)]
pub struct PoolCodec {
    output: Option<(usize, usize)>,
}

impl PoolCodec {
    pub fn with_output(width: usize, height: usize) -> Self {
        Self {
            output: Some((width, height)),
        }
    }
}

impl<T: Scalar> Codec<T> for PoolCodec {
    fn latent_dims(&self, width: usize, height: usize) -> Dims {
        Dims::new(height.div_ceil(2), width.div_ceil(2), 3)
    }

    fn encode(&self, image: &RgbImage) -> LatentCode<T> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let dims = <Self as Codec<T>>::latent_dims(self, w, h);
        let data = Grid::from_fn(dims, |y, x, c| {
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in 2 * y..(2 * y + 2).min(h) {
                for xx in 2 * x..(2 * x + 2).min(w) {
                    sum += image.get_pixel(xx as u32, yy as u32).0[c] as f64 / 127.5 - 1.0;
                    n += 1.0;
                }
            }
            T::of(sum / n)
        });
        LatentCode::new(data, 0)
    }

    fn decode(&self, z: &LatentCode<T>) -> RgbImage {
        let d = z.dims();
        let (w, h) = self.output.unwrap_or((2 * d.width, 2 * d.height));
        let sample = |pos: f64, n: usize| -> (usize, usize, f64) {
            // half-pixel centers, clamped at the borders
            let s = ((pos + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        };
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x0, x1, fx) = sample(x as f64, d.width);
            let (y0, y1, fy) = sample(y as f64, d.height);
            let mut px = [0u8; 3];
            for (c, out) in px.iter_mut().enumerate() {
                let v = (1.0 - fy) * ((1.0 - fx) * z.data.get(y0, x0, c).f64() + fx * z.data.get(y0, x1, c).f64())
                    + fy * ((1.0 - fx) * z.data.get(y1, x0, c).f64() + fx * z.data.get(y1, x1, c).f64());
                *out = from_unit(T::of(v));
            }
            image::Rgb(px)
        })
    }
}

fn check_denoise(t: usize, s_max: usize) -> Result<()> {
    if t == 0 || t > s_max {
        return Err(DiffusionError::Timestep { t, t_max: s_max });
    }
    Ok(())
}

/// One deterministic DDIM step `z_t → z_{t−1}`.
pub fn ddim_step<T: Scalar>(
    z: &LatentCode<T>,
    t: usize,
    denoiser: &dyn Denoiser<T>,
    schedule: &NoiseSchedule<T>,
) -> Result<LatentCode<T>> {
    check_denoise(t, schedule.t_max())?;
    let eps = denoiser.predict(z, t, None);
    let a_t = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t - 1);
    let one = T::one();
    let scale = (a_prev / a_t).sqrt();
    let eps_coeff = (one - a_prev).sqrt() - scale * (one - a_t).sqrt();
    let data = z.data.zip_map(&eps, |zv, ev| scale * zv + eps_coeff * ev);
    Ok(LatentCode::new(data, t - 1))
}

/// DDIM step with `σ_t = η·√((1−ᾱ_{t−1})/(1−ᾱ_t))·√(1−ᾱ_t/ᾱ_{t−1})` fresh noise.
/// Not used by the editing pipeline, which needs an invertible sampler.
pub fn ddim_step_stochastic<T: Scalar, R: Rng + ?Sized>(
    z: &LatentCode<T>,
    t: usize,
    denoiser: &dyn Denoiser<T>,
    schedule: &NoiseSchedule<T>,
    eta: f64,
    rng: &mut R,
) -> Result<LatentCode<T>> {
    check_denoise(t, schedule.t_max())?;
    let eps = denoiser.predict(z, t, None);
    let a_t = schedule.alpha_bar(t).f64();
    let a_prev = schedule.alpha_bar(t - 1).f64();
    let sigma = eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt();
    let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
    let values = z
        .data
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(zv, ev)| {
            let x0 = (zv.f64() - (1.0 - a_t).sqrt() * ev.f64()) / a_t.sqrt();
            let noise: f64 = rng.sample(StandardNormal);
            T::of(a_prev.sqrt() * x0 + dir * ev.f64() + sigma * noise)
        })
        .collect();
    Ok(LatentCode::new(Grid::from_vec(z.dims(), values), t - 1))
}

/// One DDIM inversion step `z_t → z_{t+1}` with `ε` evaluated at `(z_t, t)`.
pub fn ddim_invert_step<T: Scalar>(
    z: &LatentCode<T>,
    t: usize,
    denoiser: &dyn Denoiser<T>,
    schedule: &NoiseSchedule<T>,
) -> Result<LatentCode<T>> {
    if t >= schedule.t_max() {
        return Err(DiffusionError::Timestep {
            t,
            t_max: schedule.t_max(),
        });
    }
    let eps = denoiser.predict(z, t, None);
    let a_t = schedule.alpha_bar(t);
    let a_next = schedule.alpha_bar(t + 1);
    let one = T::one();
    let scale = (a_next / a_t).sqrt();
    let eps_coeff = (one - a_next).sqrt() - scale * (one - a_t).sqrt();
    let data = z.data.zip_map(&eps, |zv, ev| scale * zv + eps_coeff * ev);
    Ok(LatentCode::new(data, t + 1))
}

/// Inverts `z0` up to timestep `depth`, returning `[z_1, …, z_depth]`.
pub fn invert<T: Scalar>(
    z0: &LatentCode<T>,
    depth: usize,
    denoiser: &dyn Denoiser<T>,
    schedule: &NoiseSchedule<T>,
) -> Result<Vec<LatentCode<T>>> {
    if depth > schedule.t_max() {
        return Err(DiffusionError::Timestep {
            t: depth,
            t_max: schedule.t_max(),
        });
    }
    let mut out: Vec<LatentCode<T>> = Vec::with_capacity(depth);
    for t in 0..depth {
        let prev = out.last().unwrap_or(z0);
        let next = ddim_invert_step(prev, t, denoiser, schedule)?;
        out.push(next);
    }
    Ok(out)
}

/// Denoises from `from_t` down to `to_t`.
pub fn sample<T: Scalar>(
    z: &LatentCode<T>,
    from_t: usize,
    to_t: usize,
    denoiser: &dyn Denoiser<T>,
    schedule: &NoiseSchedule<T>,
) -> Result<LatentCode<T>> {
    if to_t > from_t {
        return Err(DiffusionError::Argument(format!("cannot sample upward from {from_t} to {to_t}")));
    }
    let mut cur = LatentCode::new(z.data.clone(), from_t);
    for t in (to_t + 1..=from_t).rev() {
        cur = ddim_step(&cur, t, denoiser, schedule)?;
    }
    Ok(cur)
}
