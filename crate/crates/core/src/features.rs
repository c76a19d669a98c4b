//! Linear feature extractors with exact adjoints.
//!
//! Every extractor is a composition of separable 1D operators (area or
//! bilinear resampling onto the feature grid, Gaussian blur with reflective
//! borders), so the adjoint is assembled from the transposed 1D operators and
//! matches `apply` to rounding error.

use thiserror::Error;

use crate::diffusion::LatentCode;
use crate::grid::{Dims, Grid};
use crate::scalar::Scalar;

/// Features live on a grid of half the image resolution.
pub type FeatureMap<T> = Grid<T>;

pub const PYRAMID_SIGMAS: [f64; 4] = [0.0, 1.0, 2.0, 4.0];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Dims, got: Dims },
}

/// Sparse `n_out × n_in` matrix acting along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisOperator<T> {
    n_in: usize,
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> AxisOperator<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            n_in: n,
            rows: (0..n).map(|i| vec![(i, T::one())]).collect(),
        }
    }

    /// Area averaging when shrinking, bilinear (half-pixel centers, clamped) when growing.
    pub fn resample(n_in: usize, n_out: usize) -> Self {
        assert!(n_in > 0 && n_out > 0);
        if n_in == n_out {
            return Self::identity(n_in);
        }
        let rows = if n_out < n_in {
            let ratio = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|i| {
                    let (lo, hi) = (i as f64 * ratio, (i + 1) as f64 * ratio);
                    (lo.floor() as usize..(hi.ceil() as usize).min(n_in))
                        .filter_map(|j| {
                            let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                            (overlap > 0.0).then(|| (j, T::of(overlap / ratio)))
                        })
                        .collect()
                })
                .collect()
        } else {
            let ratio = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|i| {
                    let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let j0 = s.floor() as usize;
                    let f = s - j0 as f64;
                    if f == 0.0 || j0 + 1 >= n_in {
                        vec![(j0, T::one())]
                    } else {
                        vec![(j0, T::of(1.0 - f)), (j0 + 1, T::of(f))]
                    }
                })
                .collect()
        };
        Self { n_in, rows }
    }

    /// Normalized Gaussian of standard deviation `sigma` (radius `ceil(3σ)`), mirrored at
    /// the borders without repeating the edge sample. `sigma = 0` is the identity.
    pub fn gaussian(n: usize, sigma: f64) -> Self {
        if sigma == 0.0 || n == 1 {
            return Self::identity(n);
        }
        let weights = gaussian_kernel(sigma);
        let radius = (weights.len() / 2) as i64;
        let period = 2 * (n as i64 - 1);
        let reflect = |i: i64| -> usize {
            let m = i.rem_euclid(period);
            (if m < n as i64 { m } else { period - m }) as usize
        };
        let rows = (0..n as i64)
            .map(|i| {
                let mut row: Vec<(usize, T)> = Vec::new();
                for (k, &w) in weights.iter().enumerate() {
                    let j = reflect(i + k as i64 - radius);
                    match row.iter_mut().find(|(c, _)| *c == j) {
                        Some(e) => e.1 += T::of(w),
                        None => row.push((j, T::of(w))),
                    }
                }
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();
        Self { n_in: n, rows }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.rows.len()
    }

    /// Dense `n_out × n_in` matrix.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut m = vec![vec![T::zero(); self.n_in]; self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[i][j] += w;
            }
        }
        m
    }
}

/// Normalized kernel taps `w[-r..=r]` with `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|w| w / sum).collect()
}

/// `out[y', x', c] = Σ ry[y', y] · rx[x', x] · g[y, x, c]`.
fn separable<T: Scalar>(g: &Grid<T>, ry: &AxisOperator<T>, rx: &AxisOperator<T>) -> Grid<T> {
    let d = g.dims();
    debug_assert_eq!((d.height, d.width), (ry.n_in, rx.n_in));
    let mid_dims = Dims::new(d.height, rx.n_out(), d.channels);
    let mut mid = Grid::zeros(mid_dims);
    for y in 0..d.height {
        for (xo, row) in rx.rows.iter().enumerate() {
            let out = mid.offset(y, xo, 0);
            for &(xi, w) in row {
                let src = g.offset(y, xi, 0);
                for c in 0..d.channels {
                    let v = g.as_slice()[src + c];
                    mid.as_mut_slice()[out + c] += w * v;
                }
            }
        }
    }
    let mut out = Grid::zeros(Dims::new(ry.n_out(), rx.n_out(), d.channels));
    let row_len = rx.n_out() * d.channels;
    for (yo, row) in ry.rows.iter().enumerate() {
        for &(yi, w) in row {
            let src = yi * row_len;
            let dst = yo * row_len;
            for i in 0..row_len {
                let v = mid.as_slice()[src + i];
                out.as_mut_slice()[dst + i] += w * v;
            }
        }
    }
    out
}

/// Transpose of [`separable`]: `out[y, x, c] = Σ ry[y', y] · rx[x', x] · g[y', x', c]`.
fn separable_transpose<T: Scalar>(g: &Grid<T>, ry: &AxisOperator<T>, rx: &AxisOperator<T>) -> Grid<T> {
    let d = g.dims();
    debug_assert_eq!((d.height, d.width), (ry.n_out(), rx.n_out()));
    let row_len = d.width * d.channels;
    let mut mid = Grid::zeros(Dims::new(ry.n_in, d.width, d.channels));
    for (yo, row) in ry.rows.iter().enumerate() {
        for &(yi, w) in row {
            let src = yo * row_len;
            let dst = yi * row_len;
            for i in 0..row_len {
                let v = g.as_slice()[src + i];
                mid.as_mut_slice()[dst + i] += w * v;
            }
        }
    }
    let mut out = Grid::zeros(Dims::new(ry.n_in, rx.n_in, d.channels));
    for y in 0..ry.n_in {
        for (xo, row) in rx.rows.iter().enumerate() {
            let src = mid.offset(y, xo, 0);
            for &(xi, w) in row {
                let dst = out.offset(y, xi, 0);
                for c in 0..d.channels {
                    let v = mid.as_slice()[src + c];
                    out.as_mut_slice()[dst + c] += w * v;
                }
            }
        }
    }
    out
}

/// Feature extractor `F(z, t)` together with its adjoint.
pub trait Extractor<T: Scalar>: Send + Sync {
    fn latent_dims(&self) -> Dims;
    fn feature_dims(&self) -> Dims;
    fn apply(&self, z: &LatentCode<T>, t: usize) -> FeatureMap<T>;
    /// Pulls a feature-space cotangent back to latent space.
    fn adjoint(&self, u: &FeatureMap<T>, t: usize) -> Grid<T>;
}

/// Resamples the latent onto the feature grid.
#[derive(Debug, Clone)]
pub struct IdentityExtractor<T> {
    latent: Dims,
    feature: Dims,
    ry: AxisOperator<T>,
    rx: AxisOperator<T>,
}

impl<T: Scalar> IdentityExtractor<T> {
    /// `feature` is `(height, width)` of the feature grid.
    pub fn new(latent: Dims, feature: (usize, usize)) -> Self {
        Self {
            latent,
            feature: Dims::new(feature.0, feature.1, latent.channels),
            ry: AxisOperator::resample(latent.height, feature.0),
            rx: AxisOperator::resample(latent.width, feature.1),
        }
    }

    fn resample(&self, z: &Grid<T>) -> Grid<T> {
        separable(z, &self.ry, &self.rx)
    }

    fn resample_transpose(&self, u: &Grid<T>) -> Grid<T> {
        separable_transpose(u, &self.ry, &self.rx)
    }
}

impl<T: Scalar> Extractor<T> for IdentityExtractor<T> {
    fn latent_dims(&self) -> Dims {
        self.latent
    }

    fn feature_dims(&self) -> Dims {
        self.feature
    }

    fn apply(&self, z: &LatentCode<T>, _t: usize) -> FeatureMap<T> {
        assert_eq!(z.dims(), self.latent, "latent dims mismatch");
        self.resample(&z.data)
    }

    fn adjoint(&self, u: &FeatureMap<T>, _t: usize) -> Grid<T> {
        assert_eq!(u.dims(), self.feature, "feature dims mismatch");
        self.resample_transpose(u)
    }
}

/// Channel concatenation of the resampled latent blurred at each of [`PYRAMID_SIGMAS`].
/// Block `b` holds channels `b·C .. (b+1)·C`.
#[derive(Debug, Clone)]
pub struct PyramidExtractor<T> {
    base: IdentityExtractor<T>,
    blurs: Vec<(AxisOperator<T>, AxisOperator<T>)>,
}

impl<T: Scalar> PyramidExtractor<T> {
    pub fn new(latent: Dims, feature: (usize, usize)) -> Self {
        Self::with_sigmas(latent, feature, &PYRAMID_SIGMAS)
    }

    pub fn with_sigmas(latent: Dims, feature: (usize, usize), sigmas: &[f64]) -> Self {
        Self {
            base: IdentityExtractor::new(latent, feature),
            blurs: sigmas
                .iter()
                .map(|&s| (AxisOperator::gaussian(feature.0, s), AxisOperator::gaussian(feature.1, s)))
                .collect(),
        }
    }

    pub fn blocks(&self) -> usize {
        self.blurs.len()
    }
}

impl<T: Scalar> Extractor<T> for PyramidExtractor<T> {
    fn latent_dims(&self) -> Dims {
        self.base.latent
    }

    fn feature_dims(&self) -> Dims {
        let f = self.base.feature;
        Dims::new(f.height, f.width, f.channels * self.blurs.len())
    }

    fn apply(&self, z: &LatentCode<T>, t: usize) -> FeatureMap<T> {
        let base = self.base.apply(z, t);
        let c = base.channels();
        let mut out = Grid::zeros(self.feature_dims());
        let cf = out.channels();
        for (b, (ry, rx)) in self.blurs.iter().enumerate() {
            let blurred = separable(&base, ry, rx);
            for (px, src) in blurred.as_slice().chunks_exact(c).enumerate() {
                out.as_mut_slice()[px * cf + b * c..px * cf + (b + 1) * c].copy_from_slice(src);
            }
        }
        out
    }

    fn adjoint(&self, u: &FeatureMap<T>, t: usize) -> Grid<T> {
        assert_eq!(u.dims(), self.feature_dims(), "feature dims mismatch");
        let base_dims = self.base.feature;
        let c = base_dims.channels;
        let cf = u.channels();
        let mut acc = Grid::zeros(base_dims);
        for (b, (ry, rx)) in self.blurs.iter().enumerate() {
            let mut block = Grid::zeros(base_dims);
            for (px, dst) in block.as_mut_slice().chunks_exact_mut(c).enumerate() {
                dst.copy_from_slice(&u.as_slice()[px * cf + b * c..px * cf + (b + 1) * c]);
            }
            acc.axpy(T::one(), &separable_transpose(&block, ry, rx));
        }
        self.base.adjoint(&acc, t)
    }
}

/// L1 distance `Σ w ⊙ |F(z) − target|` and its subgradient with respect to `z`
/// (`sign(0) = 0`). `weight` has the feature shape.
pub fn vjp_of_l1<T: Scalar>(
    extractor: &dyn Extractor<T>,
    z: &LatentCode<T>,
    t: usize,
    target: &FeatureMap<T>,
    weight: &FeatureMap<T>,
) -> Result<(T, Grid<T>), FeatureError> {
    let fd = extractor.feature_dims();
    for g in [target, weight] {
        if g.dims() != fd {
            return Err(FeatureError::Shape {
                expected: fd,
                got: g.dims(),
            });
        }
    }
    if z.dims() != extractor.latent_dims() {
        return Err(FeatureError::Shape {
            expected: extractor.latent_dims(),
            got: z.dims(),
        });
    }
    let f = extractor.apply(z, t);
    let mut loss = T::zero();
    let cot = Grid::from_vec(
        fd,
        f.as_slice()
            .iter()
            .zip(target.as_slice())
            .zip(weight.as_slice())
            .map(|((&a, &b), &w)| {
                let r = a - b;
                loss += w * r.abs();
                w * r.sign0()
            })
            .collect(),
    );
    Ok((loss, extractor.adjoint(&cot, t)))
}
