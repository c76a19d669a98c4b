//! Central finite-difference checks of the LRO and motion-supervision gradients
//! through the pyramid extractor on a 16×16 latent.

use lro_core::baseline::{motion_loss, motion_pairs};
use lro_core::diffusion::LatentCode;
use lro_core::features::{Extractor, PyramidExtractor};
use lro_core::geometry::{translate_region, BinaryMask, Pixel, Point};
use lro_core::grid::{Dims, Grid};
use lro_core::lro::{lro_loss, warp_reference, IntermediateState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const H: f64 = 1e-5;
pub const MIN_RESIDUAL: f64 = 1e-3;
pub const COORDINATES: usize = 20;
const T: usize = 20;

#[derive(Debug)]
pub struct Report {
    pub max_relative_error: f64,
    pub checked: usize,
    pub admissible: usize,
}

fn normal_grid(dims: Dims, rng: &mut ChaCha8Rng) -> Grid<f64> {
    Grid::from_fn(dims, |_, _, _| StandardNormal.sample(rng))
}

/// Feature entry indices and the value each is compared against.
type Residuals = Vec<(usize, f64)>;

fn flat(dims: Dims, p: Pixel, c: usize) -> usize {
    (p.y * dims.width + p.x) * dims.channels + c
}

struct Problem {
    extractor: PyramidExtractor<f64>,
    z: Grid<f64>,
}

impl Problem {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let latent = Dims::new(16, 16, 3);
        Self {
            extractor: PyramidExtractor::new(latent, (8, 8)),
            z: normal_grid(latent, rng),
        }
    }

    fn features(&self, z: &Grid<f64>) -> Grid<f64> {
        self.extractor.apply(&LatentCode::new(z.clone(), T), T)
    }

    fn check(
        &self,
        rng: &mut ChaCha8Rng,
        residuals: &Residuals,
        loss: impl Fn(&Grid<f64>) -> (f64, Grid<f64>),
    ) -> Report {
        let cur = self.features(&self.z);
        let mut bad = vec![false; cur.as_slice().len()];
        for &(i, target) in residuals {
            if (cur.as_slice()[i] - target).abs() <= MIN_RESIDUAL {
                bad[i] = true;
            }
        }
        let n = self.z.as_slice().len();
        let mut admissible: Vec<usize> = (0..n)
            .filter(|&j| {
                let mut e = Grid::zeros(self.z.dims());
                e.as_mut_slice()[j] = 1.0;
                let col = self.features(&e);
                col.as_slice().iter().zip(&bad).all(|(&v, &b)| v == 0.0 || !b)
            })
            .collect();
        let count = admissible.len();
        admissible.shuffle(rng);
        let (_, grad) = loss(&self.z);
        let mut worst: f64 = 0.0;
        for &j in admissible.iter().take(COORDINATES) {
            let mut plus = self.z.clone();
            plus.as_mut_slice()[j] += H;
            let mut minus = self.z.clone();
            minus.as_mut_slice()[j] -= H;
            let fd = (loss(&plus).0 - loss(&minus).0) / (2.0 * H);
            let g = grad.as_slice()[j];
            worst = worst.max((fd - g).abs() / g.abs().max(fd.abs()));
        }
        Report {
            max_relative_error: worst,
            checked: admissible.len().min(COORDINATES),
            admissible: count,
        }
    }
}

fn editable_mask(dims: Dims) -> BinaryMask {
    BinaryMask::from_fn(dims.width, dims.height, |x, y| x == 0 || y == 7)
}

/// Translation of a 3×3 handle block by (2, 1) feature cells plus `λ_M = 1`.
pub fn lro(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Problem::new(&mut rng);
    let fd = p.extractor.feature_dims();
    let reference = normal_grid(fd, &mut rng);
    let handle = BinaryMask::from_fn(8, 8, |x, y| (1..4).contains(&x) && (2..5).contains(&y));
    let (rho, pi) = translate_region(&handle, (2.0, 1.0)).unwrap();
    let state = IntermediateState { rho, pi, instruction_index: 0, t: T, k: 0 };
    let m = editable_mask(fd);
    let warped = warp_reference(&reference, &state).unwrap();
    let mut residuals = Residuals::new();
    for q in state.rho.pixels() {
        residuals.extend((0..fd.channels).map(|c| (flat(fd, q, c), warped.pixel(q.y, q.x)[c])));
    }
    for q in m.pixels() {
        residuals.extend((0..fd.channels).map(|c| (flat(fd, q, c), reference.pixel(q.y, q.x)[c])));
    }
    p.check(&mut rng, &residuals, |z| {
        let (l, cot) = lro_loss(&p.features(z), &reference, std::slice::from_ref(&state), &m, 1.0).unwrap();
        (l, p.extractor.adjoint(&cot, T))
    })
}

/// Two handle points dragged in different directions, detached features held fixed.
pub fn baseline(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Problem::new(&mut rng);
    let fd = p.extractor.feature_dims();
    let reference = normal_grid(fd, &mut rng);
    let detached = p.features(&normal_grid(p.z.dims(), &mut rng));
    let points = [Pixel::new(2, 2), Pixel::new(5, 4)];
    let targets = [Point::new(5.0, 3.0), Point::new(4.0, 7.0)];
    let m = editable_mask(fd);
    let mut residuals = Residuals::new();
    for (q, qd) in motion_pairs(&points, &targets, 1, fd.width, fd.height) {
        residuals.extend((0..fd.channels).map(|c| (flat(fd, qd, c), detached.pixel(q.y, q.x)[c])));
    }
    for q in m.pixels() {
        residuals.extend((0..fd.channels).map(|c| (flat(fd, q, c), reference.pixel(q.y, q.x)[c])));
    }
    p.check(&mut rng, &residuals, |z| {
        let (l, cot) = motion_loss(&p.features(z), &detached, &reference, &points, &targets, 1, &m, 1.0);
        (l, p.extractor.adjoint(&cot, T))
    })
}
