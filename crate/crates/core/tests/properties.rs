use lro_core::diffusion::{invert, make_schedule, sample, LatentCode, ZeroDenoiser};
use lro_core::features::{Extractor, IdentityExtractor, PyramidExtractor};
use lro_core::geometry::{eta, rotate_region, translate_region, BinaryMask, DragState, Point, Schedule};
use lro_core::grid::{Dims, Grid};
use lro_core::instruction::{decode_rle, encode_rle};
use lro_core::lro::{lro_loss, IntermediateState};
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<bool>(), w * h)
            .prop_map(move |bits| BinaryMask::from_fn(w, h, |x, y| bits[y * w + x]))
    })
}

fn nonempty_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    mask_strategy(max).prop_filter("non-empty", |m| !m.is_empty())
}

fn grid_from(dims: Dims, seed: u64) -> Grid<f64> {
    // small LCG; values in [-1, 1)
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Grid::from_fn(dims, |_, _, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

fn dot(a: &Grid<f64>, b: &Grid<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn eta_starts_at_zero_and_increases(t_prime in 0usize..40, span in 1usize..20, k in 1usize..15) {
        let s = Schedule::new(t_prime + span, t_prime, k).unwrap();
        let values: Vec<f64> = s.steps().map(|(t, k)| eta(t, k, &s).unwrap()).collect();
        prop_assert_eq!(values.len(), s.len());
        prop_assert_eq!(values[0], 0.0);
        prop_assert!(values.windows(2).all(|w| w[0] < w[1]));
        let last = *values.last().unwrap();
        prop_assert!((last - (1.0 - 1.0 / s.len() as f64)).abs() < 1e-15);
    }

    #[test]
    fn integer_translation_shifts_every_pixel(mask in nonempty_mask(12), dx in -6i64..=6, dy in -6i64..=6) {
        match translate_region(&mask, (dx as f64, dy as f64)) {
            Ok((rho, pi)) => {
                let (w, h) = mask.dims();
                let expected = BinaryMask::from_fn(w, h, |x, y| mask.contains(x as i64 - dx, y as i64 - dy));
                prop_assert_eq!(&rho, &expected);
                prop_assert_eq!(pi.len(), rho.count());
                for (q, p) in pi.iter() {
                    prop_assert_eq!((q.x as i64 - dx, q.y as i64 - dy), (p.x as i64, p.y as i64));
                }
            }
            Err(_) => {
                let (w, h) = mask.dims();
                let off_grid = |p: lro_core::geometry::Pixel| {
                    let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
                    x < 0 || y < 0 || x >= w as i64 || y >= h as i64
                };
                prop_assert!(mask.pixels().all(off_grid));
            }
        }
    }

    #[test]
    fn rotation_maps_are_total_and_point_into_the_handle(
        mask in nonempty_mask(12),
        cx in 0.0f64..12.0,
        cy in 0.0f64..12.0,
        angle in -3.2f64..3.2,
    ) {
        if let Ok((rho, pi)) = rotate_region(&mask, Point::new(cx, cy), angle) {
            prop_assert!(pi.check(&rho, &mask).is_ok());
        }
    }

    #[test]
    fn zero_rotation_is_identity(mask in nonempty_mask(12), cx in 0.0f64..12.0, cy in 0.0f64..12.0) {
        let (rho, pi) = rotate_region(&mask, Point::new(cx, cy), 0.0).unwrap();
        prop_assert_eq!(&rho, &mask);
        prop_assert!(pi.iter().all(|(q, p)| q == p));
    }

    #[test]
    fn rle_round_trips(mask in mask_strategy(20)) {
        prop_assert_eq!(decode_rle(&encode_rle(&mask)).unwrap(), mask);
    }

    #[test]
    fn extractor_adjoints_match(h in 2usize..14, w in 2usize..14, c in 1usize..4, seed in any::<u64>()) {
        let latent = Dims::new(h, w, c);
        let feature = (h.div_ceil(2), w.div_ceil(2));
        let extractors: [Box<dyn Extractor<f64>>; 2] = [
            Box::new(IdentityExtractor::new(latent, feature)),
            Box::new(PyramidExtractor::new(latent, feature)),
        ];
        for e in &extractors {
            let z = LatentCode::new(grid_from(latent, seed), 10);
            let u = grid_from(e.feature_dims(), seed ^ 0x9e37);
            let lhs = dot(&e.apply(&z, 10), &u);
            let rhs = dot(&z.data, &e.adjoint(&u, 10));
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn ddim_round_trip_with_zero_denoiser(h in 1usize..8, w in 1usize..8, depth in 1usize..50, seed in any::<u64>()) {
        let noise = make_schedule::<f64>(50, 1e-4, 2e-2).unwrap();
        let z0 = LatentCode::new(grid_from(Dims::new(h, w, 3), seed), 0);
        let zt = invert(&z0, depth, &ZeroDenoiser, &noise).unwrap().pop().unwrap();
        let back = sample(&zt, depth, 0, &ZeroDenoiser, &noise).unwrap();
        let err = back.data.as_slice().iter().zip(z0.data.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_on_identity(mask in nonempty_mask(8), seed in any::<u64>(), lambda in 0.0f64..3.0) {
        let (w, h) = mask.dims();
        let dims = Dims::new(h, w, 2);
        let reference = grid_from(dims, seed);
        let id = DragState::identity(&mask);
        let state = IntermediateState { rho: id.rho, pi: id.pi, instruction_index: 0, t: 1, k: 0 };
        let m = mask.invert();
        let (zero, grad) = lro_loss(&reference, &reference, std::slice::from_ref(&state), &m, lambda).unwrap();
        prop_assert_eq!(zero, 0.0);
        prop_assert!(grad.as_slice().iter().all(|&g| g == 0.0));
        let cur = grid_from(dims, seed.wrapping_add(1));
        let (loss, _) = lro_loss(&cur, &reference, std::slice::from_ref(&state), &m, lambda).unwrap();
        prop_assert!(loss >= 0.0);
    }
}
