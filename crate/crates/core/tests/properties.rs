use cgsense::coils::{prewhiten, NoiseModel, SensitivitySet};
use cgsense::data::{crop_centered, pad_centered, GridGeometry, KSpaceDataset, Undersampling};
use cgsense::filter::{filter_weights, CutoffUnit, FilterSpec};
use cgsense::metrics::{nrmse, quantile, quantile_normalize, ssim};
use cgsense::nufft::{fft_centered, ifft_centered, GriddingKernel, Nufft};
use cgsense::C64;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn complex_array3(shape: (usize, usize, usize)) -> impl Strategy<Value = Array3<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), shape.0 * shape.1 * shape.2)
        .prop_map(move |v| Array3::from_shape_vec(shape, v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap())
}

fn complex_image(n: usize) -> impl Strategy<Value = Array2<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n)
        .prop_map(move |v| Array2::from_shape_vec((n, n), v.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap())
}

fn positive_image(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.01f64..10.0, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn intensity_is_the_coil_norm(maps in complex_array3((3, 6, 6))) {
        let sens = SensitivitySet::from_maps(maps.clone(), 0.0).unwrap();
        for ((r, c), &i) in sens.intensity.indexed_iter() {
            let sum: f64 = (0..3).map(|k| maps[[k, r, c]].norm_sqr()).sum();
            prop_assert!((i * i - sum).abs() <= 1e-12 * sum.max(1.0));
        }
    }

    #[test]
    fn identity_whitening_is_a_no_op(samples in complex_array3((3, 4, 8))) {
        let traj = Array3::zeros((2, 4, 8));
        let ds = KSpaceDataset::new(samples.clone(), traj);
        let once = prewhiten(&ds, &NoiseModel::identity(3)).unwrap();
        let twice = prewhiten(&once, &NoiseModel::identity(3)).unwrap();
        prop_assert_eq!(&once.samples, &samples);
        prop_assert_eq!(&twice.samples, &samples);
    }

    #[test]
    fn self_comparison_is_perfect(x in positive_image(16)) {
        prop_assert_eq!(nrmse(x.view(), x.view(), None).unwrap(), 0.0);
        prop_assert!((ssim(x.view(), x.view(), None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_normalization_pins_the_level(x in positive_image(12), q in 0.05f64..1.0) {
        let y = quantile_normalize(x.view(), q).unwrap();
        let level = quantile(y.as_slice().unwrap(), q).unwrap();
        prop_assert!((level - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nrmse_is_scale_free(x in positive_image(8), scale in 0.1f64..10.0) {
        let r = x.mapv(|v| v * 1.3 + 0.2);
        let a = nrmse(x.view(), r.view(), None).unwrap();
        let b = nrmse(x.mapv(|v| v * scale).view(), r.mapv(|v| v * scale).view(), None).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn filters_stay_in_unit_range(cutoff in 1.0f64..20.0, beta in 1.0f64..500.0) {
        for spec in [FilterSpec::arctan(cutoff, CutoffUnit::Cells, beta), FilterSpec::hard_circle(cutoff, CutoffUnit::Cells)] {
            let w = filter_weights(&spec, 32).unwrap();
            prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(w[[16, 16]] > 0.5);
        }
    }

    #[test]
    fn crop_undoes_pad(x in complex_image(6), extra in 0usize..5) {
        let m = 6 + 2 * extra;
        let padded = pad_centered(x.view(), m, m).unwrap();
        prop_assert_eq!(crop_centered(padded.view(), 6, 6).unwrap(), x);
    }

    #[test]
    fn centered_fft_round_trips(x in complex_image(8)) {
        let back = ifft_centered(fft_centered(x.view()).unwrap().view()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn skip_schemes_take_every_rth_spoke(spokes in 1usize..200, r in 1usize..8) {
        let idx = Undersampling::SkipEvery(r).spoke_indices(spokes).unwrap();
        prop_assert_eq!(idx.len(), spokes.div_ceil(r));
        prop_assert!(idx.iter().all(|&i| i % r == 0 && i < spokes));
    }

    #[test]
    fn nufft_pair_is_adjoint(
        points in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
        seed in any::<u64>(),
    ) {
        let n = 16;
        let kx = Array2::from_shape_vec((1, points.len()), points.iter().map(|p| p.0).collect()).unwrap();
        let ky = Array2::from_shape_vec((1, points.len()), points.iter().map(|p| p.1).collect()).unwrap();
        let geometry = GridGeometry::new(n, 2.0).unwrap();
        let kernel = GriddingKernel::kaiser_bessel(4, 2_000, 2.0).unwrap();
        let op = Nufft::new(kx.view(), ky.view(), &kernel, geometry).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || rng.random::<f64>() - 0.5;
        let x = Array2::from_shape_fn((n, n), |_| C64::new(next(), next()));
        let y = Array2::from_shape_fn(kx.dim(), |_| C64::new(next(), next()));
        let ex = op.forward(x.view()).unwrap();
        let ehy = op.adjoint(y.view()).unwrap();
        let lhs: C64 = ex.iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
        let rhs: C64 = x.iter().zip(&ehy).map(|(a, b)| a.conj() * b).sum();
        let scale = ex.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() * y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * scale.max(1e-300));
    }
}
