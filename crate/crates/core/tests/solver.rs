use cgsense::data::GridGeometry;
use cgsense::dcf::dcf_gridded_ones;
use cgsense::nufft::GriddingKernel;
use cgsense::sense::{conjugate_gradient, CgSettings, DenseOperator, LinearOperator, SenseOperator};
use cgsense::sim::{make_coil_maps, radial_trajectory};
use cgsense::{Result, C64};
use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_complex(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

fn to_dense(a: &Array2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn norm(a: &Array2<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

// Random HPD matrix `BᴴB/n + I`: eigenvalues in [1, ~2], so CG converges
// well inside n steps. Residual norms of CG are not monotone in general; on
// ill-conditioned systems they oscillate before convergence.
fn random_hpd(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
    let b = Array2::from_shape_fn((n, n), |_| random_complex(rng));
    let mut a = b.t().mapv(|v| v.conj()).dot(&b) / C64::new(n as f64, 0.0);
    for i in 0..n {
        a[[i, i]] += C64::new(1.0, 0.0);
    }
    a
}

#[test]
fn cg_matches_dense_solve() {
    let n = 32;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_hpd(n, &mut rng);
        let rhs = Array2::from_shape_fn((n, 1), |_| random_complex(&mut rng));
        let op = DenseOperator { matrix: a.clone() };
        let out = conjugate_gradient(&op, &rhs, CgSettings { max_iterations: n, epsilon: 0.0 }).unwrap();
        assert!(out.iterations <= n);

        let exact = to_dense(&a).lu().solve(&to_dense(&rhs)).unwrap();
        let err = (0..n).map(|i| (out.solution[[i, 0]] - exact[(i, 0)]).norm_sqr()).sum::<f64>().sqrt()
            / exact.norm();
        assert!(err < 1e-8, "seed {seed}: relative error {err:e}");
        for w in out.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "seed {seed}: {:?}", out.residual_history);
        }
    }
}

struct Fixture {
    op_for: Box<dyn Fn(f64) -> SenseOperator>,
    b: Array2<C64>,
}

// An 8x8, 2-coil radial problem small enough to write down as a matrix.
fn tiny_problem() -> Fixture {
    let n = 8;
    let traj = radial_trajectory(13, 16, n, false);
    let geometry = GridGeometry::from_trajectory(traj.view(), None).unwrap();
    let kernel = GriddingKernel::kaiser_bessel(5, 10_000, geometry.oversampling_ratio).unwrap();
    let (kx, ky) = (traj.index_axis(Axis(0), 0).to_owned(), traj.index_axis(Axis(0), 1).to_owned());
    let dcf = dcf_gridded_ones(kx.view(), ky.view(), &kernel, &geometry).unwrap();
    let sens = make_coil_maps(n, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples = Array3::from_shape_fn((2, 13, 16), |_| random_complex(&mut rng));
    let build = move |lambda: f64| {
        SenseOperator::new(kx.view(), ky.view(), &kernel, geometry, &dcf, &sens, lambda).unwrap()
    };
    let b = build(0.0).rhs(samples.view()).unwrap();
    Fixture { op_for: Box::new(build), b }
}

fn dense_normal(op: &SenseOperator) -> DMatrix<C64> {
    let n = op.matrix_size();
    let mut m = DMatrix::<C64>::zeros(n * n, n * n);
    for j in 0..n * n {
        let mut e = Array2::<C64>::zeros((n, n));
        e[[j / n, j % n]] = C64::new(1.0, 0.0);
        let col = op.normal(e.view()).unwrap();
        for (i, v) in col.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

fn closed_form(a: &DMatrix<C64>, b: &Array2<C64>, lambda: f64) -> f64 {
    let dim = a.nrows();
    let shifted = a + DMatrix::<C64>::identity(dim, dim) * C64::new(lambda, 0.0);
    let rhs = DMatrix::from_iterator(dim, 1, b.iter().cloned());
    shifted.lu().solve(&rhs).unwrap().norm()
}

#[test]
fn tikhonov_shrinkage_follows_closed_form() {
    let fx = tiny_problem();
    let a = dense_normal(&(fx.op_for)(0.0));
    let spectral = a.clone().singular_values().max();
    let settings = CgSettings { max_iterations: 64, epsilon: 0.0 };
    for scale in [1e-2, 1.0, 1e6] {
        let lambda = scale * spectral;
        let mut norms = Vec::new();
        for l in [lambda, 10.0 * lambda] {
            let out = conjugate_gradient(&(fx.op_for)(l), &fx.b, settings).unwrap();
            let v = norm(&out.solution);
            let exact = closed_form(&a, &fx.b, l);
            assert!((v / exact - 1.0).abs() < 0.05, "λ={l:e}: cg {v:e} vs {exact:e}");
            norms.push((v, exact));
        }
        let ratio = norms[0].0 / norms[1].0;
        let expected = norms[0].1 / norms[1].1;
        assert!((ratio / expected - 1.0).abs() < 0.05, "ratio {ratio} vs {expected}");
        if scale >= 1e6 {
            // ‖v‖ → ‖b‖/λ
            assert!((norms[0].0 * lambda / norm(&fx.b) - 1.0).abs() < 0.05);
            assert!((ratio - 10.0).abs() < 0.5);
        }
    }
}

struct Unregularized<'a>(&'a SenseOperator);

impl LinearOperator for Unregularized<'_> {
    fn apply(&self, x: &Array2<C64>) -> Result<Array2<C64>> {
        let op = self.0;
        let xi = x * op.inverse_intensity();
        let y = op.adjoint(op.forward(xi.view())?.view())?;
        Ok(y * op.inverse_intensity())
    }
}

#[test]
fn zero_lambda_is_the_plain_normal_operator() {
    let fx = tiny_problem();
    let op = (fx.op_for)(0.0);
    let settings = CgSettings { max_iterations: 10, epsilon: 0.0 };
    let regularized = conjugate_gradient(&op, &fx.b, settings).unwrap();
    let plain = conjugate_gradient(&Unregularized(&op), &fx.b, settings).unwrap();
    assert_eq!(regularized.solution, plain.solution);
    assert_eq!(regularized.residual_history, plain.residual_history);
}

#[test]
fn normal_operator_is_hermitian_and_positive() {
    let fx = tiny_problem();
    let a = dense_normal(&(fx.op_for)(0.0));
    let asym = (&a - a.adjoint()).norm() / a.norm();
    assert!(asym < 1e-12, "asymmetry {asym:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let op = (fx.op_for)(0.0);
    for _ in 0..10 {
        let x = Array2::from_shape_fn((8, 8), |_| random_complex(&mut rng));
        let ax = op.normal(x.view()).unwrap();
        let q: C64 = x.iter().zip(&ax).map(|(a, b)| a.conj() * b).sum();
        assert!(q.re > 0.0 && q.im.abs() < 1e-10 * q.re);
    }
}

#[test]
fn zero_rhs_gives_zero_image() {
    let fx = tiny_problem();
    let zero = Array2::<C64>::zeros(fx.b.raw_dim());
    let out = conjugate_gradient(&(fx.op_for)(0.0), &zero, CgSettings { max_iterations: 10, epsilon: 0.0 }).unwrap();
    assert!(out.solution.iter().all(|v| *v == C64::default()));
    assert_eq!(out.residual_history, vec![1.0]);
}

#[test]
fn indefinite_operator_is_reported() {
    let mut m = Array2::<C64>::zeros((2, 2));
    m[[0, 0]] = C64::new(1.0, 0.0);
    m[[1, 1]] = C64::new(-1.0, 0.0);
    let b = Array2::from_elem((2, 1), C64::new(1.0, 0.0));
    let err = conjugate_gradient(&DenseOperator { matrix: m }, &b, CgSettings { max_iterations: 5, epsilon: 0.0 })
        .unwrap_err();
    assert!(err.is_numeric());
}
