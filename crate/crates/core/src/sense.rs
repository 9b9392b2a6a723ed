//! CG-SENSE: the density- and intensity-weighted encoding operator, the
//! conjugate gradient solver, and the end-to-end reconstruction pipeline.

use std::time::Instant;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coils::{estimate_sensitivities_sos, prewhiten, NoiseModel, SensitivitySet};
use crate::config::{RunConfig, SensitivitySource};
use crate::data::{GridGeometry, Image, KSpaceDataset, Undersampling};
use crate::dcf::DensityWeights;
use crate::filter::apply_filter;
use crate::nufft::{GriddingKernel, Nufft};
use crate::{Error, Result, C64};

/// A linear map on images, as seen by the solver.
pub trait LinearOperator {
    fn apply(&self, x: &Array2<C64>) -> Result<Array2<C64>>;
}

/// Explicit matrix acting on column vectors shaped `[n, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    pub matrix: Array2<C64>,
}

impl LinearOperator for DenseOperator {
    fn apply(&self, x: &Array2<C64>) -> Result<Array2<C64>> {
        if x.nrows() != self.matrix.ncols() {
            return Err(Error::Shape(format!(
                "vector {:?} for a {:?} matrix",
                x.dim(),
                self.matrix.dim()
            )));
        }
        Ok(self.matrix.dot(x))
    }
}

/// `⟨a, b⟩ = Σ conj(a) b`.
pub fn inner(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    Zip::from(a)
        .and(b)
        .fold(C64::default(), |acc, x, y| acc + x.conj() * y)
}

fn norm_sqr(a: &Array2<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgSettings {
    pub max_iterations: usize,
    /// Stop once `δ < ε`; 0 disables early stopping.
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome {
    pub solution: Array2<C64>,
    /// `δᵢ = rᵢᴴrᵢ / r₀ᴴr₀` for every iterate, starting with `δ₀ = 1`.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
}

/// Conjugate gradient on `A v = b`, starting from `v₀ = 0`.
///
/// Runs at most `max_iterations` updates. Stops early when the residual
/// vanishes or, with `epsilon > 0`, once `δ < ε`. A non-positive curvature
/// `pᴴAp` means the operator is not positive definite and is reported with
/// its iteration index.
pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    b: &Array2<C64>,
    settings: CgSettings,
) -> Result<CgOutcome> {
    let mut v = Array2::<C64>::zeros(b.raw_dim());
    let mut r = b.clone();
    let mut p = r.clone();
    let r0 = norm_sqr(&r);
    let mut history = vec![1.0];
    if r0 == 0.0 {
        return Ok(CgOutcome {
            solution: v,
            residual_history: history,
            iterations: 0,
        });
    }
    let mut rr = r0;
    let mut iterations = 0;
    for i in 0..settings.max_iterations {
        let delta = rr / r0;
        if settings.epsilon > 0.0 && delta < settings.epsilon {
            break;
        }
        let ap = op.apply(&p)?;
        let curvature = inner(&p, &ap).re;
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite {
                iteration: i,
                curvature,
            });
        }
        let alpha = rr / curvature;
        v.zip_mut_with(&p, |vi, &pi| *vi += pi * alpha);
        r.zip_mut_with(&ap, |ri, &ai| *ri -= ai * alpha);
        let rr_next = norm_sqr(&r);
        iterations = i + 1;
        history.push(rr_next / r0);
        if rr_next == 0.0 {
            break;
        }
        let beta = rr_next / rr;
        p.zip_mut_with(&r, |pi, &ri| *pi = ri + *pi * beta);
        rr = rr_next;
    }
    Ok(CgOutcome {
        solution: v,
        residual_history: history,
        iterations,
    })
}

/// Multi-coil encoding `Ē = D^½ F S` over one trajectory, with the intensity
/// weighting `I` and Tikhonov term used by the normal operator.
///
/// `forward`/`adjoint` are the plain density-weighted pair; `normal` applies
/// `I ĒᴴĒ I + λ`, the system CG actually solves.
#[derive(Clone, Debug)]
pub struct SenseOperator {
    nufft: Nufft,
    maps: Array3<C64>,
    inverse_intensity: Array2<f64>,
    sqrt_weights: Array2<f64>,
    lambda: f64,
}

impl SenseOperator {
    pub fn new(
        kx: ArrayView2<f64>,
        ky: ArrayView2<f64>,
        kernel: &GriddingKernel,
        geometry: GridGeometry,
        dcf: &DensityWeights,
        sensitivities: &SensitivitySet,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if sensitivities.size() != geometry.matrix_size {
            return Err(Error::Shape(format!(
                "sensitivities are {}x{0}, reconstruction matrix is {}",
                sensitivities.size(),
                geometry.matrix_size
            )));
        }
        let nufft = Nufft::new(kx, ky, kernel, geometry)?.with_density(dcf)?;
        Ok(Self {
            nufft,
            maps: sensitivities.maps.clone(),
            inverse_intensity: sensitivities.inverse_intensity(),
            sqrt_weights: dcf.weights.mapv(f64::sqrt),
            lambda,
        })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len_of(Axis(0))
    }

    pub fn matrix_size(&self) -> usize {
        self.nufft.geometry().matrix_size
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dropped_samples(&self) -> usize {
        self.nufft.dropped()
    }

    pub fn inverse_intensity(&self) -> &Array2<f64> {
        &self.inverse_intensity
    }

    fn check_image(&self, x: ArrayView2<C64>) -> Result<()> {
        let n = self.matrix_size();
        if x.dim() != (n, n) {
            return Err(Error::Shape(format!("expected [{n}, {n}] image, got {:?}", x.dim())));
        }
        Ok(())
    }

    fn check_samples(&self, y: ArrayView3<C64>) -> Result<()> {
        let (s, r) = self.nufft.sample_shape();
        let expected = (self.n_coils(), s, r);
        if y.dim() != expected {
            return Err(Error::Shape(format!("expected samples {expected:?}, got {:?}", y.dim())));
        }
        Ok(())
    }

    /// `Ē x`: `[n, n]` image to `[coil, spoke, read]` samples.
    pub fn forward(&self, x: ArrayView2<C64>) -> Result<Array3<C64>> {
        self.check_image(x)?;
        let per_coil: Vec<Array2<C64>> = (0..self.n_coils())
            .into_par_iter()
            .map(|c| {
                let coil_image = &self.maps.index_axis(Axis(0), c) * &x;
                self.nufft.forward(coil_image.view())
            })
            .collect::<Result<_>>()?;
        let (s, r) = self.nufft.sample_shape();
        let mut out = Array3::zeros((self.n_coils(), s, r));
        for (mut dst, src) in out.outer_iter_mut().zip(&per_coil) {
            dst.assign(src);
        }
        Ok(out)
    }

    /// `Ēᴴ y`: samples back to one coil-combined image.
    pub fn adjoint(&self, y: ArrayView3<C64>) -> Result<Array2<C64>> {
        self.check_samples(y)?;
        let per_coil: Vec<Array2<C64>> = (0..self.n_coils())
            .into_par_iter()
            .map(|c| {
                let mut img = self.nufft.adjoint(y.index_axis(Axis(0), c))?;
                Zip::from(&mut img)
                    .and(self.maps.index_axis(Axis(0), c))
                    .for_each(|v, s| *v *= s.conj());
                Ok(img)
            })
            .collect::<Result<_>>()?;
        Ok(sum_in_order(per_coil, self.matrix_size()))
    }

    /// Right-hand side `b = I Ēᴴ D^½ m` for measured samples `m`.
    pub fn rhs(&self, samples: ArrayView3<C64>) -> Result<Array2<C64>> {
        self.check_samples(samples)?;
        let mut weighted = samples.to_owned();
        for mut coil in weighted.outer_iter_mut() {
            coil.zip_mut_with(&self.sqrt_weights, |v, &w| *v *= w);
        }
        let mut b = self.adjoint(weighted.view())?;
        self.weight_intensity(&mut b);
        Ok(b)
    }

    fn weight_intensity(&self, x: &mut Array2<C64>) {
        x.zip_mut_with(&self.inverse_intensity, |v, &i| *v *= i);
    }

    /// `(I ĒᴴĒ I + λ) x`, one fused forward/adjoint pass per coil.
    pub fn normal(&self, x: ArrayView2<C64>) -> Result<Array2<C64>> {
        self.check_image(x)?;
        let mut xi = x.to_owned();
        self.weight_intensity(&mut xi);
        let per_coil: Vec<Array2<C64>> = (0..self.n_coils())
            .into_par_iter()
            .map(|c| {
                let map = self.maps.index_axis(Axis(0), c);
                let coil_image = &map * &xi;
                let k = self.nufft.forward(coil_image.view())?;
                let mut img = self.nufft.adjoint(k.view())?;
                Zip::from(&mut img).and(map).for_each(|v, s| *v *= s.conj());
                Ok(img)
            })
            .collect::<Result<_>>()?;
        let mut out = sum_in_order(per_coil, self.matrix_size());
        self.weight_intensity(&mut out);
        if self.lambda != 0.0 {
            out.zip_mut_with(&x, |o, &v| *o += v * self.lambda);
        }
        Ok(out)
    }
}

impl LinearOperator for SenseOperator {
    fn apply(&self, x: &Array2<C64>) -> Result<Array2<C64>> {
        self.normal(x.view())
    }
}

// Fixed summation order keeps results independent of the thread count.
fn sum_in_order(parts: Vec<Array2<C64>>, n: usize) -> Array2<C64> {
    let mut acc = Array2::<C64>::zeros((n, n));
    for part in &parts {
        acc += part;
    }
    acc
}

/// Timing and summary of one pipeline stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
    pub detail: String,
}

struct Stopwatch(Instant);

impl Stopwatch {
    fn start() -> Self {
        Self(Instant::now())
    }

    fn record(self, stage: &str, detail: String) -> StageRecord {
        StageRecord {
            stage: stage.to_string(),
            seconds: self.0.elapsed().as_secs_f64(),
            detail,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    /// Intensity-corrected right-hand side, before any CG iteration.
    pub initial_image: Image,
    /// Intensity-corrected, filtered CG solution.
    pub final_image: Image,
    pub residual_history: Vec<f64>,
    pub iterations_run: usize,
    pub dropped_sample_count: usize,
    pub geometry: GridGeometry,
    pub stages: Vec<StageRecord>,
}

/// Everything shared by the reconstructions of one dataset: whitened data,
/// geometry, kernel and coil sensitivities.
#[derive(Clone, Debug)]
pub struct PreparedRecon {
    pub dataset: KSpaceDataset,
    pub geometry: GridGeometry,
    pub kernel: GriddingKernel,
    pub sensitivities: SensitivitySet,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
}

impl PreparedRecon {
    /// Validates, pre-whitens (when a covariance is available), derives the
    /// grid geometry from the full trajectory and sets up the coil maps.
    pub fn new(dataset: &KSpaceDataset, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        dataset.ensure_valid()?;
        let mut stages = Vec::new();

        let watch = Stopwatch::start();
        let dataset = match (&dataset.noise_covariance, config.prewhiten, dataset.whitened) {
            (Some(cov), true, false) => {
                let noise = NoiseModel::new(cov.clone())?;
                let out = prewhiten(dataset, &noise)?;
                stages.push(watch.record("prewhiten", format!("{} coils", out.n_coils())));
                out
            }
            _ => dataset.clone(),
        };

        let watch = Stopwatch::start();
        let geometry =
            GridGeometry::from_trajectory(dataset.trajectory.view(), config.oversampling_ratio_override)?;
        let kernel = config.kernel(geometry.oversampling_ratio)?;
        stages.push(watch.record(
            "geometry",
            format!(
                "matrix {} grid {} ratio {:.4} max radius {:.3}",
                geometry.matrix_size, geometry.grid_size, geometry.oversampling_ratio, geometry.max_radius
            ),
        ));

        let watch = Stopwatch::start();
        let provided = dataset.sensitivities.as_ref();
        let (sensitivities, how) = match (config.sensitivity_source, provided) {
            (SensitivitySource::Provided, None) => {
                return Err(Error::Config(format!(
                    "sensitivity_source is `provided` but the data has no `{}` entry",
                    config.dataset_names.sensitivities
                )))
            }
            (SensitivitySource::Provided | SensitivitySource::Auto, Some(maps)) => (
                SensitivitySet::from_maps(maps.clone(), config.sensitivity_threshold)?,
                "provided",
            ),
            _ => {
                let (kx, ky) = dataset.kx_ky();
                let dcf = config.dcf.compute(kx, ky, &kernel, &geometry)?;
                (
                    estimate_sensitivities_sos(
                        &dataset,
                        &kernel,
                        geometry,
                        &dcf,
                        config.sensitivity_window_width as f64,
                        config.sensitivity_threshold,
                    )?,
                    "sum-of-squares estimate",
                )
            }
        };
        if sensitivities.size() != geometry.matrix_size || sensitivities.n_coils() != dataset.n_coils() {
            return Err(Error::Shape(format!(
                "sensitivities [{}, {1}, {1}] for {2} coils and a {3}x{3} matrix",
                sensitivities.n_coils(),
                sensitivities.size(),
                dataset.n_coils(),
                geometry.matrix_size
            )));
        }
        stages.push(watch.record("sensitivities", how.to_string()));

        Ok(Self {
            dataset,
            geometry,
            kernel,
            sensitivities,
            config: config.clone(),
            stages,
        })
    }

    /// Reconstructs the spokes selected by `scheme`.
    pub fn run(&self, scheme: Undersampling) -> Result<ReconResult> {
        let mut stages = self.stages.clone();
        let data = self.dataset.undersample(scheme)?;
        let (kx, ky) = data.kx_ky();

        let watch = Stopwatch::start();
        let dcf = self.config.dcf.compute(kx, ky, &self.kernel, &self.geometry)?;
        stages.push(watch.record("dcf", format!("{:?} over {} spokes", self.config.dcf, data.n_spokes())));

        let watch = Stopwatch::start();
        let op = SenseOperator::new(
            kx,
            ky,
            &self.kernel,
            self.geometry,
            &dcf,
            &self.sensitivities,
            self.config.tikhonov_lambda,
        )?;
        let b = op.rhs(data.samples.view())?;
        stages.push(watch.record("operator", format!("{} dropped samples", op.dropped_samples())));

        let watch = Stopwatch::start();
        let outcome = conjugate_gradient(
            &op,
            &b,
            CgSettings {
                max_iterations: self.config.max_iterations,
                epsilon: self.config.tolerance_epsilon,
            },
        )?;
        stages.push(watch.record(
            "cg",
            format!(
                "{} iterations, final delta {:.3e}",
                outcome.iterations,
                outcome.residual_history.last().copied().unwrap_or(1.0)
            ),
        ));

        let watch = Stopwatch::start();
        let intensity_corrected = |x: &Array2<C64>| {
            let mut y = x.clone();
            y.zip_mut_with(op.inverse_intensity(), |v, &i| *v *= i);
            Image::new(y)
        };
        let initial_image = intensity_corrected(&b);
        let spec = self.config.filter.spec(self.geometry.max_radius);
        let final_image = apply_filter(&intensity_corrected(&outcome.solution), &spec)?;
        if !final_image.is_finite() {
            return Err(Error::ZeroData("reconstruction produced non-finite pixels".into()));
        }
        stages.push(watch.record("filter", format!("{:?}", spec.kind)));

        Ok(ReconResult {
            initial_image,
            final_image,
            residual_history: outcome.residual_history,
            iterations_run: outcome.iterations,
            dropped_sample_count: op.dropped_samples(),
            geometry: self.geometry,
            stages,
        })
    }
}

/// Full pipeline on all spokes of `dataset`.
pub fn reconstruct(dataset: &KSpaceDataset, config: &RunConfig) -> Result<ReconResult> {
    PreparedRecon::new(dataset, config)?.run(Undersampling::SkipEvery(1))
}

/// Reconstructs every undersampling scheme of the config, sharing the
/// sensitivities estimated from the full data.
pub fn reconstruct_series(
    dataset: &KSpaceDataset,
    config: &RunConfig,
) -> Result<Vec<(Undersampling, ReconResult)>> {
    let prepared = PreparedRecon::new(dataset, config)?;
    config
        .undersampling
        .iter()
        .map(|&scheme| Ok((scheme, prepared.run(scheme)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{make_coil_maps, radial_trajectory};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn small_operator(lambda: f64) -> SenseOperator {
        let n = 16;
        let traj = radial_trajectory(24, 32, n, false);
        let geometry = GridGeometry::from_trajectory(traj.view(), None).unwrap();
        let kernel = GriddingKernel::kaiser_bessel(5, 10000, geometry.oversampling_ratio).unwrap();
        let kx = traj.index_axis(Axis(0), 0);
        let ky = traj.index_axis(Axis(0), 1);
        let dcf = crate::dcf::dcf_gridded_ones(kx, ky, &kernel, &geometry).unwrap();
        let sens = make_coil_maps(n, 4).unwrap();
        SenseOperator::new(kx, ky, &kernel, geometry, &dcf, &sens, lambda).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let op = small_operator(0.0);
        let z = Array2::<C64>::zeros((16, 16));
        assert!(op.forward(z.view()).unwrap().iter().all(|v| *v == C64::default()));
        assert!(op.normal(z.view()).unwrap().iter().all(|v| *v == C64::default()));
        let y = Array3::<C64>::zeros((4, 24, 32));
        assert!(op.adjoint(y.view()).unwrap().iter().all(|v| *v == C64::default()));
    }

    #[test]
    fn forward_is_linear() {
        let op = small_operator(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(16, &mut rng);
        let y = random_image(16, &mut rng);
        let (a, b) = (C64::new(0.3, -1.2), C64::new(2.0, 0.5));
        let combo = &x * a + &y * b;
        let lhs = op.forward(combo.view()).unwrap();
        let rhs = op.forward(x.view()).unwrap() * a + op.forward(y.view()).unwrap() * b;
        let scale = rhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = (&lhs - &rhs).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12 * scale.max(1.0));
    }

    #[test]
    fn normal_operator_is_hermitian_and_psd() {
        let op = small_operator(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x = random_image(16, &mut rng);
            let y = random_image(16, &mut rng);
            let ax = op.normal(x.view()).unwrap();
            let ay = op.normal(y.view()).unwrap();
            let lhs = inner(&ax, &y);
            let rhs = inner(&x, &ay);
            assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
            assert!(inner(&ax, &x).re >= -1e-12);
        }
    }

    #[test]
    fn zero_rhs_stops_immediately() {
        let op = DenseOperator {
            matrix: Array2::eye(3).mapv(|v: f64| C64::new(v, 0.0)),
        };
        let out = conjugate_gradient(
            &op,
            &Array2::zeros((3, 1)),
            CgSettings {
                max_iterations: 10,
                epsilon: 0.0,
            },
        )
        .unwrap();
        assert_eq!(out.residual_history, vec![1.0]);
        assert!(out.solution.iter().all(|v| *v == C64::default()));
    }

    #[test]
    fn indefinite_operator_is_reported() {
        let op = DenseOperator {
            matrix: Array2::from_diag(&ndarray::arr1(&[C64::new(1.0, 0.0), C64::new(-1.0, 0.0)])),
        };
        let b = Array2::from_shape_vec((2, 1), vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        let err = conjugate_gradient(
            &op,
            &b,
            CgSettings {
                max_iterations: 5,
                epsilon: 0.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { iteration: 0, .. }));
    }

    #[test]
    fn early_stop_on_tolerance() {
        let op = DenseOperator {
            matrix: Array2::eye(4).mapv(|v: f64| C64::new(2.0 * v, 0.0)),
        };
        let b = Array2::from_elem((4, 1), C64::new(1.0, 0.0));
        let out = conjugate_gradient(
            &op,
            &b,
            CgSettings {
                max_iterations: 10,
                epsilon: 1e-6,
            },
        )
        .unwrap();
        // a scaled identity converges in one step
        assert_eq!(out.iterations, 1);
        assert!(out.solution.iter().all(|v| (v - C64::new(0.5, 0.0)).norm() < 1e-15));
    }
}
