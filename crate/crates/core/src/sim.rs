//! Synthetic data: ellipse phantoms, Gaussian-lobe coil maps, radial and
//! spiral trajectories, correlated receiver noise and a brute-force DFT.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coils::{NoiseModel, SensitivitySet};
use crate::data::{Image, KSpaceDataset};
use crate::{Error, Result, C64};

/// Upper bound on `n² · n_samples` for a single [`direct_dft`] call.
pub const DEFAULT_DFT_COST_LIMIT: f64 = 2e10;

/// One ellipse in normalized coordinates (the FOV spans `[-1, 1]`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Counter-clockwise, in degrees.
    pub rotation: f64,
    /// Added to every pixel inside.
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub matrix_size: usize,
    pub ellipses: Vec<Ellipse>,
    /// Sub-samples per pixel axis; 1 rasterizes pixel centers only.
    pub supersample: usize,
}

impl PhantomSpec {
    /// Modified Shepp-Logan head phantom (Toft's higher-contrast variant).
    pub fn shepp_logan(matrix_size: usize) -> Self {
        #[rustfmt::skip]
        const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
            // intensity, a, b, x0, y0, rotation
            ( 1.0, 0.69,   0.92,    0.0,   0.0,     0.0),
            (-0.8, 0.6624, 0.8740,  0.0,  -0.0184,  0.0),
            (-0.2, 0.1100, 0.3100,  0.22,  0.0,   -18.0),
            (-0.2, 0.1600, 0.4100, -0.22,  0.0,    18.0),
            ( 0.1, 0.2100, 0.2500,  0.0,   0.35,    0.0),
            ( 0.1, 0.0460, 0.0460,  0.0,   0.1,     0.0),
            ( 0.1, 0.0460, 0.0460,  0.0,  -0.1,     0.0),
            ( 0.1, 0.0460, 0.0230, -0.08, -0.605,   0.0),
            ( 0.1, 0.0230, 0.0230,  0.0,  -0.606,   0.0),
            ( 0.1, 0.0230, 0.0460,  0.06, -0.605,   0.0),
        ];
        Self {
            matrix_size,
            ellipses: TABLE
                .iter()
                .map(|&(intensity, a, b, x0, y0, rotation)| Ellipse {
                    center: (x0, y0),
                    semi_axes: (a, b),
                    rotation,
                    intensity,
                })
                .collect(),
            supersample: 1,
        }
    }

    pub fn with_supersample(mut self, factor: usize) -> Self {
        self.supersample = factor;
        self
    }
}

/// Normalized coordinate of pixel index `i`: `(i - n/2) / (n/2)`.
fn normalized(i: f64, n: usize) -> f64 {
    let half = (n / 2) as f64;
    (i - half) / half
}

/// Rasterizes the phantom. Row 0 is the top of the image (largest `y`).
pub fn make_phantom(spec: &PhantomSpec) -> Result<Image> {
    let n = spec.matrix_size;
    if n < 2 {
        return Err(Error::Parameter(format!("phantom size {n} too small")));
    }
    let s = spec.supersample.max(1);
    let offsets: Vec<f64> = (0..s).map(|j| (j as f64 + 0.5) / s as f64 - 0.5).collect();
    let values = Array2::from_shape_fn((n, n), |(r, c)| {
        let mut acc = 0.0;
        for &dr in &offsets {
            for &dc in &offsets {
                let x = normalized(c as f64 + dc, n);
                let y = -normalized(r as f64 + dr, n);
                acc += spec
                    .ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.intensity)
                    .sum::<f64>();
            }
        }
        // overlapping +/- intensities may cancel to tiny negatives
        (acc / (s * s) as f64).max(0.0)
    });
    Ok(Image::from_real(values.view()))
}

/// Smooth complex coil profiles: Gaussian lobes centered on a ring just
/// outside the FOV, each with a gentle linear phase ramp.
pub fn make_coil_maps(n: usize, n_coils: usize) -> Result<SensitivitySet> {
    if n_coils == 0 {
        return Err(Error::Parameter("n_coils must be at least 1".into()));
    }
    const RING_RADIUS: f64 = 1.1;
    const SIGMA: f64 = 0.7;
    let mut maps = Array3::<C64>::zeros((n_coils, n, n));
    for (coil, mut map) in maps.outer_iter_mut().enumerate() {
        let angle = 2.0 * PI * coil as f64 / n_coils as f64;
        let (sa, ca) = angle.sin_cos();
        let (cx, cy) = (RING_RADIUS * ca, RING_RADIUS * sa);
        map.indexed_iter_mut().for_each(|((r, c), v)| {
            let x = normalized(c as f64, n);
            let y = -normalized(r as f64, n);
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            let magnitude = (-d2 / (2.0 * SIGMA * SIGMA)).exp();
            let phase = angle + 0.25 * PI * (x * ca + y * sa);
            *v = C64::from_polar(magnitude, phase);
        });
    }
    SensitivitySet::from_maps(maps, 0.0)
}

/// Radial trajectory `[3, spoke, read]` in trajectory units (cycles/FOV).
///
/// Readout point `t` sits at `(t - n_read/2) · Δ` with `Δ = n / n_read`, so
/// the spoke spans `-n/2 .. n/2 - Δ`. Spoke `s` is at angle `s·π/n_spokes`.
/// With `alternate`, every odd spoke is traversed in reverse.
pub fn radial_trajectory(
    n_spokes: usize,
    n_read: usize,
    matrix_size: usize,
    alternate: bool,
) -> Array3<f64> {
    interleaved_radial_trajectory(n_spokes, n_read, matrix_size, 1, alternate)
}

/// Radial trajectory whose acquisition order is split into `interleaves`
/// passes: the first `ceil(n_spokes / interleaves)` spokes take every
/// `interleaves`-th angle, the next pass fills the gaps, and so on. Any
/// leading block of spokes therefore covers the half circle evenly.
pub fn interleaved_radial_trajectory(
    n_spokes: usize,
    n_read: usize,
    matrix_size: usize,
    interleaves: usize,
    alternate: bool,
) -> Array3<f64> {
    let step = interleaves.max(1);
    let order: Vec<usize> = (0..step)
        .flat_map(|pass| (pass..n_spokes).step_by(step))
        .collect();
    let delta = matrix_size as f64 / n_read as f64;
    let half = (n_read / 2) as f64;
    let mut traj = Array3::zeros((3, n_spokes, n_read));
    for (s, &slot) in order.iter().enumerate() {
        let (sin, cos) = (slot as f64 * PI / n_spokes as f64).sin_cos();
        for t in 0..n_read {
            let tt = if alternate && s % 2 == 1 { n_read - 1 - t } else { t };
            let k = (tt as f64 - half) * delta;
            traj[[0, s, t]] = k * cos;
            traj[[1, s, t]] = k * sin;
        }
    }
    traj
}

/// Archimedean spiral interleaves `[3, interleave, read]` reaching radius `n/2`.
pub fn spiral_trajectory(
    n_interleaves: usize,
    n_read: usize,
    matrix_size: usize,
    turns: f64,
) -> Array3<f64> {
    let k_max = matrix_size as f64 / 2.0;
    let mut traj = Array3::zeros((3, n_interleaves, n_read));
    for i in 0..n_interleaves {
        let offset = 2.0 * PI * i as f64 / n_interleaves as f64;
        for t in 0..n_read {
            let u = t as f64 / n_read as f64;
            let (s, c) = (2.0 * PI * turns * u + offset).sin_cos();
            traj[[0, i, t]] = k_max * u * c;
            traj[[1, i, t]] = k_max * u * s;
        }
    }
    traj
}

/// Brute-force DFT of an `n`x`n` image at arbitrary k-space points:
/// `s(k) = (1/n) Σ_{r,c} x[r,c] · exp(-2πi (k_x (c - n/2) + k_y (r - n/2)) / n)`,
/// the same centering and scaling as [`crate::nufft::fft_centered`].
pub fn direct_dft(
    image: ArrayView2<C64>,
    kx: ArrayView2<f64>,
    ky: ArrayView2<f64>,
) -> Result<Array2<C64>> {
    direct_dft_with_limit(image, kx, ky, DEFAULT_DFT_COST_LIMIT)
}

pub fn direct_dft_with_limit(
    image: ArrayView2<C64>,
    kx: ArrayView2<f64>,
    ky: ArrayView2<f64>,
    cost_limit: f64,
) -> Result<Array2<C64>> {
    let (rows, cols) = image.dim();
    if rows != cols {
        return Err(Error::Shape(format!("image [{rows}, {cols}] is not square")));
    }
    if kx.dim() != ky.dim() {
        return Err(Error::Shape(format!("kx {:?} vs ky {:?}", kx.dim(), ky.dim())));
    }
    let n = rows;
    let cost = (n * n) as f64 * kx.len() as f64;
    if cost > cost_limit {
        return Err(Error::TooLarge(format!(
            "direct DFT cost {cost:.3e} exceeds limit {cost_limit:.3e}"
        )));
    }
    let image = image.as_standard_layout();
    let half = (n / 2) as f64;
    let scale = 1.0 / n as f64;
    let points: Vec<(f64, f64)> = kx.iter().cloned().zip(ky.iter().cloned()).collect();
    let samples: Vec<C64> = points
        .par_iter()
        .map(|&(x, y)| {
            let phasor = |k: f64, i: usize| C64::cis(-2.0 * PI * k * (i as f64 - half) / n as f64);
            let ex: Vec<C64> = (0..n).map(|c| phasor(x, c)).collect();
            let mut acc = C64::default();
            for (r, row) in image.outer_iter().enumerate() {
                let inner: C64 = row.iter().zip(&ex).map(|(v, e)| v * e).sum();
                acc += inner * phasor(y, r);
            }
            acc * scale
        })
        .collect();
    Ok(Array2::from_shape_vec(kx.dim(), samples).expect("one sample per point"))
}

/// How loud the simulated receiver noise is.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NoiseLevel {
    /// `σ = rms(signal) / snr`.
    Snr(f64),
    /// Fixed `σ`.
    Sigma(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Relative coil covariance `Ψ`; the drawn noise has covariance `σ²Ψ`.
    pub model: NoiseModel,
    pub level: NoiseLevel,
}

/// Simulated acquisition with its ground truth.
#[derive(Clone, Debug)]
pub struct Simulation {
    /// Carries the true maps and, with noise, the covariance `σ²Ψ`.
    pub dataset: KSpaceDataset,
    pub phantom: Image,
    pub maps: Array3<C64>,
    /// `σ` of the added noise (0 without noise).
    pub noise_sigma: f64,
}

/// Samples every coil image `maps[c] · phantom` with [`direct_dft`] and adds
/// complex Gaussian noise `σ L z`, `z ~ CN(0, I)`, drawn from a seeded stream.
pub fn simulate_acquisition(
    phantom: &Image,
    maps: ArrayView3<C64>,
    trajectory: ArrayView3<f64>,
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<Simulation> {
    let (n_coils, rows, cols) = maps.dim();
    if (rows, cols) != phantom.dim() {
        return Err(Error::Shape(format!(
            "maps [{rows}, {cols}] vs phantom {:?}",
            phantom.dim()
        )));
    }
    if n_coils == 0 {
        return Err(Error::Parameter("n_coils must be at least 1".into()));
    }
    if trajectory.len_of(Axis(0)) < 2 {
        return Err(Error::Shape("trajectory needs kx and ky".into()));
    }
    let kx = trajectory.index_axis(Axis(0), 0);
    let ky = trajectory.index_axis(Axis(0), 1);
    let (n_spokes, n_read) = kx.dim();
    let mut samples = Array3::<C64>::zeros((n_coils, n_spokes, n_read));
    for (coil, mut dst) in samples.outer_iter_mut().enumerate() {
        let coil_image = Zip::from(maps.index_axis(Axis(0), coil))
            .and(phantom.pixels())
            .map_collect(|m, p| m * p);
        dst.assign(&direct_dft(coil_image.view(), kx, ky)?);
    }

    let mut dataset = KSpaceDataset::new(samples, trajectory.to_owned())
        .with_sensitivities(maps.to_owned());
    let mut noise_sigma = 0.0;
    if let Some(spec) = noise {
        if spec.model.n_coils() != n_coils {
            return Err(Error::Shape(format!(
                "noise model for {} coils, maps have {n_coils}",
                spec.model.n_coils()
            )));
        }
        noise_sigma = match spec.level {
            NoiseLevel::Snr(snr) if snr > 0.0 => {
                let power = dataset.samples.iter().map(|v| v.norm_sqr()).sum::<f64>()
                    / dataset.samples.len() as f64;
                power.sqrt() / snr
            }
            NoiseLevel::Sigma(sigma) if sigma >= 0.0 => sigma,
            other => {
                return Err(Error::Parameter(format!("invalid noise level {other:?}")));
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = std::f64::consts::FRAC_1_SQRT_2;
        let l = &spec.model.factor;
        let mut z = vec![C64::default(); n_coils];
        for s in 0..n_spokes {
            for t in 0..n_read {
                for zc in z.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *zc = C64::new(re, im) * amp;
                }
                for c in 0..n_coils {
                    let mut acc = C64::default();
                    for (j, zj) in z.iter().enumerate().take(c + 1) {
                        acc += l[[c, j]] * zj;
                    }
                    dataset.samples[[c, s, t]] += acc * noise_sigma;
                }
            }
        }
        let var = noise_sigma * noise_sigma;
        dataset = dataset.with_noise_covariance(spec.model.covariance.mapv(|v| v * var));
    }
    Ok(Simulation {
        dataset,
        phantom: phantom.clone(),
        maps: maps.to_owned(),
        noise_sigma,
    })
}

/// `Ψ_ij = ρ^|i-j|`, a simple correlated-coil covariance.
pub fn exponential_covariance(n_coils: usize, rho: f64) -> Array2<C64> {
    Array2::from_shape_fn((n_coils, n_coils), |(i, j)| {
        C64::new(rho.powi((i as i32 - j as i32).abs()), 0.0)
    })
}

/// Parameters of a complete synthetic scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub matrix_size: usize,
    pub n_coils: usize,
    pub n_spokes: usize,
    pub n_read: usize,
    /// Acquisition passes over the angles; see [`interleaved_radial_trajectory`].
    pub interleaves: usize,
    pub alternate: bool,
    pub supersample: usize,
    /// `None` for noiseless data.
    pub snr: Option<f64>,
    /// Neighbouring-coil noise correlation `ρ` in `Ψ_ij = ρ^|i-j|`.
    pub noise_correlation: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            matrix_size: 64,
            n_coils: 8,
            n_spokes: 101,
            n_read: 128,
            interleaves: 1,
            alternate: false,
            supersample: 1,
            snr: None,
            noise_correlation: 0.0,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.matrix_size < 8 || !self.matrix_size.is_multiple_of(2) {
            problems.push(format!("matrix_size must be even and >= 8, got {}", self.matrix_size));
        }
        if self.n_coils == 0 {
            problems.push("n_coils must be at least 1".to_string());
        }
        if self.n_spokes == 0 {
            problems.push("n_spokes must be at least 1".to_string());
        }
        if self.n_read < 2 || !self.n_read.is_multiple_of(2) {
            problems.push(format!("n_read must be even and >= 2, got {}", self.n_read));
        }
        if self.interleaves == 0 {
            problems.push("interleaves must be at least 1".to_string());
        }
        if let Some(snr) = self.snr {
            if !(snr > 0.0) {
                problems.push(format!("snr must be > 0, got {snr}"));
            }
        }
        if !(self.noise_correlation.abs() < 1.0) {
            problems.push(format!(
                "noise_correlation must lie in (-1, 1), got {}",
                self.noise_correlation
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Phantom, coil maps, trajectory and (optional) noise in one go.
    pub fn run(&self, seed: u64) -> Result<Simulation> {
        self.validate()?;
        let phantom = make_phantom(
            &PhantomSpec::shepp_logan(self.matrix_size).with_supersample(self.supersample),
        )?;
        let maps = make_coil_maps(self.matrix_size, self.n_coils)?.maps;
        let trajectory = interleaved_radial_trajectory(
            self.n_spokes,
            self.n_read,
            self.matrix_size,
            self.interleaves,
            self.alternate,
        );
        let noise = match self.snr {
            Some(snr) => Some(NoiseSpec {
                model: NoiseModel::new(exponential_covariance(self.n_coils, self.noise_correlation))?,
                level: NoiseLevel::Snr(snr),
            }),
            None => None,
        };
        simulate_acquisition(&phantom, maps.view(), trajectory.view(), noise.as_ref(), seed)
    }
}
