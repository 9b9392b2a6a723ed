//! Gridding NUFFT: Kaiser-Bessel convolution onto an oversampled grid,
//! centered FFT, deapodization and symmetric FOV cropping.
//!
//! The adjoint (samples to image) runs
//! `weight -> grid -> ifft -> crop -> deapodize` and the forward operator is
//! its exact mirror. Both are scaled so that, for an `n`x`n` image, the
//! forward transform approximates the direct sum
//! `s(k) = (1/n) Σ_p x_p exp(-2πi k·p / n)` evaluated by [`crate::sim::direct_dft`].
//! Density weights enter as `sqrt(w)` on both sides so the pair stays adjoint.

mod fft;
mod gridding;
mod kernel;

use ndarray::{Array2, ArrayView2};

pub use fft::{fft_centered, ifft_centered, swap_quadrants, CenteredFft};
pub use gridding::{Boundary, GriddingPlan};
pub use kernel::{bessel_i0, kaiser_bessel_beta, GriddingKernel, KernelLookup};

use crate::data::{crop_centered, pad_centered, GridGeometry};
use crate::dcf::DensityWeights;
use crate::{Error, Result, C64};

/// Image-space intensity roll-off caused by gridding convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Apodization {
    /// `[row, col]` on the oversampled grid, max 1.
    pub map: Array2<f64>,
}

impl Apodization {
    /// Magnitude of the centered inverse FFT of the kernel footprint placed
    /// at the grid center, normalized to a maximum of one.
    pub fn compute(kernel: &GriddingKernel, geometry: &GridGeometry) -> Result<Self> {
        let n = geometry.grid_size;
        let c = (n / 2) as isize;
        let mut grid = Array2::<C64>::zeros((n, n));
        for dy in kernel.node_offsets() {
            for dx in kernel.node_offsets() {
                let (r, col) = (c + dy, c + dx);
                if (0..n as isize).contains(&r) && (0..n as isize).contains(&col) {
                    grid[[r as usize, col as usize]] =
                        C64::new(kernel.value(dx as f64) * kernel.value(dy as f64), 0.0);
                }
            }
        }
        CenteredFft::new(n)?.inverse(&mut grid)?;
        let map = grid.mapv(|v| v.norm());
        let max = map.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            map: map.mapv(|v| v / max),
        })
    }

    /// The central `n`x`n` part covering the target FOV.
    pub fn cropped(&self, matrix_size: usize) -> Result<Array2<f64>> {
        crop_centered(self.map.view(), matrix_size, matrix_size)
    }
}

/// Single-coil NUFFT operator bound to one trajectory.
#[derive(Clone, Debug)]
pub struct Nufft {
    geometry: GridGeometry,
    plan: GriddingPlan,
    fft: CenteredFft,
    // 1 / apodization over the target FOV, times n_os / n
    deapodization: Array2<f64>,
    sqrt_weights: Option<Vec<f64>>,
    shape: (usize, usize),
}

impl Nufft {
    /// `kx`/`ky` shaped `[spoke, read]` in trajectory units.
    pub fn new(
        kx: ArrayView2<f64>,
        ky: ArrayView2<f64>,
        kernel: &GriddingKernel,
        geometry: GridGeometry,
    ) -> Result<Self> {
        let plan = GriddingPlan::new(kx, ky, kernel, &geometry, Boundary::Drop)?;
        let apodization = Apodization::compute(kernel, &geometry)?;
        let scale = geometry.grid_scale();
        let cropped = apodization.cropped(geometry.matrix_size)?;
        if cropped.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Parameter(
                "apodization vanishes inside the field of view".into(),
            ));
        }
        Ok(Self {
            fft: CenteredFft::new(geometry.grid_size)?,
            deapodization: cropped.mapv(|a| scale / a),
            geometry,
            plan,
            sqrt_weights: None,
            shape: kx.dim(),
        })
    }

    /// Folds `sqrt(w)` into both directions.
    pub fn with_density(mut self, dcf: &DensityWeights) -> Result<Self> {
        if dcf.weights.dim() != self.shape {
            return Err(Error::Shape(format!(
                "density weights {:?} for trajectory {:?}",
                dcf.weights.dim(),
                self.shape
            )));
        }
        self.sqrt_weights = Some(dcf.weights.iter().map(|w| w.sqrt()).collect());
        Ok(self)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn plan(&self) -> &GriddingPlan {
        &self.plan
    }

    /// `[spoke, read]` shape of the sample arrays.
    pub fn sample_shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn dropped(&self) -> usize {
        self.plan.dropped()
    }

    /// Image `[n, n]` to samples `[spoke, read]`.
    pub fn forward(&self, image: ArrayView2<C64>) -> Result<Array2<C64>> {
        let n = self.geometry.matrix_size;
        if image.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "expected [{n}, {n}] image, got {:?}",
                image.dim()
            )));
        }
        let weighted = &image * &self.deapodization;
        let n_os = self.geometry.grid_size;
        let mut grid = pad_centered(weighted.view(), n_os, n_os)?;
        self.fft.forward(&mut grid)?;
        let samples = self.plan.degrid(grid.view(), self.sqrt_weights.as_deref())?;
        Ok(Array2::from_shape_vec(self.shape, samples).expect("plan sample count"))
    }

    /// Samples `[spoke, read]` to image `[n, n]`.
    pub fn adjoint(&self, samples: ArrayView2<C64>) -> Result<Array2<C64>> {
        if samples.dim() != self.shape {
            return Err(Error::Shape(format!(
                "expected samples {:?}, got {:?}",
                self.shape,
                samples.dim()
            )));
        }
        let flat = samples.as_standard_layout();
        let mut grid = self
            .plan
            .grid(flat.as_slice().expect("standard layout"), self.sqrt_weights.as_deref())?;
        self.fft.inverse(&mut grid)?;
        let n = self.geometry.matrix_size;
        let image = crop_centered(grid.view(), n, n)?;
        Ok(image * &self.deapodization)
    }
}

/// One-shot adjoint NUFFT with optional density compensation.
pub fn nufft_adjoint(
    samples: ArrayView2<C64>,
    kx: ArrayView2<f64>,
    ky: ArrayView2<f64>,
    kernel: &GriddingKernel,
    geometry: GridGeometry,
    dcf: Option<&DensityWeights>,
) -> Result<Array2<C64>> {
    let mut op = Nufft::new(kx, ky, kernel, geometry)?;
    if let Some(d) = dcf {
        op = op.with_density(d)?;
    }
    op.adjoint(samples)
}

/// One-shot forward NUFFT with optional density compensation.
pub fn nufft_forward(
    image: ArrayView2<C64>,
    kx: ArrayView2<f64>,
    ky: ArrayView2<f64>,
    kernel: &GriddingKernel,
    geometry: GridGeometry,
    dcf: Option<&DensityWeights>,
) -> Result<Array2<C64>> {
    let mut op = Nufft::new(kx, ky, kernel, geometry)?;
    if let Some(d) = dcf {
        op = op.with_density(d)?;
    }
    op.forward(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apodization_is_max_normalized_and_symmetric() {
        let kernel = GriddingKernel::kaiser_bessel(5, 10000, 2.0).unwrap();
        let geometry = GridGeometry::new(32, 2.0).unwrap();
        let apod = Apodization::compute(&kernel, &geometry).unwrap();
        let n = geometry.grid_size;
        let max = apod.map.iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-15);
        assert!((apod.map[[n / 2, n / 2]] - 1.0).abs() < 1e-12);
        let mut asym = 0.0f64;
        for r in 1..n {
            for c in 1..n {
                asym = asym.max((apod.map[[r, c]] - apod.map[[c, r]]).abs());
                asym = asym.max((apod.map[[r, c]] - apod.map[[n - r, c]]).abs());
                asym = asym.max((apod.map[[r, c]] - apod.map[[r, n - c]]).abs());
            }
        }
        assert!(asym < 1e-12, "asymmetry {asym}");
    }

    #[test]
    fn apodization_decays_toward_fov_corner() {
        let kernel = GriddingKernel::kaiser_bessel(5, 10000, 2.0).unwrap();
        let geometry = GridGeometry::new(32, 2.0).unwrap();
        let apod = Apodization::compute(&kernel, &geometry).unwrap();
        let fov = apod.cropped(32).unwrap();
        assert!(fov[[0, 0]] < fov[[16, 16]]);
        assert!(fov.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn impulse_like_kernel_gives_flat_apodization() {
        let kernel = GriddingKernel::with_beta(2, 1000, 40.0).unwrap();
        let geometry = GridGeometry::new(16, 2.0).unwrap();
        let apod = Apodization::compute(&kernel, &geometry).unwrap();
        assert!(apod.map.iter().all(|&a| (a - 1.0).abs() < 1e-10));
    }
}
