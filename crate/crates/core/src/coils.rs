//! Coil calibration: sum-of-squares sensitivity estimation, the intensity
//! correction field, and receiver noise pre-whitening.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rayon::prelude::*;

use crate::data::{GridGeometry, KSpaceDataset};
use crate::dcf::DensityWeights;
use crate::nufft::{GriddingKernel, Nufft};
use crate::{Error, Result, C64};

/// Default support threshold relative to the peak SoS intensity.
pub const SUPPORT_THRESHOLD: f64 = 0.1;

/// Coil sensitivity maps with their ℓ₂ intensity field and support.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivitySet {
    /// `[coil, row, col]`
    pub maps: Array3<C64>,
    /// `sqrt(Σ_c |maps[c]|²)` per pixel.
    pub intensity: Array2<f64>,
    pub support_mask: Array2<bool>,
}

impl SensitivitySet {
    /// Wraps precomputed maps. The support is where the intensity exceeds
    /// `relative_threshold` times its maximum.
    pub fn from_maps(maps: Array3<C64>, relative_threshold: f64) -> Result<Self> {
        let (nc, rows, cols) = maps.dim();
        if nc == 0 || rows == 0 || rows != cols {
            return Err(Error::Shape(format!(
                "sensitivity maps shaped [{nc}, {rows}, {cols}]"
            )));
        }
        let intensity = l2_over_coils(maps.view());
        let max = intensity.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::ZeroData("sensitivity maps are all zero".into()));
        }
        let support_mask = intensity.mapv(|v| v > relative_threshold * max);
        Ok(Self {
            maps,
            intensity,
            support_mask,
        })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len_of(Axis(0))
    }

    pub fn size(&self) -> usize {
        self.maps.len_of(Axis(1))
    }

    /// `1 / intensity` on the support, zero elsewhere.
    pub fn inverse_intensity(&self) -> Array2<f64> {
        Zip::from(&self.intensity)
            .and(&self.support_mask)
            .map_collect(|&i, &m| if m && i > 0.0 { 1.0 / i } else { 0.0 })
    }
}

/// Intensity correction field of a sensitivity set (ℓ₂ norm across coils).
pub fn intensity_correction_map(sens: &SensitivitySet) -> Array2<f64> {
    sens.intensity.clone()
}

fn l2_over_coils(maps: ArrayView3<C64>) -> Array2<f64> {
    let mut acc = Array2::<f64>::zeros((maps.len_of(Axis(1)), maps.len_of(Axis(2))));
    for coil in maps.outer_iter() {
        Zip::from(&mut acc).and(&coil).for_each(|a, v| *a += v.norm_sqr());
    }
    acc.mapv_into(f64::sqrt)
}

/// Radial Hann taper of total width `width` (trajectory units) about DC.
pub fn hanning_taper(kx: ArrayView2<f64>, ky: ArrayView2<f64>, width: f64) -> Array2<f64> {
    let half = width / 2.0;
    Zip::from(&kx).and(&ky).map_collect(|&x, &y| {
        let r = x.hypot(y);
        if r < half {
            0.5 * (1.0 + (std::f64::consts::PI * r / half).cos())
        } else {
            0.0
        }
    })
}

/// Sum-of-squares sensitivity estimate from low-pass coil images.
///
/// The raw samples are tapered with a radial Hann window, each coil is
/// gridded to a low-resolution image, and every coil image is divided by the
/// root-sum-of-squares across coils. Pixels below `threshold` of the peak SoS
/// (after a 3x3 morphological closing) are outside the support and zeroed.
/// Each map keeps its coil's native phase.
pub fn estimate_sensitivities_sos(
    dataset: &KSpaceDataset,
    kernel: &GriddingKernel,
    geometry: GridGeometry,
    dcf: &DensityWeights,
    window_width: f64,
    threshold: f64,
) -> Result<SensitivitySet> {
    if dataset.n_coils() == 0 {
        return Err(Error::Shape("dataset has no coils".into()));
    }
    let (kx, ky) = dataset.kx_ky();
    // the operator folds in sqrt(w); the other half goes on the data so the
    // coil images are fully density compensated
    let taper = hanning_taper(kx, ky, window_width) * dcf.weights.mapv(f64::sqrt);
    let nufft = Nufft::new(kx, ky, kernel, geometry)?.with_density(dcf)?;
    let images: Vec<Array2<C64>> = (0..dataset.n_coils())
        .into_par_iter()
        .map(|c| {
            let coil = dataset.samples.index_axis(Axis(0), c);
            nufft.adjoint((&coil * &taper).view())
        })
        .collect::<Result<_>>()?;
    let n = geometry.matrix_size;
    let mut maps = Array3::<C64>::zeros((images.len(), n, n));
    for (mut dst, src) in maps.outer_iter_mut().zip(&images) {
        dst.assign(src);
    }
    let sos = l2_over_coils(maps.view());
    let peak = sos.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ZeroData("all coil images are zero".into()));
    }
    let mask = close(sos.mapv(|v| v > threshold * peak).view());
    for mut coil in maps.outer_iter_mut() {
        Zip::from(&mut coil)
            .and(&sos)
            .and(&mask)
            .for_each(|m, &s, &inside| {
                *m = if inside && s > 0.0 { *m / s } else { C64::default() };
            });
    }
    let intensity = l2_over_coils(maps.view());
    let support_mask = intensity.mapv(|v| v > 0.0);
    Ok(SensitivitySet {
        maps,
        intensity,
        support_mask,
    })
}

fn dilate(mask: ArrayView2<bool>) -> Array2<bool> {
    let (rows, cols) = mask.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        (r.saturating_sub(1)..(r + 2).min(rows))
            .any(|rr| (c.saturating_sub(1)..(c + 2).min(cols)).any(|cc| mask[[rr, cc]]))
    })
}

// Pixels beyond the border count as background.
fn erode(mask: ArrayView2<bool>) -> Array2<bool> {
    let (rows, cols) = mask.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        r >= 1
            && c >= 1
            && r + 1 < rows
            && c + 1 < cols
            && (r - 1..r + 2).all(|rr| (c - 1..c + 2).all(|cc| mask[[rr, cc]]))
    })
}

/// 3x3 morphological closing (dilation then erosion). The input pixels are
/// always kept, so the result contains the original mask.
pub fn close(mask: ArrayView2<bool>) -> Array2<bool> {
    let mut closed = erode(dilate(mask).view());
    Zip::from(&mut closed).and(&mask).for_each(|o, &m| *o |= m);
    closed
}

/// Receiver noise covariance with its whitening transform.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub covariance: Array2<C64>,
    /// Lower Cholesky factor `L` with `L Lᴴ = covariance`.
    pub factor: Array2<C64>,
    /// `W = L⁻¹`, so that `W · covariance · Wᴴ = I`.
    pub whitener: Array2<C64>,
}

impl NoiseModel {
    pub fn new(covariance: Array2<C64>) -> Result<Self> {
        let (n, m) = covariance.dim();
        if n != m || n == 0 {
            return Err(Error::Shape(format!("noise covariance shaped [{n}, {m}]")));
        }
        let scale = covariance.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        let hermitian = (0..n).all(|i| {
            (0..n).all(|j| (covariance[[i, j]] - covariance[[j, i]].conj()).norm() <= 1e-10 * scale)
        });
        if !hermitian {
            return Err(Error::Parameter("noise covariance is not Hermitian".into()));
        }
        let dense = DMatrix::from_fn(n, n, |i, j| covariance[[i, j]]);
        // complex Cholesky happily takes square roots of negative pivots, so
        // definiteness is checked on the spectrum first
        let eigenvalue = SymmetricEigen::new(dense.clone()).eigenvalues.min();
        if !(eigenvalue > 0.0) {
            return Err(Error::Factorization { eigenvalue });
        }
        let chol = dense
            .cholesky()
            .ok_or(Error::Factorization { eigenvalue })?;
        let l = chol.l();
        let w = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::Factorization { eigenvalue: 0.0 })?;
        Ok(Self {
            covariance,
            factor: Array2::from_shape_fn((n, n), |(i, j)| l[(i, j)]),
            whitener: Array2::from_shape_fn((n, n), |(i, j)| w[(i, j)]),
        })
    }

    pub fn identity(n_coils: usize) -> Self {
        let eye = Array2::from_shape_fn((n_coils, n_coils), |(i, j)| {
            C64::new(if i == j { 1.0 } else { 0.0 }, 0.0)
        });
        Self {
            covariance: eye.clone(),
            factor: eye.clone(),
            whitener: eye,
        }
    }

    pub fn n_coils(&self) -> usize {
        self.covariance.nrows()
    }
}

/// Applies a coil-mixing matrix to the leading axis of a `[coil, ..]` array.
fn mix_coils(matrix: ArrayView2<C64>, data: ArrayView3<C64>) -> Array3<C64> {
    let (nc, a, b) = data.dim();
    let flat = data
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((nc, a * b))
        .expect("contiguous");
    matrix
        .dot(&flat)
        .into_shape_with_order((nc, a, b))
        .expect("same element count")
}

/// Transforms samples (and sensitivities, if present) into uncorrelated
/// unit-variance virtual coils.
pub fn prewhiten(dataset: &KSpaceDataset, noise: &NoiseModel) -> Result<KSpaceDataset> {
    if noise.n_coils() != dataset.n_coils() {
        return Err(Error::Shape(format!(
            "noise model for {} coils, dataset has {}",
            noise.n_coils(),
            dataset.n_coils()
        )));
    }
    let w = noise.whitener.view();
    Ok(KSpaceDataset {
        samples: mix_coils(w, dataset.samples.view()),
        trajectory: dataset.trajectory.clone(),
        sensitivities: dataset.sensitivities.as_ref().map(|m| mix_coils(w, m.view())),
        noise_covariance: Some(NoiseModel::identity(noise.n_coils()).covariance),
        whitened: true,
    })
}
