//! Sampling density compensation.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::GridGeometry;
use crate::nufft::{Boundary, GriddingKernel, GriddingPlan};
use crate::{Error, Result, C64};

/// Relative density below which a sample gets zero weight.
pub const DENSITY_FLOOR: f64 = 1e-8;

/// Per-sample weights `[spoke, read]`, in `[0, 1]` with maximum 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityWeights {
    pub weights: Array2<f64>,
}

impl DensityWeights {
    /// All-ones weights (no compensation).
    pub fn uniform(shape: (usize, usize)) -> Self {
        Self {
            weights: Array2::ones(shape),
        }
    }

    fn from_unnormalized(weights: Array2<f64>) -> Result<Self> {
        let max = weights.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::DegenerateGeometry(
                "density compensation has no positive weight".into(),
            ));
        }
        Ok(Self {
            weights: weights.mapv(|w| w / max),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcfMethod {
    #[default]
    GriddedOnes,
    Ramp,
}

impl DcfMethod {
    pub fn compute(
        self,
        kx: ArrayView2<f64>,
        ky: ArrayView2<f64>,
        kernel: &GriddingKernel,
        geometry: &GridGeometry,
    ) -> Result<DensityWeights> {
        match self {
            DcfMethod::GriddedOnes => dcf_gridded_ones(kx, ky, kernel, geometry),
            DcfMethod::Ramp => dcf_ramp(kx, ky),
        }
    }
}

/// Local sampling density at every sample: a k-space of ones is gridded and
/// the result interpolated back with the same kernel.
///
/// The density grid is treated as periodic, like the DFT it feeds, so a
/// complete Cartesian grid has exactly uniform density. Samples off the grid
/// get density 0.
pub fn gridded_density(
    kx: ArrayView2<f64>,
    ky: ArrayView2<f64>,
    kernel: &GriddingKernel,
    geometry: &GridGeometry,
) -> Result<Array2<f64>> {
    ensure_spread(kx, ky)?;
    let plan = GriddingPlan::new(kx, ky, kernel, geometry, Boundary::Periodic)?;
    let ones: Vec<C64> = (0..plan.n_samples())
        .map(|i| C64::new(if plan.is_valid(i) { 1.0 } else { 0.0 }, 0.0))
        .collect();
    let grid = plan.grid(&ones, None)?;
    let density = plan.degrid(grid.view(), None)?;
    Ok(Array2::from_shape_vec(kx.dim(), density.into_iter().map(|d| d.re).collect())
        .expect("one density per sample"))
}

/// Density compensation from the reciprocal of the gridded-ones density,
/// normalized to a maximum of one.
pub fn dcf_gridded_ones(
    kx: ArrayView2<f64>,
    ky: ArrayView2<f64>,
    kernel: &GriddingKernel,
    geometry: &GridGeometry,
) -> Result<DensityWeights> {
    let density = gridded_density(kx, ky, kernel, geometry)?;
    let peak = density.iter().cloned().fold(0.0, f64::max);
    let floor = DENSITY_FLOOR * peak;
    DensityWeights::from_unnormalized(density.mapv(|d| if d > floor { 1.0 / d } else { 0.0 }))
}

/// Ramp density compensation `|k| / max|k|`.
///
/// A sample exactly at `k = 0` takes the smallest positive weight of its
/// spoke instead of zero.
pub fn dcf_ramp(kx: ArrayView2<f64>, ky: ArrayView2<f64>) -> Result<DensityWeights> {
    if kx.dim() != ky.dim() {
        return Err(Error::Shape(format!("kx {:?} vs ky {:?}", kx.dim(), ky.dim())));
    }
    let mut radius = Array2::from_shape_fn(kx.dim(), |ix| kx[ix].hypot(ky[ix]));
    for mut spoke in radius.rows_mut() {
        let min_positive = spoke
            .iter()
            .cloned()
            .filter(|&r| r > 0.0)
            .fold(f64::INFINITY, f64::min);
        if min_positive.is_finite() {
            spoke.mapv_inplace(|r| if r > 0.0 { r } else { min_positive });
        }
    }
    DensityWeights::from_unnormalized(radius)
}

fn ensure_spread(kx: ArrayView2<f64>, ky: ArrayView2<f64>) -> Result<()> {
    let first = kx.iter().next().zip(ky.iter().next());
    let Some((&x0, &y0)) = first else {
        return Err(Error::DegenerateGeometry("empty trajectory".into()));
    };
    if kx.iter().zip(ky.iter()).all(|(&x, &y)| x == x0 && y == y0) {
        return Err(Error::DegenerateGeometry(
            "all trajectory points coincide".into(),
        ));
    }
    Ok(())
}
