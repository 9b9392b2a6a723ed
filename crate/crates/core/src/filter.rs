//! Post-reconstruction k-space filters.
//!
//! Weights live on the centered k-space of the final `n`x`n` image, where
//! cell `(r, c)` sits at `k = (c - n/2, r - n/2)` in the same cycles-per-FOV
//! units as the trajectory.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::nufft::CenteredFft;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    None,
    /// `f = 1/2 + atan(β (k_c - |k|) / k_c) / π`
    Arctan,
    /// 1 inside `|k| <= k_c`, 0 outside.
    #[default]
    HardCircle,
}

/// Unit of the cutoff radius.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffUnit {
    /// Trajectory units (k-space cells of the target matrix).
    #[default]
    Cells,
    /// Fraction of the half-matrix `n/2`; 1 reaches the k-space edge.
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoff: f64,
    pub unit: CutoffUnit,
    pub beta: f64,
}

pub const DEFAULT_ARCTAN_BETA: f64 = 100.0;

impl FilterSpec {
    pub fn none() -> Self {
        Self {
            kind: FilterKind::None,
            cutoff: 1.0,
            unit: CutoffUnit::Normalized,
            beta: DEFAULT_ARCTAN_BETA,
        }
    }

    pub fn hard_circle(cutoff: f64, unit: CutoffUnit) -> Self {
        Self {
            kind: FilterKind::HardCircle,
            cutoff,
            unit,
            beta: DEFAULT_ARCTAN_BETA,
        }
    }

    pub fn arctan(cutoff: f64, unit: CutoffUnit, beta: f64) -> Self {
        Self {
            kind: FilterKind::Arctan,
            cutoff,
            unit,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != FilterKind::None && !(self.cutoff > 0.0) {
            return Err(Error::Parameter(format!(
                "filter cutoff must be > 0, got {}",
                self.cutoff
            )));
        }
        if self.kind == FilterKind::Arctan && !(self.beta > 0.0) {
            return Err(Error::Parameter(format!(
                "filter beta must be > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Cutoff radius in k-space cells for an `n`x`n` image.
    pub fn cutoff_cells(&self, n: usize) -> f64 {
        match self.unit {
            CutoffUnit::Cells => self.cutoff,
            CutoffUnit::Normalized => self.cutoff * n as f64 / 2.0,
        }
    }
}

/// Filter weights over the centered k-space of an `n`x`n` image.
pub fn filter_weights(spec: &FilterSpec, n: usize) -> Result<Array2<f64>> {
    spec.validate()?;
    let kc = spec.cutoff_cells(n);
    let half = (n / 2) as f64;
    Ok(Array2::from_shape_fn((n, n), |(r, c)| {
        let radius = (c as f64 - half).hypot(r as f64 - half);
        match spec.kind {
            FilterKind::None => 1.0,
            FilterKind::HardCircle => {
                if radius <= kc {
                    1.0
                } else {
                    0.0
                }
            }
            FilterKind::Arctan => {
                0.5 + (spec.beta * (kc - radius) / kc).atan() / std::f64::consts::PI
            }
        }
    }))
}

/// FFT, multiply by the filter weights, inverse FFT.
pub fn apply_filter(image: &Image, spec: &FilterSpec) -> Result<Image> {
    let (rows, cols) = image.dim();
    if rows != cols {
        return Err(Error::Shape(format!(
            "filtering needs a square image, got [{rows}, {cols}]"
        )));
    }
    if spec.kind == FilterKind::None {
        spec.validate()?;
        return Ok(image.clone());
    }
    let weights = filter_weights(spec, rows)?;
    let fft = CenteredFft::new(rows)?;
    let mut k = image.pixels().to_owned();
    fft.forward(&mut k)?;
    k.zip_mut_with(&weights, |v, &w| *v *= w);
    fft.inverse(&mut k)?;
    Ok(Image::new(k))
}
