//! Image comparison: quantile normalization, symmetric cropping, pixel-wise
//! differences, NRMSE and SSIM. Everything works on magnitudes.

use ndarray::{s, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{crop_centered, Image};
use crate::{Error, Result};

pub const DEFAULT_QUANTILE: f64 = 0.95;

/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `q`-quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Parameter("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Parameter(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Magnitudes divided by their `q`-quantile.
pub fn quantile_normalize(magnitude: ArrayView2<f64>, q: f64) -> Result<Array2<f64>> {
    let values: Vec<f64> = magnitude.iter().cloned().collect();
    let level = quantile(&values, q)?;
    if !(level > 0.0) {
        return Err(Error::ZeroData(format!("{q}-quantile of the image is {level}")));
    }
    Ok(magnitude.mapv(|v| v / level))
}

fn check_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("images shaped {a:?} and {b:?}")));
    }
    Ok(())
}

fn mask_or_all(mask: Option<ArrayView2<bool>>, dim: (usize, usize)) -> Result<Array2<bool>> {
    match mask {
        Some(m) => {
            check_same(m.dim(), dim)?;
            Ok(m.to_owned())
        }
        None => Ok(Array2::from_elem(dim, true)),
    }
}

/// `sqrt(mean((|x| - |ref|)²)) / mean(|ref|)` over the mask.
pub fn nrmse(
    x: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    mask: Option<ArrayView2<bool>>,
) -> Result<f64> {
    check_same(x.dim(), reference.dim())?;
    let mask = mask_or_all(mask, x.dim())?;
    let mut count = 0usize;
    let mut sq = 0.0;
    let mut level = 0.0;
    Zip::from(&x)
        .and(&reference)
        .and(&mask)
        .for_each(|&a, &b, &m| {
            if m {
                count += 1;
                sq += (a.abs() - b.abs()).powi(2);
                level += b.abs();
            }
        });
    if count == 0 {
        return Err(Error::Parameter("metric mask is empty".into()));
    }
    let mean_ref = level / count as f64;
    if !(mean_ref > 0.0) {
        return Err(Error::ZeroData("reference has zero mean over the mask".into()));
    }
    Ok((sq / count as f64).sqrt() / mean_ref)
}

fn gaussian_window() -> Array2<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w = Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(r, c)| {
        let d2 = (r as f64 - half).powi(2) + (c as f64 - half).powi(2);
        (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let total = w.sum();
    w / total
}

/// Local SSIM map `[rows - 10, cols - 10]`, one value per window position
/// that fits entirely inside the image, with dynamic range 1.
pub fn ssim_map(x: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_same(x.dim(), reference.dim())?;
    let (rows, cols) = x.dim();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM window {SSIM_WINDOW} larger than image [{rows}, {cols}]"
        )));
    }
    let window = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (xa, ya) = (x.mapv(f64::abs), reference.mapv(f64::abs));
    Ok(Array2::from_shape_fn(
        (rows - SSIM_WINDOW + 1, cols - SSIM_WINDOW + 1),
        |(r, c)| {
            let px = xa.slice(s![r..r + SSIM_WINDOW, c..c + SSIM_WINDOW]);
            let py = ya.slice(s![r..r + SSIM_WINDOW, c..c + SSIM_WINDOW]);
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            Zip::from(&window).and(&px).and(&py).for_each(|&w, &a, &b| {
                mx += w * a;
                my += w * b;
                sxx += w * a * a;
                syy += w * b * b;
                sxy += w * a * b;
            });
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
        },
    ))
}

/// Mean local SSIM over window centers inside the mask.
pub fn ssim(
    x: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    mask: Option<ArrayView2<bool>>,
) -> Result<f64> {
    let map = ssim_map(x, reference)?;
    let mask = mask_or_all(mask, x.dim())?;
    let h = SSIM_WINDOW / 2;
    let centers = mask.slice(s![h..h + map.nrows(), h..h + map.ncols()]);
    let (mut total, mut count) = (0.0, 0usize);
    Zip::from(&map).and(&centers).for_each(|&v, &m| {
        if m {
            total += v;
            count += 1;
        }
    });
    if count == 0 {
        return Err(Error::Parameter(
            "no SSIM window center lies inside the mask".into(),
        ));
    }
    Ok(total / count as f64)
}

/// `|x| - |ref|` per pixel.
pub fn diff_map(x: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_same(x.dim(), reference.dim())?;
    Ok(Zip::from(&x)
        .and(&reference)
        .map_collect(|&a, &b| a.abs() - b.abs()))
}

/// Symmetrically crops both arrays to their common extent. Each dimension
/// must differ by an even number of pixels so the crop stays centered.
pub fn crop_to_common<T: Clone>(
    a: ArrayView2<T>,
    b: ArrayView2<T>,
) -> Result<(Array2<T>, Array2<T>)> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    if (ar as isize - br as isize) % 2 != 0 || (ac as isize - bc as isize) % 2 != 0 {
        return Err(Error::Shape(format!(
            "cannot crop [{ar}, {ac}] and [{br}, {bc}] symmetrically to a common size"
        )));
    }
    let rows = ar.min(br);
    let cols = ac.min(bc);
    Ok((crop_centered(a, rows, cols)?, crop_centered(b, rows, cols)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub nrmse: f64,
    pub ssim: f64,
    pub normalization_quantile: f64,
    /// `[rows, cols]` compared after cropping.
    pub shape: (usize, usize),
    pub mask_pixels: usize,
    #[serde(skip)]
    pub diff_map: Array2<f64>,
    #[serde(skip)]
    pub mask_used: Array2<bool>,
}

/// Full comparison protocol: symmetric crop to a common FOV, quantile
/// normalization of both magnitudes, then NRMSE, SSIM and the difference map.
///
/// The mask may be given at the reference's original size or at the cropped
/// size; without one every pixel counts.
pub fn compare(
    x: &Image,
    reference: &Image,
    mask: Option<ArrayView2<bool>>,
    q: f64,
) -> Result<ComparisonReport> {
    let (xc, rc) = crop_to_common(x.magnitude().view(), reference.magnitude().view())?;
    let shape = xc.dim();
    let mask = match mask {
        Some(m) if m.dim() == shape => m.to_owned(),
        Some(m) if m.dim() == reference.dim() => crop_centered(m, shape.0, shape.1)?,
        Some(m) => {
            return Err(Error::Shape(format!(
                "mask {:?} matches neither the reference {:?} nor the compared area {shape:?}",
                m.dim(),
                reference.dim()
            )))
        }
        None => Array2::from_elem(shape, true),
    };
    let xn = quantile_normalize(xc.view(), q)?;
    let rn = quantile_normalize(rc.view(), q)?;
    Ok(ComparisonReport {
        nrmse: nrmse(xn.view(), rn.view(), Some(mask.view()))?,
        ssim: ssim(xn.view(), rn.view(), Some(mask.view()))?,
        normalization_quantile: q,
        shape,
        mask_pixels: mask.iter().filter(|&&m| m).count(),
        diff_map: diff_map(xn.view(), rn.view())?,
        mask_used: mask,
    })
}
