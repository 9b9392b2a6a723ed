//! Core value types: the k-space dataset, the gridding geometry derived from
//! its trajectory, and the reconstructed image.
//!
//! Arrays are kept in a fixed canonical order: samples `[coil, spoke, read]`,
//! trajectory `[axis, spoke, read]` with axis order `(x, y, z)`, images and
//! sensitivity maps `[row, col]` with `x` running along columns.
//!
//! Trajectory coordinates are in cycles per target field of view: a full
//! radial spoke runs from `-N/2` to `N/2` where `N` is the reconstruction
//! matrix, and adjacent readout samples are `1 / oversampling` apart. This is
//! the layout of the public challenge data. The coordinates are never
//! normalized per axis; use [`rescale_trajectory`] when a dataset arrives in
//! other units.

use std::fmt;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Multi-coil non-Cartesian acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceDataset {
    /// `[coil, spoke, read]`
    pub samples: Array3<C64>,
    /// `[axis, spoke, read]`, axis order `(x, y, z)`
    pub trajectory: Array3<f64>,
    /// Precomputed coil sensitivities `[coil, row, col]`.
    pub sensitivities: Option<Array3<C64>>,
    /// Receiver noise covariance `[coil, coil]`.
    pub noise_covariance: Option<Array2<C64>>,
    /// Set once the coil dimension has been pre-whitened.
    pub whitened: bool,
}

impl KSpaceDataset {
    pub fn new(samples: Array3<C64>, trajectory: Array3<f64>) -> Self {
        Self {
            samples,
            trajectory,
            sensitivities: None,
            noise_covariance: None,
            whitened: false,
        }
    }

    pub fn with_sensitivities(mut self, maps: Array3<C64>) -> Self {
        self.sensitivities = Some(maps);
        self
    }

    pub fn with_noise_covariance(mut self, covariance: Array2<C64>) -> Self {
        self.noise_covariance = Some(covariance);
        self
    }

    pub fn n_coils(&self) -> usize {
        self.samples.len_of(Axis(0))
    }

    pub fn n_spokes(&self) -> usize {
        self.samples.len_of(Axis(1))
    }

    pub fn n_read(&self) -> usize {
        self.samples.len_of(Axis(2))
    }

    /// Checks every dataset invariant and lists the violations.
    pub fn validate(&self) -> ValidationReport {
        let mut findings = Vec::new();
        let (nc, ns, nr) = self.samples.dim();
        let (na, ts, tr) = self.trajectory.dim();

        if nc == 0 || ns == 0 || nr == 0 {
            findings.push(Finding::EmptyDimension(format!(
                "samples shaped [{nc}, {ns}, {nr}]"
            )));
        }
        if (ts, tr) != (ns, nr) {
            findings.push(Finding::ShapeMismatch(format!(
                "samples [{nc}, {ns}, {nr}] vs trajectory [{na}, {ts}, {tr}]"
            )));
        }
        if !(2..=3).contains(&na) {
            findings.push(Finding::TrajectoryAxes(na));
        } else if na == 3 {
            let max_z = self
                .trajectory
                .index_axis(Axis(0), 2)
                .iter()
                .fold(0.0f64, |m, z| m.max(z.abs()));
            if max_z != 0.0 {
                findings.push(Finding::NonPlanarTrajectory { max_z });
            }
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            findings.push(Finding::NonFinite("samples"));
        }
        if self.trajectory.iter().any(|v| !v.is_finite()) {
            findings.push(Finding::NonFinite("trajectory"));
        }
        if let Some(maps) = &self.sensitivities {
            let (mc, mr, mcol) = maps.dim();
            if mc != nc || mr != mcol || mr == 0 {
                findings.push(Finding::SensitivityShape(format!(
                    "maps [{mc}, {mr}, {mcol}] for {nc} coils"
                )));
            }
            if maps.iter().any(|v| !v.is_finite()) {
                findings.push(Finding::NonFinite("sensitivities"));
            }
        }
        if let Some(cov) = &self.noise_covariance {
            findings.extend(check_covariance(cov.view(), nc));
        }
        ValidationReport { findings }
    }

    /// Returns an error listing every violated invariant, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(
                report.findings.iter().map(|f| f.to_string()).collect(),
            ))
        }
    }

    /// Retrospective spoke undersampling. Samples and trajectory are
    /// subset with the same spoke indices; side data is carried over.
    pub fn undersample(&self, scheme: Undersampling) -> Result<KSpaceDataset> {
        let spokes = scheme.spoke_indices(self.n_spokes())?;
        Ok(KSpaceDataset {
            samples: self.samples.select(Axis(1), &spokes),
            trajectory: self.trajectory.select(Axis(1), &spokes),
            sensitivities: self.sensitivities.clone(),
            noise_covariance: self.noise_covariance.clone(),
            whitened: self.whitened,
        })
    }

    /// In-plane trajectory coordinates `(kx, ky)` as `[spoke, read]` views.
    pub fn kx_ky(&self) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        (
            self.trajectory.index_axis(Axis(0), 0),
            self.trajectory.index_axis(Axis(0), 1),
        )
    }
}

fn check_covariance(cov: ArrayView2<C64>, n_coils: usize) -> Vec<Finding> {
    let mut findings = Vec::new();
    if cov.dim() != (n_coils, n_coils) {
        findings.push(Finding::ShapeMismatch(format!(
            "noise covariance {:?} for {n_coils} coils",
            cov.dim()
        )));
        return findings;
    }
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let hermitian = (0..n_coils)
        .all(|i| (0..n_coils).all(|j| (cov[[i, j]] - cov[[j, i]].conj()).norm() <= tol));
    if !hermitian {
        findings.push(Finding::CovarianceNotHermitian);
    }
    if (0..n_coils).any(|i| !(cov[[i, i]].re > 0.0) || cov[[i, i]].im.abs() > tol) {
        findings.push(Finding::CovarianceDiagonal);
    }
    findings
}

/// Outcome of [`KSpaceDataset::validate`]; an empty report means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Finding {
    EmptyDimension(String),
    ShapeMismatch(String),
    TrajectoryAxes(usize),
    NonPlanarTrajectory { max_z: f64 },
    NonFinite(&'static str),
    SensitivityShape(String),
    CovarianceNotHermitian,
    CovarianceDiagonal,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::EmptyDimension(s) => write!(f, "empty dimension: {s}"),
            Finding::ShapeMismatch(s) => write!(f, "shape mismatch: {s}"),
            Finding::TrajectoryAxes(n) => write!(f, "trajectory has {n} axes, expected 3"),
            Finding::NonPlanarTrajectory { max_z } => {
                write!(f, "non-planar trajectory: |kz| up to {max_z}")
            }
            Finding::NonFinite(what) => write!(f, "non-finite values in {what}"),
            Finding::SensitivityShape(s) => write!(f, "sensitivity shape: {s}"),
            Finding::CovarianceNotHermitian => write!(f, "noise covariance is not Hermitian"),
            Finding::CovarianceDiagonal => {
                write!(f, "noise covariance diagonal is not real positive")
            }
        }
    }
}

/// Retrospective undersampling schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme", content = "value")]
pub enum Undersampling {
    /// Keep spokes `0, r, 2r, ...`.
    SkipEvery(usize),
    /// Keep spokes `0..p`.
    FirstSpokes(usize),
}

impl Undersampling {
    pub fn spoke_indices(&self, n_spokes: usize) -> Result<Vec<usize>> {
        match *self {
            Undersampling::SkipEvery(0) => {
                Err(Error::Parameter("undersampling factor must be >= 1".into()))
            }
            Undersampling::SkipEvery(r) => Ok((0..n_spokes).step_by(r).collect()),
            Undersampling::FirstSpokes(0) => {
                Err(Error::Parameter("spoke count must be >= 1".into()))
            }
            Undersampling::FirstSpokes(p) if p > n_spokes => Err(Error::Range(format!(
                "requested {p} spokes from a dataset with {n_spokes}"
            ))),
            Undersampling::FirstSpokes(p) => Ok((0..p).collect()),
        }
    }

    /// Short tag used in output file names.
    pub fn label(&self) -> String {
        match self {
            Undersampling::SkipEvery(r) => format!("R{r}"),
            Undersampling::FirstSpokes(p) => format!("P{p}"),
        }
    }
}

/// Reconstruction matrix and oversampled gridding matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Side length `n` of the reconstructed image.
    pub matrix_size: usize,
    /// Side length `n_os` of the oversampled gridding matrix (even).
    pub grid_size: usize,
    /// Effective ratio `n_os / n`.
    pub oversampling_ratio: f64,
    /// Readout sample spacing in trajectory units (`1 / FOV_os`).
    pub delta_k: f64,
    /// Largest in-plane `|k|` of the trajectory; the acquired data support.
    pub max_radius: f64,
}

impl GridGeometry {
    /// Geometry for an `n`x`n` image gridded at the given oversampling.
    pub fn new(matrix_size: usize, oversampling_ratio: f64) -> Result<Self> {
        if matrix_size < 2 || !matrix_size.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "matrix size must be even and >= 2, got {matrix_size}"
            )));
        }
        if !(oversampling_ratio >= 1.0) || !oversampling_ratio.is_finite() {
            return Err(Error::Parameter(format!(
                "oversampling ratio must be >= 1, got {oversampling_ratio}"
            )));
        }
        let grid_size = ceil_even(matrix_size as f64 * oversampling_ratio);
        Ok(Self {
            matrix_size,
            grid_size,
            oversampling_ratio: grid_size as f64 / matrix_size as f64,
            delta_k: 1.0 / oversampling_ratio,
            max_radius: matrix_size as f64 / 2.0,
        })
    }

    /// Derives the geometry from the trajectory itself.
    ///
    /// The matrix size is twice the largest in-plane radius (rounded up to
    /// even). The oversampling ratio is the reciprocal of the median spacing
    /// between consecutive readout samples, floored at 1, unless `ratio` is
    /// given explicitly.
    pub fn from_trajectory(trajectory: ArrayView3<f64>, ratio: Option<f64>) -> Result<Self> {
        if trajectory.len_of(Axis(0)) < 2 {
            return Err(Error::Shape("trajectory needs at least x and y axes".into()));
        }
        let kx = trajectory.index_axis(Axis(0), 0);
        let ky = trajectory.index_axis(Axis(0), 1);
        let max_radius = kx
            .iter()
            .zip(ky.iter())
            .fold(0.0f64, |m, (x, y)| m.max(x.hypot(*y)));
        if !(max_radius > 0.0) || !max_radius.is_finite() {
            return Err(Error::DegenerateGeometry(
                "trajectory has no extent (all points at k = 0)".into(),
            ));
        }
        let matrix_size = ceil_even(2.0 * max_radius);
        let spacing = median_readout_spacing(kx, ky);
        let ratio = match (ratio, spacing) {
            (Some(r), _) => r,
            (None, Some(dk)) => (1.0 / dk).max(1.0),
            (None, None) => {
                return Err(Error::DegenerateGeometry(
                    "cannot infer oversampling from single-point readouts; set an override".into(),
                ))
            }
        };
        let mut geometry = GridGeometry::new(matrix_size, ratio)?;
        geometry.max_radius = max_radius;
        if let Some(dk) = spacing {
            geometry.delta_k = dk;
        }
        Ok(geometry)
    }

    /// Factor mapping trajectory units onto oversampled grid cells.
    pub fn grid_scale(&self) -> f64 {
        self.grid_size as f64 / self.matrix_size as f64
    }

    /// Continuous grid coordinate of a trajectory value; DC sits at `n_os / 2`.
    pub fn to_grid(&self, k: f64) -> f64 {
        k * self.grid_scale() + (self.grid_size / 2) as f64
    }
}

fn median_readout_spacing(kx: ArrayView2<f64>, ky: ArrayView2<f64>) -> Option<f64> {
    let mut steps: Vec<f64> = Vec::new();
    for (sx, sy) in kx.outer_iter().zip(ky.outer_iter()) {
        for t in 1..sx.len() {
            let d = (sx[t] - sx[t - 1]).hypot(sy[t] - sy[t - 1]);
            if d > 0.0 && d.is_finite() {
                steps.push(d);
            }
        }
    }
    if steps.is_empty() {
        return None;
    }
    steps.sort_by(f64::total_cmp);
    Some(steps[steps.len() / 2])
}

/// Smallest even integer `>= x`, ignoring float noise just above an integer.
pub fn ceil_even(x: f64) -> usize {
    let c = (x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as usize;
    c + c % 2
}

/// Scales every trajectory axis by the same factor.
pub fn rescale_trajectory(trajectory: ArrayView3<f64>, factor: f64) -> Array3<f64> {
    trajectory.mapv(|k| k * factor)
}

/// Complex image on a square (or explicitly cropped) pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Array2<C64>,
}

impl Image {
    pub fn new(pixels: Array2<C64>) -> Self {
        Self { pixels }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(Array2::zeros((n, n)))
    }

    pub fn from_real(values: ArrayView2<f64>) -> Self {
        Self::new(values.mapv(|v| C64::new(v, 0.0)))
    }

    pub fn pixels(&self) -> &Array2<C64> {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut Array2<C64> {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Array2<C64> {
        self.pixels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    /// Side length of a square image (row count otherwise).
    pub fn fov_pixels(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.pixels.mapv(|v| v.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    pub fn crop_centered(&self, rows: usize, cols: usize) -> Result<Image> {
        crop_centered(self.pixels.view(), rows, cols).map(Image::new)
    }
}

/// Offset of a centered window of length `inner` within length `outer`.
///
/// Keeps the DC index (`len / 2`) of both arrays aligned for even lengths.
pub fn centered_offset(outer: usize, inner: usize) -> usize {
    outer / 2 - inner / 2
}

/// Symmetric crop about the array center.
pub fn crop_centered<T: Clone>(a: ArrayView2<T>, rows: usize, cols: usize) -> Result<Array2<T>> {
    let (r, c) = a.dim();
    if rows > r || cols > c {
        return Err(Error::Shape(format!(
            "cannot crop [{r}, {c}] to [{rows}, {cols}]"
        )));
    }
    let (r0, c0) = (centered_offset(r, rows), centered_offset(c, cols));
    Ok(a.slice(s![r0..r0 + rows, c0..c0 + cols]).to_owned())
}

/// Zero padding about the array center; inverse of [`crop_centered`].
pub fn pad_centered<T: Clone + Zero>(
    a: ArrayView2<T>,
    rows: usize,
    cols: usize,
) -> Result<Array2<T>> {
    let (r, c) = a.dim();
    if rows < r || cols < c {
        return Err(Error::Shape(format!(
            "cannot pad [{r}, {c}] to [{rows}, {cols}]"
        )));
    }
    let (r0, c0) = (centered_offset(rows, r), centered_offset(cols, c));
    let mut out = Array2::zeros((rows, cols));
    out.slice_mut(s![r0..r0 + r, c0..c0 + c]).assign(&a);
    Ok(out)
}
