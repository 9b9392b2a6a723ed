use ndarray::{Array2, ArrayView2};

use super::GriddingKernel;
use crate::data::GridGeometry;
use crate::{Error, Result, C64};

/// What happens to kernel taps that fall off the oversampled grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Taps outside the grid are discarded. Used by the NUFFT.
    Drop,
    /// Taps wrap around to the opposite edge.
    Periodic,
}

/// Precomputed interpolation weights linking non-Cartesian samples to the
/// oversampled Cartesian grid.
///
/// Each sample touches `taps x taps` cells. Gridding (`grid`) and degridding
/// (`degrid`) walk the same weights, so the pair is an exact adjoint.
/// Samples whose grid coordinate lies outside `[0, n_os - 1]` on either axis
/// are dropped and counted.
#[derive(Clone, Debug)]
pub struct GriddingPlan {
    grid_size: usize,
    n_samples: usize,
    taps: usize,
    // per sample, per tap: cell index or -1
    col: Vec<i32>,
    row: Vec<i32>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    valid: Vec<bool>,
    dropped: usize,
}

impl GriddingPlan {
    /// `kx`/`ky` in trajectory units, iterated in standard (row-major) order.
    pub fn new(
        kx: ArrayView2<f64>,
        ky: ArrayView2<f64>,
        kernel: &GriddingKernel,
        geometry: &GridGeometry,
        boundary: Boundary,
    ) -> Result<Self> {
        if kx.dim() != ky.dim() {
            return Err(Error::Shape(format!(
                "kx {:?} and ky {:?} differ",
                kx.dim(),
                ky.dim()
            )));
        }
        let n = geometry.grid_size;
        let n_samples = kx.len();
        let taps = kernel.width() + 1;
        let radius = kernel.radius();
        let mut plan = Self {
            grid_size: n,
            n_samples,
            taps,
            col: vec![-1; n_samples * taps],
            row: vec![-1; n_samples * taps],
            wx: vec![0.0; n_samples * taps],
            wy: vec![0.0; n_samples * taps],
            valid: vec![false; n_samples],
            dropped: 0,
        };
        let upper = (n - 1) as f64;
        for (i, (&x, &y)) in kx.iter().zip(ky.iter()).enumerate() {
            let ux = geometry.to_grid(x);
            let uy = geometry.to_grid(y);
            if !(0.0..=upper).contains(&ux) || !(0.0..=upper).contains(&uy) {
                plan.dropped += 1;
                continue;
            }
            plan.valid[i] = true;
            let span = i * taps..(i + 1) * taps;
            fill_axis(
                ux,
                radius,
                n,
                boundary,
                kernel,
                &mut plan.col[span.clone()],
                &mut plan.wx[span.clone()],
            );
            fill_axis(
                uy,
                radius,
                n,
                boundary,
                kernel,
                &mut plan.row[span.clone()],
                &mut plan.wy[span],
            );
        }
        Ok(plan)
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Number of samples that fell outside the grid.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn dropped_fraction(&self) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            self.dropped as f64 / self.n_samples as f64
        }
    }

    pub fn is_valid(&self, sample: usize) -> bool {
        self.valid[sample]
    }

    /// Convolves samples onto the grid: `g[j] = Σᵢ wᵢ sᵢ K(uᵢ - j)`.
    pub fn grid(&self, samples: &[C64], weights: Option<&[f64]>) -> Result<Array2<C64>> {
        self.check_len(samples.len())?;
        if let Some(w) = weights {
            self.check_len(w.len())?;
        }
        let n = self.grid_size;
        let mut grid = Array2::<C64>::zeros((n, n));
        let out = grid.as_slice_mut().expect("fresh array");
        let t = self.taps;
        for (i, &s) in samples.iter().enumerate() {
            if !self.valid[i] {
                continue;
            }
            let s = match weights {
                Some(w) => s * w[i],
                None => s,
            };
            let base = i * t;
            for a in 0..t {
                let r = self.row[base + a];
                if r < 0 {
                    continue;
                }
                let sy = s * self.wy[base + a];
                let offset = r as usize * n;
                for b in 0..t {
                    let c = self.col[base + b];
                    if c < 0 {
                        continue;
                    }
                    out[offset + c as usize] += sy * self.wx[base + b];
                }
            }
        }
        Ok(grid)
    }

    /// Interpolates the grid at every sample location; adjoint of [`grid`].
    ///
    /// [`grid`]: GriddingPlan::grid
    pub fn degrid(&self, grid: ArrayView2<C64>, weights: Option<&[f64]>) -> Result<Vec<C64>> {
        let n = self.grid_size;
        if grid.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "grid {:?} does not match plan size {n}",
                grid.dim()
            )));
        }
        if let Some(w) = weights {
            self.check_len(w.len())?;
        }
        let grid = grid.as_standard_layout();
        let g = grid.as_slice().expect("standard layout");
        let t = self.taps;
        let mut out = vec![C64::default(); self.n_samples];
        for (i, value) in out.iter_mut().enumerate() {
            if !self.valid[i] {
                continue;
            }
            let base = i * t;
            let mut acc = C64::default();
            for a in 0..t {
                let r = self.row[base + a];
                if r < 0 {
                    continue;
                }
                let offset = r as usize * n;
                let mut line = C64::default();
                for b in 0..t {
                    let c = self.col[base + b];
                    if c < 0 {
                        continue;
                    }
                    line += g[offset + c as usize] * self.wx[base + b];
                }
                acc += line * self.wy[base + a];
            }
            *value = match weights {
                Some(w) => acc * w[i],
                None => acc,
            };
        }
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_samples {
            return Err(Error::Shape(format!(
                "expected {} samples, got {len}",
                self.n_samples
            )));
        }
        Ok(())
    }
}

fn fill_axis(
    u: f64,
    radius: f64,
    n: usize,
    boundary: Boundary,
    kernel: &GriddingKernel,
    index: &mut [i32],
    weight: &mut [f64],
) {
    let first = (u - radius).ceil() as i64;
    for (tap, (idx, w)) in index.iter_mut().zip(weight.iter_mut()).enumerate() {
        let cell = first + tap as i64;
        let value = kernel.value(u - cell as f64);
        if value == 0.0 {
            continue;
        }
        let resolved = match boundary {
            Boundary::Drop if (0..n as i64).contains(&cell) => Some(cell),
            Boundary::Drop => None,
            Boundary::Periodic => Some(cell.rem_euclid(n as i64)),
        };
        if let Some(cell) = resolved {
            *idx = cell as i32;
            *w = value;
        }
    }
}
