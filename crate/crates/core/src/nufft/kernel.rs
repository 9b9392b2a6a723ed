use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How a kernel value between two table entries is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelLookup {
    Nearest,
    #[default]
    Linear,
}

/// Precomputed separable Kaiser-Bessel gridding kernel.
///
/// The table holds the window `I0(β·sqrt(1 - (2r/W)²)) / I0(β)` sampled
/// uniformly on `[0, W/2]`, so `table[0] == 1` and the last entry sits exactly
/// on the kernel edge. Lookups are scaled so that the one-dimensional kernel
/// placed on a grid node sums to one over the integer offsets it touches.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddingKernel {
    width: usize,
    beta: f64,
    table: Vec<f64>,
    lookup: KernelLookup,
    scale: f64,
}

impl GriddingKernel {
    /// Kernel with the shape parameter chosen for the given oversampling.
    pub fn kaiser_bessel(width: usize, table_points: usize, oversampling: f64) -> Result<Self> {
        if !(oversampling >= 1.0) || !oversampling.is_finite() {
            return Err(Error::Parameter(format!(
                "kernel oversampling ratio must be >= 1, got {oversampling}"
            )));
        }
        Self::with_beta(width, table_points, kaiser_bessel_beta(width, oversampling))
    }

    pub fn with_beta(width: usize, table_points: usize, beta: f64) -> Result<Self> {
        if width < 2 {
            return Err(Error::Parameter(format!("kernel width must be >= 2, got {width}")));
        }
        if table_points < 100 {
            return Err(Error::Parameter(format!(
                "kernel table needs >= 100 points, got {table_points}"
            )));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Parameter(format!("invalid Kaiser-Bessel beta {beta}")));
        }
        let half = width as f64 / 2.0;
        let norm = bessel_i0(beta);
        let table = (0..table_points)
            .map(|i| {
                let r = half * i as f64 / (table_points - 1) as f64;
                let u = (1.0 - (r / half).powi(2)).max(0.0);
                bessel_i0(beta * u.sqrt()) / norm
            })
            .collect();
        let mut kernel = Self {
            width,
            beta,
            table,
            lookup: KernelLookup::Linear,
            scale: 1.0,
        };
        kernel.normalize();
        Ok(kernel)
    }

    pub fn with_lookup(mut self, lookup: KernelLookup) -> Self {
        self.lookup = lookup;
        self.normalize();
        self
    }

    fn normalize(&mut self) {
        self.scale = 1.0;
        let mass: f64 = self.node_offsets().map(|d| self.value(d as f64)).sum();
        self.scale = 1.0 / mass;
    }

    /// Integer offsets from a grid node that fall inside the kernel support.
    pub fn node_offsets(&self) -> impl Iterator<Item = isize> {
        let reach = (self.width / 2) as isize;
        -reach..=reach
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> f64 {
        self.width as f64 / 2.0
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lookup(&self) -> KernelLookup {
        self.lookup
    }

    /// Raw window samples, peak 1 at `r = 0`.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Kernel weight at distance `r` (grid cells) along one axis.
    pub fn value(&self, r: f64) -> f64 {
        let r = r.abs();
        let half = self.radius();
        if r > half {
            return 0.0;
        }
        let last = self.table.len() - 1;
        let pos = r / half * last as f64;
        let raw = match self.lookup {
            KernelLookup::Nearest => self.table[(pos.round() as usize).min(last)],
            KernelLookup::Linear => {
                let i = pos.floor() as usize;
                if i >= last {
                    self.table[last]
                } else {
                    let frac = pos - i as f64;
                    self.table[i] + frac * (self.table[i + 1] - self.table[i])
                }
            }
        };
        raw * self.scale
    }
}

/// Shape parameter minimizing aliasing for a given width and oversampling
/// (`π·sqrt((W/α)²(α - 1/2)² - 0.8)`, clamped at zero).
pub fn kaiser_bessel_beta(width: usize, oversampling: f64) -> f64 {
    let w = width as f64;
    let arg = (w / oversampling).powi(2) * (oversampling - 0.5).powi(2) - 0.8;
    std::f64::consts::PI * arg.max(0.0).sqrt()
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}
