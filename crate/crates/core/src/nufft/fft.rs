use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result, C64};

/// Unitary 2D FFT with DC at the array center (`fftshift ∘ fft ∘ ifftshift`).
#[derive(Clone)]
pub struct CenteredFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CenteredFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenteredFft").field("n", &self.n).finish()
    }
}

impl CenteredFft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "centered FFT needs an even size, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&self, a: &mut Array2<C64>) -> Result<()> {
        self.transform(a, &self.forward)
    }

    pub fn inverse(&self, a: &mut Array2<C64>) -> Result<()> {
        self.transform(a, &self.inverse)
    }

    fn transform(&self, a: &mut Array2<C64>, fft: &Arc<dyn Fft<f64>>) -> Result<()> {
        let n = self.n;
        if a.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "expected [{n}, {n}] array, got {:?}",
                a.dim()
            )));
        }
        if !a.is_standard_layout() {
            *a = a.as_standard_layout().into_owned();
        }
        swap_quadrants(a);
        let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];
        transform_rows(a, fft, &mut scratch);
        let mut t = a.t().as_standard_layout().into_owned();
        transform_rows(&mut t, fft, &mut scratch);
        a.assign(&t.t());
        swap_quadrants(a);
        let scale = 1.0 / n as f64;
        a.mapv_inplace(|v| v * scale);
        Ok(())
    }
}

fn transform_rows(a: &mut Array2<C64>, fft: &Arc<dyn Fft<f64>>, scratch: &mut [C64]) {
    let buffer = a.as_slice_mut().expect("standard layout array");
    fft.process_with_scratch(buffer, scratch);
}

/// Circular shift by half the size along both axes (even sizes).
pub fn swap_quadrants(a: &mut Array2<C64>) {
    let (rows, cols) = a.dim();
    let (hr, hc) = (rows / 2, cols / 2);
    for r in 0..hr {
        for c in 0..cols {
            let c2 = (c + hc) % cols;
            let tmp = a[[r, c]];
            a[[r, c]] = a[[r + hr, c2]];
            a[[r + hr, c2]] = tmp;
        }
    }
}

/// Centered unitary forward FFT of a square even-sized array.
pub fn fft_centered(image: ArrayView2<C64>) -> Result<Array2<C64>> {
    let mut out = image.as_standard_layout().into_owned();
    CenteredFft::new(square_side(&out)?)?.forward(&mut out)?;
    Ok(out)
}

/// Centered unitary inverse FFT of a square even-sized array.
pub fn ifft_centered(kspace: ArrayView2<C64>) -> Result<Array2<C64>> {
    let mut out = kspace.as_standard_layout().into_owned();
    CenteredFft::new(square_side(&out)?)?.inverse(&mut out)?;
    Ok(out)
}

fn square_side(a: &Array2<C64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::Shape(format!("expected a square array, got [{r}, {c}]")));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Array2<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn norm(a: &Array2<C64>) -> f64 {
        a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn parseval() {
        let x = random(32, 1);
        let k = fft_centered(x.view()).unwrap();
        assert!((norm(&x) - norm(&k)).abs() < 1e-12 * norm(&x));
    }

    #[test]
    fn inverse_undoes_forward() {
        let x = random(16, 2);
        let back = ifft_centered(fft_centered(x.view()).unwrap().view()).unwrap();
        let err = norm(&(&back - &x));
        assert!(err < 1e-12 * norm(&x));
    }

    #[test]
    fn centered_impulse_has_flat_spectrum() {
        let n = 8;
        let mut x = Array2::zeros((n, n));
        x[[n / 2, n / 2]] = C64::new(1.0, 0.0);
        let k = fft_centered(x.view()).unwrap();
        for v in k.iter() {
            assert!((v - C64::new(1.0 / n as f64, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn dc_lands_at_center() {
        let n = 6;
        let x = Array2::from_elem((n, n), C64::new(1.0, 0.0));
        let k = fft_centered(x.view()).unwrap();
        assert!((k[[n / 2, n / 2]] - C64::new(n as f64, 0.0)).norm() < 1e-12);
        let off: f64 = k.iter().map(|v| v.norm()).sum::<f64>() - n as f64;
        assert!(off.abs() < 1e-12);
    }

    #[test]
    fn odd_sizes_are_rejected() {
        assert!(CenteredFft::new(7).is_err());
        assert!(fft_centered(Array2::zeros((5, 5)).view()).is_err());
    }
}
