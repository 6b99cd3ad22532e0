use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::PeriodicGrid;

/// Forward/inverse discrete Fourier transform of real grid fields.
///
/// The layout of the spectral array is internal: in 2d it is stored
/// transposed. Every spectral multiplier used by the crate is symmetric in
/// the two axes or is itself produced by [`Transform::forward`], so the
/// layout never leaks.
#[derive(Clone)]
pub struct Transform {
    grid: PeriodicGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("grid", &self.grid).finish()
    }
}

impl Transform {
    pub fn new(grid: PeriodicGrid) -> Self {
        let mut planner = FftPlanner::new();
        Transform {
            grid,
            forward: planner.plan_fft_forward(grid.n()),
            inverse: planner.plan_fft_inverse(grid.n()),
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.apply(&self.forward, &mut buf);
        buf
    }

    /// Inverse transform, including the `1 / N^d` normalization. The imaginary
    /// part is discarded.
    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.apply(&self.inverse, &mut spectrum);
        let scale = 1.0 / self.grid.len() as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    pub fn inverse_into(&self, spectrum: &mut [Complex64], out: &mut [f64]) {
        self.apply(&self.inverse, spectrum);
        let scale = 1.0 / self.grid.len() as f64;
        for (o, c) in out.iter_mut().zip(spectrum.iter()) {
            *o = c.re * scale;
        }
    }

    fn apply(&self, fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        let n = self.grid.n();
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        // processes every length-n chunk
        fft.process_with_scratch(buf, &mut scratch);
        if self.grid.dim() == 2 {
            transpose_square(buf, n);
            fft.process_with_scratch(buf, &mut scratch);
        }
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2d() {
        let grid = PeriodicGrid::new(2, 8, 1.0).unwrap();
        let t = Transform::new(grid);
        let f: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let back = t.inverse(t.forward(&f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_lands_on_expected_wavenumber() {
        let grid = PeriodicGrid::new(2, 16, 2.0 * std::f64::consts::PI).unwrap();
        let t = Transform::new(grid);
        // cos(3 x0 + x1) has |k|^2 = 10
        let f = grid.sample(|x| (3.0 * x[0] + x[1]).cos());
        let spec = t.forward(&f);
        let k2 = grid.wavenumbers_squared();
        for (c, &k) in spec.iter().zip(&k2) {
            if c.norm() > 1e-9 {
                assert!((k - 10.0).abs() < 1e-12);
            }
        }
    }
}
