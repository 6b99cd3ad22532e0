use rustfft::num_complex::Complex64;

use super::fft::Transform;
use super::grid::PeriodicGrid;
use crate::error::{Error, Result};
use crate::kernels::DiscretizedKernel;

/// Midpoint-rule integral `h^d * sum(values)`.
pub fn field_integral(field: &[f64], grid: &PeriodicGrid) -> f64 {
    field.iter().sum::<f64>() * grid.cell_volume()
}

/// `(K * f)(x_i) = h^d sum_o w(o) f(x_{i - o})`, evaluated as a direct sum over
/// the kernel offsets with periodic wrap.
pub fn convolve_direct(field: &[f64], dk: &DiscretizedKernel) -> Vec<f64> {
    let grid = dk.grid();
    let cell = grid.cell_volume();
    let n = grid.n() as i64;
    let mut out = vec![0.0; field.len()];
    match grid.dim() {
        1 => {
            for (o, w) in dk.iter() {
                let shift = (-o[0]).rem_euclid(n) as usize;
                let wc = w * cell;
                // out[i] += w f[i + shift], shift = -o mod n
                let (head, tail) = field.split_at(shift);
                for (dst, src) in out.iter_mut().zip(tail.iter().chain(head)) {
                    *dst += wc * src;
                }
            }
        }
        _ => {
            for (o, w) in dk.iter() {
                let wc = w * cell;
                let neg = [-o[0], -o[1]];
                for (i, dst) in out.iter_mut().enumerate() {
                    *dst += wc * field[grid.shift(i, neg)];
                }
            }
        }
    }
    out
}

/// Transform-space representation of a discretized kernel.
#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    multiplier: Vec<f64>,
}

impl KernelSpectrum {
    pub fn new(dk: &DiscretizedKernel, transform: &Transform) -> Self {
        let cell = dk.grid().cell_volume();
        let dense: Vec<f64> = dk.dense().into_iter().map(|w| w * cell).collect();
        // symmetric kernel: the transform is real up to roundoff
        let multiplier = transform.forward(&dense).into_iter().map(|c| c.re).collect();
        KernelSpectrum { multiplier }
    }

    /// Multiplies a spectrum in place.
    pub fn apply_spectrum(&self, spectrum: &mut [Complex64]) {
        for (c, &m) in spectrum.iter_mut().zip(&self.multiplier) {
            *c *= m;
        }
    }

    pub fn convolve(&self, field: &[f64], transform: &Transform) -> Vec<f64> {
        let mut s = transform.forward(field);
        self.apply_spectrum(&mut s);
        transform.inverse(s)
    }

    pub fn convolve_spectrum(&self, spectrum: &[Complex64], transform: &Transform) -> Vec<f64> {
        let s: Vec<Complex64> = spectrum
            .iter()
            .zip(&self.multiplier)
            .map(|(c, &m)| c * m)
            .collect();
        transform.inverse(s)
    }
}

/// Periodic convolution of a grid field with a discretized kernel.
///
/// Chooses between the direct sum and the transform route by operation
/// count; both agree to roundoff.
pub fn circular_convolution(field: &[f64], dk: &DiscretizedKernel) -> Result<Vec<f64>> {
    let grid = dk.grid();
    if field.len() != grid.len() {
        return Err(Error::Mismatch(format!(
            "field has {} values, grid has {}",
            field.len(),
            grid.len()
        )));
    }
    let direct_cost = dk.offsets().len();
    let fft_cost = 6 * grid.dim() * grid.n().trailing_zeros() as usize + 8;
    if direct_cost <= fft_cost {
        Ok(convolve_direct(field, dk))
    } else {
        let t = Transform::new(*grid);
        Ok(KernelSpectrum::new(dk, &t).convolve(field, &t))
    }
}
