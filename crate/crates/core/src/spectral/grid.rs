use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Uniform periodic grid on `[0, L)^d` with `N` points per axis.
///
/// Point `i` along an axis sits at `i * L / N`. In 2d fields are stored
/// row-major with the first axis outermost: flat index `i0 * N + i1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
    length: f64,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(param("dim", format!("must be 1 or 2, got {dim}")));
        }
        if !n.is_power_of_two() {
            return Err(Error::GridNotPowerOfTwo(n));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(param("length", format!("must be positive, got {length}")));
        }
        Ok(PeriodicGrid { dim, n, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Volume of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of grid points, `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis index of a flat index (second entry is 0 in 1d).
    pub fn unflatten(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.n, idx % self.n],
        }
    }

    pub fn flatten(&self, ij: [usize; 2]) -> usize {
        match self.dim {
            1 => ij[0],
            _ => ij[0] * self.n + ij[1],
        }
    }

    /// Flat index of `idx` displaced by an integer offset, wrapping periodically.
    #[inline]
    pub fn shift(&self, idx: usize, offset: [i64; 2]) -> usize {
        // n is a power of two, so masking is the periodic wrap
        let mask = self.n as i64 - 1;
        match self.dim {
            1 => ((idx as i64 + offset[0]) & mask) as usize,
            _ => {
                let bits = self.n.trailing_zeros();
                let i0 = (idx >> bits) as i64;
                let i1 = (idx as i64) & mask;
                ((((i0 + offset[0]) & mask) << bits) | ((i1 + offset[1]) & mask)) as usize
            }
        }
    }

    /// Flat index of the periodic separation `x_a - x_b`, i.e. the point
    /// reached from the origin by that displacement.
    #[inline]
    pub fn difference(&self, a: usize, b: usize) -> usize {
        let mask = self.n - 1;
        match self.dim {
            1 => a.wrapping_sub(b) & mask,
            _ => {
                let bits = self.n.trailing_zeros();
                let d0 = (a >> bits).wrapping_sub(b >> bits) & mask;
                let d1 = (a & mask).wrapping_sub(b & mask) & mask;
                (d0 << bits) | d1
            }
        }
    }

    /// Physical coordinates of a grid point (second entry 0 in 1d).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        let [i0, i1] = self.unflatten(idx);
        [i0 as f64 * h, i1 as f64 * h]
    }

    /// Signed integer wavenumber of FFT slot `m` (`-N/2` for the Nyquist slot).
    pub fn mode_index(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m < n / 2 {
            m
        } else {
            m - n
        }
    }

    /// `|k|^2` for every Fourier coefficient in transform order, where
    /// `k = 2 pi m / L`.
    pub fn wavenumbers_squared(&self) -> Vec<f64> {
        let scale = 2.0 * std::f64::consts::PI / self.length;
        let k2 = |m: usize| {
            let k = self.mode_index(m) as f64 * scale;
            k * k
        };
        match self.dim {
            1 => (0..self.n).map(k2).collect(),
            _ => (0..self.len())
                .map(|idx| k2(idx / self.n) + k2(idx % self.n))
                .collect(),
        }
    }

    /// Samples a function at every grid point.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|idx| f(self.coords(idx))).collect()
    }
}

/// Grid constructor matching the operation name used in the docs.
pub fn make_grid(dim: usize, n: usize, length: f64) -> Result<PeriodicGrid> {
    PeriodicGrid::new(dim, n, length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn paper_grids() {
        let g = make_grid(1, 512, 2.0 * PI).unwrap();
        assert_eq!(g.spacing(), 2.0 * PI / 512.0);
        assert_eq!(g.len(), 512);
        let g2 = make_grid(2, 256, 2.0 * PI).unwrap();
        assert_eq!(g2.len(), 256 * 256);
        assert_eq!(g2.coords(g2.flatten([3, 5])), [3.0 * g2.spacing(), 5.0 * g2.spacing()]);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(make_grid(1, 500, 2.0 * PI), Err(Error::GridNotPowerOfTwo(500)));
        assert!(make_grid(3, 8, 1.0).is_err());
        assert!(make_grid(1, 8, -1.0).is_err());
    }

    #[test]
    fn shift_wraps() {
        let g = make_grid(2, 8, 1.0).unwrap();
        let idx = g.flatten([0, 7]);
        assert_eq!(g.shift(idx, [-1, 1]), g.flatten([7, 0]));
        let g1 = make_grid(1, 8, 1.0).unwrap();
        assert_eq!(g1.shift(2, [-11, 0]), 7);
    }

    #[test]
    fn difference_inverts_shift() {
        let g = make_grid(2, 8, 1.0).unwrap();
        for a in [0, 9, 63] {
            for o in [[0i64, 0], [-3, 5], [7, -1], [12, -9]] {
                let b = g.shift(a, [-o[0], -o[1]]);
                assert_eq!(g.difference(a, b), g.shift(0, o));
            }
        }
        let g1 = make_grid(1, 16, 1.0).unwrap();
        assert_eq!(g1.difference(2, 5), 13);
    }

    #[test]
    fn wavenumbers() {
        let g = make_grid(1, 8, 2.0 * PI).unwrap();
        assert_eq!(g.wavenumbers_squared(), vec![0., 1., 4., 9., 16., 9., 4., 1.]);
    }
}
