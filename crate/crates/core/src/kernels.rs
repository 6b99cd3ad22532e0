//! Reaction kernels, their moments and their grid realizations.
//!
//! Bimolecular kernels depend only on the separation `w = x - y` and carry
//! total mass `k` (the microscopic rate). Two shapes are supported:
//!
//! * Doi: `k / |B_eps|` on the ball `|w| <= eps`, zero outside.
//! * Gaussian: `k (2 pi eps^2)^(-d/2) exp(-|w|^2 / (2 eps^2))`.
//!
//! Unimolecular reactions use a [`KernelKind::Constant`] rate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::network::{check_centers, Center, KernelSpec, Placement};
use crate::spectral::PeriodicGrid;

/// Sub-samples per dimension used to cell-average the Doi indicator.
pub const DOI_SUBSAMPLES: i64 = 32;

/// Omitted Gaussian tail mass (relative) when truncating on the grid.
pub const GAUSSIAN_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Doi,
    Gaussian,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub rate: f64,
    /// Length scale `eps`; ignored for constant kernels.
    pub width: f64,
    pub dim: usize,
}

fn ball_volume(radius: f64, dim: usize) -> f64 {
    match dim {
        1 => 2.0 * radius,
        2 => PI * radius * radius,
        d => {
            // general formula, only used for completeness
            let d = d as f64;
            PI.powf(d / 2.0) / gamma_half_integer(d / 2.0 + 1.0) * radius.powf(d)
        }
    }
}

fn gamma_half_integer(x: f64) -> f64 {
    if x == 1.0 {
        1.0
    } else if x == 0.5 {
        PI.sqrt()
    } else {
        (x - 1.0) * gamma_half_integer(x - 1.0)
    }
}

/// Radius (in units of `eps`) beyond which the Gaussian carries less than
/// [`GAUSSIAN_TAIL`] of its mass, in both one and two dimensions.
pub fn gaussian_truncation_factor() -> f64 {
    (2.0 * (1.0 / GAUSSIAN_TAIL).ln()).sqrt()
}

impl Kernel {
    pub fn new(kind: KernelKind, rate: f64, width: f64, dim: usize) -> Self {
        Kernel {
            kind,
            rate,
            width,
            dim,
        }
    }

    pub fn from_spec(spec: &KernelSpec, rate: f64, dim: usize) -> Self {
        Kernel::new(spec.kind, rate, spec.width, dim)
    }

    pub fn is_separation(&self) -> bool {
        matches!(self.kind, KernelKind::Doi | KernelKind::Gaussian)
    }

    fn require_separation(&self) -> Result<()> {
        if self.is_separation() {
            Ok(())
        } else {
            Err(Error::NotSeparationKernel)
        }
    }

    /// Same shape with unit mass.
    pub fn normalized(&self) -> Kernel {
        Kernel { rate: 1.0, ..*self }
    }

    /// Pointwise rate density at displacement `w` (`w.len()` is the dimension).
    pub fn eval(&self, w: &[f64]) -> Result<f64> {
        self.require_separation()?;
        let r2: f64 = w.iter().map(|x| x * x).sum();
        let d = w.len();
        let eps = self.width;
        Ok(match self.kind {
            KernelKind::Doi => {
                if r2 <= eps * eps {
                    self.rate / ball_volume(eps, d)
                } else {
                    0.0
                }
            }
            KernelKind::Gaussian => {
                self.rate * (2.0 * PI * eps * eps).powf(-(d as f64) / 2.0)
                    * (-r2 / (2.0 * eps * eps)).exp()
            }
            KernelKind::Constant => unreachable!(),
        })
    }

    /// Total mass, which is the microscopic rate `k`.
    pub fn mass(&self) -> Result<f64> {
        self.require_separation()?;
        Ok(self.rate)
    }

    /// `int K(w) |w|^2 dw / k`.
    pub fn second_moment(&self) -> Result<f64> {
        self.require_separation()?;
        let d = self.dim as f64;
        let eps2 = self.width * self.width;
        Ok(match self.kind {
            KernelKind::Doi => d / (d + 2.0) * eps2,
            KernelKind::Gaussian => d * eps2,
            KernelKind::Constant => unreachable!(),
        })
    }

    /// Grid realization of the kernel, renormalized so that
    /// `sum(weights) * h^d == k`.
    ///
    /// Doi weights are cell averages of the indicator density; Gaussian
    /// weights are point samples truncated where the omitted tail is below
    /// [`GAUSSIAN_TAIL`]. Offsets farther than half the domain are kept
    /// unfolded; convolutions wrap them periodically.
    pub fn discretize(&self, grid: &PeriodicGrid) -> Result<DiscretizedKernel> {
        self.require_separation()?;
        if grid.dim() != self.dim {
            return Err(Error::Mismatch(format!(
                "kernel dimension {} on a {}d grid",
                self.dim,
                grid.dim()
            )));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(param("width", format!("must be positive, got {}", self.width)));
        }
        let h = grid.spacing();
        let half = grid.length() / 2.0;
        let eps = self.width;
        let (radius, raw) = match self.kind {
            KernelKind::Doi => {
                if eps >= half {
                    return Err(Error::KernelTooWide(format!(
                        "Doi radius {eps} must be below half the domain length {half}"
                    )));
                }
                // cells overlapping the ball satisfy |o| h - h/2 < eps
                let radius = (eps / h + 0.5).ceil() as i64;
                let density = self.rate / ball_volume(eps, self.dim);
                (radius, self.doi_cell_averages(radius, h, density))
            }
            KernelKind::Gaussian => {
                // the tail wraps around the torus; this only bounds the cost
                if eps > half {
                    return Err(Error::KernelTooWide(format!(
                        "Gaussian width {eps} must not exceed half the domain length {half}"
                    )));
                }
                let radius = (gaussian_truncation_factor() * eps / h).ceil() as i64;
                let samples = offsets_in_box(radius, self.dim)
                    .map(|o| {
                        let w = [o[0] as f64 * h, o[1] as f64 * h];
                        (o, self.eval(&w[..self.dim]).expect("separation kernel"))
                    })
                    .collect();
                (radius, samples)
            }
            KernelKind::Constant => unreachable!(),
        };
        DiscretizedKernel::renormalized(*grid, radius as usize, raw, self.rate)
    }

    fn doi_cell_averages(&self, radius: i64, h: f64, density: f64) -> Vec<([i64; 2], f64)> {
        // sub-sample positions in units of h / (2 S): o * 2S + (2s + 1 - S)
        let s_count = DOI_SUBSAMPLES;
        let unit = h / (2 * s_count) as f64;
        let eps2 = self.width * self.width;
        let inside = |p: i64| (p as f64 * unit).powi(2);
        let subs: Vec<i64> = (0..s_count).map(|s| 2 * s + 1 - s_count).collect();
        let total_samples = (s_count as f64).powi(self.dim as i32);
        offsets_in_box(radius, self.dim)
            .filter_map(|o| {
                let c0 = o[0] * 2 * s_count;
                let c1 = o[1] * 2 * s_count;
                let hits = match self.dim {
                    1 => subs.iter().filter(|&&s| inside(c0 + s) <= eps2).count(),
                    _ => subs
                        .iter()
                        .flat_map(|&a| subs.iter().map(move |&b| (a, b)))
                        .filter(|&(a, b)| inside(c0 + a) + inside(c1 + b) <= eps2)
                        .count(),
                };
                (hits > 0).then(|| (o, density * hits as f64 / total_samples))
            })
            .collect()
    }
}

fn offsets_in_box(radius: i64, dim: usize) -> impl Iterator<Item = [i64; 2]> {
    let second = if dim == 1 { 0..=0 } else { -radius..=radius };
    (-radius..=radius).flat_map(move |a| second.clone().map(move |b| [a, b]))
}

/// Grid samples of a separation kernel at integer offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedKernel {
    grid: PeriodicGrid,
    offsets: Vec<[i64; 2]>,
    weights: Vec<f64>,
    support_radius: usize,
}

impl DiscretizedKernel {
    fn renormalized(
        grid: PeriodicGrid,
        support_radius: usize,
        raw: Vec<([i64; 2], f64)>,
        mass: f64,
    ) -> Result<Self> {
        let mut raw: Vec<_> = raw.into_iter().filter(|&(_, w)| w > 0.0).collect();
        if raw.is_empty() {
            // support smaller than every sub-sample: all mass in one cell
            raw.push(([0, 0], 1.0));
        }
        let cell = grid.cell_volume();
        let total: f64 = raw.iter().map(|&(_, w)| w).sum::<f64>() * cell;
        let scale = mass / total;
        let (offsets, weights) = raw.into_iter().map(|(o, w)| (o, w * scale)).unzip();
        Ok(DiscretizedKernel {
            grid,
            offsets,
            weights,
            support_radius,
        })
    }

    /// A kernel with all of its mass at offset zero.
    pub fn dirac(grid: PeriodicGrid, mass: f64) -> Self {
        DiscretizedKernel {
            grid,
            offsets: vec![[0, 0]],
            weights: vec![mass / grid.cell_volume()],
            support_radius: 0,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn offsets(&self) -> &[[i64; 2]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support_radius(&self) -> usize {
        self.support_radius
    }

    pub fn iter(&self) -> impl Iterator<Item = ([i64; 2], f64)> + '_ {
        self.offsets.iter().copied().zip(self.weights.iter().copied())
    }

    /// `sum(weights) * h^d`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Discrete analogue of [`Kernel::second_moment`].
    pub fn second_moment(&self) -> f64 {
        let h = self.grid.spacing();
        let m: f64 = self
            .iter()
            .map(|(o, w)| w * ((o[0] * o[0] + o[1] * o[1]) as f64) * h * h)
            .sum();
        m * self.grid.cell_volume() / self.mass()
    }

    /// Weights folded onto the torus, as a field indexed like grid points.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (o, w) in self.iter() {
            out[self.grid.shift(0, o)] += w;
        }
        out
    }

    /// Same offsets with weights rescaled to total mass `mass`.
    pub fn with_mass(&self, mass: f64) -> Self {
        let scale = mass / self.mass();
        DiscretizedKernel {
            weights: self.weights.iter().map(|w| w * scale).collect(),
            ..self.clone()
        }
    }
}

/// Kernel-discretization entry point matching the documented operation name.
pub fn discretize_kernel(kernel: &Kernel, grid: &PeriodicGrid) -> Result<DiscretizedKernel> {
    kernel.discretize(grid)
}

/// Builds the dissociation placement of a reversible reaction from its binding
/// direction via detailed balance,
/// `K_d K1(x - y) m1(z | x, y) = k2 m2(x, y | z)` with `K_d = k2 / k1`.
///
/// The separation density is `K1 / k1` and the center weights are inherited.
pub fn detailed_balance_unbinding(
    binding_kernel: &Kernel,
    binding_centers: &[Center],
    k2: f64,
) -> Result<Placement> {
    binding_kernel.require_separation()?;
    check_centers(binding_centers).map_err(|r| param("binding_weights", r))?;
    if !(k2.is_finite() && k2 > 0.0) {
        return Err(param("k2", format!("must be positive, got {k2}")));
    }
    if !(binding_kernel.rate > 0.0) {
        return Err(param("k1", "must be positive"));
    }
    Ok(Placement::Dissociation {
        separation: KernelSpec::separation(binding_kernel.kind, binding_kernel.width),
        centers: binding_centers.to_vec(),
    })
}

/// Smooth test function of a position.
pub type TestFn<'a> = &'a dyn Fn(&[f64]) -> f64;

/// `sup_x | int K(x - y) f(x + alpha (y - x)) g(y) dy - f(x) g(x) |` over the
/// grid points, with the integral evaluated on the discretized kernel
/// (normalized to unit mass). `f` and `g` are evaluated at exact positions.
pub fn mollifier_residual(
    kernel: &Kernel,
    grid: &PeriodicGrid,
    f: TestFn<'_>,
    g: TestFn<'_>,
    alpha: f64,
) -> Result<f64> {
    let dk = kernel.normalized().discretize(grid)?;
    let h = grid.spacing();
    let d = grid.dim();
    let cell = grid.cell_volume();
    let mut sup: f64 = 0.0;
    for idx in 0..grid.len() {
        let x = grid.coords(idx);
        let mut acc = 0.0;
        for (o, w) in dk.iter() {
            let u = [o[0] as f64 * h, o[1] as f64 * h];
            let fx = [x[0] + alpha * u[0], x[1] + alpha * u[1]];
            let gy = [x[0] + u[0], x[1] + u[1]];
            acc += w * f(&fx[..d]) * g(&gy[..d]);
        }
        let resid = (acc * cell - f(&x[..d]) * g(&x[..d])).abs();
        sup = sup.max(resid);
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(1, n, 2.0 * PI).unwrap()
    }

    #[test]
    fn eval_examples() {
        let doi = Kernel::new(KernelKind::Doi, 1.0, 0.5, 1);
        assert_eq!(doi.eval(&[0.25]).unwrap(), 1.0);
        assert_eq!(doi.eval(&[0.6]).unwrap(), 0.0);
        let gauss = Kernel::new(KernelKind::Gaussian, 1.0, 1.0, 1);
        assert!((gauss.eval(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let c = Kernel::new(KernelKind::Constant, 0.05, 0.0, 1);
        assert_eq!(c.eval(&[0.0]), Err(Error::NotSeparationKernel));
        assert_eq!(c.mass(), Err(Error::NotSeparationKernel));
        assert_eq!(c.second_moment(), Err(Error::NotSeparationKernel));
    }

    #[test]
    fn mass_is_rate() {
        assert_eq!(Kernel::new(KernelKind::Doi, 1.0, 0.3, 2).mass().unwrap(), 1.0);
    }

    #[test]
    fn gaussian_mass_by_quadrature() {
        // composite trapezoid over +-20 sigma converges geometrically for a Gaussian
        let k = Kernel::new(KernelKind::Gaussian, 2.0, 0.1, 1);
        let n = 4000;
        let a = 20.0 * 0.1;
        let dx = 2.0 * a / n as f64;
        let q: f64 = (0..=n)
            .map(|i| {
                let x = -a + i as f64 * dx;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * k.eval(&[x]).unwrap()
            })
            .sum::<f64>()
            * dx;
        assert!((q - 2.0).abs() < 1e-12, "{q}");
        assert_eq!(k.mass().unwrap(), 2.0);
    }

    #[test]
    fn second_moments() {
        let eps = 0.3;
        let m = |kind, d| Kernel::new(kind, 1.0, eps, d).second_moment().unwrap();
        assert!((m(KernelKind::Doi, 1) - eps * eps / 3.0).abs() < 1e-15);
        assert!((m(KernelKind::Gaussian, 1) - eps * eps).abs() < 1e-15);
        assert!((m(KernelKind::Doi, 2) - eps * eps / 2.0).abs() < 1e-15);
    }

    #[test]
    fn doi_second_moment_by_quadrature() {
        // (1 / 2 eps) int_{-eps}^{eps} w^2 dw, midpoint rule
        let eps = 0.3;
        let n = 200_000;
        let dx = 2.0 * eps / n as f64;
        let q: f64 = (0..n)
            .map(|i| {
                let w = -eps + (i as f64 + 0.5) * dx;
                w * w / (2.0 * eps)
            })
            .sum::<f64>()
            * dx;
        assert!((q - eps * eps / 3.0).abs() < 1e-10);
    }

    #[test]
    fn discrete_mass_exact_and_symmetric() {
        for &(kind, d, n, eps) in &[
            (KernelKind::Doi, 1, 512, 0.1),
            (KernelKind::Doi, 2, 64, 0.4),
            (KernelKind::Gaussian, 1, 512, 0.05),
            (KernelKind::Gaussian, 2, 64, 0.3),
            (KernelKind::Gaussian, 1, 512, 2.0 * PI / 8.0),
        ] {
            let grid = PeriodicGrid::new(d, n, 2.0 * PI).unwrap();
            let k = Kernel::new(kind, 1.7, eps, d);
            let dk = k.discretize(&grid).unwrap();
            assert!((dk.mass() - 1.7).abs() < 1e-13, "{kind:?} {d} {}", dk.mass());
            for (o, w) in dk.iter() {
                let j = dk.offsets().iter().position(|&p| p == [-o[0], -o[1]]).unwrap();
                assert_eq!(w, dk.weights()[j]);
            }
        }
    }

    #[test]
    fn narrow_doi_is_single_cell() {
        let grid = grid1(512);
        let h = grid.spacing();
        let dk = Kernel::new(KernelKind::Doi, 1.0, 0.3 * h, 1).discretize(&grid).unwrap();
        assert_eq!(dk.offsets(), &[[0, 0]]);
        assert!((dk.weights()[0] - 1.0 / h).abs() < 1e-12);
    }

    #[test]
    fn gaussian_support_covers_tail() {
        let grid = grid1(512);
        let eps = 2.0 * PI / 16.0;
        let dk = Kernel::new(KernelKind::Gaussian, 1.0, eps, 1).discretize(&grid).unwrap();
        let covered = dk.support_radius() as f64 * grid.spacing();
        assert!(covered >= 6.0 * eps);
        // omitted two-sided tail erfc(r / sqrt 2) < exp(-r^2 / 2)
        let r = covered / eps;
        assert!((-r * r / 2.0).exp() < 1e-12);
    }

    #[test]
    fn too_wide_rejected() {
        let grid = grid1(64);
        let e = Kernel::new(KernelKind::Doi, 1.0, 3.2, 1).discretize(&grid).unwrap_err();
        assert!(matches!(e, Error::KernelTooWide(_)));
        let e = Kernel::new(KernelKind::Gaussian, 1.0, 3.2, 1).discretize(&grid).unwrap_err();
        assert!(matches!(e, Error::KernelTooWide(_)));
    }

    #[test]
    fn discrete_moment_scales_quadratically() {
        for &(kind, d, n) in &[
            (KernelKind::Doi, 1, 512),
            (KernelKind::Gaussian, 1, 512),
            (KernelKind::Doi, 2, 128),
            (KernelKind::Gaussian, 2, 128),
        ] {
            let grid = PeriodicGrid::new(d, n, 2.0 * PI).unwrap();
            let h = grid.spacing();
            for &eps in &[8.0 * h, 5.5 * h, 6.5 * h] {
                let m1 = Kernel::new(kind, 1.0, eps, d).discretize(&grid).unwrap().second_moment();
                let m2 = Kernel::new(kind, 1.0, 2.0 * eps, d)
                    .discretize(&grid)
                    .unwrap()
                    .second_moment();
                let ratio = m2 / m1;
                assert!((ratio - 4.0).abs() < 0.2, "{kind:?} d={d} eps={eps}: {ratio}");
            }
        }
    }

    #[test]
    fn dense_folds_wide_gaussian() {
        let grid = grid1(64);
        let dk = Kernel::new(KernelKind::Gaussian, 1.0, 1.0, 1).discretize(&grid).unwrap();
        assert!(dk.support_radius() > 32);
        let dense = dk.dense();
        let mass: f64 = dense.iter().sum::<f64>() * grid.spacing();
        assert!((mass - 1.0).abs() < 1e-13);
        for i in 1..64 {
            assert!((dense[i] - dense[64 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn unbinding_from_detailed_balance() {
        let k1 = Kernel::new(KernelKind::Gaussian, 1.0, 0.1, 1);
        let centers = vec![Center::new(0.3, 0.2), Center::new(0.7, 1.0)];
        let p = detailed_balance_unbinding(&k1, &centers, 0.05).unwrap();
        match p {
            Placement::Dissociation {
                separation,
                centers: c,
            } => {
                assert_eq!(separation, KernelSpec::separation(KernelKind::Gaussian, 0.1));
                assert_eq!(c, centers);
            }
            other => panic!("{other:?}"),
        }
        let bad = detailed_balance_unbinding(&k1, &[Center::new(0.9, 0.0)], 0.05);
        assert!(bad.is_err());
    }

    /// Integrates m2(x, y | z) = (K_d / k2) K1(x - y) m1(z | x, y) over (x, y)
    /// for fixed z by quadrature in the separation variable.
    fn unbinding_total_mass(k1: &Kernel, centers: &[Center], k2: f64) -> f64 {
        let kd = k2 / k1.rate;
        let sep_integral = match k1.kind {
            KernelKind::Gaussian => {
                let a = 20.0 * k1.width;
                let n = 8000;
                let dx = 2.0 * a / n as f64;
                (0..=n)
                    .map(|i| {
                        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                        w * k1.eval(&[-a + i as f64 * dx]).unwrap()
                    })
                    .sum::<f64>()
                    * dx
            }
            _ => {
                // piecewise-constant integrand: exact on the support
                k1.eval(&[0.0]).unwrap() * 2.0 * k1.width
            }
        };
        let center_mass: f64 = centers.iter().map(|c| c.weight).sum();
        kd / k2 * sep_integral * center_mass
    }

    #[test]
    fn unbinding_normalization() {
        let centers = vec![Center::new(0.25, 0.0), Center::new(0.5, 0.5), Center::new(0.25, 1.0)];
        for kind in [KernelKind::Doi, KernelKind::Gaussian] {
            let k1 = Kernel::new(kind, 1.3, 0.1, 1);
            let total = unbinding_total_mass(&k1, &centers, 0.05);
            assert!((total - 1.0).abs() < 1e-12, "{kind:?}: {total}");
            // Doi separation density is uniform on the ball
            let rho = k1.normalized();
            if kind == KernelKind::Doi {
                assert_eq!(rho.eval(&[0.05]).unwrap(), rho.eval(&[-0.099]).unwrap());
                assert_eq!(rho.eval(&[0.11]).unwrap(), 0.0);
            } else {
                let expect = (2.0 * PI * 0.01f64).powf(-0.5) * (-0.5f64).exp();
                assert!((rho.eval(&[0.1]).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mollifier_trivial_cases() {
        let grid = grid1(256);
        for kind in [KernelKind::Doi, KernelKind::Gaussian] {
            let k = Kernel::new(kind, 1.0, 0.2, 1);
            let one = |_: &[f64]| 1.0;
            let lin = |x: &[f64]| 3.0 * x[0] - 1.0;
            assert!(mollifier_residual(&k, &grid, &one, &one, 0.3).unwrap() < 1e-13);
            for alpha in [0.0, 0.5, 1.0, 2.0] {
                let r = mollifier_residual(&k, &grid, &lin, &one, alpha).unwrap();
                assert!(r < 1e-11, "{kind:?} {alpha}: {r}");
            }
        }
    }
}
