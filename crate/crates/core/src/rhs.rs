//! Reaction terms of the local (mass-action) and nonlocal (mean-field)
//! models.
//!
//! The nonlocal gains place products at points of the form
//! `x + (1 - alpha) u` that need not be grid points. Those contributions are
//! deposited onto the two (1d) or four (2d) surrounding grid points with
//! linear / bilinear weights. Depositing instead of interpolating keeps the
//! discrete totals exactly balanced between the loss and gain terms, so the
//! linear conservation laws of the network hold on the grid.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::{DiscretizedKernel, Kernel};
use crate::network::{Center, Network, Placement};
use crate::spectral::{
    convolve_direct, GridField, KernelSpectrum, PeriodicGrid, ReactionTerm, Transform,
};

/// Pointwise mass-action reaction term
/// `sum_l kappa_l (beta_lj - alpha_lj) prod_k rho_k^alpha_lk`.
#[derive(Debug, Clone)]
pub struct SmReaction {
    net: Network,
}

impl SmReaction {
    pub fn new(net: &Network) -> Self {
        SmReaction { net: net.clone() }
    }
}

impl ReactionTerm for SmReaction {
    fn n_species(&self) -> usize {
        self.net.n_species()
    }

    fn eval(&self, fields: &[Vec<f64>], out: &mut [Vec<f64>]) {
        for o in out.iter_mut() {
            o.iter_mut().for_each(|v| *v = 0.0);
        }
        let n_points = fields[0].len();
        for r in self.net.reactions() {
            let slots = r.reactant_slots();
            let changes: Vec<(usize, f64)> = (0..self.net.n_species())
                .filter(|&j| r.products[j] != r.reactants[j])
                .map(|j| (j, r.rate * (r.products[j] as f64 - r.reactants[j] as f64)))
                .collect();
            for x in 0..n_points {
                let mut rate = 1.0;
                for &s in &slots {
                    rate *= fields[s][x];
                }
                for &(j, c) in &changes {
                    out[j][x] += c * rate;
                }
            }
        }
    }
}

/// Standard-model reaction term evaluated on a field set.
pub fn sm_rhs(net: &Network, fields: &GridField) -> GridField {
    let mut out = GridField::zeros(fields.grid, net.n_species());
    SmReaction::new(net).eval(&fields.values, &mut out.values);
    out.time = fields.time;
    out
}

/// How pure convolutions are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionMethod {
    /// Products in Fourier space.
    #[default]
    Transform,
    /// Truncated direct sums over kernel offsets.
    Direct,
}

/// Grid point offset with its linear-deposit weight.
type Corner = ([i64; 2], f64);

/// Splits a real displacement (in cells) into the integer corners that
/// receive linear / bilinear deposit weights.
fn deposit_corners(shift: [f64; 2], dim: usize) -> Vec<Corner> {
    let axis = |d: f64| -> Vec<(i64, f64)> {
        let q = d.floor();
        let f = d - q;
        let q = q as i64;
        if f == 0.0 {
            vec![(q, 1.0)]
        } else {
            vec![(q, 1.0 - f), (q + 1, f)]
        }
    };
    let a0 = axis(shift[0]);
    let a1 = if dim == 1 { vec![(0, 1.0)] } else { axis(shift[1]) };
    a0.iter()
        .flat_map(|&(q0, w0)| a1.iter().map(move |&(q1, w1)| ([q0, q1], w0 * w1)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Wrap {
    n: usize,
    mask: i64,
    dim: usize,
}

impl Wrap {
    fn new(grid: &PeriodicGrid) -> Self {
        Wrap {
            n: grid.n(),
            mask: grid.n() as i64 - 1,
            dim: grid.dim(),
        }
    }

    /// Flat index of point `m` displaced by `-off`.
    #[inline]
    fn back(&self, m: usize, off: [i64; 2]) -> usize {
        if self.dim == 1 {
            ((m as i64 - off[0]) & self.mask) as usize
        } else {
            let i0 = ((m / self.n) as i64 - off[0]) & self.mask;
            let i1 = ((m % self.n) as i64 - off[1]) & self.mask;
            (i0 as usize) * self.n + i1 as usize
        }
    }
}

/// `gain(z) = sum_u c(u) A(z + (1 - alpha) u) B(z - alpha u)` in deposit form.
#[derive(Debug, Clone)]
struct BindingTable {
    weight: f64,
    /// (coefficient, partner offset `u`, deposit corners of `-(1 - alpha) u`).
    entries: Vec<(f64, [i64; 2], Vec<Corner>)>,
}

impl BindingTable {
    fn new(dk: &DiscretizedKernel, weight: f64, alpha: f64) -> Self {
        let cell = dk.grid().cell_volume();
        let dim = dk.grid().dim();
        let entries = dk
            .iter()
            .map(|(u, w)| {
                let shift = [-(1.0 - alpha) * u[0] as f64, -(1.0 - alpha) * u[1] as f64];
                (weight * w * cell, u, deposit_corners(shift, dim))
            })
            .collect();
        BindingTable { weight, entries }
    }

    fn total_weight(&self) -> f64 {
        self.entries
            .iter()
            .map(|(c, _, corners)| c * corners.iter().map(|x| x.1).sum::<f64>())
            .sum()
    }

    fn accumulate(&self, a: &[f64], b: &[f64], wrap: Wrap, scale: f64, out: &mut [f64]) {
        for (coeff, u, corners) in &self.entries {
            for &(q, lambda) in corners {
                let c = scale * coeff * lambda;
                let qu = [q[0] + u[0], q[1] + u[1]];
                for (m, o) in out.iter_mut().enumerate() {
                    *o += c * a[wrap.back(m, q)] * b[wrap.back(m, qu)];
                }
            }
        }
    }
}

/// `gain(x) = sum_s c(s) C(x - d(s))` in deposit form, where `d(s)` is the
/// product displacement from the dissociating molecule.
#[derive(Debug, Clone)]
struct DepositTable {
    weight: f64,
    entries: Vec<(f64, Vec<Corner>)>,
}

impl DepositTable {
    fn new(rho: &DiscretizedKernel, weight: f64, factor: f64) -> Self {
        let cell = rho.grid().cell_volume();
        let dim = rho.grid().dim();
        let entries = rho
            .iter()
            .map(|(s, w)| {
                let shift = [factor * s[0] as f64, factor * s[1] as f64];
                (weight * w * cell, deposit_corners(shift, dim))
            })
            .collect();
        DepositTable { weight, entries }
    }

    fn total_weight(&self) -> f64 {
        self.entries
            .iter()
            .map(|(c, corners)| c * corners.iter().map(|x| x.1).sum::<f64>())
            .sum()
    }

    fn accumulate(&self, c_field: &[f64], wrap: Wrap, scale: f64, out: &mut [f64]) {
        for (coeff, corners) in &self.entries {
            for &(q, lambda) in corners {
                let c = scale * coeff * lambda;
                for (m, o) in out.iter_mut().enumerate() {
                    *o += c * c_field[wrap.back(m, q)];
                }
            }
        }
    }
}

/// Which product of a dissociation `S_i -> S_j + S_k` a gain refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductSlot {
    First,
    Second,
}

/// One center's contribution to a product gain.
#[derive(Debug, Clone)]
enum BindingPart {
    /// `w * A * (K * B)` (product at the first reactant).
    AtFirst(f64),
    /// `w * B * (K * A)` (product at the second reactant).
    AtSecond(f64),
    Table(BindingTable),
}

#[derive(Debug, Clone)]
enum UnbindingPart {
    /// `w * C`.
    Local(f64),
    /// `w * (rho * C)`.
    Smoothed(f64),
    Table(DepositTable),
}

fn binding_parts(dk: &DiscretizedKernel, centers: &[Center]) -> Vec<BindingPart> {
    centers
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| {
            if c.alpha == 1.0 {
                BindingPart::AtFirst(c.weight)
            } else if c.alpha == 0.0 {
                BindingPart::AtSecond(c.weight)
            } else {
                BindingPart::Table(BindingTable::new(dk, c.weight, c.alpha))
            }
        })
        .collect()
}

fn unbinding_parts(rho: &DiscretizedKernel, centers: &[Center], slot: ProductSlot) -> Vec<UnbindingPart> {
    centers
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| {
            // first product sits at z + (1 - alpha) s, second at z - alpha s
            let factor = match slot {
                ProductSlot::First => 1.0 - c.alpha,
                ProductSlot::Second => -c.alpha,
            };
            if factor == 0.0 {
                UnbindingPart::Local(c.weight)
            } else if factor.abs() == 1.0 {
                UnbindingPart::Smoothed(c.weight)
            } else {
                UnbindingPart::Table(DepositTable::new(rho, c.weight, factor))
            }
        })
        .collect()
}

/// A convolution operator that can run either route.
#[derive(Debug, Clone)]
struct Convolver {
    dk: DiscretizedKernel,
    spectrum: Option<KernelSpectrum>,
}

impl Convolver {
    fn new(dk: DiscretizedKernel, transform: &Transform, method: ConvolutionMethod) -> Self {
        let spectrum = (method == ConvolutionMethod::Transform).then(|| KernelSpectrum::new(&dk, transform));
        Convolver { dk, spectrum }
    }

    fn apply(&self, field: &[f64], spectrum: Option<&[Complex64]>, transform: &Transform) -> Vec<f64> {
        match (&self.spectrum, spectrum) {
            (Some(k), Some(s)) => k.convolve_spectrum(s, transform),
            (Some(k), None) => k.convolve(field, transform),
            (None, _) => convolve_direct(field, &self.dk),
        }
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Unimolecular {
        reactant: usize,
        k: f64,
        gains: UniGains,
    },
    Bimolecular {
        first: usize,
        second: usize,
        kernel: Convolver,
        gains: BiGains,
    },
}

#[derive(Debug, Clone)]
enum UniGains {
    None,
    Dirac(usize),
    Dissociation {
        products: [usize; 2],
        separation: Convolver,
        parts: [Vec<UnbindingPart>; 2],
    },
}

#[derive(Debug, Clone)]
enum BiGains {
    None,
    Binding { product: usize, parts: Vec<BindingPart> },
    PairPreserving { products: [usize; 2], p: f64 },
}

/// Precomputed tables for the mean-field reaction term of one network on one
/// grid.
#[derive(Debug, Clone)]
pub struct CompiledMfmTerms {
    net: Network,
    grid: PeriodicGrid,
    transform: Transform,
    method: ConvolutionMethod,
    reactions: Vec<Compiled>,
}

impl CompiledMfmTerms {
    pub fn new(net: &Network, grid: &PeriodicGrid) -> Result<Self> {
        Self::with_method(net, grid, ConvolutionMethod::default())
    }

    pub fn with_method(net: &Network, grid: &PeriodicGrid, method: ConvolutionMethod) -> Result<Self> {
        if net.dim() != grid.dim() {
            return Err(Error::Mismatch(format!(
                "{}d network on a {}d grid",
                net.dim(),
                grid.dim()
            )));
        }
        let transform = Transform::new(*grid);
        let mut reactions = Vec::with_capacity(net.reactions().len());
        for (index, r) in net.reactions().iter().enumerate() {
            let slots = r.reactant_slots();
            let products = r.product_slots();
            let kernel = net.kernel(index);
            let compiled = if slots.len() == 1 {
                let gains = match &r.placement {
                    Placement::DiracAtReactant => UniGains::Dirac(products[0]),
                    Placement::Dissociation {
                        separation,
                        centers,
                    } => {
                        let rho = Kernel::from_spec(separation, 1.0, net.dim()).discretize(grid)?;
                        let parts = [
                            unbinding_parts(&rho, centers, ProductSlot::First),
                            unbinding_parts(&rho, centers, ProductSlot::Second),
                        ];
                        UniGains::Dissociation {
                            products: [products[0], products[1]],
                            separation: Convolver::new(rho, &transform, method),
                            parts,
                        }
                    }
                    _ => UniGains::None,
                };
                Compiled::Unimolecular {
                    reactant: slots[0],
                    k: kernel.rate,
                    gains,
                }
            } else {
                let dk = kernel.discretize(grid)?;
                let gains = match &r.placement {
                    Placement::ConvexCombination { centers } => BiGains::Binding {
                        product: products[0],
                        parts: binding_parts(&dk, centers),
                    },
                    Placement::PairPreserving { p } => BiGains::PairPreserving {
                        products: [products[0], products[1]],
                        p: *p,
                    },
                    _ => BiGains::None,
                };
                Compiled::Bimolecular {
                    first: slots[0],
                    second: slots[1],
                    kernel: Convolver::new(dk, &transform, method),
                    gains,
                }
            };
            reactions.push(compiled);
        }
        Ok(CompiledMfmTerms {
            net: net.clone(),
            grid: *grid,
            transform,
            method,
            reactions,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// Total weight of every precomputed table divided by its analytic
    /// normalization (kernel mass for binding, 1 for dissociation), for
    /// consistency checks.
    pub fn table_normalizations(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (index, c) in self.reactions.iter().enumerate() {
            match c {
                Compiled::Bimolecular { kernel, gains, .. } => {
                    let k = self.net.kernel(index).rate;
                    out.push(kernel.dk.mass() / k);
                    if let BiGains::Binding { parts, .. } = gains {
                        for p in parts {
                            if let BindingPart::Table(t) = p {
                                out.push(t.total_weight() / (k * t.weight));
                            }
                        }
                    }
                }
                Compiled::Unimolecular {
                    gains: UniGains::Dissociation {
                        separation, parts, ..
                    },
                    ..
                } => {
                    out.push(separation.dk.mass());
                    for part in parts.iter().flatten() {
                        if let UnbindingPart::Table(t) = part {
                            out.push(t.total_weight() / t.weight);
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn eval_into(&self, fields: &[Vec<f64>], out: &mut [Vec<f64>]) {
        for o in out.iter_mut() {
            o.iter_mut().for_each(|v| *v = 0.0);
        }
        let wrap = Wrap::new(&self.grid);
        let spectra: Vec<Option<Vec<Complex64>>> = match self.method {
            ConvolutionMethod::Transform => {
                let mut needed = vec![false; fields.len()];
                for c in &self.reactions {
                    match c {
                        Compiled::Bimolecular { first, second, .. } => {
                            needed[*first] = true;
                            needed[*second] = true;
                        }
                        Compiled::Unimolecular {
                            reactant,
                            gains: UniGains::Dissociation { .. },
                            ..
                        } => needed[*reactant] = true,
                        _ => {}
                    }
                }
                fields
                    .iter()
                    .zip(needed)
                    .map(|(f, n)| n.then(|| self.transform.forward(f)))
                    .collect()
            }
            ConvolutionMethod::Direct => vec![None; fields.len()],
        };
        let conv = |c: &Convolver, j: usize| c.apply(&fields[j], spectra[j].as_deref(), &self.transform);

        for (index, c) in self.reactions.iter().enumerate() {
            let r = &self.net.reactions()[index];
            let inv_factorial = 1.0 / r.reactant_factorial();
            match c {
                Compiled::Unimolecular { reactant, k, gains } => {
                    let src = &fields[*reactant];
                    add_scaled(&mut out[*reactant], src, -k);
                    match gains {
                        UniGains::None => {}
                        UniGains::Dirac(p) => add_scaled(&mut out[*p], src, *k),
                        UniGains::Dissociation {
                            products,
                            separation,
                            parts,
                        } => {
                            let mut smoothed: Option<Vec<f64>> = None;
                            for (slot, &product) in products.iter().enumerate() {
                                for part in &parts[slot] {
                                    match part {
                                        UnbindingPart::Local(w) => add_scaled(&mut out[product], src, k * w),
                                        UnbindingPart::Smoothed(w) => {
                                            let s = smoothed.get_or_insert_with(|| conv(separation, *reactant));
                                            add_scaled(&mut out[product], s, k * w);
                                        }
                                        UnbindingPart::Table(t) => t.accumulate(src, wrap, *k, &mut out[product]),
                                    }
                                }
                            }
                        }
                    }
                }
                Compiled::Bimolecular {
                    first,
                    second,
                    kernel,
                    gains,
                } => {
                    let (a, b) = (&fields[*first], &fields[*second]);
                    // K * B and K * A
                    let kb = conv(kernel, *second);
                    let ka = if first == second { kb.clone() } else { conv(kernel, *first) };
                    let a_kb: Vec<f64> = a.iter().zip(&kb).map(|(x, y)| x * y).collect();
                    let b_ka: Vec<f64> = b.iter().zip(&ka).map(|(x, y)| x * y).collect();
                    // each reactant slot loses (1 / alpha!) x its partner interaction
                    add_scaled(&mut out[*first], &a_kb, -inv_factorial);
                    add_scaled(&mut out[*second], &b_ka, -inv_factorial);
                    match gains {
                        BiGains::None => {}
                        BiGains::Binding { product, parts } => {
                            for part in parts {
                                match part {
                                    BindingPart::AtFirst(w) => add_scaled(&mut out[*product], &a_kb, w * inv_factorial),
                                    BindingPart::AtSecond(w) => add_scaled(&mut out[*product], &b_ka, w * inv_factorial),
                                    BindingPart::Table(t) => t.accumulate(a, b, wrap, inv_factorial, &mut out[*product]),
                                }
                            }
                        }
                        BiGains::PairPreserving { products, p } => {
                            let [c, d] = *products;
                            add_scaled(&mut out[c], &a_kb, p * inv_factorial);
                            add_scaled(&mut out[c], &b_ka, (1.0 - p) * inv_factorial);
                            add_scaled(&mut out[d], &b_ka, p * inv_factorial);
                            add_scaled(&mut out[d], &a_kb, (1.0 - p) * inv_factorial);
                        }
                    }
                }
            }
        }
    }
}

fn add_scaled(out: &mut [f64], src: &[f64], c: f64) {
    for (o, s) in out.iter_mut().zip(src) {
        *o += c * s;
    }
}

impl ReactionTerm for CompiledMfmTerms {
    fn n_species(&self) -> usize {
        self.net.n_species()
    }

    fn eval(&self, fields: &[Vec<f64>], out: &mut [Vec<f64>]) {
        self.eval_into(fields, out);
    }
}

/// Mean-field reaction term evaluated on a field set.
pub fn mfm_rhs(fields: &GridField, compiled: &CompiledMfmTerms) -> Result<GridField> {
    if fields.grid != compiled.grid || fields.n_species() != compiled.net.n_species() {
        return Err(Error::Mismatch("fields do not match the compiled network".into()));
    }
    let mut out = GridField::zeros(fields.grid, fields.n_species());
    compiled.eval_into(&fields.values, &mut out.values);
    out.time = fields.time;
    Ok(out)
}

/// Binding gain `int K(x - y) m(z | x, y) A(x) B(y) dx dy` on the grid, with
/// `m` the convex-combination placement given by `centers` and `A` the first
/// reactant.
pub fn binding_product_gain(a: &[f64], b: &[f64], dk: &DiscretizedKernel, centers: &[Center]) -> Vec<f64> {
    let grid = dk.grid();
    let wrap = Wrap::new(grid);
    let mut out = vec![0.0; grid.len()];
    for c in centers.iter().filter(|c| c.weight > 0.0) {
        BindingTable::new(dk, c.weight, c.alpha).accumulate(a, b, wrap, 1.0, &mut out);
    }
    out
}

/// Gain of one dissociation product,
/// `k2 int (int m2(x, y | z) dy) C(z) dz` (or the `dx` marginal for the second
/// product), with `rho` the discretized unit-mass separation density.
pub fn unbinding_gain(
    c: &[f64],
    rho: &DiscretizedKernel,
    centers: &[Center],
    k2: f64,
    slot: ProductSlot,
) -> Vec<f64> {
    let grid = rho.grid();
    let wrap = Wrap::new(grid);
    let mut out = vec![0.0; grid.len()];
    for center in centers.iter().filter(|c| c.weight > 0.0) {
        let factor = match slot {
            ProductSlot::First => 1.0 - center.alpha,
            ProductSlot::Second => -center.alpha,
        };
        DepositTable::new(rho, center.weight, factor).accumulate(c, wrap, k2, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use crate::network::preset_reversible_abc;
    use crate::spectral::{circular_convolution, field_integral};
    use std::f64::consts::PI;

    fn preset(kind: KernelKind, eps: f64, centers: Vec<Center>, dim: usize) -> Network {
        preset_reversible_abc(dim, [1.0, 0.5, 0.1], 1.0, 0.05, eps, kind, centers).unwrap()
    }

    fn half_half() -> Vec<Center> {
        vec![Center::new(0.5, 0.0), Center::new(0.5, 1.0)]
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn sm_examples() {
        let net = preset(KernelKind::Doi, 0.1, half_half(), 1);
        let g = PeriodicGrid::new(1, 8, 2.0 * PI).unwrap();
        let r = sm_rhs(&net, &GridField::uniform(g, &[1.0, 1.0, 0.0]));
        assert_eq!((r.values[0][0], r.values[1][3], r.values[2][5]), (-1.0, -1.0, 1.0));
        let r = sm_rhs(&net, &GridField::uniform(g, &[0.0, 0.0, 1.0]));
        assert_eq!((r.values[0][0], r.values[1][0], r.values[2][0]), (0.05, 0.05, -0.05));
        let r = sm_rhs(&net, &GridField::zeros(g, 3));
        assert!(r.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_binding_gain() {
        let g = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
        let dk = Kernel::new(KernelKind::Gaussian, 1.3, 0.3, 1).discretize(&g).unwrap();
        let centers = vec![Center::new(0.2, 0.0), Center::new(0.5, 0.37), Center::new(0.3, 1.0)];
        let out = binding_product_gain(&vec![0.7; 64], &vec![2.0; 64], &dk, &centers);
        for v in out {
            assert!((v - 1.3 * 1.4).abs() < 1e-13);
        }
    }

    #[test]
    fn product_at_first_reactant_is_convolution() {
        let g = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let dk = Kernel::new(KernelKind::Doi, 1.0, 0.8, 1).discretize(&g).unwrap();
        let a = pseudo_random(32, 1);
        let b = pseudo_random(32, 2);
        let out = binding_product_gain(&a, &b, &dk, &[Center::new(1.0, 1.0)]);
        let kb = circular_convolution(&b, &dk).unwrap();
        for i in 0..32 {
            assert!((out[i] - a[i] * kb[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn dirac_separation_gives_local_unbinding() {
        let g = PeriodicGrid::new(1, 16, 1.0).unwrap();
        let rho = DiscretizedKernel::dirac(g, 1.0);
        let c = pseudo_random(16, 3);
        for slot in [ProductSlot::First, ProductSlot::Second] {
            let out = unbinding_gain(&c, &rho, &[Center::new(0.4, 0.3), Center::new(0.6, 0.5)], 0.05, slot);
            for i in 0..16 {
                assert!((out[i] - 0.05 * c[i]).abs() < 1e-15);
            }
        }
        let rho = Kernel::new(KernelKind::Gaussian, 1.0, 0.1, 1).discretize(&g).unwrap();
        let out = unbinding_gain(&vec![2.0; 16], &rho, &[Center::new(1.0, 0.5)], 0.05, ProductSlot::First);
        for v in out {
            assert!((v - 0.1).abs() < 1e-14);
        }
    }

    #[test]
    fn deposit_corner_weights() {
        assert_eq!(deposit_corners([-1.5, 0.0], 1), vec![([-2, 0], 0.5), ([-1, 0], 0.5)]);
        assert_eq!(deposit_corners([3.0, 0.0], 1), vec![([3, 0], 1.0)]);
        let c = deposit_corners([0.25, -0.5], 2);
        assert_eq!(c.len(), 4);
        assert!((c.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_mfm_equals_sm() {
        let g = PeriodicGrid::new(2, 32, 2.0 * PI).unwrap();
        for kind in [KernelKind::Doi, KernelKind::Gaussian] {
            for centers in [half_half(), vec![Center::new(1.0, 0.5)], vec![Center::new(0.3, 0.2), Center::new(0.7, 0.9)]] {
                let net = preset(kind, 0.5, centers, 2);
                let compiled = CompiledMfmTerms::new(&net, &g).unwrap();
                let f = GridField::uniform(g, &[0.3, 1.7, 0.9]);
                let m = mfm_rhs(&f, &compiled).unwrap();
                let s = sm_rhs(&net, &f);
                for (x, y) in m.values.iter().flatten().zip(s.values.iter().flatten()) {
                    assert!((x - y).abs() < 1e-13, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn discrete_conservation_with_off_grid_placement() {
        let g = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
        let net = preset(KernelKind::Gaussian, 0.4, vec![Center::new(1.0, 0.5)], 1);
        let compiled = CompiledMfmTerms::new(&net, &g).unwrap();
        let f = GridField::new(g, (0..3).map(|s| pseudo_random(64, 10 + s)).collect());
        let r = mfm_rhs(&f, &compiled).unwrap();
        let ac: Vec<f64> = r.values[0].iter().zip(&r.values[2]).map(|(a, c)| a + c).collect();
        let bc: Vec<f64> = r.values[1].iter().zip(&r.values[2]).map(|(b, c)| b + c).collect();
        assert!(field_integral(&ac, &g).abs() < 1e-12);
        assert!(field_integral(&bc, &g).abs() < 1e-12);
    }

    #[test]
    fn direct_and_transform_routes_agree() {
        let g = PeriodicGrid::new(1, 128, 2.0 * PI).unwrap();
        let net = preset(KernelKind::Gaussian, 0.3, half_half(), 1);
        let a = CompiledMfmTerms::with_method(&net, &g, ConvolutionMethod::Direct).unwrap();
        let b = CompiledMfmTerms::with_method(&net, &g, ConvolutionMethod::Transform).unwrap();
        let f = GridField::new(g, (0..3).map(|s| pseudo_random(128, 20 + s)).collect());
        let ra = mfm_rhs(&f, &a).unwrap();
        let rb = mfm_rhs(&f, &b).unwrap();
        for (x, y) in ra.values.iter().flatten().zip(rb.values.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn table_normalizations_are_one() {
        let g = PeriodicGrid::new(1, 128, 2.0 * PI).unwrap();
        let net = preset(KernelKind::Doi, 0.3, vec![Center::new(0.4, 0.5), Center::new(0.6, 0.25)], 1);
        let c = CompiledMfmTerms::new(&net, &g).unwrap();
        let norms = c.table_normalizations();
        assert!(norms.len() >= 2);
        for n in norms {
            assert!((n - 1.0).abs() < 1e-12, "{n}");
        }
    }

    /// Pairwise O(N^2) evaluation: every (x_i, y_j) pair reacts at rate
    /// K(x_i - y_j) A_i B_j h^2 and drops its product at the weighted point,
    /// shared linearly between the two neighbouring nodes.
    fn brute_force_binding(a: &[f64], b: &[f64], dense: &[f64], h: f64, centers: &[Center]) -> Vec<f64> {
        let n = a.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let mut u = i as i64 - j as i64;
                if u > n as i64 / 2 {
                    u -= n as i64;
                } else if u <= -(n as i64) / 2 {
                    u += n as i64;
                }
                let rate = dense[(u.rem_euclid(n as i64)) as usize] * a[i] * b[j] * h;
                for c in centers {
                    let z = i as f64 - (1.0 - c.alpha) * u as f64;
                    let lo = z.floor();
                    let f = z - lo;
                    let lo = (lo as i64).rem_euclid(n as i64) as usize;
                    out[lo] += c.weight * rate * (1.0 - f);
                    out[(lo + 1) % n] += c.weight * rate * f;
                }
            }
        }
        out
    }

    #[test]
    fn binding_gain_matches_pairwise_oracle() {
        for n in [8usize, 16, 32] {
            let g = PeriodicGrid::new(1, n, 1.0).unwrap();
            let h = g.spacing();
            let dk = Kernel::new(KernelKind::Doi, 1.0, 2.6 * h, 1).discretize(&g).unwrap();
            let dense = dk.dense();
            let a = pseudo_random(n, n as u64);
            let b = pseudo_random(n, 7 * n as u64);
            for centers in [
                vec![Center::new(1.0, 0.5)],
                vec![Center::new(0.25, 0.0), Center::new(0.75, 0.3)],
                vec![Center::new(1.0, 1.0)],
            ] {
                let fast = binding_product_gain(&a, &b, &dk, &centers);
                let slow = brute_force_binding(&a, &b, &dense, h, &centers);
                for (x, y) in fast.iter().zip(&slow) {
                    assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "n={n}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn unbinding_gain_matches_pairwise_oracle() {
        let n = 16;
        let g = PeriodicGrid::new(1, n, 1.0).unwrap();
        let h = g.spacing();
        let rho = Kernel::new(KernelKind::Gaussian, 1.0, 0.9 * h, 1).discretize(&g).unwrap();
        let dense = rho.dense();
        let c = pseudo_random(n, 99);
        let centers = [Center::new(0.6, 0.5), Center::new(0.4, 0.0)];
        let mut first = vec![0.0; n];
        let mut second = vec![0.0; n];
        for z in 0..n {
            for s in -(n as i64) / 2 + 1..=(n as i64) / 2 {
                let w = 0.05 * dense[s.rem_euclid(n as i64) as usize] * h * c[z];
                for cen in &centers {
                    for (target, pos) in [
                        (&mut first, z as f64 + (1.0 - cen.alpha) * s as f64),
                        (&mut second, z as f64 - cen.alpha * s as f64),
                    ] {
                        let lo = pos.floor();
                        let f = pos - lo;
                        let lo = (lo as i64).rem_euclid(n as i64) as usize;
                        target[lo] += cen.weight * w * (1.0 - f);
                        target[(lo + 1) % n] += cen.weight * w * f;
                    }
                }
            }
        }
        let fast1 = unbinding_gain(&c, &rho, &centers, 0.05, ProductSlot::First);
        let fast2 = unbinding_gain(&c, &rho, &centers, 0.05, ProductSlot::Second);
        for i in 0..n {
            assert!((fast1[i] - first[i]).abs() < 1e-14);
            assert!((fast2[i] - second[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn compiled_terms_match_standalone_gains() {
        let g = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
        let centers = vec![Center::new(0.5, 0.5), Center::new(0.5, 0.0)];
        let net = preset(KernelKind::Doi, 0.5, centers.clone(), 1);
        let compiled = CompiledMfmTerms::new(&net, &g).unwrap();
        let f = GridField::new(g, (0..3).map(|s| pseudo_random(64, 40 + s)).collect());
        let r = mfm_rhs(&f, &compiled).unwrap();
        let dk = net.kernel(0).discretize(&g).unwrap();
        let gain = binding_product_gain(&f.values[0], &f.values[1], &dk, &centers);
        let Placement::Dissociation { separation, centers: back } = &net.reactions()[1].placement else {
            panic!("expected dissociation placement")
        };
        let rho = Kernel::from_spec(separation, 1.0, 1).discretize(&g).unwrap();
        let un_a = unbinding_gain(&f.values[2], &rho, back, 0.05, ProductSlot::First);
        let kb = convolve_direct(&f.values[1], &dk);
        for i in 0..64 {
            let c_expected = gain[i] - 0.05 * f.values[2][i];
            assert!((r.values[2][i] - c_expected).abs() < 1e-12);
            let a_expected = -f.values[0][i] * kb[i] + un_a[i];
            assert!((r.values[0][i] - a_expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_fields_give_zero() {
        let g = PeriodicGrid::new(1, 32, 2.0 * PI).unwrap();
        let net = preset(KernelKind::Gaussian, 0.3, vec![Center::new(1.0, 0.5)], 1);
        let c = CompiledMfmTerms::new(&net, &g).unwrap();
        let r = mfm_rhs(&GridField::zeros(g, 3), &c).unwrap();
        assert!(r.values.iter().flatten().all(|&v| v == 0.0));
    }
}
