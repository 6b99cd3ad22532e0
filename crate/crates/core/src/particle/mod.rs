//! Lattice jump process (CRDME) for the particle model and its stochastic
//! simulation.
//!
//! Molecules live on the voxels of the same periodic grid the deterministic
//! solvers use. A molecule of species `j` hops to each nearest neighbour at
//! rate `D_j / h^2`. Two molecules in voxels `v` and `w` react at rate
//! `K(x_v - x_w) / gamma`, with `K` the cell-averaged discretized kernel, so
//! the large-`gamma` limit of the lattice model is exactly the discretized
//! mean-field model. Counts relate to concentrations through
//! `count = gamma * rho * h^d`.

mod fenwick;
mod queue;
mod ssa;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kernels::Kernel;
use crate::network::{Center, Network, Placement};
use crate::spectral::{GridField, PeriodicGrid};

pub use queue::EventQueue;
pub use ssa::{ensemble_mean, run_ensemble, ssa_run, EnsembleSummary, Event, SsaRunner, Trajectory};

/// Per-voxel, per-species molecule counts at a point in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeState {
    /// `counts[j][v]`
    pub counts: Vec<Vec<u32>>,
    pub time: OrderedTime,
}

/// Simulation clock stored bit-exactly so states compare for equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedTime(u64);

impl OrderedTime {
    pub fn new(t: f64) -> Self {
        OrderedTime(t.to_bits())
    }

    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl LatticeState {
    pub fn empty(n_species: usize, n_voxels: usize) -> Self {
        LatticeState {
            counts: vec![vec![0; n_voxels]; n_species],
            time: OrderedTime::new(0.0),
        }
    }

    pub fn time(&self) -> f64 {
        self.time.get()
    }

    pub fn totals(&self) -> Vec<u64> {
        self.counts
            .iter()
            .map(|c| c.iter().map(|&n| n as u64).sum())
            .collect()
    }
}

/// Product placement on the lattice for a one-reactant reaction.
#[derive(Debug, Clone)]
pub enum UnimolecularPlacement {
    Vanish,
    /// Product appears in the reactant's voxel.
    InPlace(usize),
    Dissociation {
        products: [usize; 2],
        /// Separation offsets (in cells) and their cumulative probabilities.
        offsets: Vec<[i64; 2]>,
        cumulative: Vec<f64>,
        centers: Vec<Center>,
    },
}

#[derive(Debug, Clone)]
pub enum BimolecularPlacement {
    Vanish,
    Binding { product: usize, centers: Vec<Center> },
    PairPreserving { products: [usize; 2], p: f64 },
}

#[derive(Debug, Clone)]
pub enum LatticeReaction {
    Unimolecular {
        reactant: usize,
        rate: f64,
        placement: UnimolecularPlacement,
    },
    Bimolecular {
        first: usize,
        second: usize,
        /// Offset `o = x_first - x_second` in cells.
        offsets: Vec<[i64; 2]>,
        /// Pair rate `K(o) / gamma` per offset.
        coefficients: Vec<f64>,
        placement: BimolecularPlacement,
    },
}

/// The lattice jump process of a network at system size `gamma`.
#[derive(Debug, Clone)]
pub struct CrdmeProcess {
    grid: PeriodicGrid,
    gamma: f64,
    hop_rates: Vec<f64>,
    reactions: Vec<LatticeReaction>,
}

impl CrdmeProcess {
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_species(&self) -> usize {
        self.hop_rates.len()
    }

    /// Rate of a hop to one particular neighbour.
    pub fn hop_rate(&self, species: usize) -> f64 {
        self.hop_rates[species]
    }

    pub fn reactions(&self) -> &[LatticeReaction] {
        &self.reactions
    }

    /// Reaction rate of one specific pair of molecules sitting in voxels `a`
    /// (first reactant) and `b` (second reactant).
    pub fn pair_propensity(&self, reaction: usize, a: usize, b: usize) -> f64 {
        match &self.reactions[reaction] {
            LatticeReaction::Bimolecular {
                offsets, coefficients, ..
            } => offsets
                .iter()
                .zip(coefficients)
                .filter(|(o, _)| self.grid.shift(b, **o) == a)
                .map(|(_, c)| c)
                .sum(),
            LatticeReaction::Unimolecular { .. } => 0.0,
        }
    }
}

/// Builds the lattice process for `net` with every bimolecular kernel (and
/// dissociation separation density) set to width `eps`.
pub fn build_crdme(net: &Network, grid: &PeriodicGrid, gamma: f64, eps: f64) -> Result<CrdmeProcess> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(param("gamma", format!("must be positive, got {gamma}")));
    }
    if net.dim() != grid.dim() {
        return Err(Error::Mismatch(format!("{}d network on a {}d grid", net.dim(), grid.dim())));
    }
    let net = net.with_epsilon(eps)?;
    let h2 = grid.spacing() * grid.spacing();
    let hop_rates = net.diffusivities().iter().map(|d| d / h2).collect();
    let mut reactions = Vec::new();
    for (index, r) in net.reactions().iter().enumerate() {
        let slots = r.reactant_slots();
        let products = r.product_slots();
        let kernel = net.kernel(index);
        let lattice = if slots.len() == 1 {
            let placement = match &r.placement {
                Placement::DiracAtReactant => UnimolecularPlacement::InPlace(products[0]),
                Placement::Dissociation {
                    separation,
                    centers,
                } => {
                    let rho = Kernel::from_spec(separation, 1.0, net.dim()).discretize(grid)?;
                    let cell = grid.cell_volume();
                    let mut acc = 0.0;
                    let cumulative: Vec<f64> = rho
                        .weights()
                        .iter()
                        .map(|w| {
                            acc += w * cell;
                            acc
                        })
                        .collect();
                    UnimolecularPlacement::Dissociation {
                        products: [products[0], products[1]],
                        offsets: rho.offsets().to_vec(),
                        cumulative,
                        centers: centers.clone(),
                    }
                }
                _ => UnimolecularPlacement::Vanish,
            };
            LatticeReaction::Unimolecular {
                reactant: slots[0],
                rate: kernel.rate,
                placement,
            }
        } else {
            let dk = kernel.discretize(grid)?;
            let placement = match &r.placement {
                Placement::ConvexCombination { centers } => BimolecularPlacement::Binding {
                    product: products[0],
                    centers: centers.clone(),
                },
                Placement::PairPreserving { p } => BimolecularPlacement::PairPreserving {
                    products: [products[0], products[1]],
                    p: *p,
                },
                _ => BimolecularPlacement::Vanish,
            };
            LatticeReaction::Bimolecular {
                first: slots[0],
                second: slots[1],
                offsets: dk.offsets().to_vec(),
                coefficients: dk.weights().iter().map(|w| w / gamma).collect(),
                placement,
            }
        };
        reactions.push(lattice);
    }
    Ok(CrdmeProcess {
        grid: *grid,
        gamma,
        hop_rates,
        reactions,
    })
}

/// Independent Poisson counts with mean `gamma * rho_j(x_v) * h^d`.
pub fn sample_initial_counts(fields: &GridField, gamma: f64, seed: u64) -> Result<LatticeState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_counts_with(fields, gamma, &mut rng)
}

pub(crate) fn sample_counts_with(fields: &GridField, gamma: f64, rng: &mut ChaCha8Rng) -> Result<LatticeState> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(param("gamma", format!("must be positive, got {gamma}")));
    }
    let cell = fields.grid.cell_volume();
    let mut state = LatticeState::empty(fields.n_species(), fields.grid.len());
    for (j, values) in fields.values.iter().enumerate() {
        for (v, &rho) in values.iter().enumerate() {
            if !(rho.is_finite() && rho >= 0.0) {
                return Err(param("fields", format!("species {j} has value {rho} at voxel {v}")));
            }
            let mean = gamma * rho * cell;
            if mean > 0.0 {
                let draw: f64 = Poisson::new(mean).map_err(|e| param("fields", e.to_string()))?.sample(rng);
                state.counts[j][v] = draw as u32;
            }
        }
    }
    state.time = OrderedTime::new(fields.time);
    Ok(state)
}

/// Concentrations `count / (gamma h^d)`.
pub fn empirical_fields(state: &LatticeState, gamma: f64, grid: &PeriodicGrid) -> GridField {
    let scale = 1.0 / (gamma * grid.cell_volume());
    let values = state
        .counts
        .iter()
        .map(|c| c.iter().map(|&n| n as f64 * scale).collect())
        .collect();
    let mut f = GridField::new(*grid, values);
    f.time = state.time();
    f
}
