//! Reaction network data model.
//!
//! A [`ReactionNetwork`] is the raw, serializable description. Solvers only
//! accept a [`Network`], which is produced by [`ReactionNetwork::validate`]
//! and cannot be mutated afterwards.
//!
//! Species are identified by position; names are labels. Reactions are
//! restricted to at most two reactants (at least one) and at most two
//! products. For a reaction with two reactants (or products) of distinct
//! species, the *first* one is always the species with the lower index. This
//! ordering fixes the orientation of the placement measures: a
//! convex-combination center `alpha` places the product at
//! `alpha * x_first + (1 - alpha) * x_second`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kernels::{detailed_balance_unbinding, Kernel, KernelKind};

/// Tolerance on the normalization of placement weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub diffusivity: f64,
}

/// Shape of a reaction kernel; the rate is derived from the reaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Interaction length scale. Unused for [`KernelKind::Constant`].
    #[serde(default)]
    pub width: f64,
}

impl KernelSpec {
    pub fn constant() -> Self {
        KernelSpec {
            kind: KernelKind::Constant,
            width: 0.0,
        }
    }

    pub fn separation(kind: KernelKind, width: f64) -> Self {
        KernelSpec { kind, width }
    }
}

/// One point mass `weight * delta(z - (alpha x + (1 - alpha) y))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub weight: f64,
    pub alpha: f64,
}

impl Center {
    pub fn new(weight: f64, alpha: f64) -> Self {
        Center { weight, alpha }
    }
}

/// Product placement law of a reaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Placement {
    /// No products.
    None,
    /// `S_i -> S_j`: the product appears where the reactant was.
    DiracAtReactant,
    /// `S_i + S_k -> S_j`: product on the segment between the reactants.
    ConvexCombination { centers: Vec<Center> },
    /// `S_i + S_k -> S_j + S_r`: with probability `p` the first product takes
    /// the first reactant's position, otherwise the positions are swapped.
    PairPreserving { p: f64 },
    /// `S_i -> S_j + S_k`: product separation drawn from a unit-mass density,
    /// weighted center of mass at the reactant.
    Dissociation {
        separation: KernelSpec,
        centers: Vec<Center>,
    },
}

impl Placement {
    fn name(&self) -> &'static str {
        match self {
            Placement::None => "none",
            Placement::DiracAtReactant => "dirac_at_reactant",
            Placement::ConvexCombination { .. } => "convex_combination",
            Placement::PairPreserving { .. } => "pair_preserving",
            Placement::Dissociation { .. } => "dissociation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    /// Reactant stoichiometry, one entry per species.
    pub reactants: Vec<u32>,
    /// Product stoichiometry, one entry per species.
    pub products: Vec<u32>,
    /// Macroscopic (mass-action) rate constant.
    pub rate: f64,
    pub kernel: KernelSpec,
    pub placement: Placement,
}

impl Reaction {
    pub fn reactant_order(&self) -> u32 {
        self.reactants.iter().sum()
    }

    pub fn product_order(&self) -> u32 {
        self.products.iter().sum()
    }

    /// `prod_j alpha_j!`, i.e. 2 for `S + S` reactions and 1 otherwise.
    pub fn reactant_factorial(&self) -> f64 {
        self.reactants
            .iter()
            .map(|&a| (1..=a).product::<u32>() as f64)
            .product()
    }

    /// Microscopic rate `k = alpha! * kappa`.
    pub fn micro_rate(&self) -> f64 {
        self.reactant_factorial() * self.rate
    }

    /// Reactant species expanded by multiplicity, ascending.
    pub fn reactant_slots(&self) -> Vec<usize> {
        expand(&self.reactants)
    }

    /// Product species expanded by multiplicity, ascending.
    pub fn product_slots(&self) -> Vec<usize> {
        expand(&self.products)
    }

    fn check(&self, index: usize, n_species: usize) -> Result<()> {
        let fail = |reason: String| Error::InvalidReaction { index, reason };
        if self.reactants.len() != n_species || self.products.len() != n_species {
            return Err(fail(format!(
                "stoichiometry vectors must have length {n_species}"
            )));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(fail(format!("rate must be positive, got {}", self.rate)));
        }
        let order = self.reactant_order();
        match order {
            0 => return Err(fail("zeroth-order reactions are not supported".into())),
            1 | 2 => {}
            _ => return Err(fail("reactant order exceeds 2".into())),
        }
        let product_order = self.product_order();
        if product_order > 2 {
            return Err(fail("product order exceeds 2".into()));
        }

        let bimolecular_kernel = matches!(self.kernel.kind, KernelKind::Doi | KernelKind::Gaussian);
        if (order == 2) != bimolecular_kernel {
            return Err(fail("kernel arity mismatch".into()));
        }
        if bimolecular_kernel && !(self.kernel.width.is_finite() && self.kernel.width > 0.0) {
            return Err(fail("kernel width must be positive".into()));
        }

        let placement_ok = matches!(
            (order, product_order, &self.placement),
            (_, 0, Placement::None)
                | (1, 1, Placement::DiracAtReactant)
                | (1, 2, Placement::Dissociation { .. })
                | (2, 1, Placement::ConvexCombination { .. })
                | (2, 2, Placement::PairPreserving { .. })
        );
        if !placement_ok {
            return Err(fail(format!(
                "placement mismatch: `{}` cannot be used for a {order}-to-{product_order} reaction",
                self.placement.name()
            )));
        }

        match &self.placement {
            Placement::ConvexCombination { centers } => check_centers(centers).map_err(fail)?,
            Placement::Dissociation {
                separation,
                centers,
            } => {
                if !matches!(separation.kind, KernelKind::Doi | KernelKind::Gaussian) {
                    return Err(fail("separation density must be a Doi or Gaussian shape".into()));
                }
                if !(separation.width.is_finite() && separation.width > 0.0) {
                    return Err(fail("separation width must be positive".into()));
                }
                check_centers(centers).map_err(fail)?;
            }
            Placement::PairPreserving { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(fail(format!("pair-preserving probability {p} outside [0, 1]")));
                }
            }
            Placement::None | Placement::DiracAtReactant => {}
        }
        Ok(())
    }
}

fn expand(stoich: &[u32]) -> Vec<usize> {
    stoich
        .iter()
        .enumerate()
        .flat_map(|(j, &n)| std::iter::repeat_n(j, n as usize))
        .collect()
}

/// Checks that center weights form a probability vector and every `alpha`
/// lies in `[0, 1]`.
pub fn check_centers(centers: &[Center]) -> std::result::Result<(), String> {
    if centers.is_empty() {
        return Err("placement needs at least one center".into());
    }
    for c in centers {
        if !(c.weight.is_finite() && c.weight >= 0.0) {
            return Err(format!("center weight {} must be nonnegative", c.weight));
        }
        if !(0.0..=1.0).contains(&c.alpha) {
            return Err(format!("center alpha {} outside [0, 1]", c.alpha));
        }
    }
    let total: f64 = centers.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(format!("center weights sum to {total}, expected 1"));
    }
    Ok(())
}

/// Unvalidated network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionNetwork {
    pub dim: usize,
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
}

impl ReactionNetwork {
    pub fn validate(self) -> Result<Network> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(Error::InvalidNetwork(format!(
                "dimension must be 1 or 2, got {}",
                self.dim
            )));
        }
        if self.species.is_empty() {
            return Err(Error::InvalidNetwork("no species".into()));
        }
        for s in &self.species {
            if !(s.diffusivity.is_finite() && s.diffusivity > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "species `{}` needs a positive diffusivity, got {}",
                    s.name, s.diffusivity
                )));
            }
        }
        let n = self.species.len();
        for (index, r) in self.reactions.iter().enumerate() {
            r.check(index, n)?;
        }
        Ok(Network { raw: self })
    }
}

/// Convenience wrapper matching the operation name used in the docs.
pub fn validate_network(net: ReactionNetwork) -> Result<Network> {
    net.validate()
}

/// A validated, immutable reaction network.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Network {
    raw: ReactionNetwork,
}

impl Network {
    pub fn dim(&self) -> usize {
        self.raw.dim
    }

    pub fn species(&self) -> &[Species] {
        &self.raw.species
    }

    pub fn n_species(&self) -> usize {
        self.raw.species.len()
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.raw.reactions
    }

    pub fn diffusivities(&self) -> Vec<f64> {
        self.raw.species.iter().map(|s| s.diffusivity).collect()
    }

    /// Rate kernel of reaction `index`, with rate `k = alpha! * kappa`.
    pub fn kernel(&self, index: usize) -> Kernel {
        let r = &self.raw.reactions[index];
        Kernel::new(r.kernel.kind, r.micro_rate(), r.kernel.width, self.raw.dim)
    }

    pub fn as_raw(&self) -> &ReactionNetwork {
        &self.raw
    }

    pub fn into_raw(self) -> ReactionNetwork {
        self.raw
    }

    /// Same network with every interaction length (bimolecular kernel widths
    /// and dissociation separation widths) set to `eps`.
    pub fn with_epsilon(&self, eps: f64) -> Result<Network> {
        let mut raw = self.raw.clone();
        for r in &mut raw.reactions {
            if r.kernel.kind != KernelKind::Constant {
                r.kernel.width = eps;
            }
            if let Placement::Dissociation { separation, .. } = &mut r.placement {
                separation.width = eps;
            }
        }
        raw.validate()
    }

    /// Same network with species `a` and `b` relabelled (names, diffusivities
    /// and stoichiometry columns swapped).
    pub fn swap_species(&self, a: usize, b: usize) -> Result<Network> {
        let mut raw = self.raw.clone();
        raw.species.swap(a, b);
        for r in &mut raw.reactions {
            r.reactants.swap(a, b);
            r.products.swap(a, b);
        }
        raw.validate()
    }
}

fn species(name: &str, diffusivity: f64) -> Species {
    Species {
        name: name.to_string(),
        diffusivity,
    }
}

/// The reversible `A + B <-> C` system.
///
/// Binding uses a separation kernel of the given kind and width `eps` with
/// rate `kappa1`; dissociation happens at constant rate `kappa2` with the
/// separation density forced by detailed balance.
pub fn preset_reversible_abc(
    dim: usize,
    diffusivities: [f64; 3],
    kappa1: f64,
    kappa2: f64,
    eps: f64,
    kind: KernelKind,
    binding_centers: Vec<Center>,
) -> Result<Network> {
    check_centers(&binding_centers).map_err(|reason| param("binding_weights", reason))?;
    if kind == KernelKind::Constant {
        return Err(param("kernel", "binding needs a Doi or Gaussian kernel"));
    }
    let binding_kernel = Kernel::new(kind, kappa1, eps, dim);
    let unbinding = detailed_balance_unbinding(&binding_kernel, &binding_centers, kappa2)?;
    let raw = ReactionNetwork {
        dim,
        species: vec![
            species("A", diffusivities[0]),
            species("B", diffusivities[1]),
            species("C", diffusivities[2]),
        ],
        reactions: vec![
            Reaction {
                reactants: vec![1, 1, 0],
                products: vec![0, 0, 1],
                rate: kappa1,
                kernel: KernelSpec { kind, width: eps },
                placement: Placement::ConvexCombination {
                    centers: binding_centers,
                },
            },
            Reaction {
                reactants: vec![0, 0, 1],
                products: vec![1, 1, 0],
                rate: kappa2,
                kernel: KernelSpec::constant(),
                placement: unbinding,
            },
        ],
    };
    raw.validate()
}

/// The reversible `A + B <-> C + D` system with pair-preserving placement in
/// both directions.
pub fn preset_reversible_abcd(
    dim: usize,
    diffusivities: [f64; 4],
    kappa1: f64,
    kappa2: f64,
    eps: f64,
    kind: KernelKind,
    p: f64,
) -> Result<Network> {
    let spec = KernelSpec { kind, width: eps };
    let raw = ReactionNetwork {
        dim,
        species: vec![
            species("A", diffusivities[0]),
            species("B", diffusivities[1]),
            species("C", diffusivities[2]),
            species("D", diffusivities[3]),
        ],
        reactions: vec![
            Reaction {
                reactants: vec![1, 1, 0, 0],
                products: vec![0, 0, 1, 1],
                rate: kappa1,
                kernel: spec,
                placement: Placement::PairPreserving { p },
            },
            Reaction {
                reactants: vec![0, 0, 1, 1],
                products: vec![1, 1, 0, 0],
                rate: kappa2,
                kernel: spec,
                placement: Placement::PairPreserving { p },
            },
        ],
    };
    raw.validate()
}
