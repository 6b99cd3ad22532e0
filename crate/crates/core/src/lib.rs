//! Deterministic and stochastic simulation of reaction-diffusion networks at
//! three levels of resolution: the local mass-action PDE, the nonlocal
//! mean-field integro-differential model, and the lattice jump process it is
//! the large-population limit of.

pub mod error;
pub mod experiments;
pub mod kernels;
pub mod network;
pub mod particle;
pub mod rhs;
pub mod spectral;

pub use error::{Error, Result};
pub use kernels::{discretize_kernel, DiscretizedKernel, Kernel, KernelKind};
pub use network::{Center, KernelSpec, Network, Placement, Reaction, ReactionNetwork, Species};
pub use rhs::{mfm_rhs, sm_rhs, CompiledMfmTerms, ConvolutionMethod, SmReaction};
pub use spectral::{GridField, ImexStepper, PeriodicGrid};
pub use particle::{build_crdme, empirical_fields, ensemble_mean, run_ensemble, sample_initial_counts, ssa_run, CrdmeProcess, LatticeState, Trajectory};
