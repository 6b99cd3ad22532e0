//! Periodic grids, Fourier transforms, convolutions and IMEX time stepping.

mod convolution;
mod fft;
mod grid;
mod stepper;

pub use convolution::{
    circular_convolution, convolve_direct, field_integral, KernelSpectrum,
};
pub use fft::Transform;
pub use grid::{make_grid, PeriodicGrid};
pub use stepper::{cn_diffusion_factors, ImexStepper, NoReaction, ReactionTerm, StepperState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-species concentration fields sampled on a periodic grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: PeriodicGrid,
    /// One array of `grid.len()` values per species.
    pub values: Vec<Vec<f64>>,
    pub time: f64,
}

impl GridField {
    pub fn new(grid: PeriodicGrid, values: Vec<Vec<f64>>) -> Self {
        GridField {
            grid,
            values,
            time: 0.0,
        }
    }

    pub fn zeros(grid: PeriodicGrid, n_species: usize) -> Self {
        GridField::new(grid, vec![vec![0.0; grid.len()]; n_species])
    }

    pub fn uniform(grid: PeriodicGrid, levels: &[f64]) -> Self {
        GridField::new(grid, levels.iter().map(|&c| vec![c; grid.len()]).collect())
    }

    pub fn n_species(&self) -> usize {
        self.values.len()
    }

    /// Molar mass of every species.
    pub fn masses(&self) -> Vec<f64> {
        self.values.iter().map(|f| field_integral(f, &self.grid)).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn check(&self) -> Result<()> {
        if let Some(f) = self.values.iter().find(|f| f.len() != self.grid.len()) {
            return Err(Error::Mismatch(format!(
                "field with {} values on a grid of {} points",
                f.len(),
                self.grid.len()
            )));
        }
        if !self.values.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        Ok(())
    }
}
