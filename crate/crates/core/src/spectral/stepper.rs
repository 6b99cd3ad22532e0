//! Crank-Nicolson / Adams-Bashforth IMEX time stepping in Fourier space.
//!
//! Diffusion is treated implicitly (Crank-Nicolson), reactions explicitly
//! (two-step Adams-Bashforth). The first step is bootstrapped with
//! backward-Euler diffusion and forward-Euler reaction on sub-steps of size
//! `dt^2`.

use super::fft::Transform;
use super::grid::PeriodicGrid;
use super::GridField;
use crate::error::{param, Error, Result};

/// Reaction part `N[rho]` of a reaction-diffusion system.
pub trait ReactionTerm: Sync {
    fn n_species(&self) -> usize;

    /// Writes `N[fields]` into `out` (same shape as `fields`).
    fn eval(&self, fields: &[Vec<f64>], out: &mut [Vec<f64>]);
}

/// Reaction term that is identically zero.
#[derive(Debug, Clone, Copy)]
pub struct NoReaction(pub usize);

impl ReactionTerm for NoReaction {
    fn n_species(&self) -> usize {
        self.0
    }

    fn eval(&self, _fields: &[Vec<f64>], out: &mut [Vec<f64>]) {
        for o in out {
            o.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Crank-Nicolson amplification `(1 - dt D |k|^2 / 2) / (1 + dt D |k|^2 / 2)`
/// for every Fourier mode of the grid.
pub fn cn_diffusion_factors(diffusivity: f64, dt: f64, grid: &PeriodicGrid) -> Vec<f64> {
    grid.wavenumbers_squared()
        .into_iter()
        .map(|k2| {
            let a = 0.5 * dt * diffusivity * k2;
            (1.0 - a) / (1.0 + a)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StepperState {
    pub fields: GridField,
    /// `N[rho^{n-1}]`, present once bootstrapped.
    pub prev_rhs: Option<Vec<Vec<f64>>>,
    pub dt: f64,
    pub step: u64,
}

impl StepperState {
    pub fn time(&self) -> f64 {
        self.fields.time
    }
}

#[derive(Debug, Clone)]
pub struct ImexStepper {
    transform: Transform,
    dt: f64,
    k2: Vec<f64>,
    diffusivities: Vec<f64>,
    /// Per species: CN factor and `dt / (1 + dt D |k|^2 / 2)`.
    cn: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ImexStepper {
    /// Diffusivities may be zero here (pure reaction), unlike in networks.
    pub fn new(grid: PeriodicGrid, diffusivities: &[f64], dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(param("dt", "must be positive"));
        }
        if let Some(d) = diffusivities.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(param("diffusivity", format!("must be nonnegative, got {d}")));
        }
        let k2 = grid.wavenumbers_squared();
        let cn = diffusivities
            .iter()
            .map(|&d| {
                let factor = cn_diffusion_factors(d, dt, &grid);
                let scale = k2.iter().map(|&k| dt / (1.0 + 0.5 * dt * d * k)).collect();
                (factor, scale)
            })
            .collect();
        Ok(ImexStepper {
            transform: Transform::new(grid),
            dt,
            k2,
            diffusivities: diffusivities.to_vec(),
            cn,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.transform.grid()
    }

    fn check_shape(&self, fields: &GridField, rhs: &dyn ReactionTerm) -> Result<()> {
        let n = self.diffusivities.len();
        if fields.values.len() != n || rhs.n_species() != n {
            return Err(Error::Mismatch(format!(
                "{} diffusivities, {} fields, {} reaction species",
                n,
                fields.values.len(),
                rhs.n_species()
            )));
        }
        if fields.grid != *self.grid() {
            return Err(Error::Mismatch("field grid differs from stepper grid".into()));
        }
        Ok(())
    }

    /// Advances from `t = 0` to `t = dt` with `ceil(1 / dt)` equal sub-steps of
    /// backward-Euler diffusion and forward-Euler reaction (sub-step `dt^2`
    /// whenever `1 / dt` is an integer). The returned state stores
    /// `N[rho(0)]` as its previous reaction term.
    pub fn bootstrap(&self, initial: GridField, rhs: &dyn ReactionTerm) -> Result<StepperState> {
        self.check_shape(&initial, rhs)?;
        let substeps = ((1.0 / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
        let delta = self.dt / substeps as f64;
        let mut fields = initial;
        let mut reaction = zeros_like(&fields.values);
        rhs.eval(&fields.values, &mut reaction);
        let first_rhs = reaction.clone();
        for sub in 0..substeps {
            if sub > 0 {
                rhs.eval(&fields.values, &mut reaction);
            }
            for (j, (f, r)) in fields.values.iter_mut().zip(&reaction).enumerate() {
                let d = self.diffusivities[j];
                let explicit: Vec<f64> = f.iter().zip(r).map(|(a, b)| a + delta * b).collect();
                let mut spec = self.transform.forward(&explicit);
                for (c, &k) in spec.iter_mut().zip(&self.k2) {
                    *c /= 1.0 + delta * d * k;
                }
                self.transform.inverse_into(&mut spec, f);
            }
            check_finite(&fields.values, 0)?;
        }
        fields.time = self.dt;
        Ok(StepperState {
            fields,
            prev_rhs: Some(first_rhs),
            dt: self.dt,
            step: 1,
        })
    }

    /// One CNAB step:
    /// `(I - dt/2 D Lap) rho^{n+1} = (I + dt/2 D Lap) rho^n
    ///   + dt (3/2 N[rho^n] - 1/2 N[rho^{n-1}])`.
    pub fn step(&self, state: &mut StepperState, rhs: &dyn ReactionTerm) -> Result<()> {
        self.check_shape(&state.fields, rhs)?;
        let prev = state
            .prev_rhs
            .take()
            .ok_or_else(|| param("state", "stepper state has not been bootstrapped"))?;
        let mut current = zeros_like(&state.fields.values);
        rhs.eval(&state.fields.values, &mut current);
        for (j, f) in state.fields.values.iter_mut().enumerate() {
            let (factor, scale) = &self.cn[j];
            let extrapolated: Vec<f64> = current[j]
                .iter()
                .zip(&prev[j])
                .map(|(a, b)| 1.5 * a - 0.5 * b)
                .collect();
            let mut spec = self.transform.forward(f);
            let react = self.transform.forward(&extrapolated);
            for (((c, r), &fa), &sc) in spec.iter_mut().zip(&react).zip(factor).zip(scale) {
                *c = *c * fa + *r * sc;
            }
            self.transform.inverse_into(&mut spec, f);
        }
        state.step += 1;
        state.fields.time = state.step as f64 * self.dt;
        state.prev_rhs = Some(current);
        check_finite(&state.fields.values, state.step)
    }
}

fn zeros_like(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|f| vec![0.0; f.len()]).collect()
}

fn check_finite(values: &[Vec<f64>], step: u64) -> Result<()> {
    if values.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}
