//! Drivers for the model studies: convergence of the mean-field model to the
//! local model as the kernel width shrinks, approach to the uniform
//! equilibrium, and comparison of all three models.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kernels::KernelKind;
use crate::network::{preset_reversible_abc, Center, Network};
use crate::particle::{build_crdme, ensemble_mean, run_ensemble, EnsembleSummary};
use crate::rhs::{CompiledMfmTerms, SmReaction};
use crate::spectral::{field_integral, GridField, ImexStepper, PeriodicGrid, ReactionTerm};

/// Smallest kernel width, in grid spacings, accepted by the convergence
/// study. Below this the discretized kernel no longer resolves its shape.
pub const MIN_CELLS_PER_EPS: f64 = 4.0;

/// Initial concentration profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `A = exp(-10 (x - 1)^2)`, `B = exp(-10 (x - 2)^2)`, `C = 0`.
    Gaussians1d,
    /// `A = exp(-12 (x1 - 1)^2 - 8 (x2 - 2)^2)`,
    /// `B = exp(-10 (x1 - 1)^2 - 5 (x2 - 2)^2)`, `C = 0`.
    Gaussians2d,
    /// Spatially constant levels.
    Uniform { a: f64, b: f64, c: f64 },
}

impl InitialCondition {
    pub fn sample(&self, grid: &PeriodicGrid) -> GridField {
        let zero = vec![0.0; grid.len()];
        let values = match *self {
            InitialCondition::Gaussians1d => vec![
                grid.sample(|x| (-10.0 * (x[0] - 1.0).powi(2)).exp()),
                grid.sample(|x| (-10.0 * (x[0] - 2.0).powi(2)).exp()),
                zero,
            ],
            InitialCondition::Gaussians2d => vec![
                grid.sample(|x| (-12.0 * (x[0] - 1.0).powi(2) - 8.0 * (x[1] - 2.0).powi(2)).exp()),
                grid.sample(|x| (-10.0 * (x[0] - 1.0).powi(2) - 5.0 * (x[1] - 2.0).powi(2)).exp()),
                zero,
            ],
            InitialCondition::Uniform { a, b, c } => return GridField::uniform(*grid, &[a, b, c]),
        };
        GridField::new(*grid, values)
    }
}

/// Everything needed to set up one `A + B <-> C` study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    pub t_end: f64,
    pub save_interval: f64,
    pub diffusivities: [f64; 3],
    pub kappa1: f64,
    pub kappa2: f64,
    pub kernel: KernelKind,
    pub centers: Vec<Center>,
    pub initial: InitialCondition,
}

/// Product placed at the midpoint of the reactants.
pub fn midpoint_centers() -> Vec<Center> {
    vec![Center::new(1.0, 0.5)]
}

/// Product placed at either reactant with equal probability.
pub fn split_centers() -> Vec<Center> {
    vec![Center::new(0.5, 1.0), Center::new(0.5, 0.0)]
}

impl ExperimentConfig {
    /// The one-dimensional study: `L = 2 pi`, `N = 512`, `dt = 1e-3`, `T = 1`.
    pub fn paper_1d(kernel: KernelKind, centers: Vec<Center>) -> Self {
        ExperimentConfig {
            dim: 1,
            n: 512,
            length: 2.0 * PI,
            dt: 1e-3,
            t_end: 1.0,
            save_interval: 0.01,
            diffusivities: [1.0, 0.5, 0.1],
            kappa1: 1.0,
            kappa2: 0.05,
            kernel,
            centers,
            initial: InitialCondition::Gaussians1d,
        }
    }

    /// The two-dimensional study on a `256 x 256` grid.
    pub fn paper_2d(kernel: KernelKind, centers: Vec<Center>) -> Self {
        ExperimentConfig {
            dim: 2,
            n: 256,
            initial: InitialCondition::Gaussians2d,
            ..Self::paper_1d(kernel, centers)
        }
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.dim, self.n, self.length)
    }

    pub fn network(&self, eps: f64) -> Result<Network> {
        preset_reversible_abc(
            self.dim,
            self.diffusivities,
            self.kappa1,
            self.kappa2,
            eps,
            self.kernel,
            self.centers.clone(),
        )
    }

    pub fn initial_fields(&self) -> Result<GridField> {
        Ok(self.initial.sample(&self.grid()?))
    }

    pub fn save_times(&self) -> Result<Vec<f64>> {
        save_schedule(self.t_end, self.save_interval)
    }

    /// Dissociation constant `K_d = kappa2 / kappa1`.
    pub fn kd(&self) -> f64 {
        self.kappa2 / self.kappa1
    }
}

/// `0, s, 2s, ..., T` (the last entry is `T` when `T` is a multiple of `s`).
pub fn save_schedule(t_end: f64, interval: f64) -> Result<Vec<f64>> {
    if !(interval.is_finite() && interval > 0.0) {
        return Err(param("save_interval", format!("must be positive, got {interval}")));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(param("T", format!("must be positive, got {t_end}")));
    }
    let count = (t_end / interval * (1.0 + 1e-12)).floor() as usize;
    Ok((0..=count).map(|k| k as f64 * interval).collect())
}

/// Step indices at which the saves fall; every save must sit on a step.
fn save_steps(save_times: &[f64], dt: f64) -> Result<Vec<u64>> {
    save_times
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * dt.max(t) {
                Err(param("save_times", format!("{t} is not a multiple of dt = {dt}")))
            } else {
                Ok(k as u64)
            }
        })
        .collect()
}

/// Which deterministic model to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Sm,
    Mfm,
}

/// Builds the reaction term of a deterministic model.
pub fn reaction_term(net: &Network, grid: &PeriodicGrid, model: Model) -> Result<Box<dyn ReactionTerm>> {
    Ok(match model {
        Model::Sm => Box::new(SmReaction::new(net)),
        Model::Mfm => Box::new(CompiledMfmTerms::new(net, grid)?),
    })
}

/// Integrates a deterministic model and returns the fields at each save time.
pub fn simulate(
    net: &Network,
    model: Model,
    initial: &GridField,
    dt: f64,
    t_end: f64,
    save_times: &[f64],
) -> Result<Vec<GridField>> {
    let steps = save_steps(save_times, dt)?;
    let n_steps = (t_end / dt).round() as u64;
    if steps.iter().any(|&k| k > n_steps) {
        return Err(param("save_times", "must not exceed T"));
    }
    let term = reaction_term(net, &initial.grid, model)?;
    let stepper = ImexStepper::new(initial.grid, &net.diffusivities(), dt)?;
    let mut out = Vec::with_capacity(save_times.len());
    let mut pending = steps.iter().peekable();
    while pending.next_if(|&&k| k == 0).is_some() {
        out.push(initial.clone());
    }
    if n_steps == 0 || pending.peek().is_none() {
        return Ok(out);
    }
    let mut state = stepper.bootstrap(initial.clone(), term.as_ref())?;
    loop {
        while pending.next_if(|&&k| k == state.step).is_some() {
            let mut f = state.fields.clone();
            f.time = state.step as f64 * dt;
            out.push(f);
        }
        if pending.peek().is_none() {
            break;
        }
        stepper.step(&mut state, term.as_ref())?;
    }
    Ok(out)
}

/// Per-species `sup_t max_x |a - b|` over two trajectories saved at the same
/// times.
pub fn linf_error(a: &[GridField], b: &[GridField]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("{} vs {} snapshots", a.len(), b.len())));
    }
    let n_species = a.first().map_or(0, |f| f.n_species());
    let mut err = vec![0.0f64; n_species];
    for (fa, fb) in a.iter().zip(b) {
        if fa.grid != fb.grid || fa.n_species() != fb.n_species() || (fa.time - fb.time).abs() > 1e-12 {
            return Err(Error::Mismatch("snapshots differ in grid, species or time".into()));
        }
        for (j, (va, vb)) in fa.values.iter().zip(&fb.values).enumerate() {
            for (x, y) in va.iter().zip(vb) {
                err[j] = err[j].max((x - y).abs());
            }
        }
    }
    Ok(err)
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Mismatch(format!("{} x values, {} y values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientPoints(x.len()));
    }
    if x.iter().chain(y).any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(param("data", "log-log fit needs positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Equilibrium level of `C` for `A + B <-> C` reached from the averaged
/// initial levels, from `K_d C = A B` and the two conservation laws.
pub fn equilibrium_ceq(a0: f64, b0: f64, c0: f64, kd: f64) -> Result<f64> {
    if [a0, b0, c0].iter().any(|&v| !(v.is_finite() && v >= 0.0)) || !(kd.is_finite() && kd > 0.0) {
        return Err(param("levels", "need nonnegative levels and a positive K_d"));
    }
    let sum = a0 + b0 + 2.0 * c0;
    let diff = b0 - a0;
    let disc = (sum + kd).powi(2) - (sum * sum - diff * diff);
    if disc < 0.0 {
        return Err(Error::NegativeDiscriminant(disc));
    }
    Ok(0.5 * (sum + kd - disc.sqrt()))
}

/// Spatial averages of each species.
pub fn spatial_means(f: &GridField) -> Vec<f64> {
    let volume = f.grid.length().powi(f.grid.dim() as i32);
    f.values.iter().map(|v| field_integral(v, &f.grid) / volume).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    /// `errors[e][j]`: sup over all time steps and grid points.
    pub errors: Vec<Vec<f64>>,
    /// Fitted order per species.
    pub slopes: Vec<f64>,
    pub config: ExperimentConfig,
}

/// Runs the local model and the mean-field model for every `eps` side by
/// side, tracking the running sup of their difference at every time step.
pub fn convergence_study(config: &ExperimentConfig, epsilons: &[f64]) -> Result<ConvergenceReport> {
    let grid = config.grid()?;
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(param("epsilons", "must be strictly decreasing"));
    }
    if let Some(&smallest) = epsilons.last() {
        if smallest < MIN_CELLS_PER_EPS * grid.spacing() {
            return Err(param(
                "epsilons",
                format!("{smallest} is below {MIN_CELLS_PER_EPS} grid spacings"),
            ));
        }
    }
    let initial = config.initial_fields()?;
    let base = config.network(epsilons.first().copied().unwrap_or(1.0))?;
    let stepper = ImexStepper::new(grid, &base.diffusivities(), config.dt)?;
    let sm = SmReaction::new(&base);
    let mfm: Vec<CompiledMfmTerms> = epsilons
        .iter()
        .map(|&e| CompiledMfmTerms::new(&config.network(e)?, &grid))
        .collect::<Result<_>>()?;
    let n_steps = (config.t_end / config.dt).round() as u64;

    let mut reference = stepper.bootstrap(initial.clone(), &sm)?;
    let mut runs = mfm
        .par_iter()
        .map(|term| stepper.bootstrap(initial.clone(), term))
        .collect::<Result<Vec<_>>>()?;
    let n_species = initial.n_species();
    let mut errors = vec![vec![0.0f64; n_species]; epsilons.len()];
    let track = |errors: &mut Vec<Vec<f64>>, reference: &GridField, runs: &[crate::spectral::StepperState]| {
        for (e, run) in runs.iter().enumerate() {
            for (j, (a, b)) in run.fields.values.iter().zip(&reference.values).enumerate() {
                let m = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                errors[e][j] = errors[e][j].max(m);
            }
        }
    };
    track(&mut errors, &reference.fields, &runs);
    for _ in 1..n_steps {
        stepper.step(&mut reference, &sm)?;
        runs.par_iter_mut()
            .zip(&mfm)
            .try_for_each(|(state, term)| stepper.step(state, term))?;
        track(&mut errors, &reference.fields, &runs);
    }
    let slopes = if epsilons.len() >= 3 {
        (0..n_species)
            .map(|j| {
                let ys: Vec<f64> = errors.iter().map(|e| e[j]).collect();
                fit_loglog_slope(epsilons, &ys)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(ConvergenceReport {
        epsilons: epsilons.to_vec(),
        errors,
        slopes,
        config: config.clone(),
    })
}

/// Outcome of running all three models on one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub eps: f64,
    pub gamma: f64,
    pub save_times: Vec<f64>,
    /// `[t][j]`
    pub sm_masses: Vec<Vec<f64>>,
    pub mfm_masses: Vec<Vec<f64>>,
    pub pbsrd: EnsembleSummary,
    /// Fields at the final save time.
    pub sm_profile: GridField,
    pub mfm_profile: GridField,
    pub c_eq: f64,
}

/// Runs the local model, the mean-field model at width `eps`, and an
/// `n_runs` lattice ensemble at system size `gamma`.
pub fn compare_models(
    config: &ExperimentConfig,
    eps: f64,
    gamma: f64,
    n_runs: usize,
    save_times: &[f64],
    seed: u64,
) -> Result<ComparisonReport> {
    if n_runs == 0 {
        return Err(param("n_runs", "must be at least 1"));
    }
    let grid = config.grid()?;
    let net = config.network(eps)?;
    let initial = config.initial_fields()?;
    let sm = simulate(&net, Model::Sm, &initial, config.dt, config.t_end, save_times)?;
    let mfm = simulate(&net, Model::Mfm, &initial, config.dt, config.t_end, save_times)?;
    let process = build_crdme(&net, &grid, gamma, eps)?;
    let runs = run_ensemble(&process, &initial, config.t_end, save_times, n_runs, seed)?;
    let pbsrd = ensemble_mean(&runs, gamma, &grid)?;
    let means = spatial_means(&initial);
    Ok(ComparisonReport {
        eps,
        gamma,
        save_times: save_times.to_vec(),
        sm_masses: sm.iter().map(GridField::masses).collect(),
        mfm_masses: mfm.iter().map(GridField::masses).collect(),
        pbsrd,
        sm_profile: sm.last().cloned().unwrap_or_else(|| initial.clone()),
        mfm_profile: mfm.last().cloned().unwrap_or(initial),
        c_eq: equilibrium_ceq(means[0], means[1], means[2], config.kd())?,
    })
}

/// Long-time behaviour of one deterministic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub model: Model,
    pub t_end: f64,
    pub c_eq: f64,
    /// `max_x |C(x, T) - C_eq| / C_eq`
    pub max_relative_deviation: f64,
    pub final_field: GridField,
}

pub fn equilibrium_run(config: &ExperimentConfig, eps: f64, model: Model) -> Result<EquilibriumReport> {
    let net = config.network(eps)?;
    let initial = config.initial_fields()?;
    let means = spatial_means(&initial);
    let c_eq = equilibrium_ceq(means[0], means[1], means[2], config.kd())?;
    let fields = simulate(&net, model, &initial, config.dt, config.t_end, &[config.t_end])?;
    let last = fields.into_iter().next_back().ok_or_else(|| param("T", "no output"))?;
    let max_relative_deviation = last.values[2]
        .iter()
        .fold(0.0f64, |m, c| m.max((c - c_eq).abs() / c_eq));
    Ok(EquilibriumReport {
        model,
        t_end: config.t_end,
        c_eq,
        max_relative_deviation,
        final_field: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceq_examples() {
        assert!((equilibrium_ceq(1.0, 1.0, 0.0, 0.05).unwrap() - 0.8).abs() < 1e-12);
        // already at equilibrium: K_d C = A B
        let c = equilibrium_ceq(0.2, 0.5, 2.0, 0.05).unwrap();
        let (a, b) = (0.2 + 2.0 - c, 0.5 + 2.0 - c);
        assert!((0.05 * c - a * b).abs() < 1e-12);
        assert_eq!(equilibrium_ceq(0.0, 0.0, 0.0, 0.05).unwrap(), 0.0);
        assert!(equilibrium_ceq(-1.0, 0.0, 0.0, 0.05).is_err());
    }

    #[test]
    fn slope_of_power_laws() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((fit_loglog_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(fit_loglog_slope(&x[..2], &y[..2]), Err(Error::InsufficientPoints(2))));
        assert!(fit_loglog_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn schedule_and_steps() {
        let s = save_schedule(1.0, 0.01).unwrap();
        assert_eq!(s.len(), 101);
        assert_eq!(save_steps(&s, 1e-3).unwrap()[100], 1000);
        assert!(save_steps(&[0.0015], 1e-3).is_err());
    }

    #[test]
    fn linf_error_examples() {
        let g = PeriodicGrid::new(1, 4, 1.0).unwrap();
        let a = vec![GridField::uniform(g, &[1.0, 2.0])];
        let mut b = a.clone();
        b[0].values[1][2] = 2.5;
        assert_eq!(linf_error(&a, &b).unwrap(), vec![0.0, 0.5]);
        assert!(linf_error(&a, &[]).is_err());
    }

    #[test]
    fn uniform_start_stays_uniform_and_relaxes() {
        let mut cfg = ExperimentConfig::paper_1d(KernelKind::Gaussian, split_centers());
        cfg.n = 32;
        cfg.t_end = 0.05;
        cfg.initial = InitialCondition::Uniform { a: 1.0, b: 1.0, c: 0.0 };
        let net = cfg.network(0.3).unwrap();
        let init = cfg.initial_fields().unwrap();
        let saves = save_schedule(0.05, 0.01).unwrap();
        let sm = simulate(&net, Model::Sm, &init, cfg.dt, cfg.t_end, &saves).unwrap();
        let mfm = simulate(&net, Model::Mfm, &init, cfg.dt, cfg.t_end, &saves).unwrap();
        assert_eq!(sm.len(), 6);
        assert!(linf_error(&sm, &mfm).unwrap().iter().all(|&e| e < 1e-12));
        // a' = -a^2 + 0.05 c over 0.05 from (1, 1, 0): close to 1 / (1 + t)
        let a = sm[5].values[0][7];
        assert!((a - 1.0 / 1.05).abs() < 2e-3, "{a}");
    }

    #[test]
    fn convergence_guard() {
        let cfg = ExperimentConfig::paper_1d(KernelKind::Doi, split_centers());
        let h = cfg.grid().unwrap().spacing();
        assert!(convergence_study(&cfg, &[0.5, 3.0 * h]).is_err());
        assert!(convergence_study(&cfg, &[0.2, 0.4]).is_err());
    }
}
