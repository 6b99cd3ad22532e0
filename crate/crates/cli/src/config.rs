//! JSON run configuration: every field optional, defaults filled on resolve.

use std::path::Path;

use nonlocal_rd::experiments::{midpoint_centers, split_centers, ExperimentConfig, InitialCondition, MIN_CELLS_PER_EPS};
use nonlocal_rd::{Center, KernelKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the product of `A + B -> C` lands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementChoice {
    /// At the midpoint of the reactants.
    Midpoint,
    /// At either reactant with probability one half.
    Split,
    /// Explicit weighted centers.
    Centers(Vec<Center>),
}

impl PlacementChoice {
    pub fn centers(&self) -> Vec<Center> {
        match self {
            PlacementChoice::Midpoint => midpoint_centers(),
            PlacementChoice::Split => split_centers(),
            PlacementChoice::Centers(c) => c.clone(),
        }
    }
}

/// Raw file contents. Unknown keys are rejected so typos do not silently
/// fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub dim: Option<usize>,
    pub n: Option<usize>,
    pub length: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub save_interval: Option<f64>,
    pub diffusivities: Option<[f64; 3]>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub kernel: Option<KernelKind>,
    pub placement: Option<PlacementChoice>,
    pub initial: Option<InitialCondition>,
    /// Kernel width for single-width commands.
    pub eps: Option<f64>,
    /// Kernel widths for the convergence study, strictly decreasing.
    pub epsilons: Option<Vec<f64>>,
    pub gamma: Option<f64>,
    pub n_runs: Option<usize>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn from_str(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// Values set in `other` win.
    pub fn merge(self, other: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigFile { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(dim, n, length, dt, t_end, save_interval, diffusivities, kappa1, kappa2, kernel, placement, initial, eps, epsilons, gamma, n_runs, seed)
    }

    /// Fills defaults and validates. The kernel-width guard applies to an
    /// explicitly given `epsilons` list; [`RunConfig::check_epsilons`]
    /// enforces it for defaults too.
    pub fn resolve(self) -> CliResult<RunConfig> {
        let dim = self.dim.unwrap_or(1);
        if !(dim == 1 || dim == 2) {
            return Err(invalid("dim", format!("must be 1 or 2, got {dim}")));
        }
        let base = if dim == 1 {
            ExperimentConfig::paper_1d(KernelKind::Gaussian, midpoint_centers())
        } else {
            ExperimentConfig::paper_2d(KernelKind::Gaussian, midpoint_centers())
        };
        let placement = self.placement.unwrap_or(PlacementChoice::Midpoint);
        let experiment = ExperimentConfig {
            dim,
            n: self.n.unwrap_or(base.n),
            length: self.length.unwrap_or(base.length),
            dt: self.dt.unwrap_or(base.dt),
            t_end: self.t_end.unwrap_or(base.t_end),
            save_interval: self.save_interval.unwrap_or(base.save_interval),
            diffusivities: self.diffusivities.unwrap_or(base.diffusivities),
            kappa1: self.kappa1.unwrap_or(base.kappa1),
            kappa2: self.kappa2.unwrap_or(base.kappa2),
            kernel: self.kernel.unwrap_or(base.kernel),
            centers: placement.centers(),
            initial: self.initial.unwrap_or(base.initial),
        };
        let explicit_epsilons = self.epsilons.is_some();
        let l = experiment.length;
        let epsilons = self.epsilons.unwrap_or_else(|| {
            let last = if dim == 1 { 6 } else { 5 };
            (3..=last).map(|k| l * 2f64.powi(-k)).collect()
        });
        let config = RunConfig {
            experiment,
            placement,
            eps: self.eps.unwrap_or(2f64.powi(-7)),
            epsilons,
            gamma: self.gamma.unwrap_or(1e3),
            n_runs: self.n_runs.unwrap_or(100),
            seed: self.seed.unwrap_or(0),
        };
        config.validate()?;
        if explicit_epsilons {
            config.check_epsilons()?;
        }
        Ok(config)
    }
}

/// A fully resolved configuration; this is what the manifest records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub placement: PlacementChoice,
    pub eps: f64,
    pub epsilons: Vec<f64>,
    pub gamma: f64,
    pub n_runs: usize,
    pub seed: u64,
}

fn invalid(key: &'static str, reason: impl Into<String>) -> CliError {
    CliError::Invalid {
        key,
        reason: reason.into(),
    }
}

fn positive(key: &'static str, v: f64) -> CliResult<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    fn validate(&self) -> CliResult<()> {
        let e = &self.experiment;
        if !e.n.is_power_of_two() || e.n < 2 {
            return Err(invalid("n", format!("must be a power of two, got {}", e.n)));
        }
        positive("length", e.length)?;
        positive("dt", e.dt)?;
        positive("t_end", e.t_end)?;
        positive("save_interval", e.save_interval)?;
        for &d in &e.diffusivities {
            positive("diffusivities", d)?;
        }
        positive("kappa1", e.kappa1)?;
        positive("kappa2", e.kappa2)?;
        positive("eps", self.eps)?;
        positive("gamma", self.gamma)?;
        if self.n_runs == 0 {
            return Err(invalid("n_runs", "must be at least 1"));
        }
        if e.kernel == KernelKind::Constant {
            return Err(invalid("kernel", "must be doi or gaussian"));
        }
        let steps = e.save_interval / e.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps {
            return Err(invalid("save_interval", "must be a multiple of dt"));
        }
        if matches!((e.initial, e.dim), (InitialCondition::Gaussians1d, 2) | (InitialCondition::Gaussians2d, 1)) {
            return Err(invalid("initial", "does not match dim"));
        }
        let w: f64 = e.centers.iter().map(|c| c.weight).sum();
        if e.centers.is_empty() || (w - 1.0).abs() > 1e-12 {
            return Err(invalid("placement", "center weights must sum to 1"));
        }
        for &eps in &self.epsilons {
            positive("epsilons", eps)?;
        }
        if self.epsilons.windows(2).any(|p| p[1] >= p[0]) {
            return Err(invalid("epsilons", "must be strictly decreasing"));
        }
        Ok(())
    }

    /// Convergence studies need at least three widths, none under four
    /// grid spacings.
    pub fn check_epsilons(&self) -> CliResult<()> {
        let h = self.experiment.length / self.experiment.n as f64;
        if let Some(&bad) = self.epsilons.iter().find(|&&e| e < MIN_CELLS_PER_EPS * h) {
            return Err(invalid(
                "epsilons",
                format!("{bad} is below the 4h guard (h = {h})"),
            ));
        }
        if self.epsilons.len() < 3 {
            return Err(invalid("epsilons", "need at least 3 widths for a slope"));
        }
        Ok(())
    }
}

/// Loads and resolves a config file.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    ConfigFile::from_path(path)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn empty_config_gives_defaults() {
        let c = ConfigFile::from_str("{}").unwrap().resolve().unwrap();
        let e = &c.experiment;
        assert_eq!((e.dim, e.n, e.dt, e.t_end), (1, 512, 1e-3, 1.0));
        assert_eq!(e.length, 2.0 * PI);
        assert_eq!(e.diffusivities, [1.0, 0.5, 0.1]);
        assert_eq!((e.kappa1, e.kappa2), (1.0, 0.05));
        assert_eq!(c.epsilons.len(), 4);
        assert_eq!(c.epsilons[0], e.length / 8.0);
        c.check_epsilons().unwrap();
    }

    #[test]
    fn two_dimensional_defaults() {
        let c = ConfigFile::from_str(r#"{"dim": 2}"#).unwrap().resolve().unwrap();
        assert_eq!(c.experiment.n, 256);
        assert_eq!(c.experiment.initial, InitialCondition::Gaussians2d);
        assert_eq!(c.epsilons.len(), 3);
    }

    #[test]
    fn negative_dt_names_the_key() {
        let err = ConfigFile::from_str(r#"{"dt": -1}"#).unwrap().resolve().unwrap_err();
        assert_eq!(err.to_string(), "invalid `dt`: must be positive, got -1");
    }

    #[test]
    fn eps_below_guard() {
        let h = 2.0 * PI / 512.0;
        let text = format!(r#"{{"epsilons": [{}, {}, {}]}}"#, 16.0 * h, 8.0 * h, 2.0 * h);
        let err = ConfigFile::from_str(&text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("4h guard"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ConfigFile::from_str("{\n  \"dt\": ,\n}").unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let err = ConfigFile::from_str(r#"{"delta_t": 1}"#).unwrap_err();
        assert!(err.to_string().contains("delta_t"), "{err}");
    }

    #[test]
    fn placement_forms() {
        let c = ConfigFile::from_str(r#"{"placement": "split", "kernel": "doi"}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.experiment.centers, split_centers());
        let c = ConfigFile::from_str(r#"{"placement": {"centers": [{"weight": 1.0, "alpha": 0.25}]}}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.experiment.centers, vec![Center::new(1.0, 0.25)]);
        let bad = ConfigFile::from_str(r#"{"placement": {"centers": [{"weight": 0.3, "alpha": 0.25}]}}"#)
            .unwrap()
            .resolve();
        assert!(bad.is_err());
    }

    #[test]
    fn merge_prefers_overrides() {
        let file = ConfigFile {
            n: Some(64),
            dt: Some(0.01),
            ..Default::default()
        };
        let flags = ConfigFile {
            dt: Some(0.005),
            ..Default::default()
        };
        let m = file.merge(flags);
        assert_eq!((m.n, m.dt), (Some(64), Some(0.005)));
    }
}
