//! `nlrd`: run the local, mean-field and lattice particle models from the
//! command line and write CSV artifacts plus a JSON run manifest.

pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nonlocal_rd::experiments::{
    compare_models, convergence_study, equilibrium_ceq, equilibrium_run, simulate, spatial_means, Model,
};
use nonlocal_rd::particle::{build_crdme, ensemble_mean, run_ensemble};
use nonlocal_rd::KernelKind;
use serde::Serialize;
use serde_json::json;

pub use config::{parse_config, ConfigFile, PlacementChoice, RunConfig};
pub use error::{CliError, CliResult};
use output::{field_rows, fmt_num, mass_rows, OutputDir, FIELD_HEADER, MASS_HEADER, SPECIES};

#[derive(Debug, Parser)]
#[command(name = "nlrd", version, about = "Local, nonlocal and particle reaction-diffusion simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the local (standard) model.
    RunSm(Common),
    /// Integrate the nonlocal mean-field model at width `eps`.
    RunMfm(Common),
    /// Sample a lattice particle ensemble.
    RunPbsrd(Common),
    /// Convergence of the mean-field model to the local model in `eps`.
    Converge(Common),
    /// All three models side by side.
    Compare(Common),
    /// Equilibrium level of C.
    Equilibrium(EquilibriumArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlacementArg {
    Midpoint,
    Split,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "nlrd-out")]
    out: PathBuf,
    /// Master seed for all random draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Grid points per axis.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    save_interval: Option<f64>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelKind>,
    #[arg(long, value_enum)]
    placement: Option<PlacementArg>,
    #[arg(long)]
    eps: Option<f64>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Debug, Args)]
struct EquilibriumArgs {
    #[command(flatten)]
    common: Common,
    /// Averaged initial levels; when omitted they come from the configured
    /// initial condition.
    #[arg(long, requires_all = ["b0", "c0"])]
    a0: Option<f64>,
    #[arg(long, requires_all = ["a0", "c0"])]
    b0: Option<f64>,
    #[arg(long, requires_all = ["a0", "b0"])]
    c0: Option<f64>,
    /// Dissociation constant; defaults to kappa2 / kappa1.
    #[arg(long)]
    kd: Option<f64>,
    /// Also run both deterministic models to `t_end` and report the distance
    /// from the uniform equilibrium.
    #[arg(long)]
    simulate: bool,
}

fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    match s {
        "doi" => Ok(KernelKind::Doi),
        "gaussian" => Ok(KernelKind::Gaussian),
        _ => Err(format!("unknown kernel `{s}` (expected doi or gaussian)")),
    }
}

impl Common {
    fn overrides(&self) -> ConfigFile {
        ConfigFile {
            dim: self.dim,
            n: self.n,
            dt: self.dt,
            t_end: self.t_end,
            save_interval: self.save_interval,
            kernel: self.kernel,
            placement: self.placement.map(|p| match p {
                PlacementArg::Midpoint => PlacementChoice::Midpoint,
                PlacementArg::Split => PlacementChoice::Split,
            }),
            eps: self.eps,
            epsilons: self.epsilons.clone(),
            gamma: self.gamma,
            n_runs: self.runs,
            seed: self.seed,
            ..Default::default()
        }
    }

    fn resolve(&self) -> CliResult<RunConfig> {
        let file = match &self.config {
            Some(p) => ConfigFile::from_path(p)?,
            None => ConfigFile::default(),
        };
        file.merge(self.overrides()).resolve()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    results: serde_json::Value,
    outputs: Vec<String>,
}

fn write_manifest(out: &mut OutputDir, command: &str, config: &RunConfig, results: serde_json::Value) -> CliResult<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        results,
        outputs: out.files(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.text("manifest.json", &(text + "\n"))
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status: 0 on success, 1 on a runtime failure, 2 on a usage
/// or configuration error.
pub fn run_command<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let threads = match &cli.command {
        Command::Equilibrium(a) => a.common.threads,
        Command::RunSm(c) | Command::RunMfm(c) | Command::RunPbsrd(c) | Command::Converge(c) | Command::Compare(c) => {
            c.threads
        }
    };
    // the command's own report is buffered so the run may hop onto a pool
    let run = || {
        let mut report = Vec::new();
        let result = dispatch(&cli.command, &mut report);
        (result, report)
    };
    let (result, report) = match threads {
        Some(0) => (Err(CliError::Usage("--threads must be at least 1".into())), Vec::new()),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => (Err(CliError::Usage(format!("cannot start {n} threads: {e}"))), Vec::new()),
        },
        None => run(),
    };
    let _ = stdout.write_all(&report);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: &Command, stdout: &mut Vec<u8>) -> CliResult<()> {
    match command {
        Command::RunSm(c) => run_deterministic(c, Model::Sm, "run-sm", stdout),
        Command::RunMfm(c) => run_deterministic(c, Model::Mfm, "run-mfm", stdout),
        Command::RunPbsrd(c) => run_pbsrd(c, stdout),
        Command::Converge(c) => converge(c, stdout),
        Command::Compare(c) => compare(c, stdout),
        Command::Equilibrium(a) => equilibrium(a, stdout),
    }
}

fn say(stdout: &mut dyn Write, line: String) -> CliResult<()> {
    writeln!(stdout, "{line}").map_err(|source| CliError::Io {
        path: "stdout".into(),
        source,
    })
}

fn model_name(model: Model) -> &'static str {
    match model {
        Model::Sm => "sm",
        Model::Mfm => "mfm",
    }
}

fn run_deterministic(c: &Common, model: Model, command: &str, stdout: &mut dyn Write) -> CliResult<()> {
    let config = c.resolve()?;
    let e = &config.experiment;
    let net = e.network(config.eps)?;
    let initial = e.initial_fields()?;
    let times = e.save_times()?;
    let mut out = OutputDir::create(&c.out)?;
    let fields = simulate(&net, model, &initial, e.dt, e.t_end, &times)?;
    out.csv("fields.csv", &FIELD_HEADER, field_rows(&fields))?;
    let masses: Vec<Vec<f64>> = fields.iter().map(|f| f.masses()).collect();
    let saved: Vec<f64> = fields.iter().map(|f| f.time).collect();
    out.csv("masses.csv", &MASS_HEADER, mass_rows(model_name(model), &saved, &masses, None))?;
    let last = masses.last().cloned().unwrap_or_default();
    write_manifest(&mut out, command, &config, json!({ "final_masses": last }))?;
    out.commit();
    say(stdout, format!("{command}: final masses {}", join(&last)))
}

fn run_pbsrd(c: &Common, stdout: &mut dyn Write) -> CliResult<()> {
    let config = c.resolve()?;
    let e = &config.experiment;
    let grid = e.grid()?;
    let net = e.network(config.eps)?;
    let process = build_crdme(&net, &grid, config.gamma, config.eps)?;
    let times = e.save_times()?;
    let mut out = OutputDir::create(&c.out)?;
    let runs = run_ensemble(&process, &e.initial_fields()?, e.t_end, &times, config.n_runs, config.seed)?;
    let summary = ensemble_mean(&runs, config.gamma, &grid)?;
    out.csv("fields.csv", &FIELD_HEADER, field_rows(&summary.mean_fields))?;
    out.csv(
        "masses.csv",
        &MASS_HEADER,
        mass_rows("pbsrd", &summary.save_times, &summary.mean_masses, Some(&summary.stderr_masses)),
    )?;
    let events: u64 = runs.iter().map(|r| r.events).sum();
    let last = summary.mean_masses.last().cloned().unwrap_or_default();
    write_manifest(
        &mut out,
        "run-pbsrd",
        &config,
        json!({ "final_masses": last, "total_events": events }),
    )?;
    out.commit();
    say(stdout, format!("run-pbsrd: {} runs, final mean masses {}", config.n_runs, join(&last)))
}

fn converge(c: &Common, stdout: &mut dyn Write) -> CliResult<()> {
    let config = c.resolve()?;
    config.check_epsilons()?;
    let mut out = OutputDir::create(&c.out)?;
    let report = convergence_study(&config.experiment, &config.epsilons)?;
    let rows = report.epsilons.iter().zip(&report.errors).map(|(eps, err)| {
        std::iter::once(fmt_num(*eps)).chain(err.iter().map(|&v| fmt_num(v))).collect()
    });
    out.csv("convergence.csv", &["epsilon", "err_A", "err_B", "err_C"], rows)?;
    let slopes = report
        .slopes
        .iter()
        .enumerate()
        .map(|(j, &s)| vec![SPECIES[j].to_string(), fmt_num(s)]);
    out.csv("slopes.csv", &["species", "slope"], slopes)?;
    write_manifest(&mut out, "converge", &config, json!({ "slopes": report.slopes }))?;
    out.commit();
    say(stdout, format!("converge: slopes {}", join(&report.slopes)))
}

fn compare(c: &Common, stdout: &mut dyn Write) -> CliResult<()> {
    let config = c.resolve()?;
    let e = &config.experiment;
    let times = e.save_times()?;
    let mut out = OutputDir::create(&c.out)?;
    let report = compare_models(e, config.eps, config.gamma, config.n_runs, &times, config.seed)?;
    let mut rows = mass_rows("sm", &report.save_times, &report.sm_masses, None);
    rows.extend(mass_rows("mfm", &report.save_times, &report.mfm_masses, None));
    rows.extend(mass_rows(
        "pbsrd",
        &report.pbsrd.save_times,
        &report.pbsrd.mean_masses,
        Some(&report.pbsrd.stderr_masses),
    ));
    out.csv("masses.csv", &MASS_HEADER, rows)?;
    out.csv("profile_sm.csv", &FIELD_HEADER, field_rows(std::slice::from_ref(&report.sm_profile)))?;
    out.csv("profile_mfm.csv", &FIELD_HEADER, field_rows(std::slice::from_ref(&report.mfm_profile)))?;
    let last = report.pbsrd.mean_fields.len().saturating_sub(1);
    out.csv("profile_pbsrd.csv", &FIELD_HEADER, field_rows(&report.pbsrd.mean_fields[last..]))?;
    write_manifest(&mut out, "compare", &config, json!({ "c_eq": report.c_eq }))?;
    out.commit();
    let idx = report.save_times.len().saturating_sub(1);
    say(
        stdout,
        format!(
            "compare: C at t = {}: sm {} mfm {} pbsrd {} +- {}; C_eq {}",
            fmt_num(report.save_times[idx]),
            fmt_num(report.sm_masses[idx][2]),
            fmt_num(report.mfm_masses[idx][2]),
            fmt_num(report.pbsrd.mean_masses[idx][2]),
            fmt_num(report.pbsrd.stderr_masses[idx][2]),
            fmt_num(report.c_eq)
        ),
    )
}

fn equilibrium(a: &EquilibriumArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let config = a.common.resolve()?;
    let kd = a.kd.unwrap_or_else(|| config.experiment.kd());
    let levels = match (a.a0, a.b0, a.c0) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => {
            let m = spatial_means(&config.experiment.initial_fields()?);
            [m[0], m[1], m[2]]
        }
    };
    let c_eq = equilibrium_ceq(levels[0], levels[1], levels[2], kd)?;
    say(stdout, fmt_num(c_eq))?;
    if !a.simulate {
        return Ok(());
    }
    let mut out = OutputDir::create(&a.common.out)?;
    let reports = [Model::Sm, Model::Mfm]
        .into_iter()
        .map(|m| equilibrium_run(&config.experiment, config.eps, m))
        .collect::<nonlocal_rd::Result<Vec<_>>>()?;
    let rows = reports.iter().map(|r| {
        vec![
            model_name(r.model).to_string(),
            fmt_num(r.t_end),
            fmt_num(r.c_eq),
            fmt_num(r.max_relative_deviation),
        ]
    });
    out.csv("equilibrium.csv", &["model", "t_end", "c_eq", "max_relative_deviation"], rows)?;
    write_manifest(
        &mut out,
        "equilibrium",
        &config,
        json!({ "c_eq": c_eq, "kd": kd, "levels": levels }),
    )?;
    out.commit();
    for r in &reports {
        say(
            stdout,
            format!("{}: max relative deviation {}", model_name(r.model), fmt_num(r.max_relative_deviation)),
        )?;
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(" ")
}
