//! Subcommand implementations.

use crate::config::{parse_config, ConfigError, ExperimentConfig};
use crate::experiment;
use crate::output::{config_hash, read_table, Table};
use clap::{Args, Parser, Subcommand, ValueEnum};
use damageid_core::forward::{contraction_estimate, picard_forward_solve, ForwardConfig};
use damageid_core::gram::build_parameter_gram;
use damageid_core::inversion::{cone_constant_estimate, landweber_run, semiconvergence_probe, spectrum_probe, LandweberConfig, Measurement, Termination};
use damageid_core::linalg::max_abs;
use damageid_core::presets::InversionSetup;
use damageid_core::process::{project_admissible, DamageProcess};
use damageid_core::sensitivity::Linearization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] damageid_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(damageid_core::Error::Numerical(_) | damageid_core::Error::Convergence { .. }) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "damageid", version, about = "Forward simulation and identification of damage processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides run.out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of random samples for diagnostics (overrides run.trials).
    #[arg(long)]
    trials: Option<usize>,
    /// Relative noise level (overrides landweber.noise).
    #[arg(long)]
    noise: Option<f64>,
    /// Iteration cap (overrides landweber.max_iter).
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Measurement table written by `synthesize`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Diagnostic {
    Derivative,
    Adjoint,
    Cone,
    Contraction,
    Spectrum,
    Semiconvergence,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the forward problem for the configured process and write the state trajectory.
    Forward(Common),
    /// Generate noisy displacement data from the configured process.
    Synthesize(Common),
    /// Run projected Landweber on measured or synthesized data.
    Invert(Common),
    /// Numerical checks of the forward map, its derivative and the inverse problem.
    Diagnose {
        #[arg(value_enum)]
        kind: Diagnostic,
        #[command(flatten)]
        common: Common,
    },
}

struct Context {
    cfg: ExperimentConfig,
    setup: InversionSetup,
    hash: String,
    out: PathBuf,
}

impl Context {
    fn load(common: &Common) -> CliResult<Self> {
        let text = std::fs::read_to_string(&common.config).map_err(io_err(&common.config))?;
        let mut cfg = parse_config(&text)?;
        if let Some(o) = &common.out {
            cfg.run.out = o.clone();
        }
        if let Some(s) = common.seed {
            cfg.run.seed = s;
        }
        if let Some(t) = common.trials {
            if t < 1 {
                return Err(ConfigError { path: "--trials".into(), message: "must be >= 1".into() }.into());
            }
            cfg.run.trials = t;
        }
        if let Some(n) = common.noise {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(ConfigError { path: "--noise".into(), message: format!("must be >= 0, got {n}") }.into());
            }
            cfg.landweber.noise = n;
        }
        if let Some(m) = common.max_iter {
            cfg.landweber.max_iter = m;
        }
        let effective = cfg.to_toml();
        let hash = config_hash(&effective);
        let out = cfg.run.out.clone();
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        let echo = out.join("effective_config.toml");
        std::fs::write(&echo, &effective).map_err(io_err(&echo))?;
        let setup = experiment::build(&cfg)?;
        Ok(Self { cfg, setup, hash, out })
    }

    fn write(&self, table: &Table, name: &str) -> CliResult<PathBuf> {
        table.write(&self.out, name, &self.hash).map_err(io_err(&self.out.join(name)))
    }

    fn tight(&self) -> ForwardConfig {
        ForwardConfig { tol: self.cfg.forward.tol.min(1e-13), max_sweeps: self.cfg.forward.max_sweeps.max(200), ..self.cfg.forward }
    }

    fn landweber(&self) -> LandweberConfig {
        let lw = &self.cfg.landweber;
        LandweberConfig {
            step: lw.step,
            tau: lw.tau,
            max_iter: lw.max_iter,
            start: self.setup.start.clone(),
            s: self.setup.s,
            forward: self.cfg.forward,
            run_to_cap: false,
            timing: self.cfg.run.timing,
        }
    }

    fn measurement(&self, path: Option<&Path>) -> CliResult<Measurement> {
        match path {
            Some(p) => read_measurement(self, p),
            None => {
                let clean = picard_forward_solve(&self.setup.problem, &self.setup.truth, &self.cfg.forward)?.data();
                Ok(Measurement::synthesize(&self.setup.problem, &clean, self.cfg.landweber.noise, self.cfg.run.seed)?)
            }
        }
    }
}

fn coordinate_columns(dim: usize) -> Vec<&'static str> {
    if dim == 1 {
        vec!["t", "x"]
    } else {
        vec!["t", "x", "y"]
    }
}

fn displacement_columns(dim: usize) -> Vec<&'static str> {
    if dim == 1 {
        vec!["u"]
    } else {
        vec!["u1", "u2"]
    }
}

/// Space-time table of displacement trajectories, optionally with damage.
fn field_table(ctx: &Context, data: &[f64], damage: Option<&[Vec<f64>]>) -> Table {
    let p = &ctx.setup.problem;
    let dim = p.mesh.dim();
    let mut cols = coordinate_columns(dim);
    cols.extend(displacement_columns(dim));
    if damage.is_some() {
        cols.push("d");
    }
    let mut table = Table::new(&cols);
    let nd = p.mesh.dof_count();
    for m in 0..p.grid.len() {
        for (j, x) in p.mesh.nodes().iter().enumerate() {
            let mut row = vec![p.grid.time(m), x[0]];
            if dim == 2 {
                row.push(x[1]);
            }
            for c in 0..dim {
                row.push(data[m * nd + j * dim + c]);
            }
            if let Some(d) = damage {
                row.push(d[m][j]);
            }
            table.push(row);
        }
    }
    table
}

fn process_table(g: &DamageProcess) -> Table {
    let mut table = Table::new(&["i_t", "i_x", "i_y", "coeff"]);
    for (k, &c) in g.coeffs.iter().enumerate() {
        let (it, ix, iy) = g.basis.unravel(k);
        table.push(vec![it as f64, ix as f64, iy as f64, c]);
    }
    table
}

fn read_measurement(ctx: &Context, path: &Path) -> CliResult<Measurement> {
    let table = read_table(path).map_err(io_err(path))?;
    let p = &ctx.setup.problem;
    let dim = p.mesh.dim();
    let coords = coordinate_columns(dim).len();
    let expected_rows = p.grid.len() * p.mesh.node_count();
    if table.columns.len() != coords + dim || table.rows.len() != expected_rows {
        return Err(CliError::Data(format!(
            "{}: expected {expected_rows} rows with {} columns for this configuration, found {} rows with {}",
            path.display(),
            coords + dim,
            table.rows.len(),
            table.columns.len()
        )));
    }
    let delta = table
        .notes
        .iter()
        .find(|(k, _)| k == "noise-level")
        .and_then(|(_, v)| v.trim().parse::<f64>().ok())
        .ok_or_else(|| CliError::Data(format!("{}: missing \"# noise-level\" line", path.display())))?;
    let mut data = Vec::with_capacity(p.data_len());
    for row in &table.rows {
        data.extend_from_slice(&row[coords..]);
    }
    Ok(Measurement { data, delta })
}

fn forward(ctx: &Context, out: &mut dyn Write) -> CliResult<()> {
    let state = picard_forward_solve(&ctx.setup.problem, &ctx.setup.truth, &ctx.cfg.forward)?;
    let path = ctx.write(&field_table(ctx, &state.data(), Some(&state.damage.values)), "state.csv")?;
    let _ = writeln!(out, "forward: converged in {} sweeps, last update {:.3e}", state.sweeps, state.history.last().copied().unwrap_or(0.0));
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(())
}

fn synthesize(ctx: &Context, out: &mut dyn Write) -> CliResult<()> {
    let meas = ctx.measurement(None)?;
    let mut table = field_table(ctx, &meas.data, None);
    table.note("noise-level", format!("{:.17e}", meas.delta));
    table.note("noise-fraction", ctx.cfg.landweber.noise);
    table.note("seed", ctx.cfg.run.seed);
    let path = ctx.write(&table, "measurement.csv")?;
    ctx.write(&process_table(&ctx.setup.truth), "truth_process.csv")?;
    let _ = writeln!(out, "synthesize: noise level {:.6e}", meas.delta);
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(())
}

fn invert(ctx: &Context, data: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let meas = ctx.measurement(data)?;
    let history = landweber_run(&ctx.setup.problem, &ctx.landweber(), &meas, None)?;
    let mut log = Table::new(&["iter", "residual_L2", "grad_norm_Ms", "step", "cone_sample_max", "wallclock_s"]);
    let mut running = f64::NAN;
    for r in &history.records {
        if r.cone_sample.is_finite() {
            running = if running.is_nan() { r.cone_sample } else { running.max(r.cone_sample) };
        }
        log.push(vec![r.iter as f64, r.residual, r.grad_norm, r.step, running, r.wallclock]);
    }
    log.note("noise-level", format!("{:.17e}", meas.delta));
    log.note("termination", format!("{:?}", history.termination));
    ctx.write(&log, "iterates.csv")?;
    let fin = ctx.setup.start.with_coeffs(history.final_iterate().to_vec());
    ctx.write(&process_table(&fin), "process.csv")?;
    for w in &history.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let last = history.records.last().expect("at least one record");
    let _ = writeln!(
        out,
        "invert: {:?} after {} iterations, residual {:.6e} (tau*delta = {:.6e}), step {:.6e}",
        history.termination,
        last.iter,
        last.residual,
        ctx.cfg.landweber.tau * meas.delta,
        history.step
    );
    if let Termination::ForwardFailure(msg) = &history.termination {
        return Err(damageid_core::Error::Numerical(format!("forward solve failed during the iteration: {msg}")).into());
    }
    if history.termination == Termination::NonFinite {
        return Err(damageid_core::Error::Numerical("non-finite residual or gradient".into()).into());
    }
    Ok(())
}

/// Direction for Taylor tests that keeps `g + εh` admissible for `ε ≤ 0.1`.
fn admissible_direction(g: &DamageProcess, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let xi: Vec<f64> = (0..g.coeffs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = max_abs(&xi);
    let moved = project_admissible(&g.with_coeffs(g.coeffs.iter().zip(&xi).map(|(c, x)| c + 0.04 * g.bound * x / m).collect()));
    moved.coeffs.iter().zip(&g.coeffs).map(|(a, b)| (a - b) / 0.1).collect()
}

fn diagnose(ctx: &Context, kind: Diagnostic, out: &mut dyn Write) -> CliResult<()> {
    let p = &ctx.setup.problem;
    let g = &ctx.setup.truth;
    let trials = ctx.cfg.run.trials;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.run.seed);
    let gram = build_parameter_gram(&ctx.setup.basis, ctx.setup.s)?;
    match kind {
        Diagnostic::Derivative => {
            let tight = ctx.tight();
            let state = picard_forward_solve(p, g, &tight)?;
            let base = state.data();
            let lin = Linearization::new(p, g, &state)?;
            let mut table = Table::new(&["direction", "eps", "remainder", "slope"]);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for dir in 0..trials {
                let h = admissible_direction(g, &mut rng);
                let dphi = lin.apply(&h)?;
                let mut prev: Option<(f64, f64)> = None;
                for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
                    let gp = g.with_coeffs(g.coeffs.iter().zip(&h).map(|(a, b)| a + eps * b).collect());
                    let up = picard_forward_solve(p, &gp, &tight)?.data();
                    let r: Vec<f64> = up.iter().zip(&base).zip(&dphi).map(|((a, b), c)| a - b - eps * c).collect();
                    let rem = p.data_norm(&r);
                    let slope = prev.map_or(f64::NAN, |(e0, r0)| (r0 / rem).ln() / (e0 / eps).ln());
                    if slope.is_finite() {
                        lo = lo.min(slope);
                        hi = hi.max(slope);
                    }
                    table.push(vec![dir as f64, eps, rem, slope]);
                    prev = Some((eps, rem));
                }
            }
            ctx.write(&table, "taylor.csv")?;
            let _ = writeln!(out, "derivative: Taylor remainder slopes in [{lo:.4}, {hi:.4}]");
        }
        Diagnostic::Adjoint => {
            let state = picard_forward_solve(p, g, &ctx.cfg.forward)?;
            let lin = Linearization::new(p, g, &state)?;
            let mut table = Table::new(&["trial", "lhs", "rhs", "relative_mismatch"]);
            let mut worst = 0.0f64;
            for trial in 0..trials {
                let h: Vec<f64> = (0..g.coeffs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r: Vec<f64> = (0..p.data_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let dphi = lin.apply(&h)?;
                let adj = lin.adjoint(&gram, &r)?;
                let lhs = p.data_inner(&dphi, &r);
                let rhs = gram.inner(&h, &adj);
                let rel = (lhs - rhs).abs() / (p.data_norm(&dphi) * p.data_norm(&r));
                worst = worst.max(rel);
                table.push(vec![trial as f64, lhs, rhs, rel]);
            }
            ctx.write(&table, "adjoint.csv")?;
            let _ = writeln!(out, "adjoint: max relative mismatch {worst:.3e}");
        }
        Diagnostic::Cone => {
            let mut table = Table::new(&["scale", "sample", "ratio", "eta"]);
            for scale in [1e-1, 1e-2, 1e-3] {
                let report = cone_constant_estimate(p, g, &gram, &ctx.tight(), trials, scale, ctx.cfg.run.seed)?;
                for (i, (r, e)) in report.ratios.iter().zip(&report.etas).enumerate() {
                    table.push(vec![scale, i as f64, *r, *e]);
                }
                let _ = writeln!(out, "cone: scale {scale:.0e}: max ratio {:.4e}, max eta {:.4e}, skipped {}", report.max_ratio(), report.max_eta(), report.skipped);
            }
            ctx.write(&table, "cone.csv")?;
        }
        Diagnostic::Contraction => {
            let lambdas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
            let q = contraction_estimate(p, g, &lambdas, trials, ctx.cfg.run.seed)?;
            let mut table = Table::new(&["lambda", "q"]);
            for &(l, v) in &q {
                table.push(vec![l, v]);
                let _ = writeln!(out, "contraction: lambda {l:>5}: q = {v:.4e}");
            }
            ctx.write(&table, "contraction.csv")?;
        }
        Diagnostic::Spectrum => {
            let state = picard_forward_solve(p, g, &ctx.cfg.forward)?;
            let lin = Linearization::new(p, g, &state)?;
            let report = spectrum_probe(&lin, &gram, lin.param_len(), ctx.cfg.run.seed)?;
            let mut table = Table::new(&["k", "sigma", "ratio", "residual"]);
            let s1 = report.values[0];
            for (k, (s, r)) in report.values.iter().zip(&report.residuals).enumerate() {
                table.push(vec![(k + 1) as f64, *s, s / s1, *r]);
            }
            ctx.write(&table, "spectrum.csv")?;
            let first = report.values.iter().position(|&s| s <= 1e-3 * s1);
            let _ = writeln!(out, "spectrum: sigma_1 = {s1:.6e}; first k with sigma_k/sigma_1 <= 1e-3: {} of {}", first.map_or("none".to_string(), |k| (k + 1).to_string()), lin.param_len());
        }
        Diagnostic::Semiconvergence => {
            let meas = ctx.measurement(None)?;
            let report = semiconvergence_probe(p, &ctx.landweber(), &meas, g)?;
            let mut table = Table::new(&["iter", "error_Ms", "residual_L2"]);
            for (k, (e, r)) in report.errors.iter().zip(&report.residuals).enumerate() {
                table.push(vec![k as f64, *e, *r]);
            }
            table.note("noise-level", format!("{:.17e}", meas.delta));
            ctx.write(&table, "semiconvergence.csv")?;
            let _ = writeln!(
                out,
                "semiconvergence: minimum error {:.6e} at iteration {} of {}; interior minimum: {}; discrepancy index: {}",
                report.errors[report.argmin()],
                report.argmin(),
                report.errors.len() - 1,
                report.has_interior_minimum(),
                report.discrepancy_index.map_or("none".to_string(), |k| k.to_string())
            );
        }
    }
    Ok(())
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("DAMAGEID_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n >= 1 {
            // fails harmlessly if the pool was already initialized
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Runs the command line with explicit output streams; returns the exit status.
pub fn run_cli_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    configure_threads();
    let result = (|| -> CliResult<()> {
        match &cli.command {
            Command::Forward(c) => forward(&Context::load(c)?, out),
            Command::Synthesize(c) => synthesize(&Context::load(c)?, out),
            Command::Invert(c) => invert(&Context::load(c)?, c.data.as_deref(), out),
            Command::Diagnose { kind, common } => diagnose(&Context::load(common)?, *kind, out),
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the command line against the process streams.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_cli_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
