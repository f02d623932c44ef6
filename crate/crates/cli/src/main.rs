//! `multienergy`: energies, positive-definiteness probes, particle
//! optimization and reproducible verification scenarios from the shell.
//!
//! Exit codes: 0 on success, 2 when a `verify` assertion fails, 64 on usage
//! errors (bad flags, kernel specs or inputs), 1 on I/O failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use multienergy::certify::{convexity_probe, inequality_suite, pd_test, PdTestOptions};
use multienergy::energy::{
    discrete_energy, mc_energy_uniform, mutual_energy, potential, potential_sampled, EnergyEstimate,
};
use multienergy::io::{read_measure, read_points, write_points};
use multienergy::optimize::{optimize_discrete, GradMode, OptimizerConfig};
use multienergy::scenario::{list_scenarios, run_scenario, Overrides, Report, DEFAULT_TUPLES};
use multienergy::sphere::sample_sphere;
use multienergy::{DiscreteMeasure, Error, Kernel};
use serde::Serialize;

const EXIT_ASSERTION: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "multienergy", version, about = "Multi-input interaction energies on spheres")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Multiply every tolerance by this factor.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    /// Monte Carlo tuples per estimate.
    #[arg(long, global = true)]
    tuples: Option<u64>,
    /// Flat key=value file mirroring the long flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discrete energy of a point configuration.
    Energy {
        #[arg(long)]
        kernel: Kernel,
        #[arg(long)]
        points: PathBuf,
    },
    /// Monte Carlo energy of the uniform measure.
    EnergyInt {
        #[arg(long)]
        kernel: Kernel,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mutual energy of one measure per kernel slot (the last one repeats).
    Mutual {
        #[arg(long)]
        kernel: Kernel,
        #[arg(long = "measure", required = true)]
        measures: Vec<PathBuf>,
    },
    /// Potential of order j at query tuples of n - j consecutive points.
    Potential {
        #[arg(long)]
        kernel: Kernel,
        #[arg(long = "measure", required = true)]
        measures: Vec<PathBuf>,
        #[arg(long)]
        order: usize,
        #[arg(long)]
        at: PathBuf,
        /// Also report sampling errors, reading each measure as an i.i.d. sample.
        #[arg(long)]
        sampled: bool,
    },
    /// Randomized (conditional) positive-definiteness test.
    Pdtest {
        #[arg(long)]
        kernel: Kernel,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        conditional: bool,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 40)]
        set_size: usize,
        /// Random pin tuples in addition to the canonical one.
        #[arg(long, default_value_t = 4)]
        pin_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Convexity of the energy along the segment from mu to nu.
    Convexity {
        #[arg(long)]
        kernel: Kernel,
        /// CSV file, or `uniform:M` for an M-point uniform sample.
        #[arg(long)]
        mu: String,
        #[arg(long)]
        nu: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Residuals of the mean inequalities on random measures.
    Inequalities {
        #[arg(long)]
        kernel: Kernel,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Projected gradient descent (or ascent) on N particles.
    Minimize {
        #[arg(long)]
        kernel: Kernel,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        maximize: bool,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        multistart: usize,
        /// Use central differences instead of analytic gradients.
        #[arg(long)]
        fd: bool,
        /// Write `iteration,energy` rows of the best start here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final configuration here.
        #[arg(long)]
        points_out: Option<PathBuf>,
    },
    /// Run verification scenarios and emit JSON reports.
    Verify {
        /// Scenario names; all scenarios when omitted.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override every scenario's default seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include wall-clock seconds (reports are then no longer reproducible byte for byte).
        #[arg(long)]
        timings: bool,
    },
    /// List scenario names.
    List,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(code) => return ExitCode::from(code),
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn command() -> clap::Command {
    Cli::command().args_override_self(true)
}

/// Prints a clap error or help text and returns the exit code.
fn clap_exit(e: clap::Error) -> u8 {
    let _ = e.print();
    match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
        _ => EXIT_USAGE,
    }
}

/// Parses argv, then re-parses with config-file entries inserted right
/// after the subcommand so that explicit flags override them.
fn parse(argv: &[String]) -> std::result::Result<Cli, u8> {
    let matches = command().try_get_matches_from(argv).map_err(clap_exit)?;
    let Some(path) = matches.get_one::<PathBuf>("config").cloned() else {
        return from_matches(&matches);
    };
    let sub = matches.subcommand_name().expect("subcommand is required");
    let extra = match config_args(&path, sub) {
        Ok(extra) => extra,
        Err(msg) => {
            eprintln!("error: {msg}");
            return Err(EXIT_USAGE);
        }
    };
    let at = argv.iter().position(|a| a == sub).expect("subcommand appears in argv");
    let mut merged = argv[..=at].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[at + 1..]);
    let matches = command().try_get_matches_from(&merged).map_err(clap_exit)?;
    from_matches(&matches)
}

fn from_matches(m: &ArgMatches) -> std::result::Result<Cli, u8> {
    Cli::from_arg_matches(m).map_err(clap_exit)
}

/// Long flags accepted by a subcommand, global flags included.
fn long_flags(sub: &clap::Command) -> Vec<(String, bool)> {
    sub.get_arguments()
        .filter_map(|a| {
            let takes_value = a.get_action().takes_values();
            a.get_long().map(|l| (l.to_string(), takes_value))
        })
        .collect()
}

/// Reads `key=value` lines (`#` comments, blank lines allowed) and returns
/// the flags relevant to `sub`. Keys no subcommand knows are errors.
fn config_args(path: &Path, sub: &str) -> std::result::Result<Vec<String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
    let root = command();
    let root_flags = long_flags(&root);
    let sub_cmd = root.find_subcommand(sub).expect("known subcommand");
    let mut here = long_flags(sub_cmd);
    here.extend(root_flags.iter().cloned());
    let known_anywhere = |key: &str| {
        root_flags.iter().any(|(l, _)| l == key)
            || root.get_subcommands().any(|s| long_flags(s).iter().any(|(l, _)| l == key))
    };
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", lineno + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(format!("config line {}: nested config files are not supported", lineno + 1));
        }
        match here.iter().find(|(l, _)| *l == key) {
            Some((_, true)) => out.push(format!("--{key}={value}")),
            Some((_, false)) => match value {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                _ => return Err(format!("config line {}: {key} expects true or false", lineno + 1)),
            },
            None if known_anywhere(&key) => {}
            None => return Err(format!("config line {}: unknown key `{key}`", lineno + 1)),
        }
    }
    Ok(out)
}

/// Writes a line to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    emit(&serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?)
}

fn warn_kernel(k: &Kernel) {
    for w in k.warnings() {
        eprintln!("warning: {w}");
    }
}

fn load_measures(paths: &[PathBuf]) -> CliResult<Vec<DiscreteMeasure>> {
    paths.iter().map(|p| read_measure(p).map_err(CliError::from)).collect()
}

/// Pads a measure list to `count` by repeating the last entry.
fn pad<'a>(measures: &'a [DiscreteMeasure], count: usize) -> CliResult<Vec<&'a DiscreteMeasure>> {
    if measures.len() > count {
        return Err(CliError::Usage(format!("expected at most {count} measures, got {}", measures.len())));
    }
    let last = measures.last().ok_or_else(|| CliError::Usage("at least one --measure is required".into()))?;
    let mut out: Vec<&DiscreteMeasure> = measures.iter().collect();
    out.resize(count, last);
    Ok(out)
}

#[derive(Serialize)]
struct PotentialOutput {
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stderr: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct MinimizeSummary<'a> {
    kernel: String,
    n: usize,
    d: usize,
    maximize: bool,
    best_seed: u64,
    final_energy: f64,
    converged: bool,
    final_force: f64,
    iterations_run: usize,
    fd_fallback: bool,
    starts: &'a [multienergy::optimize::StartSummary],
}

fn run(cli: Cli) -> CliResult<u8> {
    let tuples = cli.global.tuples;
    let tol_scale = cli.global.tol_scale;
    if !(tol_scale > 0.0 && tol_scale.is_finite()) {
        return Err(CliError::Usage("--tol-scale must be positive".into()));
    }
    match cli.command {
        Command::Energy { kernel, points } => {
            warn_kernel(&kernel);
            print_json(&discrete_energy(&kernel, &read_points(points)?)?)?;
        }
        Command::EnergyInt { kernel, d, seed } => {
            warn_kernel(&kernel);
            print_json(&mc_energy_uniform(&kernel, d, tuples.unwrap_or(DEFAULT_TUPLES), seed)?)?;
        }
        Command::Mutual { kernel, measures } => {
            warn_kernel(&kernel);
            let measures = load_measures(&measures)?;
            let est: EnergyEstimate = mutual_energy(&kernel, &pad(&measures, kernel.arity())?)?;
            print_json(&est)?;
        }
        Command::Potential { kernel, measures, order, at, sampled } => {
            warn_kernel(&kernel);
            let measures = load_measures(&measures)?;
            let list = pad(&measures, order)?;
            let at = read_points(at)?;
            let out = if sampled {
                let s = potential_sampled(&kernel, &list, &at)?;
                PotentialOutput {
                    values: s.iter().map(|v| v.value).collect(),
                    stderr: Some(s.iter().map(|v| v.stderr).collect()),
                }
            } else {
                PotentialOutput { values: potential(&kernel, &list, &at)?, stderr: None }
            };
            print_json(&out)?;
        }
        Command::Pdtest { kernel, d, conditional, trials, set_size, pin_trials, seed, tol } => {
            warn_kernel(&kernel);
            let opts = PdTestOptions { conditional, trials, set_size, seed, tol: tol * tol_scale, ..Default::default() };
            print_json(&pd_test(&kernel, d, pin_trials, &opts)?)?;
        }
        Command::Convexity { kernel, mu, nu, seed } => {
            warn_kernel(&kernel);
            let nu = read_measure(nu)?;
            let mu = match mu.strip_prefix("uniform:") {
                Some(m) => {
                    let m: usize = m.parse().map_err(|e| CliError::Usage(format!("--mu {mu}: {e}")))?;
                    sample_sphere(nu.dim(), m, seed)?.empirical()
                }
                None => read_measure(&mu)?,
            };
            print_json(&convexity_probe(&kernel, &mu, &nu)?)?;
        }
        Command::Inequalities { kernel, d, trials, seed } => {
            warn_kernel(&kernel);
            print_json(&inequality_suite(&kernel, d, trials, seed)?)?;
        }
        Command::Minimize { kernel, n, d, maximize, steps, lr, seed, multistart, fd, trace, points_out } => {
            warn_kernel(&kernel);
            let cfg = OptimizerConfig {
                steps,
                step_size: lr,
                seed,
                maximize,
                grad_mode: if fd { GradMode::FiniteDifference } else { GradMode::Analytic },
                multistart,
                ..Default::default()
            };
            let result = optimize_discrete(&kernel, n, d, &cfg)?;
            let best = &result.best;
            if best.fd_fallback {
                eprintln!("warning: analytic gradient undefined; used central differences");
            }
            if let Some(path) = trace {
                let mut f = fs::File::create(path)?;
                writeln!(f, "iteration,energy")?;
                for (i, e) in best.energies.iter().enumerate() {
                    writeln!(f, "{i},{e}")?;
                }
            }
            if let Some(path) = points_out {
                write_points(fs::File::create(path)?, &best.final_config)?;
            }
            print_json(&MinimizeSummary {
                kernel: kernel.to_string(),
                n,
                d,
                maximize,
                best_seed: best.seed,
                final_energy: best.final_energy(),
                converged: best.converged,
                final_force: best.final_force,
                iterations_run: best.iterations_run,
                fd_fallback: best.fd_fallback,
                starts: &result.starts,
            })?;
        }
        Command::Verify { scenarios, jobs, seed, out, timings } => {
            let names: Vec<String> = if scenarios.is_empty() {
                list_scenarios().iter().map(|s| s.to_string()).collect()
            } else {
                scenarios
            };
            let overrides = Overrides { seed, tuples, dims: None, tol_scale, timings };
            let reports = run_parallel(&names, &overrides, jobs.max(1))?;
            let text = if reports.len() == 1 {
                serde_json::to_string_pretty(&reports[0])
            } else {
                serde_json::to_string_pretty(&reports)
            }
            .map_err(|e| CliError::Io(e.to_string()))?;
            match out {
                Some(path) => fs::write(path, text + "\n")?,
                None => emit(&text)?,
            }
            for r in &reports {
                eprintln!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.scenario);
            }
            if reports.iter().any(|r| !r.pass) {
                return Ok(EXIT_ASSERTION);
            }
        }
        Command::List => {
            emit(&list_scenarios().join("\n"))?;
        }
    }
    Ok(0)
}

/// Runs scenarios on up to `jobs` threads; reports keep the input order.
fn run_parallel(names: &[String], overrides: &Overrides, jobs: usize) -> CliResult<Vec<Report>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<multienergy::Result<Report>>>> = Mutex::new((0..names.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(names.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(name) = names.get(i) else { break };
                let r = run_scenario(name, overrides);
                slots.lock().expect("no thread panicked while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no thread panicked while holding the lock")
        .into_iter()
        .map(|r| r.expect("every slot filled").map_err(CliError::from))
        .collect()
}
