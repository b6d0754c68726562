//! `psr`: run, sweep and cross-check the positronium superradiance engines.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime or
//! invariant failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use psr_core::config::parse_config;
use psr_core::observables::{Engine, Lifetime, RunResult};
use psr_core::output::write_bundle;
use psr_core::params::SeedPolicy;
use psr_core::scenarios::{self, Scenario, ScenarioOutcome, SweepAxis, PRESET_NAMES};
use psr_core::{Error, Result};

/// Thresholds printed and enforced by `compare-oracle`.
const MEANFIELD_TOL: f64 = 0.15;
const LADDER_TOL: f64 = 1e-8;
const INDEPENDENT_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "psr", version, about = "Collective annihilation dynamics of driven positronium ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write timeseries, summary and plot script.
    Run {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        out: Out,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        out: Out,
        /// One of rabi, mu0, mu1, n_atoms, gamma0.
        #[arg(long)]
        sweep_axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        sweep_values: Vec<f64>,
    },
    /// Check a configuration without running it.
    Validate {
        /// Config file (same as --config).
        file: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare engines against the exact engine at small N.
    CompareOracle {
        /// Atom count for the exact comparisons (2 to 4).
        #[arg(long, default_value_t = 3)]
        n: usize,
    },
    /// List the built-in presets.
    ListPresets,
}

#[derive(Args)]
struct Source {
    /// Built-in preset name.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    /// Engine: exact, ladder or meanfield.
    #[arg(long)]
    engine: Option<String>,
    #[arg(long)]
    rtol: Option<f64>,
    /// Number of output samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Seed scale; turns an unseeded start into a tipping seed.
    #[arg(long)]
    seed_epsilon: Option<f64>,
}

#[derive(Args)]
struct Out {
    /// Output directory.
    #[arg(long, env = "PSR_OUT_DIR", default_value = "psr-out")]
    out: PathBuf,
}

fn config_error(message: String) -> Error {
    Error::Config {
        message,
        key: None,
        line: None,
    }
}

fn load(source: &Source, file: Option<&Path>, overrides: &Overrides) -> Result<Scenario> {
    let mut s = match (file.or(source.config.as_deref()), &source.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| match e {
                Error::Config { message, key, line } => Error::Config {
                    message: format!("{}: {message}", path.display()),
                    key,
                    line,
                },
                other => other,
            })?
        }
        (None, Some(name)) => scenarios::preset(name)?,
        (Some(_), Some(_)) => return Err(config_error("give either --preset or a config file, not both".into())),
        (None, None) => return Err(config_error("a --preset or --config is required".into())),
    };
    if let Some(e) = &overrides.engine {
        s.engine = e.parse::<Engine>()?;
        if s.engine != Engine::Meanfield {
            s.reference_run = false;
            s.ladder_companion_n = None;
        }
    }
    if let Some(r) = overrides.rtol {
        s.spec.rtol = r;
    }
    if let Some(n) = overrides.samples {
        s.spec.sample_count = n;
    }
    if let Some(eps) = overrides.seed_epsilon {
        s.initial.seed = match s.initial.seed {
            SeedPolicy::Floor { .. } => SeedPolicy::Floor { epsilon: eps },
            _ => SeedPolicy::Tipping { epsilon: eps },
        };
    }
    s.validate()?;
    Ok(s)
}

fn lifetime_text(l: &Lifetime) -> String {
    match l {
        Lifetime::Value(v) => format!("{v:.6}"),
        Lifetime::LowerBound(v) => format!("> {v:.6}"),
    }
}

fn print_result(label: &str, r: &RunResult) {
    let m = &r.metrics;
    println!(
        "{label}: engine {} N {} tau {} extension {} bursts {:?}",
        r.engine.as_str(),
        r.params.n_atoms,
        lifetime_text(&m.tau_lifetime),
        m.extension_factor.map_or("-".into(), |x| format!("{x:.4}")),
        m.burst_times,
    );
}

fn print_outcome(o: &ScenarioOutcome) {
    print_result(&o.scenario.name, &o.result);
    if let Some(r) = &o.reference {
        print_result("  reference", r);
    }
    if let Some(c) = &o.companion {
        print_result("  companion", c);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { source, overrides, out } => {
            let s = load(&source, None, &overrides)?;
            let o = scenarios::run_scenario(&s)?;
            let paths = write_bundle(&o, &out.out)?;
            print_outcome(&o);
            println!("wrote {}", paths.summary.parent().unwrap_or(Path::new(".")).display());
        }
        Command::Sweep {
            source,
            overrides,
            out,
            sweep_axis,
            sweep_values,
        } => {
            let s = load(&source, None, &overrides)?;
            let axis: SweepAxis = sweep_axis.parse()?;
            let points = scenarios::sweep(&s, axis, &sweep_values)?;
            let mut index = format!("{},tau_lifetime,extension_factor,burst_count,directory\n", axis.as_str());
            for (i, p) in points.iter().enumerate() {
                let dir = format!("{i:03}_{}_{}", axis.as_str(), p.value);
                write_bundle(&p.outcome, &out.out.join(&dir))?;
                print_outcome(&p.outcome);
                let m = &p.outcome.result.metrics;
                index.push_str(&format!(
                    "{},{},{},{},{dir}\n",
                    p.value,
                    m.tau_lifetime.value(),
                    m.extension_factor.map_or(String::new(), |x| x.to_string()),
                    m.burst_times.len()
                ));
            }
            let path = out.out.join("sweep.csv");
            std::fs::write(&path, index).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            println!("wrote {}", out.out.display());
        }
        Command::Validate { file, source, overrides } => {
            let s = load(&source, file.as_deref(), &overrides)?;
            println!("{}: ok ({} engine, N = {})", s.name, s.engine.as_str(), s.params.n_atoms);
        }
        Command::CompareOracle { n } => {
            if !(2..=4).contains(&n) {
                return Err(Error::param("n", format!("must lie in [2, 4], got {n}")));
            }
            let mf = scenarios::oracle_meanfield_vs_exact(n, 0.1)?;
            let lad = scenarios::oracle_ladder_vs_exact(n)?;
            let ind = scenarios::oracle_independent(n, 500.0)?;
            let rows = [
                ("meanfield vs exact (mu = 0.1, Omega = 500, t <= 2)", mf, MEANFIELD_TOL),
                ("ladder vs exact (mu1 = 1, gamma2 = 0)", lad, LADDER_TOL),
                ("independent meanfield vs exact N = 1", ind, INDEPENDENT_TOL),
            ];
            let mut ok = true;
            println!("N = {n}");
            for (label, dev, tol) in rows {
                let pass = dev < tol;
                ok &= pass;
                println!("{label}: max |dp| = {dev:.3e} (threshold {tol:e}) {}", if pass { "ok" } else { "EXCEEDED" });
            }
            if !ok {
                return Err(Error::Precondition("oracle deviation above threshold".into()));
            }
        }
        Command::ListPresets => {
            for name in PRESET_NAMES {
                let s = scenarios::preset(name)?;
                println!(
                    "{name}: N = {}, Omega = {}, mu0 = {}, mu1 = {}, cavity {}, t in [{}, {}]",
                    s.params.n_atoms,
                    s.params.rabi,
                    if s.params.collective_01 { s.params.mu0 } else { 0.0 },
                    if s.params.collective_12 { s.params.mu1 } else { 0.0 },
                    if s.cavity.is_some() { "yes" } else { "no" },
                    s.spec.t_start,
                    s.spec.t_end
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
