mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use commands::CliError;
use config::{RunConfig, Settings};

/// Numerical laboratory for blow-up of the semilinear Euler-Poisson-Darboux
/// equation u_tt - Δu + (μ/t)u_t = t^α|u|^p with radial data.
#[derive(Parser)]
#[command(name = "epd-lab", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Config sources, lowest precedence first: file, `--set`, named flags.
#[derive(Args)]
struct Common {
    /// Flat config file of dotted keys (model.mu = 1.5).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set grid.dr=0.005. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<i64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Defaults to p_S(n, μ, α).
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    dr: Option<f64>,
    #[arg(long, global = true)]
    cfl: Option<f64>,
    #[arg(long, global = true)]
    tbudget: Option<f64>,
    /// Defaults to tbudget + 1 + 2·dr.
    #[arg(long, global = true)]
    rmax: Option<f64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Times at which `solve` writes field snapshots.
    #[arg(long, global = true, value_delimiter = ',')]
    snapshots: Vec<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Critical exponents and the hypothesis checklist, as JSON on stdout.
    Exponents,
    /// K_ν(z) on a product grid, as CSV on stdout.
    Bessel {
        #[arg(long, value_delimiter = ',', required = true)]
        nu: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        z: Vec<f64>,
    },
    /// h(t) and h'(t) for the configured μ, as CSV on stdout.
    Hfun {
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<f64>,
    },
    /// b_q on a (t, r) grid with its PDE residual, and the large-time slope.
    TestfnVerify {
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 5.0, 10.0])]
        grid_t: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.5, 3.0, 6.0])]
        grid_r: Vec<f64>,
        /// Time range of the log-log slope fit of b_q(t, 0).
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1e2, 1e4])]
        slope_range: Vec<f64>,
    },
    /// One solver run: trace CSV, verdict JSON, optional snapshots.
    Solve,
    /// Picard iteration on [0, t_small].
    Picard {
        #[arg(long, default_value_t = 0.25)]
        t_small: f64,
        #[arg(long, default_value_t = 30)]
        max_iter: usize,
    },
    /// Y(M) and Z(M) along the run stored in a `solve` output directory.
    Functional {
        #[arg(long)]
        run: PathBuf,
        /// M values; defaults to 21 log-spaced points over the resolvable window.
        #[arg(long = "M", value_delimiter = ',')]
        m: Vec<f64>,
    },
    /// Blow-up of the extremal lifespan ODE, numeric and closed form.
    OdeLifespan {
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long, default_value_t = 2.0)]
        s_start: f64,
    },
    /// Blow-up times over a list of amplitudes and the ln T vs ε^{-p(p-1)} fit.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        eps_list: Vec<f64>,
    },
}

fn settings(c: &Common) -> Result<Settings, CliError> {
    let mut s = match &c.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    for a in &c.set {
        s.set_assignment(a)?;
    }
    if let Some(n) = c.n {
        s.set("model.n", Value::Integer(n))?;
    }
    let floats = [
        ("model.mu", c.mu),
        ("model.alpha", c.alpha),
        ("model.p", c.p),
        ("model.eps", c.eps),
        ("grid.dr", c.dr),
        ("grid.cfl", c.cfl),
        ("grid.t_budget", c.tbudget),
        ("grid.r_max", c.rmax),
        ("grid.threshold", c.threshold),
    ];
    for (key, v) in floats {
        if let Some(v) = v {
            s.set(key, Value::Float(v))?;
        }
    }
    if let Some(out) = &c.out {
        s.set("output.dir", Value::String(out.to_string_lossy().into_owned()))?;
    }
    if !c.snapshots.is_empty() {
        s.set("output.snapshots", Value::Array(c.snapshots.iter().map(|&t| Value::Float(t)).collect()))?;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&settings(&cli.common)?)?;
    match cli.command {
        Command::Exponents => commands::exponents(&cfg),
        Command::Bessel { nu, z } => commands::bessel(&nu, &z),
        Command::Hfun { t } => commands::hfun(&cfg, &t),
        Command::TestfnVerify {
            grid_t,
            grid_r,
            slope_range,
        } => commands::testfn_verify(&cfg, &grid_t, &grid_r, (slope_range[0], slope_range[1])),
        Command::Solve => commands::solve(&cfg),
        Command::Picard { t_small, max_iter } => commands::picard(&cfg, t_small, max_iter),
        Command::Functional { run, m } => commands::functional(&cfg, &run, &m),
        Command::OdeLifespan { c0, c1, s_start } => commands::ode_lifespan(&cfg, c0, c1, s_start),
        Command::Sweep { eps_list } => commands::sweep(&cfg, &eps_list),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
