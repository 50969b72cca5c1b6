use std::path::{Path, PathBuf};
use std::sync::Arc;

use epd_core::blowup_lab::{
    extremal_ode_lifespan, functional_y_curve, lifespan_sweep, resolvable_window, sweep_fit, y_log_growth,
    FunctionalConfig, OdeSettings,
};
use epd_core::epd_solver::{
    first_step, picard_solve, solve_with, step_with, InitialProfile, SnapshotSpec, SolutionTrace, SolverOptions,
};
use epd_core::exponents::check_hypotheses;
use epd_core::special_functions::{bessel_k, h_eval, SpecFunConfig};
use epd_core::test_functions::{asymptotic_slope, b_q_moments, BqCache};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Settings};
use crate::output::{table_file, Cell, JsonDoc, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] epd_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if matches!(e, epd_core::Error::Config { .. } | epd_core::Error::Domain { .. }) => 2,
            CliError::Core(_) => 3,
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }

    pub fn code(&self) -> String {
        match self {
            CliError::Config(_) => "cli.config".into(),
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "cli.io".into(),
            CliError::Csv(_) => "cli.csv".into(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Creates the output directory and echoes the resolved config into it.
fn prepare(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    io(&dir, std::fs::create_dir_all(&dir))?;
    let path = dir.join("config.resolved");
    io(&path, std::fs::write(&path, cfg.to_text()))?;
    Ok(dir)
}

fn emit(doc: &JsonDoc, path: &Path) -> Result<()> {
    io(path, doc.write(path))?;
    println!("{}", doc.to_json());
    Ok(())
}

fn solver_options(cfg: &RunConfig) -> SolverOptions {
    SolverOptions {
        refine: cfg.refine,
        causal_window: cfg.causal_window,
        ..Default::default()
    }
}

pub fn exponents(cfg: &RunConfig) -> Result<()> {
    let r = check_hypotheses(&cfg.model);
    let mut hyp = JsonDoc::new();
    for h in &r.hypotheses {
        hyp.boolean(h.name, h.passed);
    }
    let mut d = JsonDoc::artifact();
    d.int("n", cfg.model.n as i64)
        .num("mu", cfg.model.mu)
        .num("alpha", cfg.model.alpha)
        .num("p", cfg.model.p)
        .num("p_S", r.p_s)
        .num("p_F", r.p_f)
        .num("mu_star", r.mu_star)
        .num("q_left", r.q_left)
        .num("q_right", r.q_right)
        .num("gamma_at_p", r.gamma_at_p)
        .object("hypotheses", hyp);
    println!("{}", d.to_json());
    Ok(())
}

pub fn bessel(nu: &[f64], z: &[f64]) -> Result<()> {
    let cfg = SpecFunConfig::default();
    let mut t = Table::new(std::io::stdout().lock(), &["nu", "z", "value"])?;
    for &v in nu {
        for &x in z {
            t.row([v.into(), x.into(), bessel_k(v, x, &cfg)?.into()])?;
        }
    }
    t.finish()?;
    Ok(())
}

pub fn hfun(cfg: &RunConfig, times: &[f64]) -> Result<()> {
    let spec = SpecFunConfig::default();
    let mut t = Table::new(std::io::stdout().lock(), &["mu", "t", "h", "hprime"])?;
    for &s in times {
        let h = h_eval(s, cfg.model.mu, &spec)?;
        t.row([cfg.model.mu.into(), s.into(), h.value.into(), h.derivative.into()])?;
    }
    t.finish()?;
    Ok(())
}

/// PDE residual tolerance for `identity_ok`.
const IDENTITY_TOL: f64 = 1e-6;
/// Allowed |slope + q| for `slope_ok`.
const SLOPE_TOL: f64 = 0.02;

pub fn testfn_verify(cfg: &RunConfig, t_grid: &[f64], r_grid: &[f64], slope_range: (f64, f64)) -> Result<()> {
    let dir = prepare(cfg)?;
    let tf = cfg.test_function_params()?;
    let path = dir.join("testfn.csv");
    let mut table = table_file(&path, &["t", "r", "b_q", "db_q_dt", "pde_residual", "ratio_tq"])?;
    let mut worst = 0.0f64;
    for &t in t_grid {
        for &r in r_grid {
            let m = b_q_moments(t, r, &tf)?;
            let res = m.pde_residual(tf.mu);
            worst = worst.max(res.abs());
            table.row([t.into(), r.into(), m.b.into(), m.dt(tf.mu).into(), res.into(), (m.b * t.powf(tf.q)).into()])?;
        }
    }
    table.finish()?;
    let slope = asymptotic_slope(&tf, slope_range.0, slope_range.1, 9)?;
    let mut d = JsonDoc::artifact();
    d.boolean("identity_ok", worst <= IDENTITY_TOL)
        .num("max_pde_residual", worst)
        .num("asymptotic_slope", slope)
        .num("slope_target", -tf.q)
        .boolean("slope_ok", (slope + tf.q).abs() <= SLOPE_TOL);
    emit(&d, &dir.join("testfn_verdict.json"))
}

fn grid_json(cfg: &RunConfig, trace: &SolutionTrace) -> JsonDoc {
    let g = &cfg.grid;
    let mut d = JsonDoc::new();
    d.num("dr", g.dr)
        .num("dt", trace.dt)
        .num("cfl", g.cfl)
        .num("r_max", g.r_max)
        .num("t_budget", g.t_budget)
        .num("threshold", g.blowup_threshold);
    d
}

/// Fields at the steps nearest to the requested times; stops early at
/// blow-up.
fn field_snapshots(cfg: &RunConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    let profile = InitialProfile::bump(cfg.model.epsilon);
    let opts = solver_options(cfg);
    let mut field = first_step(&profile, &cfg.model, &cfg.grid)?;
    let dt = field.dt;
    let mut out = Vec::new();
    for &target in &cfg.emit_snapshots {
        let last = (field.active + 1).min(field.values.len() - 1);
        if target < 0.5 * dt {
            out.push((0.0, field.prev_values[..=last].to_vec()));
            continue;
        }
        while field.t < target - 0.5 * dt {
            field = step_with(&field, &cfg.model, &cfg.grid, &opts)?;
            let sup = field.sup_norm();
            if !sup.is_finite() || sup > cfg.grid.blowup_threshold {
                return Ok(out);
            }
        }
        let last = (field.active + 1).min(field.values.len() - 1);
        out.push((field.t, field.values[..=last].to_vec()));
    }
    Ok(out)
}

pub fn solve(cfg: &RunConfig) -> Result<()> {
    let dir = prepare(cfg)?;
    let trace = solve_with(&InitialProfile::bump(cfg.model.epsilon), &cfg.model, &cfg.grid, &solver_options(cfg))?;
    let path = dir.join("trace.csv");
    let mut table = table_file(&path, &["t", "sup_norm", "energy", "dissipation", "support_radius"])?;
    for k in 0..trace.times.len() {
        table.row([
            trace.times[k].into(),
            trace.sup_norm[k].into(),
            trace.energy[k].into(),
            trace.damping_dissipation[k].into(),
            trace.support_radius[k].into(),
        ])?;
    }
    table.finish()?;

    let mut taken = Vec::new();
    for (t, values) in field_snapshots(cfg)? {
        let path = dir.join(format!("snapshot_t{t:.6}.csv"));
        let mut table = table_file(&path, &["r", "u"])?;
        for (i, v) in values.iter().enumerate() {
            table.row([(i as f64 * cfg.grid.dr).into(), (*v).into()])?;
        }
        table.finish()?;
        taken.push(t);
    }

    let mut d = JsonDoc::artifact();
    d.string("verdict", trace.verdict.label())
        .opt_num("T_num", trace.t_num)
        .opt_num("refine_gap", trace.refine_gap)
        .num("t_final", trace.final_time())
        .int("refinements", trace.refinements.len() as i64)
        .object("grid", grid_json(cfg, &trace))
        .array("snapshot_times", &taken);
    emit(&d, &dir.join("verdict.json"))
}

pub fn picard(cfg: &RunConfig, t_small: f64, max_iter: usize) -> Result<()> {
    let dir = prepare(cfg)?;
    let profile = InitialProfile::bump(cfg.model.epsilon);
    let (trace, gaps) = picard_solve(&profile, &cfg.model, &cfg.grid, t_small, max_iter)?;
    let path = dir.join("picard.csv");
    let mut table = table_file(&path, &["iteration", "gap"])?;
    for (k, &g) in gaps.iter().enumerate() {
        table.row([Cell::Int(k as i64 + 1), g.into()])?;
    }
    table.finish()?;
    let nonzero: Vec<f64> = gaps.iter().copied().take_while(|&g| g > 0.0).collect();
    let ratio = nonzero.windows(2).skip(1).map(|w| w[1] / w[0]).fold(f64::NAN, f64::max);
    let mut d = JsonDoc::artifact();
    d.int("iterations", gaps.len() as i64)
        .opt_num("last_gap", gaps.last().copied())
        .num("max_gap_ratio", ratio)
        .num("t_small", t_small)
        .object("grid", grid_json(cfg, &trace));
    emit(&d, &dir.join("picard.json"))
}

/// Log-spaced M values on [1, hi].
fn default_m_grid(hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| (hi.ln() * k as f64 / (count - 1) as f64).exp()).collect()
}

pub fn functional(cfg: &RunConfig, run_dir: &Path, m_grid: &[f64]) -> Result<()> {
    let run = RunConfig::resolve(&Settings::from_file(&run_dir.join("config.resolved"))?)?;
    let dir = prepare(cfg)?;
    let opts = SolverOptions {
        snapshots: Some(SnapshotSpec {
            dt: run.functional.snapshot_dt,
            r_stride: run.functional.r_stride,
        }),
        ..solver_options(&run)
    };
    let trace = solve_with(&InitialProfile::bump(run.model.epsilon), &run.model, &run.grid, &opts)?;
    let window = resolvable_window(&trace);
    let m_grid = if m_grid.is_empty() {
        default_m_grid(window.1.max(1.0), 21)
    } else {
        m_grid.to_vec()
    };
    let m_hi = m_grid.iter().copied().fold(1.0, f64::max);
    let tf = run.test_function_params()?;
    let cache = BqCache::build(&tf, 0.5, m_hi, m_hi + 1.0 + 3.0 * run.grid.dr, run.functional.cache_spacing)?;
    let fcfg = FunctionalConfig::new(&run.model, m_grid, Arc::new(cache))?;
    let curve = functional_y_curve(&trace, &fcfg)?;

    let path = dir.join("functional.csv");
    let mut table = table_file(&path, &["M", "Y", "Z"])?;
    for (m, y, z) in curve.at_m_grid() {
        table.row([m.into(), y.into(), z.into()])?;
    }
    table.finish()?;

    let mut d = JsonDoc::artifact();
    d.string("verdict", trace.verdict.label())
        .num("window_lo", window.0)
        .num("window_hi", window.1);
    match y_log_growth(&curve, window) {
        Ok(g) => {
            d.num("slope", g.fit.slope)
                .num("intercept", g.fit.intercept)
                .num("r2", g.fit.r2)
                .num("c_low", g.c_low)
                .num("c_high", g.c_high);
        }
        Err(e) => {
            d.num("slope", f64::NAN)
                .num("intercept", f64::NAN)
                .num("r2", f64::NAN)
                .string("fit_error", &e.to_string());
        }
    }
    emit(&d, &dir.join("functional_fit.json"))
}

pub fn ode_lifespan(cfg: &RunConfig, c0: f64, c1: f64, s_start: f64) -> Result<()> {
    let dir = prepare(cfg)?;
    let (p, eps) = (cfg.model.p, cfg.model.epsilon);
    let r = extremal_ode_lifespan(p, eps, c0, c1, s_start, &OdeSettings::default())?;
    let mut d = JsonDoc::artifact();
    d.num("p", p)
        .num("eps", eps)
        .num("c0", c0)
        .num("c1", c1)
        .num("s_start", s_start)
        .num("s_numeric", r.s_numeric)
        .num("s_closed", r.s_closed)
        .num("gap", r.gap)
        .num("s_switch", r.s_switch);
    emit(&d, &dir.join("ode_lifespan.json"))
}

pub fn sweep(cfg: &RunConfig, eps_list: &[f64]) -> Result<()> {
    let dir = prepare(cfg)?;
    let records = lifespan_sweep(&cfg.model, eps_list, &cfg.grid, &solver_options(cfg))?;
    let path = dir.join("sweep.csv");
    let mut table = table_file(&path, &["eps", "x_fit", "T_num", "refine_gap"])?;
    for r in &records {
        table.row([r.params.epsilon.into(), r.x_fit.into(), r.t_num.into(), r.refine_gap.into()])?;
    }
    table.finish()?;

    let completed = records.iter().filter(|r| r.t_num.is_some()).count();
    let mut d = JsonDoc::artifact();
    match sweep_fit(&records) {
        Ok(f) => {
            d.num("slope", f.fit.slope)
                .num("intercept", f.fit.intercept)
                .num("r2", f.fit.r2)
                .boolean("monotone", f.monotone)
                .boolean("strictly_monotone", f.strictly_monotone);
        }
        // budget-outs are data, not failures
        Err(epd_core::Error::InsufficientData { detail, .. }) => {
            d.num("slope", f64::NAN)
                .num("intercept", f64::NAN)
                .num("r2", f64::NAN)
                .string("fit_error", &detail);
        }
        Err(e) => return Err(e.into()),
    }
    d.int("completed", completed as i64).int("requested", records.len() as i64);
    emit(&d, &dir.join("sweep_fit.json"))
}
