//! The `pfch` command line.

use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{series_checks, verdict_lines, CheckReport, DiagnosticsSeries};
use crate::electrostatics::{derivative_suite, TAYLOR_WINDOW};
use crate::energy::{Evaluation, Model};
use crate::grid::{GridSpec, DEFAULT_MAX_CELLS};
use crate::io::atomic_write;
use crate::io::config::{parse_config_with, InitialSpec, RunConfig};
use crate::io::init::init_state;
use crate::io::series::{read_series, write_series};
use crate::io::snapshot::{write_snapshot, Snapshot};
use crate::operators::PhaseState;
use crate::stepper::{run, run_to_stationary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable overriding the grid-size cap.
pub const MAX_CELLS_ENV: &str = "PFCH_MAX_CELLS";

#[derive(Debug, Parser)]
#[command(name = "pfch", version, about = "Ternary phase-field simulations with electrostatic coupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate up to t_end and check the recorded series.
    Run(RunArgs),
    /// Integrate until the chemical potential is constant per component.
    Stationary(RunArgs),
    /// Replay a saved series through the diagnostics.
    Check(CheckArgs),
    /// Taylor and stability tests of the electrostatic solution map.
    DerivativeTest(DerivativeArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides [output] dir)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "snapshot-every")]
    snapshot_every: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Series CSV written by `run` or `stationary`
    series: PathBuf,
    /// Also write the verdict file here
    #[arg(long)]
    verdict: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DerivativeArgs {
    /// Grid, permittivity and field come from this config; a 32x32 grid
    /// with default parameters otherwise
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    cases: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Error carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl std::fmt::Display) -> Self {
        Self { code: EXIT_USAGE, message: message.to_string() }
    }

    fn run(message: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CHECK_FAILED, message: message.to_string() }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, false),
        Command::Stationary(a) => cmd_run(&a, true),
        Command::Check(a) => cmd_check(&a),
        Command::DerivativeTest(a) => cmd_derivative(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message.trim_end());
            f.code
        }
    }
}

fn max_cells() -> Result<usize, Failure> {
    match std::env::var(MAX_CELLS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::usage(format!("{MAX_CELLS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(DEFAULT_MAX_CELLS),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    parse_config_with(&text, max_cells()?).map_err(Failure::usage)
}

struct RunLog(File);

impl RunLog {
    fn open(path: &Path) -> Result<Self, Failure> {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map(RunLog)
            .map_err(|e| Failure::run(format!("cannot open {}: {e}", path.display())))
    }

    fn line(&mut self, msg: &str) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let _ = writeln!(self.0, "[{t:.3}] {msg}");
    }
}

fn snapshot_of(c: &PhaseState, eval: &Evaluation) -> Snapshot {
    let g = c.grid();
    let mut s = Snapshot::new(g.nx, g.ny);
    for (name, f) in [("c_a", c.component(0)), ("c_b", c.component(1)), ("c_s", c.component(2)), ("phi", &eval.phi)] {
        s.push(name, f.values().to_vec()).expect("fields match the grid");
    }
    s
}

fn cmd_run(a: &RunArgs, stationary: bool) -> Result<i32, Failure> {
    let mut cfg = load_config(&a.config)?;
    if let Some(t) = a.t_end {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Failure::usage(format!("--t-end must be a non-negative number, got {t}")));
        }
        cfg.t_end = t;
    }
    if let Some(s) = a.seed {
        match &mut cfg.initial {
            InitialSpec::UniformPlusNoise { seed, .. } => *seed = s,
            InitialSpec::FromFile { .. } => return Err(Failure::usage("--seed needs [initial] kind = noise")),
        }
    }
    if let Some(k) = a.snapshot_every {
        cfg.output.snapshot_every = k;
    }
    if let Some(o) = &a.out {
        cfg.output.dir = o.clone();
    }
    let g: GridSpec = cfg.grid;
    let c0 = init_state(g, &cfg.initial).map_err(Failure::usage)?;
    let model = Model::new(g, cfg.params.clone(), cfg.field.cell_field(g), cfg.solve_tol).map_err(Failure::usage)?;

    let out = cfg.output.dir.clone();
    let snaps = out.join("snapshots");
    std::fs::create_dir_all(&snaps).map_err(|e| Failure::run(format!("cannot create {}: {e}", snaps.display())))?;
    let mut log = RunLog::open(&out.join("run.log"))?;
    log.line(&format!(
        "start {} on {}x{} grid, config {}",
        if stationary { "stationary" } else { "run" },
        g.nx,
        g.ny,
        a.config.display()
    ));

    let eval0 = model.evaluate(&c0, None).map_err(Failure::run)?;
    let mut series = DiagnosticsSeries::new();
    series.record(&model, 0, 0.0, &c0, &eval0, None, None);
    let mut io_error: Option<String> = None;
    let save = |name: String, c: &PhaseState, e: &Evaluation, io_error: &mut Option<String>| {
        if io_error.is_none() {
            if let Err(err) = write_snapshot(&snaps.join(name), &snapshot_of(c, e)) {
                *io_error = Some(err.to_string());
            }
        }
    };
    save("step_000000.pfch".into(), &c0, &eval0, &mut io_error);

    let every = cfg.output.series_every;
    let snap_every = cfg.output.snapshot_every;
    let mut prev = c0.clone();
    let mut last_recorded = 0;
    let mut on_step = |k: usize, t: f64, r: &crate::stepper::StepResult| {
        if k % every == 0 {
            series.record(&model, k, t, &r.state, &r.eval, Some(r), Some(&prev));
            last_recorded = k;
        }
        if snap_every > 0 && k % snap_every == 0 {
            save(format!("step_{k:06}.pfch"), &r.state, &r.eval, &mut io_error);
        }
        prev = r.state.clone();
    };

    let mut extra: Vec<CheckReport> = vec![];
    let outcome = if stationary {
        run_to_stationary(&model, &c0, &cfg.step, &cfg.stationary, &mut on_step).map(|o| {
            extra.push(CheckReport {
                name: "stationarity".into(),
                worst: o.residual,
                threshold: cfg.stationary.stat_tol,
                pass: o.converged,
                index: None,
            });
            (o.state, o.eval, o.steps, o.time)
        })
    } else {
        run(&model, &c0, &cfg.step, cfg.t_end, &mut on_step).map(|o| (o.state, o.eval, o.steps, o.time))
    };
    drop(on_step);

    let mut code = EXIT_OK;
    match outcome {
        Ok((state, eval, steps, time)) => {
            if steps > 0 && last_recorded != steps {
                // the series always ends with the final state
                series.record(&model, steps, time, &state, &eval, None, None);
            }
            save("final.pfch".into(), &state, &eval, &mut io_error);
            log.line(&format!("finished {steps} steps at t = {time}"));
            println!("{steps} steps, t = {time}, E = {:.12e}", eval.total());
        }
        Err(e) => {
            log.line(&format!("step failed: {e}"));
            eprintln!("error: {e}");
            code = EXIT_CHECK_FAILED;
        }
    }
    if let Some(e) = io_error {
        return Err(Failure::run(format!("writing snapshots failed: {e}")));
    }
    write_series(&out.join("series.csv"), &series).map_err(Failure::run)?;
    let mut checks = series_checks(&series);
    checks.extend(extra);
    let verdict = verdict_lines(&checks);
    atomic_write(&out.join("verdict.csv"), verdict.as_bytes()).map_err(Failure::run)?;
    print!("{verdict}");
    if checks.iter().any(|c| !c.pass) {
        code = EXIT_CHECK_FAILED;
    }
    log.line(&format!("exit code {code}"));
    Ok(code)
}

fn cmd_check(a: &CheckArgs) -> Result<i32, Failure> {
    let series = read_series(&a.series).map_err(|e| Failure::usage(format!("{}: {e}", a.series.display())))?;
    let checks = series_checks(&series);
    let verdict = verdict_lines(&checks);
    print!("{verdict}");
    if let Some(p) = &a.verdict {
        atomic_write(p, verdict.as_bytes()).map_err(Failure::run)?;
    }
    Ok(if checks.iter().all(|c| c.pass) { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_derivative(a: &DerivativeArgs) -> Result<i32, Failure> {
    let (grid, params, field) = match &a.config {
        Some(p) => {
            let c = load_config(p)?;
            (c.grid, c.params, c.field)
        }
        None => (
            GridSpec::unit_square(32).map_err(Failure::usage)?,
            crate::physics::ModelParams::default(),
            crate::electrostatics::FieldSpec::default(),
        ),
    };
    let e0 = field.cell_field(grid);
    let report = derivative_suite(grid, &params.permittivity, &e0, a.cases, a.seed, 1e-12).map_err(Failure::run)?;
    println!(
        "ratio window [{}, {}], stability constant {:.4e} (ratios up to 1.1x accepted)",
        TAYLOR_WINDOW.0, TAYLOR_WINDOW.1, report.stability_bound,
    );
    println!("case   ds_ratio_1  ds_ratio_2  d2s_ratio_1 d2s_ratio_2 sym_gap     stab_ratio  verdict");
    for (k, c) in report.cases.iter().enumerate() {
        println!(
            "{k:<6} {:<11.4} {:<11.4} {:<11.4} {:<11.4} {:<11.3e} {:<11.4e} {}",
            c.ds_ratios[0],
            c.ds_ratios[1],
            c.d2s_ratios[0],
            c.d2s_ratios[1],
            c.symmetry_gap,
            c.stability_ratio,
            if c.passes(report.stability_bound) { "PASS" } else { "FAIL" }
        );
    }
    Ok(if report.all_pass() { EXIT_OK } else { EXIT_CHECK_FAILED })
}
