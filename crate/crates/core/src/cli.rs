//! Experiment runner behind the `lcf` binary.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::driftdiffusion::{gummel_solve, postprocess_carriers, Carrier, DriftManufactured};
use crate::fem::{assemble, solve, NodalField, SolverOptions, Stabilization};
use crate::metrics::{conservation_defects, defects_csv, edge_metrics, h1_semi_error, ConservationReport, ConvergenceTable, EdgeMetrics, FluxSource, RateSign, TransientData};
use crate::mesh::TriMesh;
use crate::output::{sci, CsvTable};
use crate::postprocess::{postprocess_all, postprocess_all_transient, ElementFlux};
use crate::problems::{example1, example2, patch, Problem, CYLINDER_CENTER};
use crate::quadrature::TriangleRule;
use crate::transient::{center_of_mass, run_rotating_cylinder, snapshot_csv, total_mass};
use crate::{Error, Result};

/// Environment variable with the worker thread count.
pub const THREADS_ENV: &str = "LCF_THREADS";

/// Post-processed defects must stay below this.
pub const PP_DEFECT_TOL: f64 = 1e-10;
/// Raw defects must exceed the post-processed ones by this factor.
pub const RAW_OVER_PP: f64 = 1e3;
pub const ORDER_BAND: (f64, f64) = (0.85, 1.15);
pub const EDGE_ORDER_MIN: f64 = 0.4;

#[derive(Parser, Debug)]
#[command(name = "lcf", version, about = "Conservative flux post-processing for CGFEM/SUPG")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an experiment and write CSV tables.
    Run(RunArgs),
    /// Dump the uniform mesh (`v x y` and `t i j k` lines).
    Mesh {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Example1,
    Example2,
    Example3,
    Drift,
    Patch,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Cgfem,
    Supg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DeltaStrategy {
    /// `h/(2|v|)(coth Pe - 1/Pe)`.
    #[default]
    Coth,
    Zero,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    pub experiment: Experiment,
    /// Comma-separated mesh sizes.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Relative residual target of the linear solver.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = DeltaStrategy::Coth)]
    pub delta: DeltaStrategy,
    /// Add the discrete time derivative to the control-volume forcing
    /// instead of subtracting it.
    #[arg(long)]
    pub plus_time_derivative: bool,
    /// Time steps per revolution (example3).
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Stop after this many steps (example3).
    #[arg(long)]
    pub stop: Option<usize>,
    /// Include the largest meshes of example2 and drift.
    #[arg(long)]
    pub large: bool,
}

/// Resolved configuration of one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub sizes: Vec<usize>,
    pub mode: Mode,
    pub out: PathBuf,
    pub solver: SolverOptions,
    pub delta: DeltaStrategy,
    pub rate_sign: RateSign,
    pub steps: usize,
    pub stop: Option<usize>,
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        use Experiment::*;
        let sizes = if !args.n.is_empty() {
            args.n.clone()
        } else {
            match (args.experiment, args.large) {
                (Example1, _) => vec![10, 20, 40, 80, 160, 320],
                (Example2, false) => vec![40, 80, 160, 320],
                (Example2, true) => vec![40, 80, 160, 320, 640, 1280],
                (Example3, _) => vec![128],
                (Drift, false) => vec![80, 160, 320],
                (Drift, true) => vec![80, 160, 320, 640],
                (Patch, _) => vec![4],
            }
        };
        if sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!("mesh sizes must be positive and increasing: {sizes:?}")));
        }
        let mode = match (args.experiment, args.mode) {
            (Example2 | Example3 | Drift, Some(Mode::Cgfem)) => {
                eprintln!("{}: advection-dominated, using supg", args.experiment);
                Mode::Supg
            }
            (Example2 | Example3 | Drift, _) => Mode::Supg,
            (_, Some(m)) => m,
            (_, None) => Mode::Cgfem,
        };
        if !(args.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("solver tolerance {} must be positive", args.tol)));
        }
        Ok(Self {
            experiment: args.experiment,
            sizes,
            mode,
            out: args.out.clone(),
            solver: SolverOptions {
                tolerance: args.tol,
                ..SolverOptions::default()
            },
            delta: args.delta,
            rate_sign: if args.plus_time_derivative { RateSign::Plus } else { RateSign::Minus },
            steps: args.steps,
            stop: args.stop,
        })
    }

    pub fn stabilization(&self) -> Stabilization {
        match (self.mode, self.delta) {
            (Mode::Supg, DeltaStrategy::Coth) => Stabilization::ClassicSupg,
            _ => Stabilization::Zero,
        }
    }
}

/// Outcome of one acceptance check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Everything measured for one steady problem on one mesh.
#[derive(Clone, Debug)]
pub struct SteadyResult {
    pub n: usize,
    pub u_h: NodalField,
    pub flux: ElementFlux,
    pub raw: ConservationReport,
    pub pp: ConservationReport,
    pub h1_fem: f64,
    pub h1_pp: f64,
    pub edges: EdgeMetrics,
}

/// Solves, post-processes and measures `problem` on the uniform `n x n` mesh.
pub fn evaluate_steady(problem: &Problem, n: usize, solver: &SolverOptions) -> Result<SteadyResult> {
    let mesh = TriMesh::uniform(n)?;
    let spec = &problem.spec;
    let u_h = solve(&assemble(&mesh, spec)?, solver)?;
    let flux = postprocess_all(&mesh, &u_h, spec)?;
    let raw = conservation_defects(&mesh, FluxSource::Raw(&u_h), spec, None)?;
    let pp = conservation_defects(&mesh, FluxSource::PostProcessed { flux: &flux, u_h: &u_h }, spec, None)?;
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("{} has no exact solution", problem.name)))?;
    let rule = TriangleRule::degree5();
    let grad = |p| (exact.gradient)(p);
    let h1_fem = h1_semi_error(&mesh, &u_h.gradients(&mesh)?, &grad, &rule)?;
    let h1_pp = h1_semi_error(&mesh, &flux.grads, &grad, &rule)?;
    let edges = edge_metrics(&mesh, &flux, &u_h, spec, &|p| (exact.flux)(p))?;
    Ok(SteadyResult {
        n,
        u_h,
        flux,
        raw,
        pp,
        h1_fem,
        h1_pp,
        edges,
    })
}

/// Tables shared by the steady experiments.
#[derive(Clone, Debug)]
pub struct SteadyTables {
    pub raw: ConvergenceTable,
    pub pp: ConvergenceTable,
    pub h1: ConvergenceTable,
    pub edges: ConvergenceTable,
}

impl SteadyTables {
    fn new(prefix: &str) -> Self {
        let p = |s: &str| format!("{prefix}{s}");
        Self {
            raw: ConvergenceTable::new([p("max_abs"), p("l2")]),
            pp: ConvergenceTable::new([p("max_abs"), p("l2")]),
            h1: ConvergenceTable::new([p("h1_fem"), p("h1_pp")]),
            edges: ConvergenceTable::new([p("m1"), p("m2"), p("m3")]),
        }
    }

    fn push(&mut self, r: &SteadyResult) -> Result<()> {
        self.raw.push(r.n, vec![r.raw.max_abs, r.raw.l2])?;
        self.pp.push(r.n, vec![r.pp.max_abs, r.pp.l2])?;
        self.h1.push(r.n, vec![r.h1_fem, r.h1_pp])?;
        self.edges.push(r.n, vec![r.edges.m1, r.edges.m2, r.edges.m3])
    }

    fn write(&self, dir: &Path, suffix: &str) -> Result<()> {
        self.raw.to_csv().write(&dir.join(format!("conservation_raw{suffix}.csv")))?;
        self.pp.to_csv().write(&dir.join(format!("conservation_pp{suffix}.csv")))?;
        self.h1.to_csv().write(&dir.join(format!("h1_convergence{suffix}.csv")))?;
        self.edges.to_csv().write(&dir.join(format!("edge_metrics{suffix}.csv")))?;
        Ok(())
    }
}

fn conservation_checks(label: &str, n: usize, raw: &ConservationReport, pp: &ConservationReport, require_raw_gap: bool, checks: &mut Vec<Check>) {
    checks.push(Check::new(
        format!("{label} n={n} post-processed defect"),
        pp.max_abs <= PP_DEFECT_TOL,
        format!("max {} (limit {})", sci(pp.max_abs), sci(PP_DEFECT_TOL)),
    ));
    if require_raw_gap {
        checks.push(Check::new(
            format!("{label} n={n} raw defect gap"),
            raw.max_abs >= RAW_OVER_PP * pp.max_abs,
            format!("raw {} vs post-processed {}", sci(raw.max_abs), sci(pp.max_abs)),
        ));
    }
}

/// Orders of the last `count` refinements within `band`.
pub fn order_check(name: &str, table: &ConvergenceTable, metric: usize, count: usize, band: (f64, f64)) -> Option<Check> {
    let orders = table.orders(metric).ok()?;
    if orders.len() < count {
        return None;
    }
    let tail = &orders[orders.len() - count..];
    let ok = tail.iter().all(|o| (band.0..=band.1).contains(o));
    Some(Check::new(
        format!("{name} {} order", table.metrics[metric]),
        ok,
        format!("last orders {:?} in [{}, {}]", tail.iter().map(|o| (o * 1e3).round() / 1e3).collect::<Vec<_>>(), band.0, band.1),
    ))
}

/// Strict decrease over all meshes and an order of at least `min_order` on
/// the finest pair.
pub fn decrease_check(name: &str, table: &ConvergenceTable, metric: usize, min_order: f64) -> Option<Check> {
    if table.rows.len() < 2 {
        return None;
    }
    let col = table.column(metric);
    let decreasing = col.windows(2).all(|w| w[1] < w[0]);
    let last = table.orders(metric).ok().and_then(|o| o.last().copied()).unwrap_or(f64::NAN);
    Some(Check::new(
        format!("{name} {} decrease", table.metrics[metric]),
        decreasing && last >= min_order,
        format!("strictly decreasing: {decreasing}, finest order {last:.3} (min {min_order})"),
    ))
}

fn run_steady(cfg: &RunConfig, mut problem: Problem) -> Result<Vec<Check>> {
    problem.spec.stabilization = cfg.stabilization();
    let label = cfg.experiment.to_string();
    let mut tables = SteadyTables::new("");
    let mut checks = Vec::new();
    for &n in &cfg.sizes {
        let r = evaluate_steady(&problem, n, &cfg.solver)?;
        eprintln!(
            "{label} n={n}: raw {} pp {} h1 {} / {}",
            sci(r.raw.max_abs),
            sci(r.pp.max_abs),
            sci(r.h1_fem),
            sci(r.h1_pp)
        );
        let mesh = TriMesh::uniform(n)?;
        defects_csv(&mesh, &r.raw).write(&cfg.out.join(format!("defects_raw_n{n}.csv")))?;
        defects_csv(&mesh, &r.pp).write(&cfg.out.join(format!("defects_pp_n{n}.csv")))?;
        let patch_case = cfg.experiment == Experiment::Patch;
        conservation_checks(&label, n, &r.raw, &r.pp, !patch_case, &mut checks);
        if patch_case {
            let limit = 1e-10;
            checks.push(Check::new(
                format!("patch n={n} exactness"),
                r.raw.max_abs <= limit && r.h1_fem <= limit && r.h1_pp <= limit && r.edges.m1 <= limit && r.edges.m2 <= limit && r.edges.m3 <= limit,
                format!("raw {} h1 {} m1 {}", sci(r.raw.max_abs), sci(r.h1_fem.max(r.h1_pp)), sci(r.edges.m1)),
            ));
        }
        tables.push(&r)?;
    }
    tables.write(&cfg.out, "")?;
    if cfg.experiment != Experiment::Patch {
        let tail = if cfg.experiment == Experiment::Example1 { 2 } else { 1 };
        checks.extend((0..2).filter_map(|m| order_check(&label, &tables.h1, m, tail, ORDER_BAND)));
        checks.extend((0..3).filter_map(|m| decrease_check(&label, &tables.edges, m, EDGE_ORDER_MIN)));
    }
    Ok(checks)
}

fn run_cylinder(cfg: &RunConfig) -> Result<Vec<Check>> {
    let n = *cfg.sizes.last().expect("validated non-empty");
    let (mesh, snaps) = run_rotating_cylinder(n, cfg.steps, cfg.stop, cfg.solver)?;
    let mut spec = crate::problems::rotating_cylinder().spec;
    spec.stabilization = cfg.stabilization();
    spec.time_dependent = true;
    let dt = 2.0 * std::f64::consts::PI / cfg.steps as f64;
    let mut raw_t = CsvTable::new(["step", "time", "max_abs", "l2"]);
    let mut pp_t = CsvTable::new(["step", "time", "max_abs", "l2"]);
    let mut mass_t = CsvTable::new(["step", "time", "mass", "center_x", "center_y"]);
    let mut checks = Vec::new();
    for s in &snaps {
        snapshot_csv(&mesh, &s.field).write(&cfg.out.join(format!("snapshot_step{}.csv", s.step)))?;
        let c = center_of_mass(&mesh, &s.field);
        mass_t.push(vec![s.step.to_string(), sci(s.time), sci(total_mass(&mesh, &s.field)), sci(c.x), sci(c.y)]);
        let Some(prev) = &s.previous else { continue };
        let data = TransientData {
            u_prev: prev,
            dt,
            sign: cfg.rate_sign,
        };
        let flux = postprocess_all_transient(&mesh, &s.field, prev, dt, &spec)?;
        let raw = conservation_defects(&mesh, FluxSource::Raw(&s.field), &spec, Some(data))?;
        let pp = conservation_defects(&mesh, FluxSource::PostProcessed { flux: &flux, u_h: &s.field }, &spec, Some(data))?;
        eprintln!("example3 step {}: raw {} pp {}", s.step, sci(raw.max_abs), sci(pp.max_abs));
        raw_t.push(vec![s.step.to_string(), sci(s.time), sci(raw.max_abs), sci(raw.l2)]);
        pp_t.push(vec![s.step.to_string(), sci(s.time), sci(pp.max_abs), sci(pp.l2)]);
        conservation_checks(&format!("example3 step {}", s.step), n, &raw, &pp, true, &mut checks);
        if s.step == cfg.steps {
            let h = std::f64::consts::SQRT_2 / n as f64;
            let d = (c - CYLINDER_CENTER).norm();
            checks.push(Check::new(
                "example3 revolution return",
                d <= 2.0 * h,
                format!("center ({:.5}, {:.5}), distance {} (limit 2h = {})", c.x, c.y, sci(d), sci(2.0 * h)),
            ));
        }
    }
    raw_t.write(&cfg.out.join("conservation_raw.csv"))?;
    pp_t.write(&cfg.out.join("conservation_pp.csv"))?;
    mass_t.write(&cfg.out.join("mass.csv"))?;
    Ok(checks)
}

fn run_drift(cfg: &RunConfig) -> Result<Vec<Check>> {
    let m = DriftManufactured::default();
    let mut spec = m.spec();
    spec.solver = cfg.solver;
    spec.carrier_stabilization = cfg.stabilization();
    let u = m.density();
    let rule = TriangleRule::degree5();
    let mut checks = Vec::new();
    let carriers = [(Carrier::Electrons, "electrons"), (Carrier::Holes, "holes")];
    let mut tables = [SteadyTables::new("n_"), SteadyTables::new("p_")];
    let mut iterations = CsvTable::new(["n", "iterations", "last_increment"]);
    for &nm in &cfg.sizes {
        let mesh = TriMesh::uniform(nm)?;
        let sol = gummel_solve(&mesh, &spec)?;
        eprintln!("drift n={nm}: {} outer iterations, increment {}", sol.iterations, sci(sol.last_increment));
        iterations.push(vec![nm.to_string(), sol.iterations.to_string(), sci(sol.last_increment)]);
        let (fn_, fp) = postprocess_carriers(&mesh, &spec, &sol)?;
        let grad_psi = sol.psi.gradients(&mesh)?;
        for ((carrier, name), (flux, table)) in carriers.iter().zip([&fn_, &fp].into_iter().zip(tables.iter_mut())) {
            let cspec = spec.carrier_spec(*carrier, &grad_psi);
            let uh = sol.carrier(*carrier);
            let raw = conservation_defects(&mesh, FluxSource::Raw(uh), &cspec, None)?;
            let pp = conservation_defects(&mesh, FluxSource::PostProcessed { flux, u_h: uh }, &cspec, None)?;
            conservation_checks(&format!("drift {name}"), nm, &raw, &pp, true, &mut checks);
            let grad = |p| u.gradient(p);
            let r = SteadyResult {
                n: nm,
                u_h: uh.clone(),
                flux: flux.clone(),
                h1_fem: h1_semi_error(&mesh, &uh.gradients(&mesh)?, &grad, &rule)?,
                h1_pp: h1_semi_error(&mesh, &flux.grads, &grad, &rule)?,
                edges: edge_metrics(&mesh, flux, uh, &cspec, &|p| m.flux(*carrier, p))?,
                raw,
                pp,
            };
            table.push(&r)?;
        }
    }
    iterations.write(&cfg.out.join("gummel_iterations.csv"))?;
    for ((_, name), table) in carriers.iter().zip(&tables) {
        table.write(&cfg.out, &format!("_{name}"))?;
        // only the SUPG densities are held to the band; the recovered orders are reported
        checks.extend(order_check(&format!("drift {name}"), &table.h1, 0, 1, ORDER_BAND));
        if let Ok(o) = table.h1.orders(1) {
            eprintln!("drift {name}: post-processed H1 orders {o:.3?}");
        }
        checks.extend(decrease_check(&format!("drift {name}"), &table.edges, 0, 0.0));
    }
    Ok(checks)
}

/// Runs one experiment and returns the checks it evaluated.
pub fn run(cfg: &RunConfig) -> Result<Vec<Check>> {
    std::fs::create_dir_all(&cfg.out)?;
    match cfg.experiment {
        Experiment::Example1 => run_steady(cfg, example1()),
        Experiment::Example2 => run_steady(cfg, example2()),
        Experiment::Patch => run_steady(cfg, patch()),
        Experiment::Example3 => run_cylinder(cfg),
        Experiment::Drift => run_drift(cfg),
    }
}

/// Sizes the global rayon pool from [`THREADS_ENV`] when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    let result = match cli.command {
        Command::Mesh { n, out } => dump_mesh(n, out.as_deref()).map(|_| Vec::new()),
        Command::Run(args) => RunConfig::from_args(&args).and_then(|cfg| run(&cfg)),
    };
    match result {
        Ok(checks) => {
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dump_mesh(n: usize, out: Option<&Path>) -> Result<()> {
    let mesh = TriMesh::uniform(n)?;
    match out {
        Some(p) => mesh.write_dump(std::io::BufWriter::new(std::fs::File::create(p)?))?,
        None => mesh.write_dump(std::io::stdout().lock())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(line: &str) -> RunArgs {
        let cli = Cli::try_parse_from(line.split_whitespace()).unwrap();
        match cli.command {
            Command::Run(a) => a,
            _ => panic!("not a run command"),
        }
    }

    #[test]
    fn defaults_per_experiment() {
        let c = RunConfig::from_args(&args("lcf run example1")).unwrap();
        assert_eq!(c.sizes, vec![10, 20, 40, 80, 160, 320]);
        assert_eq!(c.mode, Mode::Cgfem);
        let c = RunConfig::from_args(&args("lcf run example2 --mode cgfem")).unwrap();
        assert_eq!(c.mode, Mode::Supg);
        assert_eq!(c.sizes.last(), Some(&320));
        let c = RunConfig::from_args(&args("lcf run example2 --large")).unwrap();
        assert_eq!(c.sizes.last(), Some(&1280));
        let c = RunConfig::from_args(&args("lcf run drift --large")).unwrap();
        assert_eq!(c.sizes, vec![80, 160, 320, 640]);
        let c = RunConfig::from_args(&args("lcf run example3 --plus-time-derivative")).unwrap();
        assert_eq!(c.rate_sign, RateSign::Plus);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(RunConfig::from_args(&args("lcf run example1 --n 20,10")).is_err());
        assert!(RunConfig::from_args(&args("lcf run example1 --n 0")).is_err());
        assert!(Cli::try_parse_from(["lcf", "run", "example9"]).is_err());
    }

    #[test]
    fn patch_run_passes() {
        let dir = std::env::temp_dir().join(format!("lcf-cli-patch-{}", std::process::id()));
        let cfg = RunConfig::from_args(&args(&format!("lcf run patch --n 2,4 --out {}", dir.display()))).unwrap();
        let checks = run(&cfg).unwrap();
        assert!(!checks.is_empty());
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
        let h1 = std::fs::read_to_string(dir.join("h1_convergence.csv")).unwrap();
        assert!(h1.starts_with("n,h,metric,value,order\n"));
        let _ = std::fs::remove_dir_all(dir);
    }
}
