//! `cauchy-maps` command-line runner.

mod config;

use cauchy_maps::estimators::{run_experiment, table_defect, ExperimentConfig, ExperimentReport, EXPERIMENTS};
use cauchy_maps::harmonic::Harmonic;
use cauchy_maps::kernel::{
    load_kernel, model_constants, mu_law, solve_type2_kernel, weights_from_nu, DisplacementLaw, KernelSpec,
    TailAnsatz, DEFAULT_K_TABLE,
};
use cauchy_maps::maps::{build_boltzmann, build_targeted, MapTarget, PlanarMap, UntargetedKernel, DEFAULT_EDGE_CAP};
use cauchy_maps::oracles::{cached_first_passage, w_total};
use cauchy_maps::parallel::{map_collect, stream, tag, with_workers};
use cauchy_maps::peeling::{default_budget, run_layers, run_uniform_fpp, trajectory_csv};
use cauchy_maps::stats::Welford;
use cauchy_maps::walks::{run_walk, sample_path, TiltedKernel};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

const EXIT_VALIDATION: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "cauchy-maps", version, about = "Random planar maps with Cauchy-type perimeter walks")]
struct Cli {
    /// Master seed; fully determines all stochastic output.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Kernel: builtin:type2, builtin:type2-closed, builtin:quad or a kernel JSON path.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or inspect displacement kernels.
    #[command(subcommand)]
    Kernel(KernelCmd),
    /// Exact first-passage tables.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Conditioned random walks.
    #[command(subcommand)]
    Walk(WalkCmd),
    /// Peeling explorations.
    #[command(subcommand)]
    Peel(PeelCmd),
    /// Boltzmann map construction.
    #[command(subcommand)]
    Map(MapCmd),
    /// Experiments with acceptance checks.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Summarise a stored experiment report.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum KernelCmd {
    /// Construct a kernel and write its JSON document.
    Build {
        /// Solve the truncated harmonicity system.
        #[arg(long, conflicts_with_all = ["closed", "quad"])]
        type2: bool,
        /// Closed-form Cauchy law.
        #[arg(long, conflicts_with = "quad")]
        closed: bool,
        /// Quadrangulation fixture.
        #[arg(long)]
        quad: bool,
        /// Dense table half-width.
        #[arg(long = "K", default_value_t = DEFAULT_K_TABLE)]
        k_table: u64,
        /// Mass at zero for the closed form.
        #[arg(long, default_value_t = 0.0)]
        q1: f64,
        /// Output path (default `<out-dir>/kernel.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print constants and harmonicity defects of `--kernel`.
    Show,
}

#[derive(Subcommand, Debug)]
enum OracleCmd {
    /// First-passage law of the μ-walk below `-depth`, cached under `CAUCHY_MAP_CACHE`.
    Build {
        #[arg(long)]
        depth: u64,
        #[arg(long)]
        horizon: u64,
    },
}

#[derive(Subcommand, Debug)]
enum WalkCmd {
    /// Sample conditioned walks.
    Sample {
        /// `up`, `down` or `down:P`.
        #[arg(long, default_value = "up", value_parser = parse_transform)]
        transform: Harmonic,
        #[arg(long, default_value_t = 1)]
        start: u64,
        /// Step budget per walk.
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long, default_value_t = 1000)]
        samples: u64,
        /// CSV dump of the first path.
        #[arg(long)]
        path_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Algo {
    Uniform,
    Layers,
}

#[derive(Subcommand, Debug)]
enum PeelCmd {
    /// Explorations from the root edge towards a face of half-degree `ell`.
    Run {
        #[arg(long)]
        ell: u64,
        #[arg(long, value_enum, default_value_t = Algo::Uniform)]
        algo: Algo,
        #[arg(long, default_value_t = 1000)]
        samples: u64,
        /// Step budget (default 50 ℓ).
        #[arg(long)]
        budget: Option<u64>,
        /// CSV trajectory of the first exploration.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MapFormat {
    Json,
    Binary,
}

#[derive(Subcommand, Debug)]
enum MapCmd {
    /// Build one Boltzmann map of perimeter `2 ell`.
    Build {
        #[arg(long)]
        ell: u64,
        #[arg(long)]
        out: PathBuf,
        /// Format (default from the extension: `.bin` is binary).
        #[arg(long, value_enum)]
        format: Option<MapFormat>,
        /// Dual graph CSV.
        #[arg(long)]
        dual: Option<PathBuf>,
        /// Target face of half-degree P (`face:P`); none by default.
        #[arg(long, value_parser = parse_face_target)]
        target: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_EDGE_CAP)]
        edge_cap: u64,
    },
}

#[derive(Subcommand, Debug)]
enum ExperimentCmd {
    /// Run one experiment, or every experiment listed in the config.
    Run(RunArgs),
    /// List experiment names.
    List,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    name: Option<String>,
    /// Grid override, comma separated.
    #[arg(long, value_delimiter = ',')]
    ells: Option<Vec<u64>>,
    #[arg(long)]
    samples: Option<u64>,
    /// Split-statistic lags, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    edge_cap: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Summary,
    Csv,
    Plot,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report JSON written by `experiment run`.
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Summary)]
    format: ReportFormat,
    /// Quantity for `--format plot`.
    #[arg(long)]
    quantity: Option<String>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Kernel(#[from] cauchy_maps::kernel::KernelError),
    #[error(transparent)]
    Oracle(#[from] cauchy_maps::oracles::OracleError),
    #[error(transparent)]
    Walk(#[from] cauchy_maps::walks::WalkError),
    #[error(transparent)]
    Peel(#[from] cauchy_maps::peeling::PeelError),
    #[error(transparent)]
    Map(#[from] cauchy_maps::maps::MapError),
    #[error(transparent)]
    Estimator(#[from] cauchy_maps::estimators::EstimatorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("acceptance failed: {0}")]
    Acceptance(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Acceptance(_) => EXIT_ACCEPTANCE,
            _ => EXIT_VALIDATION,
        }
    }
}

fn parse_transform(s: &str) -> Result<Harmonic, String> {
    match s {
        "up" => Ok(Harmonic::Up),
        "down" => Ok(Harmonic::Down),
        _ => s
            .strip_prefix("down:")
            .and_then(|p| p.parse::<u64>().ok())
            .filter(|&p| p >= 1)
            .map(Harmonic::DownP)
            .ok_or_else(|| format!("expected up, down or down:P, got {s:?}")),
    }
}

fn parse_face_target(s: &str) -> Result<u64, String> {
    s.strip_prefix("face:")
        .and_then(|p| p.parse::<u64>().ok())
        .filter(|&p| p >= 1)
        .ok_or_else(|| format!("expected face:P, got {s:?}"))
}

/// Resolved global settings.
struct Ctx {
    seed: u64,
    workers: usize,
    kernel_spec: String,
    out_dir: PathBuf,
    run: RunConfig,
}

impl Ctx {
    fn kernel(&self) -> Result<Arc<DisplacementLaw>, CliError> {
        resolve_kernel(&self.kernel_spec)
    }

    fn ensure_out_dir(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }
}

/// Built-in solver output is cached as JSON under `CAUCHY_MAP_CACHE` when set.
fn resolve_kernel(spec: &str) -> Result<Arc<DisplacementLaw>, CliError> {
    let spec: KernelSpec = spec.parse()?;
    if spec == KernelSpec::Type2 {
        if let Some(dir) = std::env::var_os("CAUCHY_MAP_CACHE").map(PathBuf::from) {
            let path = dir.join(format!("kernel-type2-K{DEFAULT_K_TABLE}.json"));
            if let Ok(law) = DisplacementLaw::load_json(&path) {
                return Ok(Arc::new(law));
            }
            let law = load_kernel(&spec)?;
            std::fs::create_dir_all(&dir)?;
            law.save_json(&path)?;
            return Ok(law);
        }
    }
    Ok(load_kernel(&spec)?)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn welford_json(w: &Welford) -> serde_json::Value {
    json!({ "mean": w.mean, "sem": w.sem(), "n": w.n })
}

fn kernel_cmd(ctx: &Ctx, cmd: KernelCmd) -> Result<(), CliError> {
    match cmd {
        KernelCmd::Build { type2: _, closed, quad, k_table, q1, out } => {
            let (law, solve) = if quad {
                (DisplacementLaw::quadrangulation(k_table)?, None)
            } else if closed {
                (DisplacementLaw::cauchy_closed_form(q1, k_table)?, None)
            } else {
                let (law, report) = solve_type2_kernel(k_table, TailAnsatz { q1, ..TailAnsatz::default() })?;
                (law, Some(report))
            };
            let path = match out {
                Some(p) => p,
                None => ctx.ensure_out_dir()?.join("kernel.json"),
            };
            law.save_json(&path)?;
            let validation = law.validate(1000.min(k_table), 1e-8);
            print_json(&json!({
                "path": path,
                "checksum": law.checksum(),
                "K_table": law.k_table(),
                "solve": solve,
                "validation": validation,
                "tutte_defect": table_defect(&law),
            }));
            if !validation.passed {
                return Err(CliError::Validation("harmonicity defect above 1e-8".into()));
            }
            Ok(())
        }
        KernelCmd::Show => {
            let law = ctx.kernel()?;
            let validation = law.validate(1000.min(law.k_table()), 1e-8);
            print_json(&json!({
                "kernel": ctx.kernel_spec,
                "checksum": law.checksum(),
                "K_table": law.k_table(),
                "constants": model_constants(&law, &[0.05]).ok(),
                "validation": validation,
                "tutte_defect": table_defect(&law),
            }));
            Ok(())
        }
    }
}

fn oracle_cmd(ctx: &Ctx, cmd: OracleCmd) -> Result<(), CliError> {
    let OracleCmd::Build { depth, horizon } = cmd;
    let law = ctx.kernel()?;
    let mu = mu_law(&weights_from_nu(&law)?.0)?;
    let table = cached_first_passage(&mu, depth, horizon)?;
    let c_q = 2.0 / law.pmf(-1);
    let w = if depth >= 2 { w_total(&table, c_q, depth - 1, 1e-3).ok() } else { None };
    print_json(&json!({
        "depth": table.k,
        "horizon": table.n_max,
        "mass": table.probs.iter().sum::<f64>(),
        "tail_mass": table.tail_mass,
        "partition_function": w,
        "cache": std::env::var_os("CAUCHY_MAP_CACHE").map(PathBuf::from),
    }));
    Ok(())
}

fn walk_cmd(ctx: &Ctx, cmd: WalkCmd) -> Result<(), CliError> {
    let WalkCmd::Sample { transform, start, steps, samples, path_out } = cmd;
    let law = ctx.kernel()?;
    let kernel = TiltedKernel::new(law, transform);
    let t = tag("cli/walk");
    let out = with_workers(ctx.workers, || {
        map_collect(samples, |i| run_walk(&kernel, start, steps, &mut stream(ctx.seed, t, i), |_, _| {}))
    });
    let (mut tau, mut last, mut died) = (Welford::default(), Welford::default(), 0u64);
    for s in out {
        let s = s?;
        if let Some(n) = s.tau {
            died += 1;
            tau.push(n as f64);
        }
        last.push(s.last_state as f64);
    }
    if let Some(p) = path_out {
        let path = sample_path(&kernel, start, steps, &mut stream(ctx.seed, t, 0))?;
        std::fs::write(p, path.to_csv())?;
    }
    print_json(&json!({
        "seed": ctx.seed,
        "transform": format!("{transform:?}"),
        "start": start,
        "samples": samples,
        "died": died,
        "tau": welford_json(&tau),
        "last_state": welford_json(&last),
    }));
    Ok(())
}

fn peel_cmd(ctx: &Ctx, cmd: PeelCmd) -> Result<(), CliError> {
    let PeelCmd::Run { ell, algo, samples, budget, trajectory } = cmd;
    let law = ctx.kernel()?;
    let kernel = TiltedKernel::new(law, Harmonic::DownP(ell));
    let budget = budget.unwrap_or_else(|| default_budget(ell));
    let t = tag("cli/peel");
    let run = |i: u64, record: bool| {
        let mut rng = stream(ctx.seed, t, i);
        match algo {
            Algo::Uniform => run_uniform_fpp(&kernel, ell, budget, &mut rng, record),
            Algo::Layers => run_layers(&kernel, ell, budget, &mut rng, record),
        }
    };
    let out = with_workers(ctx.workers, || map_collect(samples, |i| run(i, false)));
    let (mut tau, mut fpp, mut rb, mut gr, mut flagged) =
        (Welford::default(), Welford::default(), Welford::default(), Welford::default(), 0u64);
    for e in out {
        let e = e?;
        match e.tau {
            Some(n) => {
                tau.push(n as f64);
                fpp.push(e.d_fpp);
                rb.push(e.rb_mean);
                if let Some(d) = e.d_gr {
                    gr.push(d as f64);
                }
            }
            None => flagged += 1,
        }
    }
    if let Some(p) = trajectory {
        std::fs::write(p, trajectory_csv(&run(0, true)?.trajectory))?;
    }
    let mut v = json!({
        "seed": ctx.seed,
        "ell": ell,
        "algo": format!("{algo:?}").to_lowercase(),
        "samples": samples,
        "flagged": flagged,
        "tau": welford_json(&tau),
    });
    match algo {
        Algo::Uniform => {
            v["d_fpp"] = welford_json(&fpp);
            v["d_fpp_rao_blackwell"] = welford_json(&rb);
        }
        Algo::Layers => v["d_gr"] = welford_json(&gr),
    }
    print_json(&v);
    Ok(())
}

fn map_cmd(ctx: &Ctx, cmd: MapCmd) -> Result<(), CliError> {
    let MapCmd::Build { ell, out, format, dual, target, edge_cap } = cmd;
    let law = ctx.kernel()?;
    let untargeted = UntargetedKernel::new(law.clone());
    let mut rng = stream(ctx.seed, tag("cli/map"), ell);
    let map: PlanarMap = match target {
        None => build_boltzmann(&untargeted, ell, &mut rng, edge_cap)?,
        Some(p) => {
            let tilted = TiltedKernel::new(law.clone(), Harmonic::DownP(p));
            build_targeted(&tilted, &untargeted, ell, &mut rng, edge_cap, default_budget(p.max(ell)) * 100)?
        }
    };
    map.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let binary = match format {
        Some(MapFormat::Binary) => true,
        Some(MapFormat::Json) => false,
        None => out.extension().is_some_and(|e| e == "bin"),
    };
    if binary {
        map.write_binary(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
    } else {
        map.write_json(&out)?;
    }
    if let Some(d) = dual {
        std::fs::write(d, map.dual_csv())?;
    }
    let target = match map.target() {
        Some(MapTarget::Face(f)) => json!({ "face": f }),
        Some(MapTarget::Vertex(h)) => json!({ "vertex_half_edge": h }),
        None => serde_json::Value::Null,
    };
    print_json(&json!({
        "seed": ctx.seed,
        "ell": ell,
        "path": out,
        "V": map.vertices(),
        "E": map.edges(),
        "F": map.faces(),
        "target": target,
        "tv_bound": (table_defect(&law) * map.edges() as f64).min(1.0),
    }));
    Ok(())
}

fn experiment_config(ctx: &Ctx, name: &str, args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::defaults(name)?;
    let run = &ctx.run;
    cfg.seed = ctx.seed;
    if let Some(g) = args.ells.clone().or_else(|| run.ells.clone()) {
        cfg.grid = g;
    }
    if let Some(s) = args.samples.or(run.samples) {
        cfg.samples = s;
    }
    if let Some(e) = args.eps.clone().or_else(|| run.eps.clone()) {
        cfg.eps = e;
    }
    if let Some(c) = args.edge_cap.or(run.edge_cap) {
        cfg.edge_cap = c;
    }
    if let Some(b) = &run.bands {
        cfg.bands = b.clone();
    }
    if cfg.grid.contains(&0) {
        return Err(CliError::Validation("grid values must be positive".into()));
    }
    Ok(cfg)
}

fn write_report(dir: &Path, report: &ExperimentReport, seconds: f64) -> Result<(), CliError> {
    let name = &report.experiment;
    std::fs::write(dir.join(format!("{name}.json")), report.to_json())?;
    std::fs::write(dir.join(format!("{name}.csv")), report.to_csv())?;
    std::fs::write(
        dir.join(format!("{name}.timing.json")),
        serde_json::to_string_pretty(&json!({ "experiment": name, "wall_clock_s": seconds }))?,
    )?;
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    for q in report.quantities() {
        std::fs::write(plots.join(format!("{name}.{q}.csv")), report.plot_data(&q))?;
    }
    Ok(())
}

fn experiment_cmd(ctx: &Ctx, cmd: ExperimentCmd) -> Result<(), CliError> {
    let args = match cmd {
        ExperimentCmd::List => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            return Ok(());
        }
        ExperimentCmd::Run(a) => a,
    };
    let names: Vec<String> = match &args.name {
        Some(n) => vec![n.clone()],
        None if !ctx.run.experiments.is_empty() => ctx.run.experiments.clone(),
        None => return Err(CliError::Validation("no experiment given (--name or config `experiments`)".into())),
    };
    for n in &names {
        if !EXPERIMENTS.contains(&n.as_str()) {
            return Err(CliError::Validation(format!("unknown experiment {n:?}")));
        }
    }
    let law = ctx.kernel()?;
    let dir = ctx.ensure_out_dir()?.to_path_buf();
    let mut failed = Vec::new();
    for name in &names {
        let cfg = experiment_config(ctx, name, &args)?;
        let start = Instant::now();
        let report = with_workers(ctx.workers, || run_experiment(name, &cfg, &ctx.kernel_spec, law.clone()))?;
        write_report(&dir, &report, start.elapsed().as_secs_f64())?;
        print!("{}", report.to_csv());
        for c in &report.checks {
            eprintln!("{} {} = {:.6e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
            if !c.pass {
                failed.push(format!("{name}/{}", c.name));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(failed.join(", ")))
    }
}

fn report_cmd(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input)?;
    let report: ExperimentReport = serde_json::from_str(&text)?;
    match args.format {
        ReportFormat::Csv => print!("{}", report.to_csv()),
        ReportFormat::Plot => {
            let q = args
                .quantity
                .ok_or_else(|| CliError::Validation("--format plot needs --quantity".into()))?;
            print!("{}", report.plot_data(&q));
        }
        ReportFormat::Summary => {
            println!(
                "{} seed={} kernel={} checksum={} flagged={}",
                report.experiment, report.seed, report.kernel, report.kernel_checksum, report.flagged
            );
            for c in &report.checks {
                let lo = c.lower.map(|x| format!("{x:e}")).unwrap_or_else(|| "-inf".into());
                let hi = c.upper.map(|x| format!("{x:e}")).unwrap_or_else(|| "inf".into());
                println!("{} {} {:e} in [{lo}, {hi}]", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
            }
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!("{} has failing checks", report.experiment)))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let run = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(run.seed).unwrap_or(0),
        workers: cli.workers.or(run.workers).unwrap_or(0),
        kernel_spec: cli.kernel.clone().or_else(|| run.kernel.clone()).unwrap_or_else(|| "builtin:type2".into()),
        out_dir: cli.out_dir.clone().or_else(|| run.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out")),
        run,
    };
    match cli.command {
        Command::Kernel(c) => kernel_cmd(&ctx, c),
        Command::Oracle(c) => oracle_cmd(&ctx, c),
        Command::Walk(c) => walk_cmd(&ctx, c),
        Command::Peel(c) => peel_cmd(&ctx, c),
        Command::Map(c) => map_cmd(&ctx, c),
        Command::Experiment(c) => experiment_cmd(&ctx, c),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!();
            let _ = Cli::command().print_help();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
