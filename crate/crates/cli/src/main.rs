//! `gainscout`: generate synthetic environments, fit models, run planner
//! sweeps and aggregate their metrics.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gainscout::channel::{synthesize_field, TruthParams};
use gainscout::experiment::{
    self, fit_from_field, plot_data_csv, report, run_environments, run_experiment, transmitter_lattice, truth_model,
    Environment, ExperimentOutput, ExperimentSpec, ModelSource,
};
use gainscout::grid::{crop_world, generate_world, GenParams, Point3};
use gainscout::io::{self, read_json, write_atomic, write_json};
use gainscout::mission::StartPolicy;
use gainscout::par::{self, Exec};
use gainscout::planners::PlannerKind;
use gainscout::{Error, Result};

const JOBS_ENV: &str = "GAINSCOUT_JOBS";

#[derive(Parser, Debug)]
#[command(name = "gainscout", version, about = "Active channel-gain mapping with UAV swarms")]
struct Cli {
    /// Root directory; every relative path is resolved against it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (0 = all cores). GAINSCOUT_JOBS takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate urban worlds, one JSON file per seed.
    GenEnv(GenEnvArgs),
    /// Synthesize a ground-truth gain field for a world.
    GenField(GenFieldArgs),
    /// Fit a Kriging model to samples of a field.
    Fit(FitArgs),
    /// Run a planner sweep and write metrics.
    Run(Box<RunArgs>),
    /// Aggregate metrics CSVs into mean and standard error per group.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenEnvArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of worlds (consecutive seeds).
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Square crop side in meters; 0 keeps the full world.
    #[arg(long, default_value_t = experiment::DEFAULT_CROP_M)]
    crop: f64,
    /// JSON file with generator parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory for the world files.
    #[arg(long, default_value = "worlds")]
    dir: PathBuf,
}

#[derive(Args, Debug)]
struct GenFieldArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Index into the world's transmitter lattice.
    #[arg(long, default_value_t = 0, conflicts_with = "tx")]
    tx_index: usize,
    /// Explicit transmitter position `x,y,z` in meters.
    #[arg(long, value_parser = parse_point)]
    tx: Option<Point3>,
    /// JSON file with ground-truth parameters.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value_t = experiment::DEFAULT_FIT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the generating parameters of the field instead of fitting.
    #[arg(long)]
    truth: bool,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StartArg {
    Rectangle,
    Whole,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment spec (JSON). Other sweep flags override its fields.
    #[arg(long, conflicts_with_all = ["world", "field", "model"])]
    spec: Option<PathBuf>,
    /// World file; requires --field and --model.
    #[arg(long, requires_all = ["field", "model"])]
    world: Option<PathBuf>,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Mission template (JSON) for file-based runs.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Generated worlds (inline generation only).
    #[arg(long)]
    worlds: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    planners: Option<Vec<PlannerKind>>,
    #[arg(long, value_delimiter = ',')]
    n_uavs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    start: Option<Vec<StartArg>>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    /// Greedy warmup steps.
    #[arg(long)]
    warmup: Option<usize>,
    /// Greedy replanning period.
    #[arg(long)]
    replan: Option<usize>,
    /// Use the generating parameters instead of a fitted model.
    #[arg(long)]
    truth_model: bool,
    /// Also write plan, log, posterior and snapshot files per run.
    #[arg(long)]
    bundles: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Metrics CSV files.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// Write `(planner, n_uavs, start, step, mean, stderr)` rows here.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Write the full report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_point(s: &str) -> std::result::Result<Point3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Point3::new(x, y, z)),
        _ => Err("expected x,y,z".into()),
    }
}

struct Ctx {
    root: PathBuf,
    exec: Exec,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

fn jobs(flag: usize) -> usize {
    std::env::var(JOBS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(flag)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = jobs(cli.jobs);
    let ctx = Ctx { root: cli.out, exec: if jobs == 1 { Exec::Sequential } else { Exec::Parallel } };
    match par::with_jobs(jobs, || dispatch(&ctx, cli.cmd)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(ctx: &Ctx, cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenEnv(a) => gen_env(ctx, a),
        Command::GenField(a) => gen_field(ctx, a),
        Command::Fit(a) => fit(ctx, a),
        Command::Run(a) => run(ctx, *a),
        Command::Report(a) => cmd_report(ctx, a),
    }
}

fn gen_env(ctx: &Ctx, a: GenEnvArgs) -> Result<ExitCode> {
    let params: GenParams = match &a.params {
        Some(p) => read_json(&ctx.path(p))?,
        None => GenParams::default(),
    };
    params.validate()?;
    let dir = ctx.path(&a.dir);
    let seeds: Vec<u64> = (0..a.count).map(|i| a.seed + i).collect();
    let written = par::map(ctx.exec, &seeds, |&seed| -> Result<PathBuf> {
        let full = generate_world(seed, &params)?;
        let world = if a.crop > 0.0 { crop_world(&full, seed, a.crop)? } else { full };
        let path = dir.join(format!("world_{seed}.json"));
        io::save_world(&path, &world)?;
        Ok(path)
    });
    for p in written {
        println!("{}", p?.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_field(ctx: &Ctx, a: GenFieldArgs) -> Result<ExitCode> {
    let world = io::load_world(&ctx.path(&a.world))?;
    let truth: TruthParams = match &a.truth {
        Some(p) => read_json(&ctx.path(p))?,
        None => TruthParams::default(),
    };
    let tx = match a.tx {
        Some(p) => p,
        None => {
            let sites = transmitter_lattice(&world, experiment::TX_SPACING_M, experiment::TX_ALTITUDE_M);
            *sites.get(a.tx_index).ok_or_else(|| {
                Error::InvalidParameter(format!("transmitter index {} of {} lattice sites", a.tx_index, sites.len()))
            })?
        }
    };
    let field = synthesize_field(&world, tx, a.seed, truth)?;
    let out = ctx.path(&a.output);
    io::save_field(&out, &field)?;
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn fit(ctx: &Ctx, a: FitArgs) -> Result<ExitCode> {
    let world = io::load_world(&ctx.path(&a.world))?;
    let field = io::load_field(&ctx.path(&a.field))?;
    if field.grid != world.grid {
        return Err(Error::InvalidParameter("field and world grids differ".into()));
    }
    let model = if a.truth {
        truth_model(&field.truth, world.grid.spacing_m / 2.0)?
    } else {
        fit_from_field(&world, &field, a.samples, a.seed)?
    };
    let out = ctx.path(&a.output);
    io::save_model(&out, &model)?;
    println!(
        "{}: alpha {:.3} beta {:.3} phi {:.3} delta {:.3}",
        out.display(),
        model.alpha,
        model.beta,
        model.phi,
        model.delta
    );
    Ok(ExitCode::SUCCESS)
}

fn apply_overrides(spec: &mut ExperimentSpec, a: &RunArgs) {
    if let Some(s) = a.master_seed {
        spec.master_seed = s;
    }
    if let Some(w) = a.worlds {
        spec.worlds = w;
    }
    if let Some(s) = a.seeds {
        spec.seeds = s;
    }
    if let Some(p) = &a.planners {
        spec.planners = p.clone();
    }
    if let Some(n) = &a.n_uavs {
        spec.n_uavs = n.clone();
    }
    if let Some(t) = &a.steps {
        spec.horizons = t.clone();
    }
    if let Some(s) = &a.start {
        spec.starts = s
            .iter()
            .map(|s| match s {
                StartArg::Rectangle => StartPolicy::default(),
                StartArg::Whole => StartPolicy::WholeAoi,
            })
            .collect();
    }
    if let Some(c) = &a.checkpoints {
        spec.checkpoints = c.clone();
    }
    if let Some(w) = a.warmup {
        spec.mission.warmup_steps = w;
    }
    if let Some(r) = a.replan {
        spec.mission.replan_period = r;
    }
    if a.truth_model {
        spec.model = ModelSource::Truth;
    }
    if a.bundles {
        spec.write_bundles = true;
    }
}

fn run(ctx: &Ctx, a: RunArgs) -> Result<ExitCode> {
    let mut spec: ExperimentSpec = match &a.spec {
        Some(p) => read_json(&ctx.path(p))?,
        None => ExperimentSpec::default(),
    };
    if let Some(c) = &a.config {
        spec.mission = io::load_mission_config(&ctx.path(c))?;
    }
    apply_overrides(&mut spec, &a);
    let root = ctx.root.as_path();
    let output = match (&a.world, &a.field, &a.model) {
        (Some(w), Some(f), Some(m)) => {
            let world = io::load_world(&ctx.path(w))?;
            let field = io::load_field(&ctx.path(f))?;
            let model = io::load_model(&ctx.path(m))?;
            if field.grid != world.grid {
                return Err(Error::InvalidParameter("field and world grids differ".into()));
            }
            spec.worlds = 1;
            let env = Environment { world_seed: world.seed.unwrap_or(0), cases: vec![(field.clone(), model, field.seed)], world };
            run_environments(&spec, &[env], Some(root), ctx.exec)?
        }
        _ => run_experiment(&spec, Some(root), ctx.exec)?,
    };
    summarize_run(ctx, &output)
}

fn summarize_run(ctx: &Ctx, output: &ExperimentOutput) -> Result<ExitCode> {
    for r in &output.records {
        match (&r.error, r.rmse) {
            (Some(e), _) => eprintln!("run {} ({} seed {}) failed: {e}", r.run_id, r.key.planner, r.key.seed),
            (None, Some(rmse)) => println!("{} {} seed {} rmse {rmse:.3}", r.run_id, r.key.planner, r.key.seed),
            (None, None) => {}
        }
    }
    println!("{} runs, metrics in {}", output.records.len(), ctx.root.join("metrics.csv").display());
    if output.failures() > 0 {
        eprintln!("{} of {} runs failed", output.failures(), output.records.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(ctx: &Ctx, a: ReportArgs) -> Result<ExitCode> {
    let files: Vec<PathBuf> = a.metrics.iter().map(|p| ctx.path(p)).collect();
    let rep = report(&files)?;
    println!("{:<16} {:>3} {:<16} {:>5} {:>4} {:>9} {:>8}", "planner", "N", "start", "T", "n", "rmse", "stderr");
    for g in &rep.groups {
        println!(
            "{:<16} {:>3} {:<16} {:>5} {:>4} {:>9.4} {:>8.4}",
            g.planner, g.n_uavs, g.start, g.steps, g.count, g.rmse_mean, g.rmse_stderr
        );
    }
    if rep.failed_runs > 0 {
        println!("{} failed runs excluded", rep.failed_runs);
    }
    if let Some(p) = &a.plot_data {
        write_atomic(&ctx.path(p), &plot_data_csv(&rep)?)?;
    }
    if let Some(p) = &a.json {
        write_json(&ctx.path(p), &rep)?;
    }
    Ok(ExitCode::SUCCESS)
}
