//! Experiment sweeps: worlds x transmitters x planners x swarm sizes x
//! horizons x start policies x seeds, with CSV metrics and aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_field, GainField, TruthParams};
use crate::error::{Error, Result};
use crate::grid::{crop_world, generate_world, GenParams, Point3, UrbanWorld};
use crate::io::{self, digest, write_atomic, SCHEMA_VERSION};
use crate::kriging::{fit_model, KernelSearch, KrigingModel};
use crate::metrics::default_bin_edges;
use crate::mission::{run_mission_with, MissionConfig, MissionResult, StartPolicy};
use crate::par::{self, Exec};
use crate::planners::PlannerKind;
use crate::rng::{derive_seed, substream, FIELD, PLANNER, START, WORLD};

pub const TX_SPACING_M: f64 = 97.2;
pub const TX_ALTITUDE_M: f64 = 2.0;
pub const DEFAULT_FIT_SAMPLES: usize = 400;
pub const DEFAULT_CROP_M: f64 = 384.0;
const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Transmitters on a square lattice of pitch `spacing_m` laid over the
/// uncropped area, keeping those inside `world` and outside buildings.
pub fn transmitter_lattice(world: &UrbanWorld, spacing_m: f64, altitude_m: f64) -> Vec<Point3> {
    let g = &world.grid;
    let parent_side = world.params.as_ref().map_or(g.length_m.max(g.width_m), |p| p.side_m);
    let ox = world.offset.x as f64 * g.spacing_m;
    let oy = world.offset.y as f64 * g.spacing_m;
    let n = (parent_side / spacing_m).round().max(1.0) as usize;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let x = (i as f64 + 0.5) * spacing_m - ox;
            let y = (j as f64 + 0.5) * spacing_m - oy;
            if !(x >= 0.0 && x < g.length_m && y >= 0.0 && y < g.width_m) {
                continue;
            }
            let c = crate::grid::Cell::new((x / g.spacing_m).floor() as i32, (y / g.spacing_m).floor() as i32);
            if !world.blocked_at(c, altitude_m) {
                out.push(Point3::new(x, y, altitude_m));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    /// Path loss and kernel taken from the ground-truth parameters.
    Truth,
    /// Maximum-likelihood fit on `samples` random flight-plane measurements.
    Fit { samples: usize },
}

/// Model with the generating parameters of `truth`.
pub fn truth_model(truth: &TruthParams, distance_floor: f64) -> Result<KrigingModel> {
    KrigingModel::new(truth.alpha0, truth.beta0, truth.phi0, truth.delta0, distance_floor)
}

/// Fit a model on `samples` distinct free flight-plane cells of `field`.
pub fn fit_from_field(world: &UrbanWorld, field: &GainField, samples: usize, seed: u64) -> Result<KrigingModel> {
    let cells = world.free_cells();
    if cells.len() < samples.max(3) {
        return Err(Error::InvalidParameter(format!("{} free cells, {samples} samples requested", cells.len())));
    }
    let mut rng = substream(seed, "fit", 0);
    let data: Vec<(Point3, f64)> = sample(&mut rng, cells.len(), samples)
        .into_iter()
        .map(|i| (world.grid.uav_point(cells[i]), field.uav_gain(cells[i]).expect("cell in grid")))
        .collect();
    fit_model(&data, &field.tx, world.grid.spacing_m / 2.0, &KernelSearch::default())
}

pub fn start_label(p: &StartPolicy) -> String {
    match p {
        StartPolicy::Rectangle { side_m } => format!("rectangle_{side_m}m"),
        StartPolicy::WholeAoi => "whole_aoi".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub master_seed: u64,
    pub env: GenParams,
    /// Square crop applied to every generated world.
    pub crop_side_m: Option<f64>,
    pub worlds: usize,
    /// Keep at most this many lattice transmitters per world.
    pub transmitters_per_world: Option<usize>,
    pub tx_spacing_m: f64,
    pub tx_altitude_m: f64,
    pub truth: TruthParams,
    pub model: ModelSource,
    pub planners: Vec<PlannerKind>,
    pub n_uavs: Vec<usize>,
    pub horizons: Vec<usize>,
    pub starts: Vec<StartPolicy>,
    /// Missions per combination.
    pub seeds: usize,
    /// Template for everything not swept above.
    pub mission: MissionConfig,
    pub checkpoints: Vec<usize>,
    pub write_bundles: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            master_seed: 0,
            env: GenParams::default(),
            crop_side_m: Some(DEFAULT_CROP_M),
            worlds: 1,
            transmitters_per_world: Some(1),
            tx_spacing_m: TX_SPACING_M,
            tx_altitude_m: TX_ALTITUDE_M,
            truth: TruthParams::default(),
            model: ModelSource::Fit { samples: DEFAULT_FIT_SAMPLES },
            planners: PlannerKind::ALL.to_vec(),
            n_uavs: vec![3],
            horizons: vec![200],
            starts: vec![StartPolicy::default()],
            seeds: 5,
            // Receding entropy windows of three 6-cell moves, replanned after
            // every move and conditioned on the measurement history.
            mission: MissionConfig {
                entropy_window: Some(3),
                entropy_stride: 6,
                entropy_commit: Some(1),
                entropy_history: true,
                ..Default::default()
            },
            checkpoints: vec![0, 25, 50, 100, 150, 200],
            write_bundles: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("experiment schema_version {}", self.schema_version)));
        }
        if self.worlds == 0 || self.seeds == 0 {
            return bad("world and seed ranges must be non-empty");
        }
        if self.planners.is_empty() || self.n_uavs.is_empty() || self.horizons.is_empty() || self.starts.is_empty() {
            return bad("planner, swarm size, horizon and start lists must be non-empty");
        }
        self.env.validate()?;
        for &n in &self.n_uavs {
            for &t in &self.horizons {
                for planner in &self.planners {
                    self.mission_config(*planner, n, t, self.starts[0], 0, 0).validate()?;
                }
            }
        }
        Ok(())
    }

    fn mission_config(&self, planner: PlannerKind, n: usize, steps: usize, start: StartPolicy, start_seed: u64, planner_seed: u64) -> MissionConfig {
        MissionConfig {
            planner,
            n_uavs: n,
            steps,
            start,
            start_seed,
            planner_seed,
            checkpoints: self.checkpoints.iter().copied().filter(|c| *c <= steps).collect(),
            ..self.mission.clone()
        }
    }
}

/// Identity of one mission in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub world: usize,
    pub tx: usize,
    pub planner: PlannerKind,
    pub n_uavs: usize,
    pub steps: usize,
    pub start: StartPolicy,
    pub seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub key: RunKey,
    pub world_seed: u64,
    pub field_seed: u64,
    pub config: MissionConfig,
    pub rmse: Option<f64>,
    pub gof: Option<f64>,
    pub mean_variance: Option<f64>,
    pub measurements: usize,
    /// `(step, rmse, mean variance)` per checkpoint.
    pub curve: Vec<(usize, f64, f64)>,
    pub bins: Vec<Option<f64>>,
    pub error: Option<String>,
    pub result_digest: Option<String>,
    pub bundle: Option<PathBuf>,
    pub elapsed_s: f64,
}

/// World, transmitters, and per-transmitter field and model.
pub struct Environment {
    pub world: UrbanWorld,
    pub world_seed: u64,
    pub cases: Vec<(GainField, KrigingModel, u64)>,
}

pub fn build_environment(spec: &ExperimentSpec, w: usize) -> Result<Environment> {
    let world_seed = derive_seed(spec.master_seed, WORLD, w as u64);
    let full = generate_world(world_seed, &spec.env)?;
    let world = match spec.crop_side_m {
        Some(side) => crop_world(&full, world_seed, side)?,
        None => full,
    };
    let mut txs = transmitter_lattice(&world, spec.tx_spacing_m, spec.tx_altitude_m);
    if let Some(k) = spec.transmitters_per_world {
        txs.truncate(k);
    }
    if txs.is_empty() {
        return Err(Error::InvalidParameter(format!("world {w} has no outdoor transmitter site")));
    }
    let floor = world.grid.spacing_m / 2.0;
    let mut cases = Vec::with_capacity(txs.len());
    for (t, tx) in txs.into_iter().enumerate() {
        let field_seed = derive_seed(spec.master_seed, FIELD, ((w as u64) << 16) | t as u64);
        let field = synthesize_field(&world, tx, field_seed, spec.truth)?;
        let model = match spec.model {
            ModelSource::Truth => truth_model(&spec.truth, floor)?,
            ModelSource::Fit { samples } => fit_from_field(&world, &field, samples, field_seed)?,
        };
        cases.push((field, model, field_seed));
    }
    Ok(Environment { world, world_seed, cases })
}

/// Outcome of [`run_experiment`].
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub metrics_csv: Vec<u8>,
    pub curves_csv: Vec<u8>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Execute every run of `spec`; writes CSVs and a JSON summary under `out`
/// when given. Environments are built in parallel, then missions run in
/// parallel, each sequentially inside.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>, exec: Exec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let envs: Vec<Result<Environment>> = par::map_range(exec, spec.worlds, |w| build_environment(spec, w));
    let envs: Vec<Environment> = envs.into_iter().collect::<Result<_>>()?;
    run_environments(spec, &envs, out, exec)
}

/// Like [`run_experiment`] over given environments; `spec.worlds` and the
/// environment fields of `spec` are ignored.
pub fn run_environments(spec: &ExperimentSpec, envs: &[Environment], out: Option<&Path>, exec: Exec) -> Result<ExperimentOutput> {
    spec.validate()?;
    if envs.is_empty() {
        return Err(Error::InvalidParameter("no environments to run".into()));
    }

    let mut keys = Vec::new();
    for (w, env) in envs.iter().enumerate() {
        for tx in 0..env.cases.len() {
            for &n_uavs in &spec.n_uavs {
                for &steps in &spec.horizons {
                    for start in &spec.starts {
                        for seed in 0..spec.seeds {
                            for &planner in &spec.planners {
                                keys.push(RunKey { world: w, tx, planner, n_uavs, steps, start: *start, seed });
                            }
                        }
                    }
                }
            }
        }
    }

    let records = par::map(exec, &keys, |key| run_one(spec, &envs[key.world], key, out));
    let metrics_csv = metrics_csv(&records)?;
    let curves_csv = curves_csv(&records)?;
    if let Some(dir) = out {
        write_atomic(&dir.join("metrics.csv"), &metrics_csv)?;
        write_atomic(&dir.join("curves.csv"), &curves_csv)?;
        io::write_json(&dir.join("experiment.json"), spec)?;
        io::write_json(&dir.join("runs.json"), &records)?;
    }
    Ok(ExperimentOutput { records, metrics_csv, curves_csv })
}

fn run_one(spec: &ExperimentSpec, env: &Environment, key: &RunKey, out: Option<&Path>) -> RunRecord {
    let (field, model, field_seed) = &env.cases[key.tx];
    // Start and planner streams are shared by all planners of one seed so
    // their missions are paired.
    let stream = ((key.world as u64) << 40) | ((key.tx as u64) << 24) | key.seed as u64;
    let config = spec.mission_config(
        key.planner,
        key.n_uavs,
        key.steps,
        key.start,
        derive_seed(spec.master_seed, START, stream),
        derive_seed(spec.master_seed, PLANNER, stream),
    );
    #[derive(Serialize)]
    struct Identity<'a> {
        code: &'a str,
        key: &'a RunKey,
        world_seed: u64,
        field_seed: u64,
        config: &'a MissionConfig,
        env: &'a GenParams,
        crop: Option<f64>,
        truth: &'a TruthParams,
        model: &'a ModelSource,
        tx: Point3,
    }
    let run_id = digest(&Identity {
        code: CODE_VERSION,
        key,
        world_seed: env.world_seed,
        field_seed: *field_seed,
        config: &config,
        env: &spec.env,
        crop: spec.crop_side_m,
        truth: &spec.truth,
        model: &spec.model,
        tx: field.tx,
    })[..16]
        .to_string();

    let t0 = Instant::now();
    let result = run_mission_with(Exec::Sequential, &env.world, field, model, &config);
    let mut rec = RunRecord {
        run_id,
        key: key.clone(),
        world_seed: env.world_seed,
        field_seed: *field_seed,
        config,
        rmse: None,
        gof: None,
        mean_variance: None,
        measurements: 0,
        curve: Vec::new(),
        bins: Vec::new(),
        error: None,
        result_digest: None,
        bundle: None,
        elapsed_s: 0.0,
    };
    match result {
        Ok(r) => fill(&mut rec, &r, spec, out),
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.elapsed_s = t0.elapsed().as_secs_f64();
    rec
}

fn fill(rec: &mut RunRecord, r: &MissionResult, spec: &ExperimentSpec, out: Option<&Path>) {
    if let Some(last) = r.final_snapshot() {
        rec.rmse = Some(last.rmse);
        rec.gof = last.gof;
        rec.mean_variance = Some(last.mean_variance);
        rec.bins = last.bins.iter().map(|b| b.rmse).collect();
    }
    rec.measurements = r.log.len();
    rec.curve = r.snapshots.iter().map(|s| (s.step, s.rmse, s.mean_variance)).collect();
    rec.error = r.aborted.clone();
    rec.result_digest = Some(digest(r));
    if let (Some(dir), true) = (out, spec.write_bundles) {
        let d = dir.join("runs").join(&rec.run_id);
        match io::save_bundle(&d, r) {
            Ok(_) => rec.bundle = Some(d),
            Err(e) => rec.error = Some(e.to_string()),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

const METRIC_COLUMNS: [&str; 13] = [
    "schema_version",
    "run_id",
    "world",
    "tx",
    "planner",
    "n_uavs",
    "steps",
    "start",
    "seed",
    "rmse",
    "gof",
    "mean_variance",
    "measurements",
];

fn bin_columns() -> Vec<String> {
    default_bin_edges().windows(2).map(|w| format!("rmse_bin_{}_{}", w[0], w[1])).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(format!("csv: {e}"))
}

/// One row per run.
pub fn metrics_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = METRIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(bin_columns());
    header.push("error".into());
    w.write_record(&header).map_err(csv_err)?;
    let nb = default_bin_edges().len() - 1;
    for r in records {
        let k = &r.key;
        let mut row = vec![
            SCHEMA_VERSION.to_string(),
            r.run_id.clone(),
            k.world.to_string(),
            k.tx.to_string(),
            k.planner.to_string(),
            k.n_uavs.to_string(),
            k.steps.to_string(),
            start_label(&k.start),
            k.seed.to_string(),
            fmt_opt(r.rmse),
            fmt_opt(r.gof),
            fmt_opt(r.mean_variance),
            r.measurements.to_string(),
        ];
        row.extend((0..nb).map(|b| fmt_opt(r.bins.get(b).copied().flatten())));
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
}

/// One row per (run, checkpoint).
pub fn curves_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["schema_version", "run_id", "planner", "n_uavs", "steps", "start", "seed", "step", "rmse", "mean_variance"])
        .map_err(csv_err)?;
    for r in records {
        let k = &r.key;
        for (step, rmse, var) in &r.curve {
            w.write_record([
                SCHEMA_VERSION.to_string(),
                r.run_id.clone(),
                k.planner.to_string(),
                k.n_uavs.to_string(),
                k.steps.to_string(),
                start_label(&k.start),
                k.seed.to_string(),
                step.to_string(),
                rmse.to_string(),
                var.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
}

/// Mean and standard error of the mean; the error of a single value is 0.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub planner: String,
    pub n_uavs: usize,
    pub start: String,
    /// Horizon `T` for final-RMSE groups, checkpoint step for curve points.
    pub steps: usize,
    pub count: usize,
    pub rmse_mean: f64,
    /// 0 when `count` is 1.
    pub rmse_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub groups: Vec<GroupSummary>,
    pub curves: Vec<GroupSummary>,
    pub failed_runs: usize,
}

type GroupKey = (String, usize, String, usize);

fn summarize(groups: BTreeMap<GroupKey, Vec<f64>>) -> Vec<GroupSummary> {
    groups
        .into_iter()
        .map(|((planner, n_uavs, start, steps), v)| {
            let (rmse_mean, rmse_stderr) = mean_stderr(&v);
            GroupSummary { planner, n_uavs, start, steps, count: v.len(), rmse_mean, rmse_stderr }
        })
        .collect()
}

fn read_table(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => csv_err(e),
    })?;
    let header = r.headers().map_err(csv_err)?.clone();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_err)?;
    Ok((header, rows))
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("{}: missing column {name}", path.display())))
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T> {
    s.parse().map_err(|_| Error::Malformed(format!("{}: bad value '{s}'", path.display())))
}

/// Aggregate metrics CSVs (and sibling `curves.csv` files when present)
/// into per-(planner, N, start, T) mean and standard error of RMSE.
pub fn report(metric_files: &[PathBuf]) -> Result<Report> {
    if metric_files.is_empty() {
        return Err(Error::InvalidParameter("report needs at least one metrics CSV".into()));
    }
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let mut curves: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let mut expected: Option<csv::StringRecord> = None;
    let mut failed = 0;
    for path in metric_files {
        let (header, rows) = read_table(path)?;
        match &expected {
            Some(h) if *h != header => {
                return Err(Error::Schema(format!("{}: columns differ from the first CSV", path.display())))
            }
            _ => expected = Some(header.clone()),
        }
        let c = |n: &str| column(&header, n, path);
        let (sv, planner, n_uavs, start, steps, rmse) =
            (c("schema_version")?, c("planner")?, c("n_uavs")?, c("start")?, c("steps")?, c("rmse")?);
        for row in &rows {
            if parse::<u32>(&row[sv], path)? != SCHEMA_VERSION {
                return Err(Error::Schema(format!("{}: schema_version {}", path.display(), &row[sv])));
            }
            if row[rmse].is_empty() {
                failed += 1;
                continue;
            }
            let key = (row[planner].to_string(), parse(&row[n_uavs], path)?, row[start].to_string(), parse(&row[steps], path)?);
            groups.entry(key).or_default().push(parse(&row[rmse], path)?);
        }
        let curve_path = path.with_file_name("curves.csv");
        if curve_path.exists() {
            let (h, rows) = read_table(&curve_path)?;
            let c = |n: &str| column(&h, n, &curve_path);
            let (p, n, s, st, r) = (c("planner")?, c("n_uavs")?, c("start")?, c("step")?, c("rmse")?);
            for row in &rows {
                let key = (row[p].to_string(), parse(&row[n], &curve_path)?, row[s].to_string(), parse(&row[st], &curve_path)?);
                curves.entry(key).or_default().push(parse(&row[r], &curve_path)?);
            }
        }
    }
    Ok(Report { schema_version: SCHEMA_VERSION, groups: summarize(groups), curves: summarize(curves), failed_runs: failed })
}

/// `(planner, n_uavs, start, step, mean, stderr)` rows for plotting
/// RMSE against mission length.
pub fn plot_data_csv(report: &Report) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["planner", "n_uavs", "start", "step", "mean", "stderr"]).map_err(csv_err)?;
    for g in &report.curves {
        w.write_record([
            g.planner.clone(),
            g.n_uavs.to_string(),
            g.start.clone(),
            g.steps.to_string(),
            g.rmse_mean.to_string(),
            g.rmse_stderr.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
}
