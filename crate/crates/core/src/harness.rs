//! Configuration-driven experiments.
//!
//! A [`RunConfig`] (JSON, every field optional) names one [`Experiment`] and
//! the grids it sweeps. [`run`] executes it and writes everything under
//! `<out>/<experiment>/<timestamp>/`: result CSVs, two-column plot-data files
//! (`*.dat`, one curve per file) and a `metadata.json` that echoes the
//! configuration. Independent replications run on the current rayon pool;
//! only the calling thread writes files.
//!
//! Output root precedence: explicit argument, then `output_dir` in the file,
//! then the `D2D_COLLAB_OUT` environment variable, then `./results`.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DegreeProfile;
use crate::meanfield::{
    busy_probability, checks, degree_monotonicity_violation, recursion_residual, tail_bound_violation, MeanField,
    SolverOptions, StationaryPoint,
};
use crate::offload::{FeasibleRegion, OffloadModel, SearchOptions, SystemParams};
use crate::pricing::{queue_bound, run_horizon, write_sweep_csv, Policy, SweepRow};
use crate::rng_from_seed;
use crate::simulator::{convergence_study, mm1_mean_workload, run_simulation, GraphMode, SimConfig, SimRun};

pub const OUTPUT_ENV: &str = "D2D_COLLAB_OUT";
pub const DEFAULT_OUTPUT: &str = "results";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Busy fraction of the lowest-degree class against load, theory and simulation.
    StationarySweep,
    /// Stationary tails at one load, theory next to static and dynamic simulation.
    #[default]
    Table1,
    /// Simulated busy fraction over time for growing populations.
    ConvergenceStudy,
    /// Mean queue length against the M/M/1 baseline.
    WorkloadComparison,
    /// Delay interval, fairness region and their intersection.
    Feasibility,
    /// Utility and cost of the pricing policies against V.
    PricingSweep,
    /// Virtual-queue backlog over time under the optimal price.
    QueueTrace,
    /// Structural checks of the mean field.
    PropertySuite,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::StationarySweep,
        Experiment::Table1,
        Experiment::ConvergenceStudy,
        Experiment::WorkloadComparison,
        Experiment::Feasibility,
        Experiment::PricingSweep,
        Experiment::QueueTrace,
        Experiment::PropertySuite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::StationarySweep => "stationary_sweep",
            Experiment::Table1 => "table1",
            Experiment::ConvergenceStudy => "convergence_study",
            Experiment::WorkloadComparison => "workload_comparison",
            Experiment::Feasibility => "feasibility",
            Experiment::PricingSweep => "pricing_sweep",
            Experiment::QueueTrace => "queue_trace",
            Experiment::PropertySuite => "property_suite",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(Experiment::name).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'; valid names: {}", Self::valid_names())))
    }
}

/// Simulation settings shared by every simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub n_static: usize,
    pub n_dynamic: usize,
    pub t_end: f64,
    pub sample_every: f64,
    pub regeneration_rate: f64,
    pub late_fraction: f64,
    pub depth: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            n_static: 800,
            n_dynamic: 1000,
            t_end: 200.0,
            sample_every: 0.5,
            regeneration_rate: 1.0,
            late_fraction: 0.25,
            depth: 16,
        }
    }
}

/// Grids swept by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Collaborative loads `x_c lambda`.
    pub loads: Vec<f64>,
    pub table_load: f64,
    pub static_sizes: Vec<usize>,
    pub dynamic_sizes: Vec<usize>,
    pub v_values: Vec<f64>,
    pub slots: usize,
    pub trace_v: Vec<f64>,
    pub trace_slots: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            loads: (1..=9).map(|j| j as f64 / 10.0).collect(),
            table_load: 0.7,
            static_sizes: vec![100, 300, 800],
            dynamic_sizes: vec![100, 300, 1000],
            v_values: vec![5.0, 10.0, 20.0, 50.0, 100.0],
            slots: 100,
            trace_v: vec![5.0, 20.0, 100.0],
            trace_slots: 10_000,
        }
    }
}

/// Mean-field solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySettings {
    pub depth: usize,
    /// Residual tolerance for single stationary points.
    pub tol: f64,
    /// Residual tolerance inside sweeps.
    pub sweep_tol: f64,
    /// Random pairs / trajectories for the property suite.
    pub lipschitz_pairs: usize,
    pub dominance_pairs: usize,
    pub decay_trajectories: usize,
    pub check_horizon: f64,
}

impl Default for TheorySettings {
    fn default() -> Self {
        Self {
            depth: 16,
            tol: 1e-9,
            sweep_tol: 1e-6,
            lipschitz_pairs: 200,
            dominance_pairs: 20,
            decay_trajectories: 10,
            check_horizon: 20.0,
        }
    }
}

/// Full run description. Every field has a default, so `{}` is a valid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub params: SystemParams,
    pub profile: DegreeProfile,
    pub sim: SimSettings,
    pub sweep: SweepSettings,
    pub theory: TheorySettings,
    pub search: SearchOptions,
    pub seeds: Vec<u64>,
    /// Fixed `[x_l, x_u]` for the pricing experiments instead of searching.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        default_config()
    }
}

/// The evaluation setting with eight seeds.
pub fn default_config() -> RunConfig {
    RunConfig {
        experiment: Experiment::default(),
        params: SystemParams::default(),
        profile: DegreeProfile::uniform(6, 9).expect("valid profile"),
        sim: SimSettings::default(),
        sweep: SweepSettings::default(),
        theory: TheorySettings::default(),
        search: SearchOptions::default(),
        seeds: (0..8).collect(),
        region: None,
        output_dir: None,
    }
}

/// Reads and parses a JSON configuration; parse errors carry line and column.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

fn config_err(field: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    /// Checks every field the experiments rely on; returns warnings for
    /// settings that run but are unusual.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        self.params.validate()?;
        let p = &self.params;
        if p.lambda >= p.mu {
            warnings.push(format!("params: lambda = {} is not below mu = {}", p.lambda, p.mu));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "must not be empty"));
        }

        let s = &self.sweep;
        if s.loads.is_empty() {
            return Err(config_err("sweep.loads", "must not be empty"));
        }
        for (j, &load) in s.loads.iter().enumerate() {
            self.check_load(&format!("sweep.loads[{j}]"), load)?;
        }
        self.check_load("sweep.table_load", s.table_load)?;
        for (field, sizes) in [("sweep.static_sizes", &s.static_sizes), ("sweep.dynamic_sizes", &s.dynamic_sizes)] {
            if sizes.is_empty() {
                return Err(config_err(field, "must not be empty"));
            }
            if sizes[0] < 2 || sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(config_err(field, "must be strictly ascending and at least 2"));
            }
        }
        for (field, vs) in [("sweep.v_values", &s.v_values), ("sweep.trace_v", &s.trace_v)] {
            if vs.is_empty() {
                return Err(config_err(field, "must not be empty"));
            }
            if let Some(v) = vs.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(config_err(field, format!("V must be positive, got {v}")));
            }
        }
        if s.slots == 0 || s.trace_slots == 0 {
            return Err(config_err("sweep.slots", "horizons need at least one slot"));
        }

        let t = &self.theory;
        if !(t.tol > 0.0 && t.sweep_tol > 0.0) {
            return Err(config_err("theory.tol", "tolerances must be positive"));
        }
        if !(1..=64).contains(&t.depth) {
            return Err(config_err("theory.depth", format!("must lie in 1..=64, got {}", t.depth)));
        }
        if !(t.check_horizon > 0.0) {
            return Err(config_err("theory.check_horizon", "must be positive"));
        }
        if t.lipschitz_pairs == 0 {
            return Err(config_err("theory.lipschitz_pairs", "must be at least 1"));
        }

        for (mode, n) in [(GraphMode::Static, self.sim.n_static), (GraphMode::Dynamic, self.sim.n_dynamic)] {
            let cfg = self.sim_config(mode, n, s.table_load, self.seeds[0]);
            warnings.extend(cfg.validate().map_err(|e| config_err("sim", e))?);
        }

        if !(self.search.root_tol > 0.0 && self.search.sp_tol > 0.0) {
            return Err(config_err("search", "tolerances must be positive"));
        }
        if self.search.grid_points < 3 {
            return Err(config_err("search.grid_points", "must be at least 3"));
        }
        if let Some([lo, hi]) = self.region {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(config_err("region", format!("need 0 <= x_l < x_u <= 1, got [{lo}, {hi}]")));
            }
        }
        Ok(warnings)
    }

    fn check_load(&self, field: &str, load: f64) -> Result<()> {
        if !(load > 0.0 && load <= self.params.lambda) {
            return Err(config_err(
                field,
                format!("collaborative load must lie in (0, lambda = {}], got {load}", self.params.lambda),
            ));
        }
        let factor = 0.5 * (1.0 + self.profile.delta1()) * load / self.params.mu;
        if factor >= 1.0 {
            return Err(config_err(field, format!("load {load} has no stationary point (factor {factor:.4} >= 1)")));
        }
        Ok(())
    }

    /// Simulation config at collaborative load `load`.
    pub fn sim_config(&self, mode: GraphMode, n_users: usize, load: f64, seed: u64) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            n_users,
            mode,
            profile: self.profile.clone(),
            lambda: self.params.lambda,
            mu: self.params.mu,
            x: (1.0 - load / self.params.lambda).max(0.0),
            regeneration_rate: s.regeneration_rate,
            t_end: s.t_end,
            sample_every: s.sample_every,
            seed,
            depth: s.depth,
            late_fraction: s.late_fraction,
        }
    }

    /// Mean field at collaborative load `load`.
    pub fn model(&self, load: f64) -> Result<MeanField> {
        let p = &self.params;
        Ok(MeanField::new(self.profile.clone(), p.lambda, p.mu, load / p.lambda)?.with_depth(self.theory.depth))
    }

    /// Output root by precedence: `explicit`, the file's `output_dir`, the
    /// environment variable, then the default.
    pub fn output_root(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub experiment: Experiment,
    pub config: RunConfig,
    pub crate_version: String,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub started_at: String,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

/// Runs `config` on a dedicated pool of `workers` threads (rayon's default
/// when `None`).
pub fn run_with_workers(config: &RunConfig, out: Option<&Path>, workers: Option<usize>) -> Result<RunSummary> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(config_err("workers", "must be at least 1"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run(config, out))
}

/// Validates and executes the configured experiment.
pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunSummary> {
    let mut warnings = config.validate()?;
    let started = Instant::now();
    let now = chrono::Utc::now();
    let base = config.output_root(out).join(config.experiment.name());
    let stamp = now.format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut dir = base.join(&stamp);
    let mut suffix = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{suffix}"));
        suffix += 1;
    }
    fs::create_dir_all(&dir)?;

    let mut ctx = Ctx {
        dir: dir.clone(),
        files: Vec::new(),
        warnings: Vec::new(),
    };
    let outcome = match config.experiment {
        Experiment::StationarySweep => stationary_sweep(config, &mut ctx),
        Experiment::Table1 => table1(config, &mut ctx),
        Experiment::ConvergenceStudy => convergence(config, &mut ctx),
        Experiment::WorkloadComparison => workload(config, &mut ctx),
        Experiment::Feasibility => feasibility(config, &mut ctx),
        Experiment::PricingSweep => pricing_sweep(config, &mut ctx),
        Experiment::QueueTrace => queue_trace(config, &mut ctx),
        Experiment::PropertySuite => property_suite(config, &mut ctx),
    };
    if let Err(e) = &outcome {
        let report = serde_json::json!({ "error": e.to_string(), "warnings": ctx.warnings });
        let mut f = ctx.create("error.json")?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
    }
    warnings.append(&mut ctx.warnings);

    let mut echo = config.clone();
    echo.output_dir = Some(config.output_root(out));
    let mut files = ctx.files.clone();
    files.push("metadata.json".into());
    let meta = Metadata {
        experiment: config.experiment,
        config: echo,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seeds: config.seeds.clone(),
        workers: rayon::current_num_threads(),
        started_at: now.to_rfc3339(),
        wall_time_s: started.elapsed().as_secs_f64(),
        files: files.clone(),
        warnings: warnings.clone(),
    };
    let mut f = BufWriter::new(File::create(dir.join("metadata.json"))?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    writeln!(f)?;
    f.flush()?;

    outcome.map(|()| RunSummary { dir, files, warnings })
}

struct Ctx {
    dir: PathBuf,
    files: Vec<String>,
    warnings: Vec<String>,
}

impl Ctx {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut f = self.create(name)?;
        write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    /// Two-column plot data with a `#` header line.
    fn series(&mut self, name: &str, columns: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
        let mut f = self.create(name)?;
        writeln!(f, "# {} {}", columns.0, columns.1)?;
        for (x, y) in points {
            writeln!(f, "{x} {y}")?;
        }
        f.flush()?;
        Ok(())
    }
}

fn simulate_seeds(config: &RunConfig, mode: GraphMode, n: usize, load: f64) -> Result<Vec<SimRun>> {
    config
        .seeds
        .par_iter()
        .map(|&seed| run_simulation(&config.sim_config(mode, n, load, seed)))
        .collect()
}

/// Seed average of the late-window mean of `s_hat[k][i]`; `None` if no run
/// measured that class.
fn seed_average(runs: &[SimRun], k: usize, i: usize) -> Option<f64> {
    let values: Vec<f64> = runs.iter().filter_map(|r| r.late_window_average(k, i)).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn collect_warnings(ctx: &mut Ctx, runs: &[SimRun]) {
    for run in runs {
        for w in &run.warnings {
            let w = format!("{:?} n={} seed={}: {w}", run.config.mode, run.config.n_users, run.config.seed);
            if !ctx.warnings.contains(&w) {
                ctx.warnings.push(w);
            }
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn table1(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let load = config.sweep.table_load;
    let sp = config
        .model(load)?
        .stationary_point(SolverOptions::with_tol(config.theory.tol).cross_checked())?;
    ctx.csv("stationary_point.csv", |f| sp.write_csv(f))?;
    ctx.csv("aggregates.csv", |f| sp.write_aggregates_csv(f))?;

    let stat = simulate_seeds(config, GraphMode::Static, config.sim.n_static, load)?;
    let dynm = simulate_seeds(config, GraphMode::Dynamic, config.sim.n_dynamic, load)?;
    collect_warnings(ctx, &stat);
    collect_warnings(ctx, &dynm);

    ctx.csv("table1.csv", |f| {
        writeln!(f, "k,i,theoretical,static,dynamic,max_error")?;
        for i in 1..=2 {
            for &k in config.profile.support() {
                let theory = sp.tail(k, i).expect("k from the profile");
                let (s, d) = (seed_average(&stat, k, i), seed_average(&dynm, k, i));
                let err = [s, d].iter().flatten().map(|v| (v - theory).abs()).fold(0.0, f64::max);
                writeln!(f, "{k},{i},{theory},{},{},{err}", fmt_opt(s), fmt_opt(d))?;
            }
        }
        Ok(())
    })?;

    for (label, runs) in [("static", &stat), ("dynamic", &dynm)] {
        let first = &runs[0];
        ctx.csv(&format!("snapshots_{label}_seed{}.csv", first.config.seed), |f| first.write_snapshots_csv(f))?;
        ctx.json(&format!("snapshots_{label}_seed{}.json", first.config.seed), &first.metadata())?;
    }
    Ok(())
}

fn stationary_sweep(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let k_min = config.profile.k_min();
    let tol = SolverOptions::with_tol(config.theory.sweep_tol);
    let points: Vec<(f64, StationaryPoint)> = config
        .sweep
        .loads
        .par_iter()
        .map(|&load| Ok((load, config.model(load)?.stationary_point(tol)?)))
        .collect::<Result<_>>()?;

    let mut sim_rows = Vec::new();
    for (mode, n) in [(GraphMode::Static, config.sim.n_static), (GraphMode::Dynamic, config.sim.n_dynamic)] {
        let mut curve = Vec::new();
        for &load in &config.sweep.loads {
            let runs = simulate_seeds(config, mode, n, load)?;
            collect_warnings(ctx, &runs);
            curve.push((load, seed_average(&runs, k_min, 1)));
        }
        sim_rows.push((mode, curve));
    }

    ctx.csv("stationary_points.csv", |f| {
        writeln!(f, "load,k,i,s_star")?;
        for (load, sp) in &points {
            for (c, &k) in sp.profile.support().iter().enumerate() {
                for (i, v) in sp.state.row(c).iter().enumerate() {
                    writeln!(f, "{load},{k},{i},{v}")?;
                }
            }
        }
        Ok(())
    })?;
    ctx.csv("stationary_sweep.csv", |f| {
        writeln!(f, "load,mode,theory,simulated")?;
        for (mode, curve) in &sim_rows {
            for ((load, sim), (_, sp)) in curve.iter().zip(&points) {
                let theory = sp.tail(k_min, 1).expect("k_min in profile");
                writeln!(f, "{load},{},{theory},{}", mode_name(*mode), fmt_opt(*sim))?;
            }
        }
        Ok(())
    })?;
    let theory: Vec<(f64, f64)> = points.iter().map(|(l, sp)| (*l, sp.tail(k_min, 1).expect("k_min"))).collect();
    for ((_, curve), fig) in sim_rows.iter().zip(["fig4", "fig5"]) {
        let sim: Vec<(f64, f64)> = curve.iter().filter_map(|(l, v)| v.map(|v| (*l, v))).collect();
        ctx.series(&format!("{fig}_theory.dat"), ("load", "s_kmin_1"), &theory)?;
        ctx.series(&format!("{fig}_simulated.dat"), ("load", "s_kmin_1"), &sim)?;
    }
    Ok(())
}

fn mode_name(mode: GraphMode) -> &'static str {
    match mode {
        GraphMode::Static => "static",
        GraphMode::Dynamic => "dynamic",
    }
}

fn convergence(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let load = config.sweep.table_load;
    let k_min = config.profile.k_min();
    let sp = config
        .model(load)?
        .stationary_point(SolverOptions::with_tol(config.theory.tol))?;
    let reference = sp.tail(k_min, 1).expect("k_min in profile");

    let mut rows = Vec::new();
    for (mode, sizes, fig) in [
        (GraphMode::Static, &config.sweep.static_sizes, "fig6"),
        (GraphMode::Dynamic, &config.sweep.dynamic_sizes, "fig7"),
    ] {
        let base = config.sim_config(mode, sizes[0], load, config.seeds[0]);
        let summaries = convergence_study(&base, sizes, &config.seeds, reference)?;
        for s in &summaries {
            let len = s.series.iter().map(|(_, pts)| pts.len()).min().unwrap_or(0);
            let averaged: Vec<(f64, f64)> = (0..len)
                .map(|j| {
                    let t = s.series[0].1[j].0;
                    let v = s.series.iter().map(|(_, pts)| pts[j].1).sum::<f64>() / s.series.len() as f64;
                    (t, v)
                })
                .collect();
            ctx.series(&format!("{fig}_n{}.dat", s.n_users), ("time", "s_kmin_1"), &averaged)?;
            rows.push((mode, s.n_users, s.late_variance, s.late_deviation));
        }
        ctx.series(
            &format!("{fig}_theory.dat"),
            ("time", "s_kmin_1"),
            &[(0.0, reference), (config.sim.t_end, reference)],
        )?;
    }
    ctx.csv("convergence.csv", |f| {
        writeln!(f, "mode,n,late_variance,late_deviation,s_star")?;
        for (mode, n, var, dev) in &rows {
            writeln!(f, "{},{n},{var},{dev},{reference}", mode_name(*mode))?;
        }
        Ok(())
    })
}

fn workload(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let k_max = config.profile.k_max();
    let tol = SolverOptions::with_tol(config.theory.sweep_tol);
    let rows: Vec<(f64, f64, f64, f64)> = config
        .sweep
        .loads
        .par_iter()
        .map(|&load| {
            let sp = config.model(load)?.stationary_point(tol)?;
            let mm1 = mm1_mean_workload(load, config.params.mu)?;
            let heaviest = sp.class_workload(k_max).expect("k_max in profile");
            Ok((load, sp.mean_workload, heaviest, mm1))
        })
        .collect::<Result<_>>()?;
    ctx.csv("workload.csv", |f| {
        writeln!(f, "load,mean_workload,max_degree_workload,mm1_workload,reduction")?;
        for (load, w, h, m) in &rows {
            writeln!(f, "{load},{w},{h},{m},{}", 1.0 - w / m)?;
        }
        Ok(())
    })?;
    let pick = |g: fn(&(f64, f64, f64, f64)) -> f64| rows.iter().map(|r| (r.0, g(r))).collect::<Vec<_>>();
    ctx.series("fig8_average.dat", ("load", "workload"), &pick(|r| r.1))?;
    ctx.series("fig8_max_degree.dat", ("load", "workload"), &pick(|r| r.2))?;
    ctx.series("fig8_mm1.dat", ("load", "workload"), &pick(|r| r.3))
}

fn offload_model(config: &RunConfig) -> Result<OffloadModel> {
    OffloadModel::new(config.params.clone(), config.profile.clone())?.with_options(config.search)
}

fn feasibility(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let model = offload_model(config)?;
    let n = config.search.grid_points;
    let mut curve = Vec::with_capacity(n);
    for j in 0..n {
        let x = j as f64 / (n - 1) as f64;
        let d = model.delay_components(x)?;
        curve.push((x, d, model.fairness_gap(x)?));
    }
    ctx.csv("constraint_curves.csv", |f| {
        writeln!(f, "x,d_o,d_q,delay,gap")?;
        for (x, d, g) in &curve {
            writeln!(f, "{x},{},{},{},{g}", d.offload, d.queueing, d.total())?;
        }
        Ok(())
    })?;
    ctx.series("delay_curve.dat", ("x", "delay"), &curve.iter().map(|(x, d, _)| (*x, d.total())).collect::<Vec<_>>())?;
    ctx.series("gap_curve.dat", ("x", "gap"), &curve.iter().map(|(x, _, g)| (*x, *g)).collect::<Vec<_>>())?;
    let region = model.feasible_region()?;
    ctx.warnings.extend(region.warnings.iter().cloned());
    ctx.json("region.json", &region.report())
}

fn pricing_region(config: &RunConfig, ctx: &mut Ctx) -> Result<FeasibleRegion> {
    let region = match config.region {
        Some([lo, hi]) => FeasibleRegion::from_endpoints(lo, hi)?,
        None => {
            let r = offload_model(config)?.feasible_region()?;
            ctx.warnings.extend(r.warnings.iter().cloned());
            r
        }
    };
    ctx.json("region.json", &region.report())?;
    Ok(region)
}

fn pricing_sweep(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let region = pricing_region(config, ctx)?;
    let p = &config.params;
    let jobs: Vec<(f64, Policy)> = config
        .sweep
        .v_values
        .iter()
        .flat_map(|&v| Policy::ALL.into_iter().map(move |pol| (v, pol)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(v, policy)| {
            let traces = config
                .seeds
                .iter()
                .map(|&s| run_horizon(config.sweep.slots, v, policy, &region, p, &mut rng_from_seed(s)))
                .collect::<Result<Vec<_>>>()?;
            SweepRow::from_traces(&traces, queue_bound(v, &region, p)?)
        })
        .collect::<Result<_>>()?;
    ctx.csv("sweep.csv", |f| write_sweep_csv(&rows, f))?;
    for policy in Policy::ALL {
        let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.policy == policy).collect();
        let util: Vec<(f64, f64)> = mine.iter().map(|r| (r.v, r.avg_utility)).collect();
        let cost: Vec<(f64, f64)> = mine.iter().map(|r| (r.v, r.avg_cost)).collect();
        ctx.series(&format!("fig9_{policy}.dat"), ("V", "avg_utility"), &util)?;
        ctx.series(&format!("fig10_{policy}.dat"), ("V", "avg_cost"), &cost)?;
    }
    Ok(())
}

fn queue_trace(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let region = pricing_region(config, ctx)?;
    let p = &config.params;
    let traces = config
        .sweep
        .trace_v
        .par_iter()
        .map(|&v| {
            let trace = run_horizon(
                config.sweep.trace_slots,
                v,
                Policy::Optimal,
                &region,
                p,
                &mut rng_from_seed(config.seeds[0]),
            )?;
            Ok((trace, queue_bound(v, &region, p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ctx.csv("trace.csv", |f| {
        for (j, (t, _)) in traces.iter().enumerate() {
            t.write_csv(&mut *f, j == 0)?;
        }
        Ok(())
    })?;
    ctx.csv("queue_check.csv", |f| {
        writeln!(f, "V,max_X,bound,within_bound,avg_offload_rate,x_bar,worst_drift_slack")?;
        for (t, bound) in &traces {
            writeln!(
                f,
                "{},{},{bound},{},{},{},{}",
                t.v,
                t.max_backlog(),
                t.max_backlog() <= *bound,
                t.average_offload_rate(p.lambda),
                p.x_bar,
                t.worst_drift_slack()
            )?;
        }
        Ok(())
    })?;
    for (t, _) in &traces {
        let pts: Vec<(f64, f64)> = t.slots.iter().map(|s| (s.n as f64, s.backlog)).collect();
        ctx.series(&format!("fig11_V{}.dat", t.v), ("n", "X"), &pts)?;
    }
    Ok(())
}

/// One line of the property suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub property: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl PropertyResult {
    fn at_most(property: &str, value: f64, limit: f64) -> Self {
        Self {
            property: property.into(),
            value,
            limit,
            pass: value <= limit,
        }
    }
}

/// Structural checks of the mean field at the table load (randomised ones)
/// and across the load grid (deterministic ones).
pub fn property_checks(config: &RunConfig) -> Result<Vec<PropertyResult>> {
    let t = &config.theory;
    let tol = SolverOptions::with_tol(t.tol);
    let mut monotone: f64 = 0.0;
    let mut sandwich: f64 = 0.0;
    let mut recursion: f64 = 0.0;
    let mut busy: f64 = 0.0;
    for &load in &config.sweep.loads {
        let model = config.model(load)?;
        let sp = model.stationary_point(tol)?;
        monotone = monotone.max(degree_monotonicity_violation(&sp));
        sandwich = sandwich.max(tail_bound_violation(&model, &sp)?);
        recursion = recursion.max(recursion_residual(&sp));
        busy = busy.max((busy_probability(&sp) - load / config.params.mu).abs());
    }

    let model = config.model(config.sweep.table_load)?;
    let sp = model.stationary_point(tol)?;
    let mut rng = rng_from_seed(config.seeds[0]);
    let lipschitz = model.lipschitz_check(t.lipschitz_pairs, &mut rng)?;
    let dominance = checks::dominance(&model, t.dominance_pairs, t.check_horizon, &mut rng)?;
    let decay = checks::lyapunov_decay(&model, &sp, t.decay_trajectories, 0.5, t.check_horizon, &mut rng)?;

    Ok(vec![
        PropertyResult::at_most("degree_monotonicity_violation", monotone, 0.0),
        PropertyResult::at_most("tail_bound_violation", sandwich, 10.0 * t.tol),
        PropertyResult::at_most("recursion_residual", recursion, 1e-6),
        PropertyResult::at_most("busy_probability_error", busy, 1e-6),
        PropertyResult::at_most("lipschitz_ratio", lipschitz, model.lipschitz_constant()),
        PropertyResult::at_most("dominance_violation", dominance.worst_violation, 1e-9),
        PropertyResult::at_most("lyapunov_decay_ratio", decay.worst_ratio, 1.0),
    ])
}

fn property_suite(config: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let results = property_checks(config)?;
    for r in results.iter().filter(|r| !r.pass) {
        ctx.warnings.push(format!("property {} fails: {} > {}", r.property, r.value, r.limit));
    }
    ctx.csv("properties.csv", |f| {
        writeln!(f, "property,value,limit,pass")?;
        for r in &results {
            writeln!(f, "{},{},{},{}", r.property, r.value, r.limit, r.pass)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_evaluation_setting() {
        let c = default_config();
        assert_eq!(c.params.lambda, 0.9);
        assert!((c.params.transmit_time() - 1.6).abs() < 1e-12);
        assert!((c.profile.mean_degree() - 7.5).abs() < 1e-12);
        assert!(c.validate().unwrap().is_empty());
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(parse_config("{}").unwrap(), default_config());
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.name()));
        }
        let err = "tabel1".parse::<Experiment>().unwrap_err().to_string();
        assert!(err.contains("table1") && err.contains("property_suite"));
    }

    #[test]
    fn validation_names_fields() {
        let bad = parse_config(r#"{"sweep": {"loads": [0.5, 1.2]}}"#).unwrap();
        assert!(bad.validate().unwrap_err().to_string().contains("sweep.loads[1]"));
        let bad = parse_config(r#"{"seeds": []}"#).unwrap();
        assert!(bad.validate().unwrap_err().to_string().contains("seeds"));
        let bad = parse_config(r#"{"sim": {"t_end": -1}}"#).unwrap();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let err = parse_config("{\n  \"sweep\": {\"lods\": []}\n}").unwrap_err().to_string();
        assert!(err.contains("lods") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn output_root_precedence() {
        let mut c = default_config();
        assert_eq!(c.output_root(Some(Path::new("a"))), PathBuf::from("a"));
        c.output_dir = Some(PathBuf::from("b"));
        assert_eq!(c.output_root(None), PathBuf::from("b"));
    }
}
