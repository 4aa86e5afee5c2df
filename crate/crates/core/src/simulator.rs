//! Event-driven N-user Po2 simulation.
//!
//! Every user generates tasks at rate `lambda`. A task is offloaded with
//! probability `x` and leaves at once; otherwise the generator polls one
//! uniformly random current neighbour and the task joins the strictly shorter
//! of the two queues (fair coin on ties, own queue when there is no
//! neighbour). Each nonempty queue serves at rate `mu`. In dynamic mode the
//! whole topology is regenerated at `regeneration_rate`.
//!
//! All timers are exponential and live in one priority queue. A user's
//! service timer exists exactly while its queue is nonempty, so no timer ever
//! goes stale. Random draws happen in a fixed order (topology first, then
//! initial timers in user order, then events) so a seed pins the whole run.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{build_configuration_graph, DegreeProfile, DynamicGraphModel, Graph};
use crate::meanfield::{MeanField, SolverOptions};
use crate::{rng_from_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Static,
    Dynamic,
}

fn default_regeneration_rate() -> f64 {
    1.0
}

fn default_depth() -> usize {
    16
}

fn default_late_fraction() -> f64 {
    0.25
}

/// One simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_users: usize,
    pub mode: GraphMode,
    pub profile: DegreeProfile,
    pub lambda: f64,
    pub mu: f64,
    /// Offloading probability; `1 - x` of the tasks go through Po2.
    pub x: f64,
    #[serde(default = "default_regeneration_rate")]
    pub regeneration_rate: f64,
    pub t_end: f64,
    pub sample_every: f64,
    pub seed: u64,
    /// Rows `i = 0..=depth` are measured.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Trailing share of the horizon used for steady-state averages.
    #[serde(default = "default_late_fraction")]
    pub late_fraction: f64,
}

impl SimConfig {
    /// Evaluation defaults: 800 users on a static graph, uniform degrees
    /// 6..=9, `lambda = 0.9`, `mu = 1`, horizon 200.
    pub fn evaluation(x: f64, seed: u64) -> Self {
        Self {
            n_users: 800,
            mode: GraphMode::Static,
            profile: DegreeProfile::uniform(6, 9).expect("valid profile"),
            lambda: 0.9,
            mu: 1.0,
            x,
            regeneration_rate: 1.0,
            t_end: 200.0,
            sample_every: 0.5,
            seed,
            depth: 16,
            late_fraction: 0.25,
        }
    }

    pub fn collaborative_load(&self) -> f64 {
        (1.0 - self.x) * self.lambda
    }

    /// Rejects unusable settings; returns warnings for settings that run but
    /// have no steady state.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n_users < 2 {
            return Err(invalid(format!("n_users must be at least 2, got {}", self.n_users)));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.x) {
            return Err(invalid(format!("x must lie in [0, 1], got {}", self.x)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.sample_every.is_finite() && self.sample_every > 0.0) {
            return Err(invalid(format!("sample_every must be positive, got {}", self.sample_every)));
        }
        if self.mode == GraphMode::Dynamic && !(self.regeneration_rate.is_finite() && self.regeneration_rate > 0.0) {
            return Err(invalid("regeneration_rate must be positive in dynamic mode"));
        }
        if !(self.late_fraction > 0.0 && self.late_fraction <= 1.0) {
            return Err(invalid(format!("late_fraction must lie in (0, 1], got {}", self.late_fraction)));
        }
        let mut warnings = Vec::new();
        if self.lambda >= self.mu {
            warnings.push(format!("lambda = {} is not below mu = {}", self.lambda, self.mu));
        }
        if self.collaborative_load() >= self.mu {
            warnings.push(format!(
                "collaborative load (1-x) lambda = {} is not below mu = {}; queues grow without bound",
                self.collaborative_load(),
                self.mu
            ));
        }
        Ok(warnings)
    }
}

/// Empirical tails at one sample time, grouped by degree class.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSnapshot {
    pub time: f64,
    /// Degree values of the measured classes, ascending (realized degree on
    /// static graphs, expected degree on dynamic ones).
    pub classes: Vec<usize>,
    pub class_sizes: Vec<usize>,
    /// `s_hat[c][i]` for `i = 0..=depth`.
    pub s_hat: Vec<Vec<f64>>,
    pub offload_count: u64,
}

impl SimSnapshot {
    pub fn tail(&self, degree: usize, i: usize) -> Option<f64> {
        let c = self.classes.binary_search(&degree).ok()?;
        self.s_hat[c].get(i).copied()
    }
}

/// Task accounting at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub generated: u64,
    pub offloaded: u64,
    /// Tasks that joined the polled neighbour's queue.
    pub forwarded: u64,
    pub completed: u64,
    pub in_queue: u64,
}

impl TaskCounts {
    pub fn is_conserved(&self) -> bool {
        self.generated == self.offloaded + self.completed + self.in_queue
    }
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub config: SimConfig,
    pub snapshots: Vec<SimSnapshot>,
    pub counts: TaskCounts,
    pub warnings: Vec<String>,
    /// Connected components of the (initial) topology.
    pub component_count: usize,
    pub regenerations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrival(usize),
    Service(usize),
    Regenerate,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Timers {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl Timers {
    fn schedule<R: Rng + ?Sized>(&mut self, now: f64, rate: f64, kind: EventKind, rng: &mut R) {
        let wait: f64 = rng.sample::<f64, _>(Exp1) / rate;
        self.seq += 1;
        self.heap.push(Event {
            time: now + wait,
            seq: self.seq,
            kind,
        });
    }
}

enum Topology {
    Static(Graph),
    Dynamic(DynamicGraphModel),
}

impl Topology {
    fn graph(&self) -> &Graph {
        match self {
            Topology::Static(g) => g,
            Topology::Dynamic(m) => m.current(),
        }
    }
}

/// Runs one simulation seeded from `config.seed`.
pub fn run_simulation(config: &SimConfig) -> Result<SimRun> {
    run_simulation_with(config, &mut rng_from_seed(config.seed))
}

/// Runs one simulation drawing from `rng`.
pub fn run_simulation_with(config: &SimConfig, rng: &mut SimRng) -> Result<SimRun> {
    let warnings = config.validate()?;
    let n = config.n_users;

    let (topology, labels) = match config.mode {
        GraphMode::Static => {
            let g = build_configuration_graph(n, &config.profile, rng)?;
            if let Some(u) = (0..n).find(|&u| g.degree(u) == 0) {
                return Err(invalid(format!("static graph leaves user {u} without neighbours")));
            }
            let labels = g.degrees();
            (Topology::Static(g), labels)
        }
        GraphMode::Dynamic => {
            let m = DynamicGraphModel::new(n, &config.profile, config.regeneration_rate, rng)?;
            let labels = m.expected_degrees().to_vec();
            (Topology::Dynamic(m), labels)
        }
    };
    let component_count = topology.graph().component_count();
    let measure = Measurement::new(&labels, config.depth);

    let mut topology = topology;
    let mut queues = vec![0u64; n];
    let mut counts = TaskCounts::default();
    let mut regenerations = 0;
    let mut timers = Timers {
        heap: BinaryHeap::with_capacity(2 * n + 1),
        seq: 0,
    };
    for u in 0..n {
        timers.schedule(0.0, config.lambda, EventKind::Arrival(u), rng);
    }
    if config.mode == GraphMode::Dynamic {
        timers.schedule(0.0, config.regeneration_rate, EventKind::Regenerate, rng);
    }

    let n_samples = (config.t_end / config.sample_every + 1e-9).floor() as usize;
    let mut snapshots = Vec::with_capacity(n_samples + 1);
    let mut next_sample = 0usize;

    while let Some(event) = timers.heap.pop() {
        while next_sample <= n_samples && next_sample as f64 * config.sample_every <= event.time {
            let t = next_sample as f64 * config.sample_every;
            snapshots.push(measure.snapshot(t, &queues, counts.offloaded));
            next_sample += 1;
        }
        if event.time > config.t_end {
            break;
        }
        let now = event.time;
        match event.kind {
            EventKind::Arrival(u) => {
                counts.generated += 1;
                timers.schedule(now, config.lambda, EventKind::Arrival(u), rng);
                if rng.random::<f64>() < config.x {
                    counts.offloaded += 1;
                } else {
                    let nbrs = topology.graph().neighbors(u);
                    let target = if nbrs.is_empty() {
                        u
                    } else {
                        let v = nbrs[rng.random_range(0..nbrs.len())];
                        match queues[v].cmp(&queues[u]) {
                            Ordering::Less => v,
                            Ordering::Greater => u,
                            Ordering::Equal => {
                                if rng.random::<bool>() {
                                    v
                                } else {
                                    u
                                }
                            }
                        }
                    };
                    if target != u {
                        counts.forwarded += 1;
                    }
                    queues[target] += 1;
                    if queues[target] == 1 {
                        timers.schedule(now, config.mu, EventKind::Service(target), rng);
                    }
                }
            }
            EventKind::Service(u) => {
                queues[u] -= 1;
                counts.completed += 1;
                if queues[u] > 0 {
                    timers.schedule(now, config.mu, EventKind::Service(u), rng);
                }
            }
            EventKind::Regenerate => {
                if let Topology::Dynamic(m) = &mut topology {
                    m.regenerate(rng);
                    regenerations += 1;
                }
                timers.schedule(now, config.regeneration_rate, EventKind::Regenerate, rng);
            }
        }
    }
    counts.in_queue = queues.iter().sum();

    Ok(SimRun {
        config: config.clone(),
        snapshots,
        counts,
        warnings,
        component_count,
        regenerations,
    })
}

struct Measurement {
    classes: Vec<usize>,
    class_sizes: Vec<usize>,
    class_of_user: Vec<usize>,
    depth: usize,
}

impl Measurement {
    fn new(labels: &[usize], depth: usize) -> Self {
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for &k in labels {
            *sizes.entry(k).or_default() += 1;
        }
        let classes: Vec<usize> = sizes.keys().copied().collect();
        let class_sizes: Vec<usize> = sizes.values().copied().collect();
        let class_of_user = labels
            .iter()
            .map(|k| classes.binary_search(k).expect("label was inserted"))
            .collect();
        Self {
            classes,
            class_sizes,
            class_of_user,
            depth,
        }
    }

    fn snapshot(&self, time: f64, queues: &[u64], offload_count: u64) -> SimSnapshot {
        let mut counts = vec![vec![0usize; self.depth + 1]; self.classes.len()];
        for (u, &q) in queues.iter().enumerate() {
            let row = &mut counts[self.class_of_user[u]];
            for cell in row.iter_mut().take(self.depth.min(q as usize) + 1) {
                *cell += 1;
            }
        }
        let s_hat = counts
            .into_iter()
            .zip(&self.class_sizes)
            .map(|(row, &size)| row.into_iter().map(|c| c as f64 / size as f64).collect())
            .collect();
        SimSnapshot {
            time,
            classes: self.classes.clone(),
            class_sizes: self.class_sizes.clone(),
            s_hat,
            offload_count,
        }
    }
}

impl SimRun {
    /// Snapshots inside the trailing `late_fraction` of the horizon.
    pub fn late_window(&self) -> impl Iterator<Item = &SimSnapshot> {
        let start = (1.0 - self.config.late_fraction) * self.config.t_end;
        self.snapshots.iter().filter(move |s| s.time >= start)
    }

    /// Mean of `s_hat[degree][i]` over the late window; `None` if the class
    /// was never measured.
    pub fn late_window_average(&self, degree: usize, i: usize) -> Option<f64> {
        let values: Vec<f64> = self.late_window().filter_map(|s| s.tail(degree, i)).collect();
        mean(&values)
    }

    /// Sample variance (population form) of `s_hat[degree][i]` over the late window.
    pub fn late_window_variance(&self, degree: usize, i: usize) -> Option<f64> {
        let values: Vec<f64> = self.late_window().filter_map(|s| s.tail(degree, i)).collect();
        let m = mean(&values)?;
        Some(values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64)
    }

    /// Mean of `|s_hat[degree][i] - reference|` over the late window.
    pub fn late_window_deviation(&self, degree: usize, i: usize, reference: f64) -> Option<f64> {
        let values: Vec<f64> = self
            .late_window()
            .filter_map(|s| s.tail(degree, i))
            .map(|v| (v - reference).abs())
            .collect();
        mean(&values)
    }

    /// CSV with columns `time,k,i,s_hat,n_class`.
    pub fn write_snapshots_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,k,i,s_hat,n_class")?;
        for snap in &self.snapshots {
            for (c, &k) in snap.classes.iter().enumerate() {
                for (i, v) in snap.s_hat[c].iter().enumerate() {
                    writeln!(out, "{},{k},{i},{v},{}", snap.time, snap.class_sizes[c])?;
                }
            }
        }
        Ok(())
    }

    pub fn metadata(&self) -> SimMetadata {
        SimMetadata {
            config: self.config.clone(),
            seed: self.config.seed,
            warnings: self.warnings.clone(),
            counts: self.counts,
            component_count: self.component_count,
            regenerations: self.regenerations,
        }
    }
}

/// JSON sidecar for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub config: SimConfig,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub counts: TaskCounts,
    pub component_count: usize,
    pub regenerations: u64,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Results for one population size in a [`convergence_study`].
#[derive(Debug, Clone)]
pub struct SizeSummary {
    pub n_users: usize,
    /// Per seed: `(seed, [(t, s_hat[k_min][1])])`.
    pub series: Vec<(u64, Vec<(f64, f64)>)>,
    /// Seed-averaged late-window variance of `s_hat[k_min][1]`.
    pub late_variance: f64,
    /// Seed-averaged late-window mean of `|s_hat[k_min][1] - s*[k_min][1]|`.
    pub late_deviation: f64,
}

/// Runs `base` for every `(size, seed)` pair in parallel on the current rayon
/// pool and summarises the `k_min` busy fraction per size. `reference` is the
/// mean-field value `s*[k_min][1]`.
pub fn convergence_study(
    base: &SimConfig,
    sizes: &[usize],
    seeds: &[u64],
    reference: f64,
) -> Result<Vec<SizeSummary>> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(invalid("convergence study needs sizes and seeds"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("sizes must be strictly ascending"));
    }
    let k_min = base.profile.k_min();
    let jobs: Vec<(usize, u64)> = sizes.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let runs: Vec<Result<SimRun>> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let cfg = SimConfig {
                n_users: n,
                seed,
                ..base.clone()
            };
            run_simulation(&cfg)
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(sizes.len());
    for (chunk, &n) in runs.chunks(seeds.len()).zip(sizes) {
        let mut series = Vec::with_capacity(chunk.len());
        let (mut var_sum, mut dev_sum) = (0.0, 0.0);
        for run in chunk {
            let points = run
                .snapshots
                .iter()
                .filter_map(|s| s.tail(k_min, 1).map(|v| (s.time, v)))
                .collect();
            series.push((run.config.seed, points));
            var_sum += run.late_window_variance(k_min, 1).ok_or_else(|| missing_class(k_min, n))?;
            dev_sum += run
                .late_window_deviation(k_min, 1, reference)
                .ok_or_else(|| missing_class(k_min, n))?;
        }
        out.push(SizeSummary {
            n_users: n,
            series,
            late_variance: var_sum / chunk.len() as f64,
            late_deviation: dev_sum / chunk.len() as f64,
        });
    }
    Ok(out)
}

fn missing_class(k: usize, n: usize) -> Error {
    Error::NumericalFailure(format!("no users of degree {k} measured at n = {n}"))
}

/// Mean queue length `rho / (1 - rho)` of an M/M/1 queue.
pub fn mm1_mean_workload(lambda: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0) || lambda < 0.0 {
        return Err(invalid("M/M/1 needs mu > 0 and lambda >= 0"));
    }
    if lambda >= mu {
        return Err(Error::Infeasible(format!("M/M/1 unstable: lambda = {lambda} >= mu = {mu}")));
    }
    let rho = lambda / mu;
    Ok(rho / (1.0 - rho))
}

/// `1 - W_po2 / W_mm1` with both systems fed `x_c * lambda`; 0 when nothing
/// is collaborated.
pub fn workload_reduction(profile: &DegreeProfile, lambda: f64, mu: f64, x_c: f64) -> Result<f64> {
    if x_c == 0.0 {
        return Ok(0.0);
    }
    let baseline = mm1_mean_workload(x_c * lambda, mu)?;
    let sp = MeanField::new(profile.clone(), lambda, mu, x_c)?.stationary_point(SolverOptions::default())?;
    Ok(1.0 - sp.mean_workload / baseline)
}
