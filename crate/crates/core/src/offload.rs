//! Users' side of the pricing game.
//!
//! A user offloads each task with probability `x` and sends the rest through
//! Po2 collaboration, so the mean field runs at `x_c = 1 - x`. The average
//! task delay is
//!
//! ```text
//! d(x) = x (B/r + 1/gamma) + sum_{i>=1} sum_k p(k) s*[k][i](1 - x) / lambda
//! ```
//!
//! (transmission plus server time, then local queueing by Little's law), and
//! the fairness gap is `s*[k_max][1] - s*[k_min][1]`. The feasible set of
//! offloading probabilities is where `d(x) <= d_bar` and the gap is at most
//! `s_bar`. Given a price, users pick whichever endpoint of that set is
//! cheaper.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::DegreeProfile;
use crate::meanfield::{MeanField, SolverOptions, StationaryPoint};

/// Scalar model parameters in normalized time units (one mean device service
/// time). `B` and `r` are kept in bits and bits per time unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsInput", into = "ParamsInput")]
pub struct SystemParams {
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub task_bits: f64,
    pub uplink_bps: f64,
    pub rho_c_m: f64,
    pub rho_t_m: f64,
    pub rho_c_s: f64,
    pub d_bar: f64,
    pub s_bar: f64,
    pub x_bar: f64,
    pub p_u: f64,
}

impl Default for SystemParams {
    /// The evaluation setting: `lambda = 0.9`, `mu = 1`, `gamma = 5`,
    /// 2000 KB tasks over a 10 Mbps uplink, `d_bar = 1.6`, `s_bar = 0.06`,
    /// cost weights `(0.9, 0.3, 1)`, `x_bar = 0.6`, `p_u = 0.5`.
    fn default() -> Self {
        Self {
            lambda: 0.9,
            mu: 1.0,
            gamma: 5.0,
            task_bits: 2000.0 * KB_BITS,
            uplink_bps: 10.0 * MBPS,
            rho_c_m: 0.9,
            rho_t_m: 0.3,
            rho_c_s: 1.0,
            d_bar: 1.6,
            s_bar: 0.06,
            x_bar: 0.6,
            p_u: 0.5,
        }
    }
}

const KB_BITS: f64 = 8_000.0;
const MBPS: f64 = 1e6;

/// Wire form: every field optional (defaults fill the gaps), sizes accepted
/// either raw or as `task_size_kb` / `uplink_mbps`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsInput {
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_size_kb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uplink_bps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uplink_mbps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_c_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_t_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_c_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_u: Option<f64>,
}

impl TryFrom<ParamsInput> for SystemParams {
    type Error = Error;

    fn try_from(raw: ParamsInput) -> Result<Self> {
        let d = SystemParams::default();
        let task_bits = match (raw.task_bits, raw.task_size_kb) {
            (Some(_), Some(_)) => return Err(Error::Config("give task_bits or task_size_kb, not both".into())),
            (Some(b), None) => b,
            (None, Some(kb)) => kb * KB_BITS,
            (None, None) => d.task_bits,
        };
        let uplink_bps = match (raw.uplink_bps, raw.uplink_mbps) {
            (Some(_), Some(_)) => return Err(Error::Config("give uplink_bps or uplink_mbps, not both".into())),
            (Some(b), None) => b,
            (None, Some(m)) => m * MBPS,
            (None, None) => d.uplink_bps,
        };
        let params = SystemParams {
            lambda: raw.lambda.unwrap_or(d.lambda),
            mu: raw.mu.unwrap_or(d.mu),
            gamma: raw.gamma.unwrap_or(d.gamma),
            task_bits,
            uplink_bps,
            rho_c_m: raw.rho_c_m.unwrap_or(d.rho_c_m),
            rho_t_m: raw.rho_t_m.unwrap_or(d.rho_t_m),
            rho_c_s: raw.rho_c_s.unwrap_or(d.rho_c_s),
            d_bar: raw.d_bar.unwrap_or(d.d_bar),
            s_bar: raw.s_bar.unwrap_or(d.s_bar),
            x_bar: raw.x_bar.unwrap_or(d.x_bar),
            p_u: raw.p_u.unwrap_or(d.p_u),
        };
        params.validate()?;
        Ok(params)
    }
}

impl From<SystemParams> for ParamsInput {
    fn from(p: SystemParams) -> Self {
        ParamsInput {
            lambda: Some(p.lambda),
            mu: Some(p.mu),
            gamma: Some(p.gamma),
            task_bits: Some(p.task_bits),
            uplink_bps: Some(p.uplink_bps),
            rho_c_m: Some(p.rho_c_m),
            rho_t_m: Some(p.rho_t_m),
            rho_c_s: Some(p.rho_c_s),
            d_bar: Some(p.d_bar),
            s_bar: Some(p.s_bar),
            x_bar: Some(p.x_bar),
            p_u: Some(p.p_u),
            ..ParamsInput::default()
        }
    }
}

impl SystemParams {
    /// Rejects nonpositive or non-finite values. `lambda >= mu` is allowed
    /// here; the stationary-point solver reports it where it matters.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("gamma", self.gamma),
            ("task_bits", self.task_bits),
            ("uplink_bps", self.uplink_bps),
            ("rho_c_m", self.rho_c_m),
            ("rho_t_m", self.rho_t_m),
            ("rho_c_s", self.rho_c_s),
            ("d_bar", self.d_bar),
            ("s_bar", self.s_bar),
            ("x_bar", self.x_bar),
            ("p_u", self.p_u),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// `B / r` in time units.
    pub fn transmit_time(&self) -> f64 {
        self.task_bits / self.uplink_bps
    }

    /// Local energy cost per task, `rho_c_m / mu^2`.
    pub fn local_unit_cost(&self) -> f64 {
        self.rho_c_m / (self.mu * self.mu)
    }

    /// Transmission energy cost per offloaded task, `rho_t_m B / r`.
    pub fn transmit_unit_cost(&self) -> f64 {
        self.rho_t_m * self.transmit_time()
    }

    /// Highest price at which offloading is no dearer than local processing.
    pub fn threshold_price(&self) -> f64 {
        self.local_unit_cost() - self.transmit_unit_cost()
    }

    /// Server's processing cost per task, `rho_c_s / gamma`.
    pub fn server_unit_cost(&self) -> f64 {
        self.rho_c_s / self.gamma
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }
}

/// Which component of a disconnected feasible set the users operate in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionChoice {
    #[default]
    Highest,
    Lowest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Root tolerance in `x`.
    pub root_tol: f64,
    /// Residual tolerance of the stationary points solved inside searches.
    pub sp_tol: f64,
    /// Grid used to locate fairness-gap crossings.
    pub grid_points: usize,
    /// Truncation depth of the mean field, fixed across `x` so `d` stays smooth.
    pub depth: usize,
    pub choice: RegionChoice,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            root_tol: 1e-4,
            sp_tol: 1e-6,
            grid_points: 101,
            depth: 16,
            choice: RegionChoice::Highest,
        }
    }
}

/// Set of `x` with a fairness gap at most `s_bar`: `[0, x'_l] ∪ [x'_u, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessRegion {
    pub intervals: Vec<Interval>,
    /// `None` when the gap never exceeds the cap, or already does at `x = 0`.
    pub x_prime_l: Option<f64>,
    /// `None` when the gap never exceeds the cap, or still does at `x = 1`.
    pub x_prime_u: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    pub delay_interval: Interval,
    pub fairness: FairnessRegion,
    pub intersection: Vec<Interval>,
    pub x_l: f64,
    pub x_u: f64,
    pub warnings: Vec<String>,
}

impl FeasibleRegion {
    /// Region known only by its endpoints (no constraint search behind it).
    pub fn from_endpoints(x_l: f64, x_u: f64) -> Result<Self> {
        if !(0.0 <= x_l && x_l <= x_u && x_u <= 1.0) {
            return Err(invalid(format!("need 0 <= x_l <= x_u <= 1, got [{x_l}, {x_u}]")));
        }
        let whole = Interval::new(x_l, x_u);
        Ok(Self {
            delay_interval: whole,
            fairness: FairnessRegion {
                intervals: vec![Interval::new(0.0, 1.0)],
                x_prime_l: None,
                x_prime_u: None,
                warnings: Vec::new(),
            },
            intersection: vec![whole],
            x_l,
            x_u,
            warnings: Vec::new(),
        })
    }

    pub fn report(&self) -> RegionReport {
        RegionReport {
            x_l_star: self.delay_interval.lo,
            x_u_star: self.delay_interval.hi,
            x_prime_l: self.fairness.x_prime_l,
            x_prime_u: self.fairness.x_prime_u,
            x_l: self.x_l,
            x_u: self.x_u,
            warnings: self.warnings.clone(),
        }
    }
}

/// JSON summary of a feasible-region computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub x_l_star: f64,
    pub x_u_star: f64,
    pub x_prime_l: Option<f64>,
    pub x_prime_u: Option<f64>,
    pub x_l: f64,
    pub x_u: f64,
    pub warnings: Vec<String>,
}

/// Delay split into its offloading and local-queueing parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayComponents {
    pub offload: f64,
    pub queueing: f64,
}

impl DelayComponents {
    pub fn total(&self) -> f64 {
        self.offload + self.queueing
    }
}

/// Parameters plus degree profile: everything the users' constraints depend on.
#[derive(Debug, Clone)]
pub struct OffloadModel {
    params: SystemParams,
    profile: DegreeProfile,
    opts: SearchOptions,
}

impl OffloadModel {
    pub fn new(params: SystemParams, profile: DegreeProfile) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            profile,
            opts: SearchOptions::default(),
        })
    }

    pub fn with_options(mut self, opts: SearchOptions) -> Result<Self> {
        if !(opts.root_tol > 0.0 && opts.sp_tol > 0.0) {
            return Err(invalid("search tolerances must be positive"));
        }
        if opts.grid_points < 3 {
            return Err(invalid("fairness grid needs at least 3 points"));
        }
        self.opts = opts;
        Ok(self)
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn profile(&self) -> &DegreeProfile {
        &self.profile
    }

    pub fn options(&self) -> &SearchOptions {
        &self.opts
    }

    /// Stationary point of the mean field at `x_c = 1 - x`.
    pub fn stationary_point(&self, x: f64) -> Result<StationaryPoint> {
        check_probability(x)?;
        let p = &self.params;
        MeanField::new(self.profile.clone(), p.lambda, p.mu, 1.0 - x)?
            .with_depth(self.opts.depth)
            .stationary_point(SolverOptions::with_tol(self.opts.sp_tol))
    }

    pub fn delay_components(&self, x: f64) -> Result<DelayComponents> {
        let sp = self.stationary_point(x)?;
        let p = &self.params;
        Ok(DelayComponents {
            offload: x * (p.transmit_time() + 1.0 / p.gamma),
            queueing: sp.mean_workload / p.lambda,
        })
    }

    pub fn task_delay(&self, x: f64) -> Result<f64> {
        Ok(self.delay_components(x)?.total())
    }

    /// `s*[k_max][1] - s*[k_min][1]` at `x_c = 1 - x`.
    pub fn fairness_gap(&self, x: f64) -> Result<f64> {
        let sp = self.stationary_point(x)?;
        let last = self.profile.len() - 1;
        Ok(sp.state.get(last, 1) - sp.state.get(0, 1))
    }

    /// Delay for the searches: an unstable `x` counts as infinitely slow.
    fn delay_or_inf(&self, x: f64) -> Result<f64> {
        match self.task_delay(x) {
            Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
            other => other,
        }
    }

    fn gap_or_inf(&self, x: f64) -> Result<f64> {
        match self.fairness_gap(x) {
            Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
            other => other,
        }
    }

    /// `[x_l*, x_u*] = { x : d(x) <= d_bar }`, found by golden-section
    /// minimisation of `d` followed by bisection on each side of the minimum.
    pub fn find_delay_interval(&self) -> Result<Interval> {
        let d_bar = self.params.d_bar;
        let tol = self.opts.root_tol;
        let (x_min, d_min) = golden_section_min(|x| self.delay_or_inf(x), 0.0, 1.0, tol)?;
        if d_min > d_bar {
            return Err(Error::Infeasible(format!(
                "delay cap {d_bar} is below the minimum delay {d_min:.6} (at x = {x_min:.5})"
            )));
        }
        let excess = |x: f64| self.delay_or_inf(x).map(|d| d - d_bar);
        let lo = if excess(0.0)? <= 0.0 {
            0.0
        } else {
            bisect(&excess, 0.0, x_min, tol)?
        };
        let hi = if excess(1.0)? <= 0.0 {
            1.0
        } else {
            bisect(&excess, x_min, 1.0, tol)?
        };
        Ok(Interval::new(lo, hi))
    }

    /// Scans the gap on a uniform grid, refines every crossing of `s_bar` by
    /// bisection and keeps the outermost pair.
    pub fn find_fairness_region(&self) -> Result<FairnessRegion> {
        let s_bar = self.params.s_bar;
        let n = self.opts.grid_points;
        let xs: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
        let excess: Vec<f64> = xs
            .iter()
            .map(|&x| self.gap_or_inf(x).map(|g| g - s_bar))
            .collect::<Result<_>>()?;
        let mut warnings = Vec::new();
        if excess.iter().all(|&e| e <= 0.0) {
            return Ok(FairnessRegion {
                intervals: vec![Interval::new(0.0, 1.0)],
                x_prime_l: None,
                x_prime_u: None,
                warnings,
            });
        }
        let f = |x: f64| self.gap_or_inf(x).map(|g| g - s_bar);
        let mut crossings = Vec::new();
        for j in 1..n {
            if (excess[j - 1] <= 0.0) != (excess[j] <= 0.0) {
                crossings.push(bisect(&f, xs[j - 1], xs[j], self.opts.root_tol)?);
            }
        }
        if crossings.len() > 2 {
            warnings.push(format!(
                "fairness gap crosses the cap {} times on the grid; using the outermost crossings",
                crossings.len()
            ));
        }
        let x_prime_l = if excess[0] <= 0.0 {
            crossings.first().copied()
        } else {
            warnings.push("fairness gap exceeds the cap at x = 0".into());
            None
        };
        let x_prime_u = if excess[n - 1] <= 0.0 {
            crossings.last().copied()
        } else {
            warnings.push("fairness gap exceeds the cap at x = 1".into());
            None
        };
        let mut intervals = Vec::new();
        if let Some(l) = x_prime_l {
            intervals.push(Interval::new(0.0, l));
        }
        if let Some(u) = x_prime_u {
            intervals.push(Interval::new(u, 1.0));
        }
        if intervals.is_empty() {
            return Err(Error::Infeasible(format!("fairness gap exceeds {s_bar} for every x")));
        }
        Ok(FairnessRegion {
            intervals,
            x_prime_l,
            x_prime_u,
            warnings,
        })
    }

    /// Intersects both constraint sets and picks one component according to
    /// the configured [`RegionChoice`].
    pub fn feasible_region(&self) -> Result<FeasibleRegion> {
        let delay_interval = self.find_delay_interval()?;
        let fairness = self.find_fairness_region()?;
        let intersection: Vec<Interval> = fairness
            .intervals
            .iter()
            .filter_map(|f| f.intersect(&delay_interval))
            .collect();
        let chosen = match self.opts.choice {
            RegionChoice::Highest => intersection.last(),
            RegionChoice::Lowest => intersection.first(),
        }
        .copied()
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "delay interval [{:.5}, {:.5}] misses the fairness region {:?}",
                delay_interval.lo, delay_interval.hi, fairness.intervals
            ))
        })?;
        let mut warnings = fairness.warnings.clone();
        if intersection.len() > 1 {
            warnings.push(format!(
                "feasible set has {} components; using [{:.5}, {:.5}]",
                intersection.len(),
                chosen.lo,
                chosen.hi
            ));
        }
        Ok(FeasibleRegion {
            delay_interval,
            fairness,
            intersection,
            x_l: chosen.lo,
            x_u: chosen.hi,
            warnings,
        })
    }
}

fn check_probability(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(format!("offloading probability must lie in [0, 1], got {x}")))
    }
}

/// Minimum of a unimodal function on `[a, b]`, returned with its value.
pub fn golden_section_min(
    f: impl Fn(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x)?;
    // The endpoints are candidates too when the function is monotone.
    let (fa, fb) = (f(a)?, f(b)?);
    Ok([(x, fx), (a, fa), (b, fb)]
        .into_iter()
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .expect("three candidates"))
}

/// Root of `f` on `[a, b]`; `f(a)` and `f(b)` must differ in sign (a zero at
/// either end counts).
pub fn bisect(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut fa = f(a)?;
    let fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if (fa > 0.0) == (fb > 0.0) {
        return Err(Error::NumericalFailure(format!(
            "no sign change on [{a}, {b}] ({fa:e}, {fb:e})"
        )));
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Users' threshold rule: the upper endpoint when offloading at price `p` is
/// no dearer than local processing, the lower endpoint otherwise. A price
/// within rounding of the threshold counts as a tie, which goes to `x_u`.
pub fn offload_decision(p: f64, region: &FeasibleRegion, params: &SystemParams) -> f64 {
    let thr = params.threshold_price();
    if p <= thr + 1e-12 * thr.abs().max(1.0) {
        region.x_u
    } else {
        region.x_l
    }
}

/// Users' cost rate `x lambda p + (1-x) lambda rho_c_m/mu^2 + x lambda rho_t_m B/r`.
pub fn system_cost(x: f64, p: f64, params: &SystemParams) -> f64 {
    let l = params.lambda;
    x * l * p + (1.0 - x) * l * params.local_unit_cost() + x * l * params.transmit_unit_cost()
}
