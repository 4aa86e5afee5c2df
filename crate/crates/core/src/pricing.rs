//! Edge server's pricing controller.
//!
//! The long-run overload constraint `avg(x lambda) <= x_bar` is tracked by a
//! virtual queue `X[n+1] = max(X[n] + x[n] lambda - x_bar, 0)`. Each slot the
//! server minimises the drift-minus-utility bound
//! `X (x lambda - x_bar) - V x lambda (p - rho_c_s/gamma)` over the price,
//! knowing that users answer with `x_u` at or below the threshold price and
//! `x_l` above it. That gives a two-level price switching at backlog `X*`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::offload::{offload_decision, system_cost, FeasibleRegion, SystemParams};

/// Backlog of the overload constraint; never negative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VirtualQueue {
    backlog: f64,
}

impl VirtualQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn backlog(&self) -> f64 {
        self.backlog
    }

    /// Applies one slot with offloading probability `x`; returns the new backlog.
    pub fn update(&mut self, x: f64, params: &SystemParams) -> f64 {
        self.backlog = queue_update(self.backlog, x, params);
        self.backlog
    }
}

/// `max(X + x lambda - x_bar, 0)`.
pub fn queue_update(backlog: f64, x: f64, params: &SystemParams) -> f64 {
    (backlog + x * params.lambda - params.x_bar).max(0.0)
}

/// `D = max((lambda - x_bar)^2 / 2, x_bar^2 / 2)`.
pub fn drift_bound_constant(params: &SystemParams) -> f64 {
    let a = params.lambda - params.x_bar;
    (0.5 * a * a).max(0.5 * params.x_bar * params.x_bar)
}

/// Server's utility rate `x lambda p - x lambda rho_c_s/gamma`.
pub fn service_utility(x: f64, p: f64, params: &SystemParams) -> f64 {
    x * params.lambda * (p - params.server_unit_cost())
}

fn check_structure(v: f64, region: &FeasibleRegion, params: &SystemParams) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(format!("V must be positive, got {v}")));
    }
    if !(region.x_l < region.x_u) {
        return Err(invalid(format!(
            "two-level pricing needs x_l < x_u, got [{}, {}]",
            region.x_l, region.x_u
        )));
    }
    let thr = params.threshold_price();
    if !(thr > 0.0 && thr <= params.p_u) {
        return Err(Error::Config(format!(
            "threshold price {thr} must lie in (0, p_u = {}]",
            params.p_u
        )));
    }
    Ok(thr)
}

/// Backlog below which the low (threshold) price is optimal:
/// `X* = V (x_u thr - x_l p_u) / (x_u - x_l) - V rho_c_s/gamma`.
pub fn backlog_threshold(v: f64, region: &FeasibleRegion, params: &SystemParams) -> Result<f64> {
    let thr = check_structure(v, region, params)?;
    let (xl, xu) = (region.x_l, region.x_u);
    Ok(v * (xu * thr - xl * params.p_u) / (xu - xl) - v * params.server_unit_cost())
}

/// Threshold price while `X <= X*`, `p_u` above it.
pub fn optimal_price(backlog: f64, v: f64, region: &FeasibleRegion, params: &SystemParams) -> Result<f64> {
    let x_star = backlog_threshold(v, region, params)?;
    Ok(if backlog <= x_star {
        params.threshold_price()
    } else {
        params.p_u
    })
}

/// Worst-case backlog under the optimal price: `X* + x_u lambda - x_bar`.
pub fn queue_bound(v: f64, region: &FeasibleRegion, params: &SystemParams) -> Result<f64> {
    Ok(backlog_threshold(v, region, params)? + region.x_u * params.lambda - params.x_bar)
}

/// Probability of the low price under [`Policy::Adapted`], chosen so the
/// expected offloading rate equals `x_bar`.
pub fn adapted_low_price_probability(region: &FeasibleRegion, params: &SystemParams) -> Result<f64> {
    let (lo, hi) = (region.x_l * params.lambda, region.x_u * params.lambda);
    if !(lo < hi) || params.x_bar < lo || params.x_bar > hi {
        return Err(Error::Config(format!(
            "x_bar = {} must lie in [x_l lambda, x_u lambda] = [{lo}, {hi}]",
            params.x_bar
        )));
    }
    Ok((params.x_bar - lo) / (hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Backlog-threshold price from the drift-minus-utility bound.
    Optimal,
    /// Always `p_u`.
    Constant,
    /// Random two-level price meeting the overload cap on average.
    Adapted,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Optimal, Policy::Constant, Policy::Adapted];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Optimal => "optimal",
            Policy::Constant => "constant",
            Policy::Adapted => "adapted",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One slot. `backlog` is `X[n]`, seen before pricing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub n: usize,
    pub price: f64,
    pub x: f64,
    pub backlog: f64,
    pub utility: f64,
    pub cost: f64,
    /// `(X[n+1]^2 - X[n]^2) / 2`.
    pub drift: f64,
    /// `X[n] (x lambda - x_bar) + D`, the drift bound without utility terms.
    pub drift_bound: f64,
}

#[derive(Debug, Clone)]
pub struct SlotTrace {
    pub policy: Policy,
    pub v: f64,
    pub slots: Vec<SlotRecord>,
    /// `X[T]` after the last slot.
    pub final_backlog: f64,
}

impl SlotTrace {
    fn mean_of(&self, f: impl Fn(&SlotRecord) -> f64) -> f64 {
        self.slots.iter().map(f).sum::<f64>() / self.slots.len() as f64
    }

    pub fn average_utility(&self) -> f64 {
        self.mean_of(|s| s.utility)
    }

    pub fn average_cost(&self) -> f64 {
        self.mean_of(|s| s.cost)
    }

    pub fn average_price(&self) -> f64 {
        self.mean_of(|s| s.price)
    }

    /// Time average of `x[n] lambda`, for a given `lambda`.
    pub fn average_offload_rate(&self, lambda: f64) -> f64 {
        self.mean_of(|s| s.x) * lambda
    }

    /// Largest backlog over `X[0..=T]`.
    pub fn max_backlog(&self) -> f64 {
        self.slots.iter().map(|s| s.backlog).fold(self.final_backlog, f64::max)
    }

    /// Largest `drift - drift_bound` over the slots (<= 0 when the per-slot
    /// bound holds everywhere).
    pub fn worst_drift_slack(&self) -> f64 {
        self.slots
            .iter()
            .map(|s| s.drift - s.drift_bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Appends rows `n,policy,V,p,x,X,u,c`; pass `header = true` for the first trace.
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "n,policy,V,p,x,X,u,c")?;
        }
        for s in &self.slots {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.n, self.policy, self.v, s.price, s.x, s.backlog, s.utility, s.cost
            )?;
        }
        Ok(())
    }
}

/// Runs `slots` slots from `X[0] = 0`. Only [`Policy::Adapted`] draws from `rng`.
pub fn run_horizon<R: Rng + ?Sized>(
    slots: usize,
    v: f64,
    policy: Policy,
    region: &FeasibleRegion,
    params: &SystemParams,
    rng: &mut R,
) -> Result<SlotTrace> {
    if slots == 0 {
        return Err(invalid("horizon needs at least one slot"));
    }
    let thr = check_structure(v, region, params)?;
    let low_prob = match policy {
        Policy::Adapted => adapted_low_price_probability(region, params)?,
        _ => 0.0,
    };
    let d = drift_bound_constant(params);
    let mut queue = VirtualQueue::new();
    let mut records = Vec::with_capacity(slots);
    for n in 0..slots {
        let backlog = queue.backlog();
        let price = match policy {
            Policy::Optimal => optimal_price(backlog, v, region, params)?,
            Policy::Constant => params.p_u,
            Policy::Adapted => {
                if rng.random::<f64>() < low_prob {
                    thr
                } else {
                    params.p_u
                }
            }
        };
        let x = offload_decision(price, region, params);
        let next = queue.update(x, params);
        records.push(SlotRecord {
            n,
            price,
            x,
            backlog,
            utility: service_utility(x, price, params),
            cost: system_cost(x, price, params),
            drift: 0.5 * (next * next - backlog * backlog),
            drift_bound: backlog * (x * params.lambda - params.x_bar) + d,
        });
    }
    Ok(SlotTrace {
        policy,
        v,
        slots: records,
        final_backlog: queue.backlog(),
    })
}

/// Seed-averaged summary of one `(V, policy)` sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub v: f64,
    pub policy: Policy,
    pub avg_utility: f64,
    pub avg_cost: f64,
    pub max_backlog: f64,
    pub bound: f64,
}

impl SweepRow {
    /// Averages utility and cost over `traces`; `max_backlog` is the maximum.
    pub fn from_traces(traces: &[SlotTrace], bound: f64) -> Result<Self> {
        let first = traces.first().ok_or_else(|| invalid("no traces to summarise"))?;
        let k = traces.len() as f64;
        Ok(Self {
            v: first.v,
            policy: first.policy,
            avg_utility: traces.iter().map(SlotTrace::average_utility).sum::<f64>() / k,
            avg_cost: traces.iter().map(SlotTrace::average_cost).sum::<f64>() / k,
            max_backlog: traces.iter().map(SlotTrace::max_backlog).fold(0.0, f64::max),
            bound,
        })
    }
}

/// CSV with columns `V,policy,avg_utility,avg_cost,max_X,bound`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "V,policy,avg_utility,avg_cost,max_X,bound")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.v, r.policy, r.avg_utility, r.avg_cost, r.max_backlog, r.bound
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn region() -> FeasibleRegion {
        FeasibleRegion::from_endpoints(0.49953, 0.72978).unwrap()
    }

    #[test]
    fn queue_arithmetic() {
        let p = SystemParams::default();
        assert_eq!(queue_update(0.0, 0.49953, &p), 0.0);
        assert!((queue_update(0.0, 0.72978, &p) - 0.056802).abs() < 1e-9);
        let easy = SystemParams { x_bar: 0.9, ..p };
        let mut q = VirtualQueue::new();
        for _ in 0..10 {
            q.update(1.0, &easy);
        }
        assert_eq!(q.backlog(), 0.0);
    }

    #[test]
    fn drift_constant_cases() {
        let p = SystemParams::default();
        assert!((drift_bound_constant(&p) - 0.18).abs() < 1e-12);
        let eq = SystemParams { x_bar: 0.9, ..p.clone() };
        assert!((drift_bound_constant(&eq) - 0.405).abs() < 1e-12);
    }

    #[test]
    fn threshold_and_bound() {
        let p = SystemParams::default();
        let r = region();
        let want = 20.0 * (0.72978 * 0.42 - 0.49953 * 0.5) / (0.72978 - 0.49953) - 4.0;
        let x_star = backlog_threshold(20.0, &r, &p).unwrap();
        assert!((x_star - want).abs() < 1e-9);
        assert!((optimal_price(0.0, 20.0, &r, &p).unwrap() - 0.42).abs() < 1e-12);
        assert_eq!(optimal_price(1e9, 20.0, &r, &p).unwrap(), 0.5);
        assert_eq!(optimal_price(x_star, 20.0, &r, &p).unwrap(), p.threshold_price());
        let b20 = queue_bound(20.0, &r, &p).unwrap();
        let b40 = queue_bound(40.0, &r, &p).unwrap();
        assert!((b40 - b20 - x_star).abs() < 1e-9);
        assert!(backlog_threshold(0.0, &r, &p).is_err());
    }

    #[test]
    fn bad_price_structure_is_config_error() {
        let r = region();
        let cheap = SystemParams { rho_c_m: 0.4, ..SystemParams::default() };
        assert!(matches!(optimal_price(0.0, 10.0, &r, &cheap), Err(Error::Config(_))));
        let low_cap = SystemParams { p_u: 0.4, ..SystemParams::default() };
        assert!(matches!(optimal_price(0.0, 10.0, &r, &low_cap), Err(Error::Config(_))));
    }

    #[test]
    fn utility_arithmetic() {
        let p = SystemParams::default();
        assert_eq!(service_utility(0.0, 0.4, &p), 0.0);
        assert!((service_utility(0.72978, 0.42, &p) - 0.9 * 0.72978 * 0.22).abs() < 1e-12);
        assert!(service_utility(0.6, 0.2, &p).abs() < 1e-15);
    }

    #[test]
    fn constant_policy_never_builds_backlog() {
        let p = SystemParams::default();
        let t = run_horizon(200, 20.0, Policy::Constant, &region(), &p, &mut rng_from_seed(0)).unwrap();
        assert!(t.slots.iter().all(|s| s.x == 0.49953 && s.backlog == 0.0));
        assert_eq!(t.final_backlog, 0.0);
    }

    #[test]
    fn optimal_policy_respects_bound_and_drift() {
        let p = SystemParams::default();
        let r = region();
        let t = run_horizon(1000, 20.0, Policy::Optimal, &r, &p, &mut rng_from_seed(0)).unwrap();
        assert!(t.max_backlog() <= queue_bound(20.0, &r, &p).unwrap());
        assert!(t.worst_drift_slack() <= 0.0);
        assert!(t.average_offload_rate(p.lambda) <= p.x_bar + 1e-3);
    }

    #[test]
    fn adapted_probability() {
        let p = SystemParams::default();
        let q = adapted_low_price_probability(&region(), &p).unwrap();
        assert!((q - (0.6 - 0.449577) / (0.656802 - 0.449577)).abs() < 1e-9);
        let tight = SystemParams { x_bar: 0.3, ..p };
        assert!(adapted_low_price_probability(&region(), &tight).is_err());
    }

    #[test]
    fn trace_csv() {
        let p = SystemParams::default();
        let t = run_horizon(3, 5.0, Policy::Adapted, &region(), &p, &mut rng_from_seed(1)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,policy,V,p,x,X,u,c\n0,adapted,5,"));
        assert_eq!(text.lines().count(), 4);
    }
}
