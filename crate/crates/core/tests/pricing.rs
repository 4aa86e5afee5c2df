use d2d_collab::offload::{offload_decision, FeasibleRegion, OffloadModel, SystemParams};
use d2d_collab::pricing::{
    adapted_low_price_probability, backlog_threshold, drift_bound_constant, optimal_price, queue_bound, queue_update,
    run_horizon, service_utility, SlotTrace,
};
use d2d_collab::{rng_from_seed, DegreeProfile, Error, Policy};
use proptest::prelude::*;

const V_GRID: [f64; 5] = [5.0, 10.0, 20.0, 50.0, 100.0];

fn params() -> SystemParams {
    SystemParams::default()
}

fn region() -> FeasibleRegion {
    FeasibleRegion::from_endpoints(0.49953, 0.72978).unwrap()
}

fn seed_avg_utility(slots: usize, v: f64, policy: Policy, region: &FeasibleRegion) -> f64 {
    (0..8)
        .map(|seed| {
            run_horizon(slots, v, policy, region, &params(), &mut rng_from_seed(seed))
                .unwrap()
                .average_utility()
        })
        .sum::<f64>()
        / 8.0
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn queue_update_examples() {
    let p = params();
    assert_eq!(queue_update(0.0, 0.49953, &p), 0.0);
    assert!(close(queue_update(0.0, 0.72978, &p), 0.72978 * 0.9 - 0.6, 1e-12));
    let roomy = SystemParams { x_bar: 0.95, ..p };
    let mut x = 0.0;
    for _ in 0..100 {
        x = queue_update(x, 1.0, &roomy);
    }
    assert_eq!(x, 0.0);
}

#[test]
fn drift_constant_examples() {
    assert!(close(drift_bound_constant(&params()), 0.18, 1e-12));
    let even = SystemParams { x_bar: 0.9, ..params() };
    assert!(close(drift_bound_constant(&even), 0.405, 1e-12));
    let tiny = SystemParams { x_bar: 1e-12, ..params() };
    assert!(close(drift_bound_constant(&tiny), 0.405, 1e-9));
}

#[test]
fn backlog_threshold_at_v20() {
    let x_star = backlog_threshold(20.0, &region(), &params()).unwrap();
    let want = 20.0 * (0.72978 * 0.42 - 0.49953 * 0.5) / (0.72978 - 0.49953) - 4.0;
    assert!(close(x_star, want, 1e-9));
    assert!(close(x_star, 0.92878, 1e-4), "{x_star}");
    assert!(close(optimal_price(0.0, 20.0, &region(), &params()).unwrap(), 0.42, 1e-12));
    assert_eq!(optimal_price(x_star, 20.0, &region(), &params()).unwrap(), params().threshold_price());
    assert_eq!(optimal_price(1e9, 20.0, &region(), &params()).unwrap(), 0.5);
}

#[test]
fn small_v_prices_any_backlog_high() {
    let v = 1e-9;
    assert!(backlog_threshold(v, &region(), &params()).unwrap().abs() < 1e-8);
    assert_eq!(optimal_price(1e-6, v, &region(), &params()).unwrap(), 0.5);
}

#[test]
fn broken_threshold_structure_is_config_error() {
    let p = SystemParams { p_u: 0.3, ..params() };
    assert!(matches!(backlog_threshold(20.0, &region(), &p), Err(Error::Config(_))));
    let p = SystemParams { rho_t_m: 1.0, ..params() };
    assert!(matches!(backlog_threshold(20.0, &region(), &p), Err(Error::Config(_))));
}

#[test]
fn utility_examples() {
    let p = params();
    assert_eq!(service_utility(0.0, 0.42, &p), 0.0);
    assert!(close(service_utility(0.72978, 0.42, &p), 0.9 * 0.72978 * 0.22, 1e-12));
    assert!(service_utility(0.6, p.server_unit_cost(), &p).abs() < 1e-15);
}

#[test]
fn queue_bound_examples() {
    let (r, p) = (region(), params());
    let b = queue_bound(20.0, &r, &p).unwrap();
    assert!(close(b, 0.92878 + 0.72978 * 0.9 - 0.6, 1e-4), "{b}");
    let x_star = backlog_threshold(20.0, &r, &p).unwrap();
    assert!(close(queue_bound(40.0, &r, &p).unwrap() - b, x_star, 1e-12));
    assert!(close(queue_bound(1e-12, &r, &p).unwrap(), 0.72978 * 0.9 - 0.6, 1e-9));
}

#[test]
fn constant_policy_never_builds_backlog() {
    let trace = run_horizon(100, 20.0, Policy::Constant, &region(), &params(), &mut rng_from_seed(0)).unwrap();
    assert!(trace.slots.iter().all(|s| s.x == 0.49953 && s.backlog == 0.0 && s.price == 0.5));
}

#[test]
fn optimal_backlog_respects_bound() {
    let (r, p) = (region(), params());
    for v in V_GRID {
        let trace = run_horizon(100, v, Policy::Optimal, &r, &p, &mut rng_from_seed(0)).unwrap();
        let bound = queue_bound(v, &r, &p).unwrap();
        assert!(trace.slots.iter().all(|s| s.backlog >= 0.0 && s.backlog <= bound), "V = {v}");
    }
}

#[test]
fn traces_follow_the_recurrence() {
    let (r, p) = (region(), params());
    for policy in Policy::ALL {
        let t = run_horizon(500, 10.0, policy, &r, &p, &mut rng_from_seed(3)).unwrap();
        for w in t.slots.windows(2) {
            assert_eq!(w[1].backlog, queue_update(w[0].backlog, w[0].x, &p));
        }
        for s in &t.slots {
            assert!(s.price > 0.0 && s.price <= p.p_u);
            assert_eq!(s.x, offload_decision(s.price, &r, &p));
        }
    }
}

#[test]
fn long_run_rate_meets_overload_cap() {
    let (r, p) = (region(), params());
    for policy in Policy::ALL {
        for v in V_GRID {
            let t = run_horizon(10_000, v, policy, &r, &p, &mut rng_from_seed(1)).unwrap();
            let rate = t.average_offload_rate(p.lambda);
            assert!(rate <= p.x_bar + 1e-3, "{policy} V = {v}: {rate}");
        }
    }
}

#[test]
fn one_slot_drift_bound() {
    let (r, p) = (region(), params());
    for policy in Policy::ALL {
        let t = run_horizon(2000, 50.0, policy, &r, &p, &mut rng_from_seed(2)).unwrap();
        assert!(t.worst_drift_slack() <= 1e-12, "{policy}: {}", t.worst_drift_slack());
    }
}

#[test]
fn policy_ordering_at_evaluation_region() {
    let r = OffloadModel::new(params(), DegreeProfile::uniform(6, 9).unwrap())
        .unwrap()
        .feasible_region()
        .unwrap();
    for v in V_GRID {
        let u: Vec<f64> = Policy::ALL.iter().map(|&pol| seed_avg_utility(100, v, pol, &r)).collect();
        let (opt, con, ada) = (u[0], u[1], u[2]);
        assert!(opt >= ada && ada >= con, "V = {v}: optimal {opt}, adapted {ada}, constant {con}");
    }
}

#[test]
fn utility_grows_with_v_and_gap_shrinks() {
    let r = region();
    let d = drift_bound_constant(&params());
    let u: Vec<f64> = V_GRID.iter().map(|&v| seed_avg_utility(10_000, v, Policy::Optimal, &r)).collect();
    assert!(u.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{u:?}");
    let best = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (&v, &ui) in V_GRID.iter().zip(&u) {
        assert!(best - ui <= d / v, "V = {v}: gap {}", best - ui);
    }
}

#[test]
fn adapted_probability_examples() {
    let (r, p) = (region(), params());
    let q = adapted_low_price_probability(&r, &p).unwrap();
    assert!(close(q, (0.6 - 0.49953 * 0.9) / ((0.72978 - 0.49953) * 0.9), 1e-12));
    let bad = SystemParams { x_bar: 0.8, ..p };
    assert!(matches!(adapted_low_price_probability(&r, &bad), Err(Error::Config(_))));
    assert!(run_horizon(10, 5.0, Policy::Adapted, &r, &bad, &mut rng_from_seed(0)).is_err());
}

#[test]
fn trace_csv_layout() {
    let t = run_horizon(3, 5.0, Policy::Optimal, &region(), &params(), &mut rng_from_seed(0)).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf, true).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,policy,V,p,x,X,u,c");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,optimal,5,"));
}

proptest! {
    #[test]
    fn backlog_stays_nonnegative(v in 0.1f64..200.0, seed: u64, which in 0usize..3) {
        let t: SlotTrace = run_horizon(200, v, Policy::ALL[which], &region(), &params(), &mut rng_from_seed(seed)).unwrap();
        prop_assert!(t.slots.iter().all(|s| s.backlog >= 0.0));
        if Policy::ALL[which] == Policy::Optimal {
            prop_assert!(t.max_backlog() <= queue_bound(v, &region(), &params()).unwrap());
        }
    }

    #[test]
    fn queue_update_is_nonnegative(x0 in 0.0f64..10.0, x in 0.0f64..1.0) {
        prop_assert!(queue_update(x0, x, &params()) >= 0.0);
    }
}
