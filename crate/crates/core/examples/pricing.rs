//! Sweeps the utility weight V for the three pricing policies over a fixed
//! feasible region and prints seed-averaged utility, cost and backlog.
//!
//! ```sh
//! cargo run --release --example pricing -- 100 8
//! ```

use d2d_collab::pricing::{queue_bound, run_horizon, SweepRow};
use d2d_collab::{rng_from_seed, FeasibleRegion, Policy, SystemParams};

fn main() -> d2d_collab::Result<()> {
    let mut args = std::env::args().skip(1);
    let slots: usize = args.next().map_or(100, |a| a.parse().expect("slot count"));
    let seeds: u64 = args.next().map_or(8, |a| a.parse().expect("seed count"));
    let params = SystemParams::default();
    // Endpoints as computed by the feasible_region example.
    let region = FeasibleRegion::from_endpoints(0.49953, 0.72978)?;

    println!("{:>5} {:>9} {:>11} {:>9} {:>8} {:>8}", "V", "policy", "utility", "cost", "max X", "bound");
    for v in [5.0, 10.0, 20.0, 50.0, 100.0] {
        let bound = queue_bound(v, &region, &params)?;
        for policy in Policy::ALL {
            let traces = (0..seeds)
                .map(|s| run_horizon(slots, v, policy, &region, &params, &mut rng_from_seed(s)))
                .collect::<d2d_collab::Result<Vec<_>>>()?;
            let row = SweepRow::from_traces(&traces, bound)?;
            println!(
                "{v:>5} {:>9} {:>11.6} {:>9.6} {:>8.4} {:>8.4}",
                policy.name(),
                row.avg_utility,
                row.avg_cost,
                row.max_backlog,
                row.bound
            );
        }
    }
    Ok(())
}
