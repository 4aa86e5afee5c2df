//! Virtual-queue backlog under the optimal price for a few values of V,
//! written as `n X` columns next to the worst-case bound.
//!
//! ```sh
//! cargo run --release --example queue_trace -- 10000 trace.dat
//! ```

use std::io::Write;

use d2d_collab::offload::OffloadModel;
use d2d_collab::pricing::{backlog_threshold, queue_bound, run_horizon};
use d2d_collab::{rng_from_seed, DegreeProfile, Policy, SystemParams};

fn main() -> d2d_collab::Result<()> {
    let mut args = std::env::args().skip(1);
    let slots: usize = args.next().map_or(10_000, |a| a.parse().expect("slot count"));
    let out = args.next();
    let params = SystemParams::default();
    let region = OffloadModel::new(params.clone(), DegreeProfile::uniform(6, 9)?)?.feasible_region()?;
    println!("region [{:.5}, {:.5}]", region.x_l, region.x_u);

    let mut file = match &out {
        Some(path) => Some(std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => None,
    };
    for v in [5.0, 20.0, 100.0] {
        let trace = run_horizon(slots, v, Policy::Optimal, &region, &params, &mut rng_from_seed(0))?;
        println!(
            "V = {v:>5}: X* = {:.4}, max X = {:.4}, bound {:.4}, average x lambda = {:.5}",
            backlog_threshold(v, &region, &params)?,
            trace.max_backlog(),
            queue_bound(v, &region, &params)?,
            trace.average_offload_rate(params.lambda)
        );
        if let Some(f) = file.as_mut() {
            writeln!(f, "# V = {v}")?;
            for s in &trace.slots {
                writeln!(f, "{} {}", s.n, s.backlog)?;
            }
            writeln!(f)?;
        }
    }
    if let Some(path) = out {
        println!("wrote {path}");
    }
    Ok(())
}
