//! Finds the offloading probabilities that meet both the delay cap and the
//! fairness cap under the evaluation parameters, then shows the users'
//! threshold response to a few prices.
//!
//! ```sh
//! cargo run --release --example feasible_region
//! ```

use std::time::Instant;

use d2d_collab::offload::{offload_decision, system_cost, OffloadModel};
use d2d_collab::{DegreeProfile, SystemParams};

fn main() -> d2d_collab::Result<()> {
    let params = SystemParams::default();
    let model = OffloadModel::new(params.clone(), DegreeProfile::uniform(6, 9)?)?;

    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "x", "d_o", "d_q", "delay", "gap");
    for j in 0..=10 {
        let x = j as f64 / 10.0;
        let d = model.delay_components(x)?;
        println!(
            "{x:>5.2} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            d.offload,
            d.queueing,
            d.total(),
            model.fairness_gap(x)?
        );
    }

    let started = Instant::now();
    let region = model.feasible_region()?;
    println!("\nsearch took {:.2?}", started.elapsed());
    println!("{}", serde_json::to_string_pretty(&region.report())?);

    println!("\nthreshold price {:.5}", params.threshold_price());
    for p in [0.1, 0.42, 0.45, 0.5] {
        let x = offload_decision(p, &region, &params);
        println!("price {p:.2} -> x = {x:.5}, user cost {:.5}", system_cost(x, p, &params));
    }
    Ok(())
}
