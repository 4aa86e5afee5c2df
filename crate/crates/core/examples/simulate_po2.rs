//! Simulates 800 users on a static configuration graph and 1000 users on a
//! dynamic one, then compares late-window busy fractions with the mean field.
//!
//! ```sh
//! cargo run --release --example simulate_po2 -- 8
//! ```

use d2d_collab::meanfield::SolverOptions;
use d2d_collab::simulator::run_simulation;
use d2d_collab::{GraphMode, MeanField, SimConfig};
use rayon::prelude::*;

fn main() -> d2d_collab::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(8, |a| a.parse().expect("seed count"));
    // x_c * lambda = 0.7 with lambda = 0.9.
    let x = 1.0 - 0.7 / 0.9;
    let base = SimConfig::evaluation(x, 0);
    let sp = MeanField::new(base.profile.clone(), base.lambda, base.mu, 1.0 - x)?
        .stationary_point(SolverOptions::default())?;

    for (mode, n) in [(GraphMode::Static, 800), (GraphMode::Dynamic, 1000)] {
        let runs = (0..seeds)
            .into_par_iter()
            .map(|seed| run_simulation(&SimConfig { mode, n_users: n, seed, ..base.clone() }))
            .collect::<d2d_collab::Result<Vec<_>>>()?;
        println!("{mode:?}, n = {n}, {seeds} seeds");
        for i in 1..=2 {
            for &k in base.profile.support() {
                let sim: f64 = runs.iter().map(|r| r.late_window_average(k, i).unwrap()).sum::<f64>() / seeds as f64;
                let theory = sp.tail(k, i).unwrap();
                println!("  s[{k}][{i}]  theory {theory:.5}  simulated {sim:.5}  error {:+.5}", sim - theory);
            }
        }
        let c = &runs[0].counts;
        println!("  seed 0: {} generated, {} offloaded, {} forwarded, {} components", c.generated, c.offloaded, c.forwarded, runs[0].component_count);
    }
    Ok(())
}
