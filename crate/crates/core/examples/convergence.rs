//! Late-window spread of the lowest-degree busy fraction as the population
//! grows, on static and dynamic graphs.
//!
//! ```sh
//! cargo run --release --example convergence -- 8
//! ```

use d2d_collab::meanfield::SolverOptions;
use d2d_collab::simulator::convergence_study;
use d2d_collab::{GraphMode, MeanField, SimConfig};

fn main() -> d2d_collab::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(8, |a| a.parse().expect("seed count"));
    let seeds: Vec<u64> = (0..seeds).collect();
    let x = 1.0 - 0.7 / 0.9;
    let base = SimConfig::evaluation(x, 0);
    let k_min = base.profile.k_min();
    let reference = MeanField::new(base.profile.clone(), base.lambda, base.mu, 1.0 - x)?
        .stationary_point(SolverOptions::default())?
        .tail(k_min, 1)
        .unwrap();
    println!("s*[{k_min}][1] = {reference:.5}");

    for (mode, sizes) in [(GraphMode::Static, [100, 300, 800]), (GraphMode::Dynamic, [100, 300, 1000])] {
        let study = convergence_study(&SimConfig { mode, ..base.clone() }, &sizes, &seeds, reference)?;
        println!("{mode:?}");
        for s in &study {
            println!(
                "  n = {:>5}  late variance {:.3e}  mean |s_hat - s*| {:.4}",
                s.n_users, s.late_variance, s.late_deviation
            );
        }
    }
    Ok(())
}
