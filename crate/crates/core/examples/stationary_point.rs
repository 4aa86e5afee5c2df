//! Solves the degree-class mean field at the evaluation load and prints the
//! stationary tails next to their bounds.
//!
//! ```sh
//! cargo run --release --example stationary_point -- 0.7
//! ```

use std::time::Instant;

use d2d_collab::meanfield::{busy_probability, recursion_residual, SolverOptions};
use d2d_collab::{DegreeProfile, MeanField};

fn main() -> d2d_collab::Result<()> {
    let load: f64 = std::env::args().nth(1).map_or(0.7, |a| a.parse().expect("load must be a number"));
    let profile = DegreeProfile::uniform(6, 9)?;
    // lambda = 1 so that x_c equals the collaborative load.
    let model = MeanField::new(profile.clone(), 1.0, 1.0, load)?.with_depth(16);

    let started = Instant::now();
    let sp = model.stationary_point(SolverOptions::default().cross_checked())?;
    println!(
        "x_c*lambda = {load}: {} iterations, residual {:.1e}, ODE agreement {:.1e}, {:.2?}",
        sp.iterations,
        sp.residual,
        sp.ode_agreement.unwrap_or(f64::NAN),
        started.elapsed()
    );

    println!("{:>3} {:>10} {:>10} {:>10} {:>10}", "i", "k=6", "k=7", "k=8", "k=9");
    for i in 1..=4 {
        let row: Vec<String> = profile
            .support()
            .iter()
            .map(|&k| format!("{:>10.5}", sp.tail(k, i).unwrap()))
            .collect();
        let (lo, hi) = model.tail_bounds(i)?;
        println!("{i:>3} {}   bounds [{lo:.5}, {hi:.5}]", row.join(" "));
    }
    println!("busy probability   {:.9}", busy_probability(&sp));
    println!("mean workload      {:.6}", sp.mean_workload);
    println!("recursion residual {:.2e}", recursion_residual(&sp));
    Ok(())
}
