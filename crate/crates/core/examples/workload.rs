//! Mean queue length under D2D collaboration against an isolated M/M/1 queue
//! fed the same load.
//!
//! ```sh
//! cargo run --release --example workload
//! ```

use d2d_collab::meanfield::SolverOptions;
use d2d_collab::simulator::mm1_mean_workload;
use d2d_collab::{DegreeProfile, MeanField};

fn main() -> d2d_collab::Result<()> {
    let profiles = [
        ("uniform 6..9", DegreeProfile::uniform(6, 9)?),
        ("degree 9 only", DegreeProfile::homogeneous(9)?),
    ];
    println!("{:>5} {:>10} {:>14} {:>14} {:>10}", "load", "M/M/1", "uniform 6..9", "degree 9 only", "reduction");
    for step in 1..=9 {
        let load = step as f64 / 10.0;
        let mm1 = mm1_mean_workload(load, 1.0)?;
        let mut w = Vec::new();
        for (_, profile) in &profiles {
            let sp = MeanField::new(profile.clone(), load, 1.0, 1.0)?.stationary_point(SolverOptions::default())?;
            w.push(sp.mean_workload);
        }
        println!("{load:>5.1} {mm1:>10.4} {:>14.4} {:>14.4} {:>9.1}%", w[0], w[1], 100.0 * (1.0 - w[0] / mm1));
    }
    Ok(())
}
