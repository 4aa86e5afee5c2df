//! Builds configuration-model graphs and checks that neighbour degrees follow
//! `k' p(k') / kbar` regardless of the user's own degree.
//!
//! ```sh
//! cargo run --release --example configuration_graph -- 800 edges.txt
//! ```

use std::fs::File;
use std::io::BufWriter;

use d2d_collab::graph::{build_configuration_graph, empirical_conditional_degree_pmf, DynamicGraphModel};
use d2d_collab::{rng_from_seed, DegreeProfile};

fn main() -> d2d_collab::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(800, |a| a.parse().expect("user count"));
    let edge_file = args.next();
    let profile = DegreeProfile::uniform(6, 9)?;
    let mut rng = rng_from_seed(1);

    let graph = build_configuration_graph(n, &profile, &mut rng)?;
    graph.check_invariants()?;
    let mean = graph.degrees().iter().sum::<usize>() as f64 / n as f64;
    println!(
        "static: {n} users, {} edges, mean realized degree {mean:.3}, {} component(s)",
        graph.edge_count(),
        graph.component_count()
    );

    let table = empirical_conditional_degree_pmf(&graph).expect("graph has edges");
    println!("{:>3} {:>7}  p(k'|k) for k' = 6..9           TV", "k", "ends");
    for &k in profile.support() {
        let row: Vec<String> = profile.support().iter().map(|&kp| format!("{:.3}", table.prob(kp, k))).collect();
        let tv = table.tv_to_uncorrelated(k, &profile).unwrap_or(f64::NAN);
        println!("{k:>3} {:>7}  {}   {tv:.4}", table.row_total(k), row.join("  "));
    }
    let target: Vec<String> = profile.support().iter().map(|&kp| format!("{:.3}", profile.neighbor_pmf(kp))).collect();
    println!("target       {}", target.join("  "));

    let mut dynamic = DynamicGraphModel::new(1000, &profile, 1.0, &mut rng)?;
    for step in 0..3 {
        let g = dynamic.regenerate(&mut rng);
        let isolated = (0..g.n_users()).filter(|&u| g.degree(u) == 0).count();
        let mean = g.degrees().iter().sum::<usize>() as f64 / g.n_users() as f64;
        println!("dynamic regeneration {step}: {} edges, mean degree {mean:.3}, {isolated} isolated", g.edge_count());
    }

    if let Some(path) = edge_file {
        graph.write_edge_list(BufWriter::new(File::create(&path)?))?;
        println!("edge list written to {path}");
    }
    Ok(())
}
