use d2d_collab::graph::{
    build_configuration_graph, configuration_graph, empirical_conditional_degree_pmf, sample_realized_degrees,
    DynamicGraphModel, Graph,
};
use d2d_collab::{rng_from_seed, DegreeProfile};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn uniform() -> DegreeProfile {
    DegreeProfile::uniform(6, 9).unwrap()
}

fn edge_set(g: &Graph) -> BTreeSet<(usize, usize)> {
    g.edges().collect()
}

#[test]
fn two_users_of_degree_one_share_an_edge() {
    let g = build_configuration_graph(2, &DegreeProfile::homogeneous(1).unwrap(), &mut rng_from_seed(0)).unwrap();
    assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
}

#[test]
fn four_users_of_degree_three() {
    let profile = DegreeProfile::homogeneous(3).unwrap();
    let mut complete = 0;
    for seed in 0..100 {
        let g = build_configuration_graph(4, &profile, &mut rng_from_seed(seed)).unwrap();
        g.check_invariants().unwrap();
        assert!(g.degrees().iter().all(|&d| d <= 3));
        if g.edge_count() == 6 {
            complete += 1;
        }
    }
    assert!(complete > 0);
}

#[test]
fn poisson_degree_moments() {
    let expected = vec![6; 100_000];
    let realized = sample_realized_degrees(&expected, &mut rng_from_seed(3)).unwrap();
    let n = realized.len() as f64;
    let mean = realized.iter().sum::<usize>() as f64 / n;
    let var = realized.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 6.0).abs() < 0.05, "mean {mean}");
    assert!((var - 6.0).abs() < 0.2, "variance {var}");
}

#[test]
fn poisson_degree_edge_cases() {
    assert!(sample_realized_degrees(&[0], &mut rng_from_seed(0)).is_err());
    let one = sample_realized_degrees(&[7], &mut rng_from_seed(0)).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn regeneration_changes_edges_not_expected_degrees() {
    let mut rng = rng_from_seed(11);
    let mut model = DynamicGraphModel::new(1000, &uniform(), 1.0, &mut rng).unwrap();
    let expected = model.expected_degrees().to_vec();
    let first = edge_set(model.current());
    let second = edge_set(model.regenerate(&mut rng));
    assert_ne!(first, second);
    assert_eq!(model.expected_degrees(), expected.as_slice());

    let mean = model.current().degrees().iter().sum::<usize>() as f64 / 1000.0;
    assert!((mean - 7.5).abs() < 0.3, "mean realized degree {mean}");
    model.current().check_invariants().unwrap();
}

#[test]
fn star_graph_conditional_degrees() {
    let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
    let t = empirical_conditional_degree_pmf(&g).unwrap();
    assert_eq!(t.prob(3, 1), 1.0);
    assert_eq!(t.prob(1, 3), 1.0);
}

#[test]
fn single_edge_conditional_degree() {
    let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
    assert_eq!(empirical_conditional_degree_pmf(&g).unwrap().prob(1, 1), 1.0);
    assert!(empirical_conditional_degree_pmf(&Graph::from_edges(3, &[]).unwrap()).is_none());
}

/// Every degree row of an 800-user configuration graph should sit within
/// 0.03 total variation of the uncorrelated law.
#[test]
fn conditional_degrees_match_uncorrelated_law_at_800() {
    let profile = uniform();
    let g = build_configuration_graph(800, &profile, &mut rng_from_seed(0)).unwrap();
    let t = empirical_conditional_degree_pmf(&g).unwrap();
    for &k in profile.support() {
        let tv = t.tv_to_uncorrelated(k, &profile).unwrap();
        assert!(tv <= 0.03, "k = {k}: TV {tv:.4}");
    }
}

#[test]
fn conditional_degree_error_shrinks_with_size() {
    let profile = uniform();
    let mean_tv = |n: usize| {
        let mut total = 0.0;
        for seed in 0..8 {
            let g = build_configuration_graph(n, &profile, &mut rng_from_seed(seed)).unwrap();
            let t = empirical_conditional_degree_pmf(&g).unwrap();
            total += profile.support().iter().map(|&k| t.tv_to_uncorrelated(k, &profile).unwrap()).sum::<f64>();
        }
        total / (8.0 * profile.len() as f64)
    };
    let (small, large) = (mean_tv(200), mean_tv(3200));
    assert!(large < small, "TV {large} at 3200 vs {small} at 200");
}

proptest! {
    #[test]
    fn configuration_graphs_are_simple(n in 2usize..60, k_min in 1usize..5, spread in 0usize..4, seed: u64) {
        let profile = DegreeProfile::uniform(k_min, k_min + spread).unwrap();
        let g = build_configuration_graph(n, &profile, &mut rng_from_seed(seed)).unwrap();
        prop_assert!(g.check_invariants().is_ok());
        prop_assert_eq!(g.n_users(), n);
        prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
    }

    #[test]
    fn pruning_only_removes(n in 2usize..80, d in 1usize..8, seed: u64) {
        prop_assume!(n * d % 2 == 0);
        let g = configuration_graph(vec![d; n], &mut rng_from_seed(seed));
        prop_assert!(g.degrees().iter().sum::<usize>() <= n * d);
        prop_assert!(g.degrees().iter().all(|&x| x <= d));
    }

    #[test]
    fn regenerated_graphs_are_simple(n in 2usize..80, seed: u64) {
        let mut rng = rng_from_seed(seed);
        let mut model = DynamicGraphModel::new(n, &uniform(), 1.0, &mut rng).unwrap();
        prop_assert!(model.regenerate(&mut rng).check_invariants().is_ok());
    }
}
