use d2d_collab::meanfield::{
    busy_probability, checks, degree_monotonicity_violation, lyapunov_phi, recursion_residual,
    tail_bound_violation, IntegrateOptions, SolverOptions, DEFAULT_DT,
};
use d2d_collab::{rng_from_seed, DegreeProfile, MeanField, MeanFieldState};
use proptest::prelude::*;

fn uniform() -> DegreeProfile {
    DegreeProfile::uniform(6, 9).unwrap()
}

fn table1_model() -> MeanField {
    MeanField::new(uniform(), 0.7, 1.0, 1.0).unwrap().with_depth(16)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn table1_stationary_point() {
    let sp = table1_model().stationary_point(SolverOptions::default()).unwrap();
    let expected = [
        (6, 1, 0.66504),
        (7, 1, 0.68972),
        (8, 1, 0.71230),
        (9, 1, 0.73295),
        (6, 2, 0.30585),
        (9, 2, 0.38302),
    ];
    for (k, i, v) in expected {
        let got = sp.tail(k, i).unwrap();
        assert!(close(got, v, 1e-3), "s*[{k}][{i}] = {got}, want {v}");
    }
    assert!(sp.residual <= 1e-9);
}

#[test]
fn fixed_point_agrees_with_long_ode() {
    let sp = table1_model()
        .stationary_point(SolverOptions::default().cross_checked())
        .unwrap();
    assert!(sp.ode_agreement.unwrap() <= 1e-8);
}

#[test]
fn homogeneous_closed_form() {
    let profile = DegreeProfile::homogeneous(7).unwrap();
    for step in 1..=9 {
        let rho = step as f64 / 10.0;
        let model = MeanField::new(profile.clone(), rho, 1.0, 1.0).unwrap();
        let sp = model.stationary_point(SolverOptions::default()).unwrap();
        for i in 0..=model.depth() {
            let want = rho.powf(2f64.powi(i as i32) - 1.0);
            let got = sp.tail(7, i).unwrap();
            assert!(close(got, want, 1e-6), "rho {rho}, i {i}: {got} vs {want}");
        }
    }
}

#[test]
fn zero_collaboration_leaves_queues_empty() {
    let sp = MeanField::new(uniform(), 0.9, 1.0, 0.0)
        .unwrap()
        .stationary_point(SolverOptions::default())
        .unwrap();
    let w = sp.state.depth() + 1;
    assert!(sp.state.as_slice().iter().enumerate().all(|(j, &v)| j % w == 0 || v == 0.0));
    assert_eq!(busy_probability(&sp), 0.0);
}

#[test]
fn busy_probability_is_load() {
    for a in [0.7, 0.45] {
        let sp = MeanField::new(uniform(), a, 1.0, 1.0)
            .unwrap()
            .stationary_point(SolverOptions::default())
            .unwrap();
        assert!(close(busy_probability(&sp), a, 1e-6));
    }
}

#[test]
fn empty_state_drift() {
    let model = table1_model();
    let d = model.drift(&model.empty_state()).unwrap();
    for (c, &k) in uniform().support().iter().enumerate() {
        assert!(close(d.get(c, 1), 0.7 * (7.5 + k as f64) / 15.0, 1e-12));
        assert!((2..=16).all(|i| d.get(c, i) == 0.0));
        assert_eq!(d.get(c, 0), 0.0);
    }
}

#[test]
fn homogeneous_drift_is_classical() {
    let model = MeanField::new(DegreeProfile::homogeneous(5).unwrap(), 0.8, 1.0, 1.0).unwrap().with_depth(6);
    let s = MeanFieldState::random(1, 6, &mut rng_from_seed(2));
    let d = model.drift(&s).unwrap();
    for i in 1..=6 {
        let next = if i < 6 { s.get(0, i + 1) } else { 0.0 };
        let want = 0.8 * (s.get(0, i - 1).powi(2) - s.get(0, i).powi(2)) - (s.get(0, i) - next);
        assert!(close(d.get(0, i), want, 1e-12));
    }
}

#[test]
fn drift_rejects_wrong_shape() {
    assert!(table1_model().drift(&MeanFieldState::empty(3, 16)).is_err());
}

#[test]
fn stationary_start_stays_put() {
    let model = table1_model();
    let sp = model.stationary_point(SolverOptions::default()).unwrap();
    let traj = model.integrate(&sp.state, IntegrateOptions::new(10.0, DEFAULT_DT)).unwrap();
    assert!(traj.last().sup_distance(&sp.state) <= 1e-8);
}

#[test]
fn heavy_homogeneous_start_converges() {
    let model = MeanField::new(DegreeProfile::homogeneous(4).unwrap(), 0.7, 1.0, 1.0).unwrap().with_depth(12);
    let heavy = MeanFieldState::saturated_to(1, 12, 3);
    let traj = model.integrate(&heavy, IntegrateOptions::new(100.0, DEFAULT_DT).stride(1000)).unwrap();
    let end = traj.last();
    assert!(close(end.get(0, 1), 0.7, 1e-4));
    assert!(close(end.get(0, 2), 0.343, 1e-4));
    assert!(close(end.get(0, 3), 0.7f64.powi(7), 1e-4));
}

#[test]
fn stability_violation_is_infeasible() {
    let model = MeanField::new(uniform(), 0.95, 1.0, 1.0).unwrap();
    assert!(matches!(
        model.stationary_point(SolverOptions::default()),
        Err(d2d_collab::Error::Infeasible(_))
    ));
    assert!(model.tail_bounds(1).is_err());
}

#[test]
fn tail_bounds() {
    let model = table1_model();
    assert_eq!(model.tail_bounds(0).unwrap(), (1.0, 1.0));
    let (lo, hi) = model.tail_bounds(1).unwrap();
    assert!(close(lo, 0.63, 1e-12) && close(hi, 0.77, 1e-12));
    let sp = model.stationary_point(SolverOptions::default()).unwrap();
    assert!(tail_bound_violation(&model, &sp).unwrap() <= 1e-9);
}

#[test]
fn recursion_identity() {
    let sp = table1_model().stationary_point(SolverOptions::default()).unwrap();
    assert!(recursion_residual(&sp) <= 1e-6);
    assert!(close(sp.aggregates[1], 0.7 * sp.aggregates[0] * sp.weighted_aggregates[0] / (7.5 * 1.0), 1e-8));

    let hom = MeanField::new(DegreeProfile::homogeneous(8).unwrap(), 0.6, 1.0, 1.0)
        .unwrap()
        .stationary_point(SolverOptions::default())
        .unwrap();
    for i in 1..hom.aggregates.len() {
        assert!(close(hom.aggregates[i], 0.6 * hom.aggregates[i - 1].powi(2), 1e-9));
    }
}

#[test]
fn degree_monotonicity() {
    let sp = table1_model().stationary_point(SolverOptions::default()).unwrap();
    assert_eq!(degree_monotonicity_violation(&sp), 0.0);
}

#[test]
fn phi_examples() {
    let model = table1_model();
    let sp = model.stationary_point(SolverOptions::default()).unwrap();
    assert_eq!(lyapunov_phi(&sp.state, &sp).unwrap(), 0.0);

    let eps = 1e-3;
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            let mut row = sp.state.row(c).to_vec();
            for v in row.iter_mut().skip(1) {
                *v += eps;
            }
            row
        })
        .collect();
    let shifted = MeanFieldState::from_rows(&rows).unwrap();
    let want = eps * (1..=16).map(|i| 0.5f64.powi(i)).sum::<f64>();
    assert!(close(lyapunov_phi(&shifted, &sp).unwrap(), want, 1e-15));
}

#[test]
fn lipschitz_ratio_within_constant() {
    let model = table1_model();
    assert!(close(model.lipschitz_constant(), 6.62, 1e-12));
    let ratio = model.lipschitz_check(200, &mut rng_from_seed(5)).unwrap();
    assert!(ratio <= model.lipschitz_constant(), "{ratio}");

    let hom = MeanField::new(DegreeProfile::homogeneous(6).unwrap(), 0.8, 1.0, 1.0).unwrap();
    assert!(close(hom.lipschitz_constant(), 6.0 * 0.8 + 2.0, 1e-12));
    assert!(hom.lipschitz_check(200, &mut rng_from_seed(6)).unwrap() <= hom.lipschitz_constant());
}

#[test]
fn dominance_is_preserved() {
    let report = checks::dominance(&table1_model(), 20, 20.0, &mut rng_from_seed(7)).unwrap();
    assert_eq!(report.pairs, 20);
    assert!(report.worst_violation <= 1e-9, "{}", report.worst_violation);
}

/// `phi(t) <= phi(0) e^{-t/2}` from states above and below the fixed point.
#[test]
fn lyapunov_decay_at_half_rate() {
    let model = table1_model();
    let sp = model.stationary_point(SolverOptions::default()).unwrap();
    let report = checks::lyapunov_decay(&model, &sp, 10, 0.5, 20.0, &mut rng_from_seed(8)).unwrap();
    assert!(report.worst_ratio <= 1.0, "worst ratio {}", report.worst_ratio);
}

fn profile_strategy() -> impl Strategy<Value = DegreeProfile> {
    (1usize..12, 0usize..5).prop_map(|(lo, spread)| DegreeProfile::uniform(lo, lo + spread).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn drift_row_zero_vanishes(profile in profile_strategy(), a in 0.05f64..2.0, seed: u64) {
        let model = MeanField::new(profile.clone(), a, 1.0, 1.0).unwrap().with_depth(8);
        let s = MeanFieldState::random(profile.len(), 8, &mut rng_from_seed(seed));
        let d = model.drift(&s).unwrap();
        prop_assert!((0..profile.len()).all(|c| d.get(c, 0) == 0.0));
    }

    #[test]
    fn stationary_points_are_structured(profile in profile_strategy(), frac in 0.05f64..0.95) {
        let a = frac * 2.0 / (1.0 + profile.delta1());
        let model = MeanField::new(profile, a, 1.0, 1.0).unwrap();
        let sp = model.stationary_point(SolverOptions::default()).unwrap();
        prop_assert!(sp.state.validate(0.0).is_ok());
        prop_assert!(degree_monotonicity_violation(&sp) <= 1e-12);
        prop_assert!(tail_bound_violation(&model, &sp).unwrap() <= 1e-8);
        prop_assert!(recursion_residual(&sp) <= 1e-6);
        prop_assert!((busy_probability(&sp) - a).abs() <= 1e-6);
    }

    #[test]
    fn integration_keeps_states_valid(seed: u64) {
        let model = table1_model();
        let s = MeanFieldState::random(4, 16, &mut rng_from_seed(seed));
        let traj = model.integrate(&s, IntegrateOptions::new(5.0, DEFAULT_DT).stride(50)).unwrap();
        for st in &traj.states {
            prop_assert!(st.validate(1e-9).is_ok());
        }
    }
}
