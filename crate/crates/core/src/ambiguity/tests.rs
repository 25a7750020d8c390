use super::*;
use proptest::prelude::*;

fn unit_grid(n: usize) -> Vec<Vec<f64>> {
    linspace(0.0, 1.0, n).into_iter().map(|v| vec![v]).collect()
}

fn closed_form(p0: f64, delta: f64) -> f64 {
    p0 - (p0 * delta).sqrt()
}

/// Minimizes `q` over a fine grid subject to `2 (q - 1/2)^2 <= delta`.
fn grid_two_point_f2(delta: f64) -> f64 {
    (0..=2_000_000)
        .map(|i| i as f64 / 2_000_000.0)
        .filter(|q| 2.0 * (q - 0.5) * (q - 0.5) <= delta)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn wasserstein_bernoulli_closed_form() {
    let center = DiscreteMeasure::two_point(0.5).unwrap();
    let cands = unit_grid(2001);
    let spec = AmbiguitySpec::wasserstein(0.09, Cost::SquaredEuclidean);
    let r = worst_case_wasserstein(|w| w[0], &center, &spec, &cands).unwrap();
    assert!((closed_form(0.5, 0.09) - 0.287868).abs() < 1e-6);
    assert!((r.value - 0.287868).abs() < 5e-4, "{r:?}");
    assert!(r.certificate_gap >= -1e-9 && r.certificate_gap < 1e-6);

    let r0 = worst_case_wasserstein(|w| w[0], &center, &spec.with_delta(0.0), &cands).unwrap();
    assert_eq!(r0.value, 0.5);
    assert_eq!(r0.dual_point, 0.0);

    let r5 = worst_case_wasserstein(|w| w[0], &center, &spec.with_delta(0.5), &cands).unwrap();
    assert!(r5.value.abs() < 5e-4, "{r5:?}");
}

#[test]
fn wasserstein_closed_form_across_p() {
    let cands = unit_grid(2001);
    for &(p0, delta) in &[(0.5, 0.01), (0.3, 0.05), (0.4, 0.02), (0.9, 0.1)] {
        let center = DiscreteMeasure::two_point(p0).unwrap();
        let spec = AmbiguitySpec::wasserstein(delta, Cost::SquaredEuclidean);
        let r = worst_case_wasserstein(|w| w[0], &center, &spec, &cands).unwrap();
        let exact = closed_form(p0, delta).max((p0 - delta) / 2.0);
        assert!((r.value - exact).abs() < 5e-4, "p0={p0} delta={delta}: {} vs {exact}", r.value);
    }
}

#[test]
fn wasserstein_errors() {
    let center = DiscreteMeasure::two_point(0.5).unwrap();
    let spec = AmbiguitySpec::wasserstein(0.1, Cost::SquaredEuclidean);
    assert_eq!(worst_case_wasserstein(|w| w[0], &center, &spec, &[]).unwrap_err(), AmbiguityError::EmptyCandidates);
    assert_eq!(
        worst_case_wasserstein(|w| w[0], &center, &spec, &[vec![0.0], vec![0.5]]).unwrap_err(),
        AmbiguityError::AtomNotInCandidates { atom: 1 }
    );
    assert!(matches!(
        worst_case_wasserstein(|w| 1.0 / w[0], &center, &spec, &unit_grid(11)),
        Err(AmbiguityError::NonFiniteFunctionValue { .. })
    ));
}

#[test]
fn fk_two_point_f2() {
    let oracle = grid_two_point_f2(0.08);
    assert!((oracle - 0.3).abs() < 1e-6);
    let center = DiscreteMeasure::two_point(0.5).unwrap();
    let spec = AmbiguitySpec::fk(2.0, 0.08);
    let r = worst_case_fk(|w| w[0], &center, &spec).unwrap();
    assert!((r.value - oracle).abs() < 1e-6, "{r:?}");
    assert!(r.certificate_gap.abs() <= 1e-6);
    assert!((r.worst_measure.weight_of(&[1.0]) - 0.3).abs() < 1e-6);
    let q = [r.worst_measure.weight_of(&[0.0]), r.worst_measure.weight_of(&[1.0])];
    assert!(fk_divergence(2.0, &q, center.weights()) <= 0.08 + 1e-8);
}

#[test]
fn fk_trivial_cases() {
    let center = DiscreteMeasure::from_scalars(&[0.0, 0.4, 1.0], &[0.2, 0.5, 0.3]).unwrap();
    let mean = center.expectation(|w| w[0] * w[0]).unwrap();
    for &k in &[1.5, 2.0, 4.0] {
        let r = worst_case_fk(|w| w[0] * w[0], &center, &AmbiguitySpec::fk(k, 0.0)).unwrap();
        assert_eq!(r.value, mean);
        for &delta in &[0.0, 0.1, 3.0] {
            let r = worst_case_fk(|_| 0.45, &center, &AmbiguitySpec::fk(k, delta)).unwrap();
            assert_eq!(r.value, 0.45);
        }
    }
    assert_eq!(
        worst_case_fk(|w| w[0], &center, &AmbiguitySpec::fk(1.0, 0.1)).unwrap_err(),
        AmbiguityError::InvalidK(1.0)
    );
}

#[test]
fn fk_small_radius_needs_wide_eta_bracket() {
    let center = DiscreteMeasure::two_point(0.5).unwrap();
    let spec = AmbiguitySpec::fk(2.0, 1e-4);
    let r = worst_case_fk(|w| w[0], &center, &spec).unwrap();
    // 2 (q - 1/2)^2 = 1e-4
    let exact = 0.5 - (0.5e-4f64).sqrt();
    assert!((r.value - exact).abs() < 1e-7, "{} vs {exact}", r.value);
    assert!(r.dual_point > 2.0);
}

#[test]
fn fk_large_radius_concentrates() {
    let center = DiscreteMeasure::two_point(0.5).unwrap();
    let r = worst_case_fk(|w| w[0], &center, &AmbiguitySpec::fk(2.0, 10.0)).unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(r.worst_measure.weight_of(&[0.0]), 1.0);
}

#[test]
fn oracles_on_examples() {
    let center = DiscreteMeasure::two_point(0.5).unwrap();
    let cands = unit_grid(2001);
    let spec = AmbiguitySpec::wasserstein(0.09, Cost::SquaredEuclidean);
    let primal = brute_force_wasserstein(|w| w[0], &center, &spec, &cands).unwrap();
    let dual = worst_case_wasserstein(|w| w[0], &center, &spec, &cands).unwrap().value;
    assert!((primal - 0.287868).abs() < 5e-4);
    assert!((primal - dual).abs() < 1e-6, "{primal} vs {dual}");

    let far = spec.with_delta(5.0);
    let v = brute_force_wasserstein(|w| (w[0] - 0.3).abs(), &center, &far, &cands).unwrap();
    assert!(v.abs() < 1e-12);

    let single = DiscreteMeasure::dirac(vec![0.7]).unwrap();
    let v = brute_force_wasserstein(|w| w[0] * 3.0, &single, &spec, &[vec![0.7]]).unwrap();
    assert!((v - 2.1).abs() < 1e-15);

    let fk = AmbiguitySpec::fk(2.0, 0.08);
    assert!((brute_force_fk(|w| w[0], &center, &fk).unwrap() - 0.3).abs() < 1e-5);
    assert_eq!(brute_force_fk(|w| w[0], &center, &fk.with_delta(0.0)).unwrap(), 0.5);
    assert_eq!(brute_force_fk(|_| 0.2, &center, &fk).unwrap(), 0.2);
}

#[test]
fn oracle_size_limits() {
    let atoms: Vec<f64> = (0..13).map(|i| i as f64).collect();
    let w = vec![1.0 / 13.0; 13];
    let center = DiscreteMeasure::from_scalars(&atoms, &w).unwrap();
    assert!(matches!(
        brute_force_fk(|w| w[0], &center, &AmbiguitySpec::fk(2.0, 0.1)),
        Err(AmbiguityError::SizeLimitExceeded { .. })
    ));
    let cands: Vec<Vec<f64>> = (0..100_000).map(|i| vec![i as f64 * 1e-3]).collect();
    assert!(matches!(
        brute_force_wasserstein(|w| w[0], &center, &AmbiguitySpec::wasserstein(0.1, Cost::Euclidean), &cands),
        Err(AmbiguityError::SizeLimitExceeded { .. })
    ));
}

fn random_center(atoms: &[f64], raw: &[f64]) -> DiscreteMeasure {
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    DiscreteMeasure::from_scalars(atoms, &w).unwrap()
}

fn wasserstein_case() -> impl Strategy<Value = (Vec<u8>, Vec<f64>, Vec<f64>, f64, bool)> {
    (1usize..=6).prop_flat_map(|m| {
        (
            prop::collection::vec(0u8..21, m),
            prop::collection::vec(0.05f64..1.0, m),
            prop::collection::vec(0.0f64..1.0, 21),
            0.0f64..0.3,
            any::<bool>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_dual_matches_primal((idx, raw, table, delta, sq) in wasserstein_case()) {
        let cands = unit_grid(21);
        let atoms: Vec<f64> = idx.iter().map(|&i| cands[i as usize][0]).collect();
        let center = random_center(&atoms, &raw);
        let cost = if sq { Cost::SquaredEuclidean } else { Cost::Euclidean };
        let spec = AmbiguitySpec::wasserstein(delta, cost);
        let g = |w: &[f64]| table[(w[0] * 20.0).round() as usize];
        let dual = worst_case_wasserstein(g, &center, &spec, &cands).unwrap();
        let primal = brute_force_wasserstein(g, &center, &spec, &cands).unwrap();
        prop_assert!((dual.value - primal).abs() <= 1e-5, "dual {} primal {}", dual.value, primal);
        prop_assert!(dual.certificate_gap >= -1e-9);
        let mean = center.expectation(g).unwrap();
        let gmin = table.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(dual.value <= mean + 1e-9 && dual.value >= gmin - 1e-9);
        let shifted = worst_case_wasserstein(|w| g(w) + 1.7, &center, &spec, &cands).unwrap();
        prop_assert!((shifted.value - dual.value - 1.7).abs() <= 1e-9);
    }

    #[test]
    fn fk_dual_matches_primal(
        atoms in prop::collection::vec(-2.0f64..2.0, 1..=6),
        raw in prop::collection::vec(0.05f64..1.0, 6),
        k in 1.2f64..4.0,
        delta in 0.0f64..1.0,
    ) {
        let center = random_center(&atoms, &raw[..atoms.len()]);
        let spec = AmbiguitySpec::fk(k, delta);
        let g = |w: &[f64]| (3.0 * w[0]).sin();
        let dual = worst_case_fk(g, &center, &spec).unwrap();
        let primal = brute_force_fk(g, &center, &spec).unwrap();
        prop_assert!((dual.value - primal).abs() <= 1e-5, "dual {} primal {}", dual.value, primal);
        prop_assert!(dual.certificate_gap >= -1e-9 && dual.certificate_gap <= 1e-6);
        let shifted = worst_case_fk(|w| g(w) - 0.6, &center, &spec).unwrap();
        prop_assert!((shifted.value - dual.value + 0.6).abs() <= 1e-9);
    }

    #[test]
    fn value_nonincreasing_in_delta(
        atoms in prop::collection::vec(0u8..11, 1..=6),
        raw in prop::collection::vec(0.05f64..1.0, 6),
        table in prop::collection::vec(0.0f64..1.0, 11),
    ) {
        let cands = unit_grid(11);
        let center = random_center(&atoms.iter().map(|&i| i as f64 / 10.0).collect::<Vec<_>>(), &raw[..atoms.len()]);
        let g = |w: &[f64]| table[(w[0] * 10.0).round() as usize];
        let mut prev_w = f64::INFINITY;
        let mut prev_f = f64::INFINITY;
        for i in 0..12 {
            let delta = i as f64 * 0.05;
            let w = worst_case_wasserstein(g, &center, &AmbiguitySpec::wasserstein(delta, Cost::SquaredEuclidean), &cands).unwrap().value;
            let f = worst_case_fk(g, &center, &AmbiguitySpec::fk(2.0, delta)).unwrap().value;
            prop_assert!(w <= prev_w + 1e-9);
            prop_assert!(f <= prev_f + 1e-9);
            prev_w = w;
            prev_f = f;
        }
    }
}

#[test]
fn worst_measure_within_budget() {
    let center = random_center(&[0.0, 0.3, 0.8], &[0.3, 0.3, 0.4]);
    let cands = unit_grid(51);
    let spec = AmbiguitySpec::wasserstein(0.05, Cost::Euclidean);
    let problem = InnerProblem::new(spec, center.clone(), &cands, DualTolerances::default()).unwrap();
    let g: Vec<f64> = problem.points().iter().map(|p| (5.0 * p[0]).cos()).collect();
    let sol = problem.solve(&g).unwrap();
    assert!(sol.certificate_gap >= -1e-9 && sol.certificate_gap < 1e-7, "{sol:?}");
    let total: f64 = sol.mass.iter().map(|m| m.1).sum();
    assert!((total - 1.0).abs() < 1e-12);
}
