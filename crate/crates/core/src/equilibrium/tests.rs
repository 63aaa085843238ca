use super::jacobian::{adjugate_numerator, t_terms_at};
use super::*;
use crate::kernel::{mc_choice_probs, normal_cdf, ProbabilityRule};
use crate::model::gamma_tilde;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn intercept() -> CovariateDist {
    CovariateDist::point(vec![1.0])
}

fn reference_theta(delta_a: f64, delta_b: f64) -> Theta {
    Theta::additive(vec![delta_a], vec![delta_b], 2.46, 0.36, 1.05, -0.70).unwrap()
}

fn random_share(rng: &mut ChaCha8Rng) -> ShareVector {
    let u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let p_a = 0.9 * u[0];
    let p_b = (1.0 - p_a) * 0.9 * u[1];
    let p_ab = (1.0 - p_a - p_b) * 0.9 * u[2];
    ShareVector::new(p_a, p_b, p_ab).unwrap()
}

fn max_abs_diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

#[test]
fn covariate_dist_validation() {
    assert!(CovariateDist::new(vec![], vec![]).is_err());
    assert!(CovariateDist::new(vec![vec![1.0]], vec![0.5]).is_err());
    assert!(CovariateDist::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
    assert!(CovariateDist::new(vec![vec![1.0], vec![2.0]], vec![1.5, -0.5]).is_err());
    let rows = [
        CovariateRow::new(vec![1.0, 0.0], 0, 1),
        CovariateRow::new(vec![1.0, 1.0], 0, 1),
        CovariateRow::new(vec![1.0, 0.0], 1, 1),
        CovariateRow::new(vec![1.0, 0.0], 1, 1),
    ];
    let d = CovariateDist::empirical(rows.iter()).unwrap();
    assert_eq!(d.rows(), &[vec![1.0, 0.0], vec![1.0, 1.0]]);
    assert_eq!(d.weights(), &[0.75, 0.25]);
    assert!(CovariateDist::empirical(std::iter::empty()).is_err());
}

#[test]
fn no_spillover_map_is_constant() {
    let theta = Theta::new(vec![0.4], vec![-0.3], 0.0, 0.0, 0.0, 0.7, 0.2).unwrap();
    let quad = QuadratureSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let first = best_response(&theta, &intercept(), &random_share(&mut rng), &quad).unwrap();
    for _ in 0..4 {
        let other = best_response(&theta, &intercept(), &random_share(&mut rng), &quad).unwrap();
        assert_eq!(first, other);
    }
}

#[test]
fn quadrant_best_response() {
    let p = best_response(
        &Theta::zeros(1),
        &CovariateDist::point(vec![0.0]),
        &ShareVector::new(0.1, 0.2, 0.3).unwrap(),
        &QuadratureSpec::default(),
    )
    .unwrap();
    for v in p.to_array() {
        assert!((v - 0.25).abs() < 1e-3, "{p:?}");
    }
}

#[test]
fn best_response_matches_simulation_oracle() {
    let theta = reference_theta(0.0, 0.0);
    let p = ShareVector::new(0.3, 0.1, 0.4).unwrap();
    let smoothed = best_response(&theta, &intercept(), &p, &QuadratureSpec::default()).unwrap();
    let row = CovariateRow::new(vec![1.0], 0, 1);
    let mc = mc_choice_probs(&theta, &row, &p, 10_000_000, 77).unwrap().shares();
    assert!(smoothed.sup_distance(&mc) < 3e-3, "{smoothed:?} vs {mc:?}");
    let exact = BestResponse::with_rule(&theta, &intercept(), &ProbabilityRule::Exact)
        .unwrap()
        .eval(&p)
        .unwrap();
    assert!(exact.sup_distance(&mc) < 1e-3, "{exact:?} vs {mc:?}");
}

#[test]
fn best_response_rejects_bad_input() {
    let theta = Theta::zeros(2);
    let quad = QuadratureSpec::default();
    let p = ShareVector::zero();
    assert!(best_response(&theta, &intercept(), &p, &quad).is_err());
    assert!(best_response(&Theta::zeros(1), &intercept(), &ShareVector::raw(0.6, 0.6, 0.0), &quad).is_err());
}

#[test]
fn no_spillover_unique_stable_fixed_point() {
    let theta = Theta::new(vec![0.4], vec![-0.3], 0.0, 0.0, 0.0, 0.7, 0.2).unwrap();
    let quad = QuadratureSpec::default();
    let set = solve_equilibrium(&theta, &intercept(), &quad, &simplex_lattice(2), &SolverOptions::default()).unwrap();
    assert_eq!(set.equilibria.len(), 1);
    assert!(set.diverged.is_empty());
    let eq = &set.equilibria[0];
    let br = best_response(&theta, &intercept(), &ShareVector::zero(), &quad).unwrap();
    assert!(eq.p_star.sup_distance(&br) < 1e-9);
    assert!(eq.stable);
    assert!(eq.spectral_radius < 1e-6);
    assert!(max_abs_diff(&eq.jacobian, &[[0.0; 3]; 3]) < 1e-6);
}

#[test]
fn strong_spillovers_give_multiple_stable_equilibria() {
    let theta = Theta::new(vec![-1.5], vec![-1.5], 3.0, 3.0, 6.0, 0.0, 0.0).unwrap();
    let opts = SolverOptions {
        tol: 1e-9,
        ..Default::default()
    };
    let set = solve_equilibrium(&theta, &intercept(), &QuadratureSpec::default(), &simplex_lattice(3), &opts).unwrap();
    let stable: Vec<_> = set.stable().collect();
    assert!(stable.len() >= 2, "{:#?}", set.equilibria);
    for eq in &stable {
        assert!(eq.residual <= opts.tol);
        assert!(eq.det_i_minus_jacobian > 0.0);
    }
    let q_ab: Vec<f64> = stable.iter().map(|e| e.p_star.p_ab).collect();
    let lo = q_ab.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = q_ab.iter().cloned().fold(0.0, f64::max);
    assert!(hi - lo > 0.3, "{q_ab:?}");
}

#[test]
fn reference_fixed_points_have_small_residual() {
    let theta = reference_theta(0.0, 0.0);
    let quad = QuadratureSpec::default();
    let starts = [
        ShareVector::new(0.05, 0.05, 0.05).unwrap(),
        ShareVector::new(0.3, 0.3, 0.3).unwrap(),
        ShareVector::new(0.1, 0.1, 0.7).unwrap(),
    ];
    let set = solve_equilibrium(&theta, &intercept(), &quad, &starts, &SolverOptions::default()).unwrap();
    assert!(!set.equilibria.is_empty());
    let map = BestResponse::new(&theta, &intercept(), &quad).unwrap();
    for eq in &set.equilibria {
        let next = map.eval(&eq.p_star).unwrap();
        assert!(next.sup_distance(&eq.p_star) <= 1e-8);
    }
}

#[test]
fn solver_rejects_bad_options() {
    let theta = Theta::zeros(1);
    let quad = QuadratureSpec::default();
    let starts = [ShareVector::zero()];
    for opts in [
        SolverOptions { damping: 0.0, ..Default::default() },
        SolverOptions { damping: 1.5, ..Default::default() },
        SolverOptions { tol: 0.0, ..Default::default() },
        SolverOptions { max_iter: 0, ..Default::default() },
    ] {
        assert!(solve_equilibrium(&theta, &intercept(), &quad, &starts, &opts).is_err());
    }
    assert!(solve_equilibrium(&theta, &intercept(), &quad, &[], &SolverOptions::default()).is_err());
}

#[test]
fn iteration_cap_reports_divergence() {
    let theta = reference_theta(0.0, 0.0);
    let opts = SolverOptions {
        max_iter: 2,
        ..Default::default()
    };
    let set = solve_equilibrium(&theta, &intercept(), &QuadratureSpec::default(), &[ShareVector::zero()], &opts).unwrap();
    assert!(set.equilibria.is_empty());
    assert_eq!(set.diverged.len(), 1);
    assert!(set.diverged[0].diverged);
    assert_eq!(set.diverged[0].start_index, 0);
}

#[test]
fn lattice_is_interior_and_distinct() {
    let pts = default_starts();
    assert_eq!(pts.len(), 64);
    for (i, p) in pts.iter().enumerate() {
        p.validate().unwrap();
        assert!(p.p_empty() > 0.0 && p.p_a > 0.0 && p.p_b > 0.0 && p.p_ab > 0.0);
        for q in &pts[..i] {
            assert!(p.sup_distance(q) > 1e-6);
        }
    }
}

#[test]
fn singular_implicit_derivative() {
    let jac = [[1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]];
    match implicit_derivative(&jac, &[1.0, 0.0, 0.0]) {
        Err(Error::SingularEquilibrium { det }) => assert!(det.abs() < 1e-10),
        other => panic!("unexpected {other:?}"),
    }
    let d = implicit_derivative(&[[0.0; 3]; 3], &[0.1, 0.2, 0.3]).unwrap();
    assert!((d - 0.4).abs() < 1e-15);
}

#[test]
fn spectral_radius_of_rotation() {
    let r = spectral_radius(&[[0.0, -0.8, 0.0], [0.8, 0.0, 0.0], [0.0, 0.0, 0.1]]);
    assert!((r - 0.8).abs() < 1e-12);
}

// Independent closed-form line integrals, with the segments written out by case.
fn oracle_t_terms(a: f64, b: f64, g: f64, rho: f64) -> [[f64; 3]; 3] {
    let sd = (1.0 - rho * rho).sqrt();
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // Axis-parallel half-lines: density phi(x0) times a conditional tail.
    let below = |x0: f64, c: f64| phi(x0) * normal_cdf((c - rho * x0) / sd);
    let above = |x0: f64, c: f64| phi(x0) * normal_cdf(-(c - rho * x0) / sd);
    // Diagonal segment z = (w - a, k - w - b) or (w - a, w - b) for w in [w0, w1].
    let diag = |slope: f64, k: f64, w0: f64, w1: f64| -> f64 {
        if w1 <= w0 {
            return 0.0;
        }
        // z_A = w - a, z_B = slope * w + k - b
        let (p0, p1) = (-a, k - b);
        let (d0, d1) = (1.0, slope);
        let q = |u0: f64, u1: f64, v0: f64, v1: f64| (u0 * v0 + u1 * v1 - rho * (u0 * v1 + u1 * v0)) / (sd * sd);
        let qa = q(d0, d1, d0, d1);
        let qb = q(d0, d1, p0, p1);
        let qc = q(p0, p1, p0, p1);
        let shift = qb / qa;
        let front = 2f64.sqrt() / (2.0 * std::f64::consts::PI * sd)
            * (-(qc - qb * qb / qa) / 2.0).exp()
            * (2.0 * std::f64::consts::PI / qa).sqrt();
        front * (normal_cdf(qa.sqrt() * (w1 + shift)) - normal_cdf(qa.sqrt() * (w0 + shift)))
    };
    let t1a = below(-a, 0f64.min(-g) - b);
    let t1b = below(-b, 0f64.min(-g) - a);
    let t2 = diag(1.0, 0.0, 0.0, -g);
    let t3a = above(-g - b, 0f64.max(-g) - a);
    let t3b = above(-g - a, 0f64.max(-g) - b);
    let t1ab = diag(-1.0, -g, -g, 0.0);
    [[t1a, t2, t3a], [t1b, t2, t3b], [t1ab, t3a, t3b]]
}

#[test]
fn line_integrals_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let a = rng.random_range(-2.0..2.0);
        let b = rng.random_range(-2.0..2.0);
        let g = rng.random_range(-1.5..1.5);
        let rho = rng.random_range(-0.9..0.9);
        let t = t_terms_at(&UtilityIndex { a, b, gamma_tilde: g }, rho);
        let o = oracle_t_terms(a, b, g, rho);
        for v in 0..3 {
            for i in 0..3 {
                assert!(
                    (t.t[v][i] - o[v][i]).abs() < 1e-7,
                    "v={v} i={i} a={a} b={b} g={g} rho={rho}: {} vs {}",
                    t.t[v][i],
                    o[v][i]
                );
            }
        }
    }
}

#[test]
fn line_integral_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let idx = UtilityIndex {
            a: rng.random_range(-2.0..2.0),
            b: rng.random_range(-2.0..2.0),
            gamma_tilde: rng.random_range(-1.5..1.5),
        };
        let rho = rng.random_range(-0.9..0.9);
        let t = t_terms_at(&idx, rho);
        assert!((t.get(0, 2) - t.get(1, 2)).abs() < 1e-9);
        assert!((t.get(0, 3) - t.get(2, 2)).abs() < 1e-9);
        assert!((t.get(1, 3) - t.get(2, 3)).abs() < 1e-9);
        if idx.gamma_tilde > 0.0 {
            assert_eq!(t.get(0, 2), 0.0);
        }
        if idx.gamma_tilde < 0.0 {
            assert_eq!(t.get(2, 1), 0.0);
        }
        assert!(t.get(0, 3) > 0.0 && t.get(1, 3) > 0.0);
    }
    let t = t_terms_at(&UtilityIndex { a: 0.3, b: -0.2, gamma_tilde: 0.0 }, 0.4);
    assert_eq!(t.get(0, 2), 0.0);
    assert_eq!(t.get(2, 1), 0.0);
}

#[test]
fn zero_sanctions_give_zero_jacobian() {
    let theta = Theta::new(vec![0.3], vec![-0.4], 0.0, 0.0, 0.0, 0.5, -0.2).unwrap();
    let jac = analytic_jacobian(&theta, &intercept(), &ShareVector::new(0.2, 0.2, 0.2).unwrap()).unwrap();
    assert_eq!(jac, [[0.0; 3]; 3]);
}

#[test]
fn positive_gamma_tilde_reduces_diagonal_entry() {
    let theta = Theta::new(vec![0.2], vec![0.1], 1.2, 0.8, 2.5, 0.6, 0.0).unwrap();
    let p = ShareVector::new(0.2, 0.1, 0.4).unwrap();
    assert!(gamma_tilde(&theta, &p) > 0.0);
    let t = t_terms(&theta, &intercept(), &p).unwrap();
    let jac = t.jacobian(&theta);
    assert_eq!(t.get(0, 2), 0.0);
    assert!((jac[0][0] - theta.s_a * t.get(0, 1)).abs() < 1e-15);
}

#[test]
fn analytic_jacobian_matches_exact_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let theta = Theta::new(
            vec![rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)],
            vec![rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)],
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.6..0.6),
        )
        .unwrap();
        let dist = CovariateDist::new(vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![0.4, 0.6]).unwrap();
        let p = random_share(&mut rng);
        let analytic = analytic_jacobian(&theta, &dist, &p).unwrap();
        let map = BestResponse::with_rule(&theta, &dist, &ProbabilityRule::Exact).unwrap();
        let fd = map.jacobian_fd(&p, 1e-5).unwrap();
        assert!(max_abs_diff(&analytic, &fd) < 1e-5, "{analytic:?} vs {fd:?}");
        let t = t_terms(&theta, &dist, &p).unwrap();
        let r_fd = map.d_delta_b_fd(&p, 1e-5).unwrap();
        for (x, y) in t.d_delta_b().iter().zip(r_fd) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn analytic_jacobian_matches_smoothed_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let quad = QuadratureSpec::new(800, 5.0, 0.0125).unwrap();
    for _ in 0..3 {
        let theta = Theta::new(
            vec![rng.random_range(-1.0..1.0)],
            vec![rng.random_range(-1.0..1.0)],
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
            rng.random_range(-1.0..1.0),
            0.0,
        )
        .unwrap();
        let p = random_share(&mut rng);
        let analytic = analytic_jacobian(&theta, &intercept(), &p).unwrap();
        let fd = BestResponse::new(&theta, &intercept(), &quad).unwrap().jacobian_fd(&p, 1e-5).unwrap();
        assert!(max_abs_diff(&analytic, &fd) < 5e-3, "{analytic:?} vs {fd:?}");
    }
}

#[test]
fn derivative_numerator_case_formula_matches_adjugate() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let theta = Theta::new(
            vec![rng.random_range(-1.0..1.0)],
            vec![rng.random_range(-1.0..1.0)],
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..2.0),
            rng.random_range(0.2..3.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.8..0.8),
        )
        .unwrap();
        let p = random_share(&mut rng);
        let t = t_terms(&theta, &intercept(), &p).unwrap();
        let adj = adjugate_numerator(&t.jacobian(&theta), &t.d_delta_b());
        let cases = t.derivative_numerator_cases(&theta, gamma_tilde(&theta, &p), 0.0);
        assert!((adj - cases).abs() < 1e-12 * (1.0 + adj.abs()), "{adj} vs {cases}");
    }
}

#[test]
fn theorem_branch_table() {
    let mk = |gamma: f64, gap: f64| Theta::new(vec![0.0], vec![0.0], 1.0, 1.0, 2.0 + gap, gamma, 0.0).unwrap();
    assert_eq!(theorem_branch(&mk(0.5, 0.0), TAU_ZERO_TEST), TheoremBranch::Complements);
    assert_eq!(theorem_branch(&mk(0.5, 0.3), TAU_ZERO_TEST), TheoremBranch::Complements);
    assert_eq!(theorem_branch(&mk(0.0, 0.3), TAU_ZERO_TEST), TheoremBranch::Complements);
    assert_eq!(theorem_branch(&mk(0.0, 0.0), TAU_ZERO_TEST), TheoremBranch::Independent);
    assert_eq!(theorem_branch(&mk(1e-12, -1e-12), TAU_ZERO_TEST), TheoremBranch::Independent);
    assert_eq!(theorem_branch(&mk(-0.5, 0.0), TAU_ZERO_TEST), TheoremBranch::Substitutes);
    assert_eq!(theorem_branch(&mk(-0.5, -0.3), TAU_ZERO_TEST), TheoremBranch::Substitutes);
    assert_eq!(theorem_branch(&mk(0.0, -0.3), TAU_ZERO_TEST), TheoremBranch::Substitutes);
    assert_eq!(theorem_branch(&mk(0.5, -0.3), TAU_ZERO_TEST), TheoremBranch::Indeterminate);
    assert_eq!(theorem_branch(&mk(-0.5, 0.3), TAU_ZERO_TEST), TheoremBranch::Indeterminate);
}

const TAU_ZERO_TEST: f64 = classify::TAU_ZERO;

fn exact_opts() -> ClassifyOptions {
    ClassifyOptions {
        starts: simplex_lattice(2),
        refine: Some(ProbabilityRule::Exact),
        ..Default::default()
    }
}

#[test]
fn reference_parameters_are_complements() {
    // Intercepts chosen so the equilibrium is interior, near (0.62, 0.01, 0.36).
    let v = classify(&reference_theta(-1.0, -1.5), &intercept(), &QuadratureSpec::default(), &ClassifyOptions::default()).unwrap();
    assert!(!v.is_empty());
    for verdict in v {
        assert_eq!(verdict.theorem_branch, TheoremBranch::Complements);
        assert_eq!(verdict.numerical_sign, NumericalSign::Positive);
        assert!(verdict.agree);
    }
}

#[test]
fn zero_gamma_additive_is_independent() {
    let theta = Theta::additive(vec![-0.2], vec![0.1], 1.1, 0.7, 0.0, 0.3).unwrap();
    let v = classify(&theta, &intercept(), &QuadratureSpec::default(), &exact_opts()).unwrap();
    for verdict in v {
        assert_eq!(verdict.theorem_branch, TheoremBranch::Independent);
        assert!(verdict.d_qa_d_delta_b.abs() <= classify::TAU_SIGN);
        assert!(verdict.agree);
    }
}

#[test]
fn strong_joint_sanction_gives_substitutes() {
    let theta = Theta::new(vec![0.0], vec![0.0], 2.45, 1.26, 3.01, 0.0, 0.0).unwrap();
    let v = classify(&theta, &intercept(), &QuadratureSpec::default(), &ClassifyOptions::default()).unwrap();
    for verdict in v {
        assert_eq!(verdict.theorem_branch, TheoremBranch::Substitutes);
        assert_eq!(verdict.numerical_sign, NumericalSign::Negative);
        assert!(verdict.agree);
    }
}

#[test]
fn conflicting_signs_are_indeterminate_but_reported() {
    let theta = Theta::new(vec![-0.3], vec![-0.3], 1.0, 1.0, 1.4, 0.4, 0.0).unwrap();
    let v = classify(&theta, &intercept(), &QuadratureSpec::default(), &exact_opts()).unwrap();
    for verdict in v {
        assert_eq!(verdict.theorem_branch, TheoremBranch::Indeterminate);
        assert!(verdict.agree);
        assert!(verdict.d_qa_d_delta_b.is_finite());
    }
}

#[test]
fn no_stable_equilibrium_is_unavailable() {
    let theta = reference_theta(0.0, 0.0);
    let opts = ClassifyOptions {
        starts: simplex_lattice(2),
        solver: SolverOptions { max_iter: 1, ..Default::default() },
        ..Default::default()
    };
    let err = classify(&theta, &intercept(), &QuadratureSpec::default(), &opts).unwrap_err();
    assert!(matches!(err, Error::ClassificationUnavailable));
}

#[test]
fn stable_points_attract_nearby_starts() {
    let theta = reference_theta(-1.0, -1.5);
    let quad = QuadratureSpec::default();
    let set = solve_equilibrium(&theta, &intercept(), &quad, &simplex_lattice(2), &SolverOptions::default()).unwrap();
    for eq in set.stable() {
        assert!(eq.det_i_minus_jacobian > 0.0);
        for dir in [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [-1.0, 1.0, 1.0]] {
            let arr = eq.p_star.to_array();
            let start = ShareVector::from_array([0, 1, 2].map(|i| arr[i] + 1e-3 * dir[i]));
            let back = solve_equilibrium(&theta, &intercept(), &quad, &[start], &SolverOptions::default()).unwrap();
            assert_eq!(back.equilibria.len(), 1);
            assert!(back.equilibria[0].p_star.sup_distance(&eq.p_star) < 1e-8);
        }
    }
}

#[test]
fn relabeling_norms_swaps_derivatives() {
    let theta = Theta::new(vec![-0.2], vec![0.3], 1.3, 0.6, 2.4, 0.5, -0.3).unwrap();
    let rule = ProbabilityRule::Exact;
    let opts = SolverOptions::default();
    let set = solve_equilibrium_with(&theta, &intercept(), &rule, &[ShareVector::new(0.2, 0.2, 0.2).unwrap()], &opts).unwrap();
    let eq = &set.equilibria[0];
    let swapped = theta.swapped();
    let set_s = solve_equilibrium_with(&swapped, &intercept(), &rule, &[eq.p_star.swapped()], &opts).unwrap();
    let eq_s = &set_s.equilibria[0];
    assert!(eq_s.p_star.sup_distance(&eq.p_star.swapped()) < 1e-9);

    // ∂Q_B/∂δ_A in the original labeling, from the A-shift response.
    let map = BestResponse::with_rule(&theta, &intercept(), &rule).unwrap();
    let h = 1e-5;
    let up = map.eval_shifted(&eq.p_star, h, 0.0).unwrap().to_array();
    let dn = map.eval_shifted(&eq.p_star, -h, 0.0).unwrap().to_array();
    let r_a = [0, 1, 2].map(|i| (up[i] - dn[i]) / (2.0 * h));
    let m = Matrix3::identity() - Matrix3::from_fn(|i, j| eq.jacobian[i][j]);
    let sol = m.lu().solve(&Vector3::new(r_a[0], r_a[1], r_a[2])).unwrap();
    let dqb_dda = sol[1] + sol[2];
    let relabeled = eq_s.d_qa_d_delta_b.unwrap();
    assert!((dqb_dda - relabeled).abs() < 1e-6, "{dqb_dda} vs {relabeled}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn best_response_stays_in_simplex(
        da in -2.0f64..2.0, db in -2.0f64..2.0,
        sa in 0.0f64..3.0, sb in 0.0f64..3.0, sab in 0.0f64..4.0,
        g in -1.5f64..1.5, rho in -0.8f64..0.8,
        u in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let theta = Theta::new(vec![da], vec![db], sa, sb, sab, g, rho).unwrap();
        let p = ShareVector::new(u.0 * 0.5, u.1 * 0.25, u.2 * 0.25).unwrap();
        let quad = QuadratureSpec::new(60, 5.0, 0.15).unwrap();
        let out = best_response(&theta, &intercept(), &p, &quad).unwrap();
        prop_assert!(out.validate().is_ok());
        let exact = BestResponse::with_rule(&theta, &intercept(), &ProbabilityRule::Exact).unwrap().eval(&p).unwrap();
        prop_assert!(exact.validate().is_ok());
    }

    #[test]
    fn implicit_derivative_agrees_with_analytic(
        da in -1.0f64..0.5, db in -1.0f64..0.5,
        sa in 0.2f64..1.2, sb in 0.2f64..1.2, sab in 0.2f64..2.5,
        g in -1.0f64..1.0, rho in -0.7f64..0.7,
    ) {
        let theta = Theta::new(vec![da], vec![db], sa, sb, sab, g, rho).unwrap();
        let set = solve_equilibrium_with(&theta, &intercept(), &ProbabilityRule::Exact, &[ShareVector::new(0.25, 0.25, 0.25).unwrap()], &SolverOptions::default()).unwrap();
        for eq in set.stable() {
            let analytic = analytic_implicit_derivative(&theta, &intercept(), &eq.p_star).unwrap();
            prop_assert!((analytic - eq.d_qa_d_delta_b.unwrap()).abs() < 1e-5);
        }
    }
}
