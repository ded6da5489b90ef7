mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

use common::{active_set_oracle, random_qp};
use tubempc::baselines::zonotope_contains;
use tubempc::certify::{build_candidate, quadratic_difference_bound, verify_candidate_feasible};
use tubempc::controller::{solve_ocp, DesignBundle};
use tubempc::qpsolver::{solve_qp, QpSettings, WarmStart};
use tubempc::simloop::{sample_disturbance, DisturbanceMode};
use tubempc::synthesis::{dare_residual, half_vertices, k_problem, solve_dare, synthesize};
use tubempc::tightening::{build_h, build_l, tail_norm, TighteningSchedule};
use tubempc::{ConstraintPolytope, Zonotope};

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn zonotope(n: usize, max_gens: usize) -> impl Strategy<Value = Zonotope> {
    (1..=max_gens).prop_flat_map(move |m| matrix(n, m, 1.0)).prop_map(|g| Zonotope::new(g).unwrap())
}

fn polytope(n: usize) -> impl Strategy<Value = ConstraintPolytope> {
    (n + 1..=2 * n + 3).prop_flat_map(move |rows| {
        (matrix(rows, n, 1.0), prop::collection::vec(1.0..5.0f64, rows))
            .prop_map(|(f, b)| ConstraintPolytope::new(f, DVector::from_vec(b)).unwrap())
    })
}

/// Random matrix rescaled to spectral norm `target`.
fn contraction(n: usize, target: f64) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, 1.0).prop_map(move |a| {
        let s = a.clone().svd(false, false).singular_values.max();
        if s < 1e-9 { a } else { a * (target / s) }
    })
}

fn unit_box_point(m: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..=1.0f64, m).prop_map(DVector::from_vec)
}

fn proposed() -> &'static DesignBundle {
    static CELL: OnceLock<DesignBundle> = OnceLock::new();
    CELL.get_or_init(|| synthesize(&common::proposed_spec()).unwrap().bundle)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn support_is_max_over_sign_images(z in zonotope(3, 8), c in prop::collection::vec(-2.0..2.0f64, 3)) {
        let c = DVector::from_vec(c);
        let best = z.vertices(8).unwrap().iter().map(|v| c.dot(v)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((z.support(&c).unwrap() - best).abs() <= 1e-9 * (1.0 + best.abs()));
    }

    #[test]
    fn erosion_then_dilation_stays_inside(
        x in polytope(2),
        g in matrix(2, 3, 0.3),
        v in unit_box_point(3),
        p in prop::collection::vec(-6.0..6.0f64, 2),
    ) {
        let d = Zonotope::new(g).unwrap();
        let eroded = x.pontryagin_diff(&d).unwrap();
        prop_assert_eq!(eroded.num_rows(), x.num_rows());
        prop_assert_eq!(eroded.normals(), x.normals());
        prop_assert!(eroded.offsets().iter().zip(x.offsets().iter()).all(|(a, b)| a <= b));
        let p = DVector::from_vec(p);
        if eroded.contains(&p, 0.0) {
            prop_assert!(x.contains(&(&p + d.point(&v).unwrap()), 1e-12));
        }
    }

    #[test]
    fn eroded_offsets_are_tight(x in polytope(2), g in matrix(2, 2, 0.3)) {
        let d = Zonotope::new(g).unwrap();
        let eroded = x.pontryagin_diff(&d).unwrap();
        for i in 0..x.num_rows() {
            let row = x.normals().row(i).transpose();
            let worst = d.vertices(8).unwrap().iter().map(|v| row.dot(v)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((eroded.offsets()[i] - (x.offsets()[i] - worst)).abs() <= 1e-12);
        }
    }

    #[test]
    fn tightening_is_monotone(a_k in contraction(3, 0.9), h_w in matrix(3, 2, 0.05), k in matrix(1, 3, 0.5)) {
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        let a = &a_k - &b * &k;
        let x = ConstraintPolytope::symmetric_box(&[5.0, 5.0, 5.0]).unwrap();
        let u = ConstraintPolytope::symmetric_box(&[5.0]).unwrap();
        let sched = TighteningSchedule::build(&a, &b, &k, &h_w, &x, &u, 8).unwrap();
        for i in 0..8 {
            let (x0, x1) = (sched.x_tight(i).offsets(), sched.x_tight(i + 1).offsets());
            let (u0, u1) = (sched.u_tight(i).offsets(), sched.u_tight(i + 1).offsets());
            prop_assert!(x1.iter().zip(x0.iter()).all(|(n, o)| *n <= *o + 1e-12));
            prop_assert!(u1.iter().zip(u0.iter()).all(|(n, o)| *n <= *o + 1e-12));
        }
    }

    #[test]
    fn reachable_sets_follow_their_recursions(
        a_k in contraction(3, 0.95),
        h_w in matrix(3, 2, 1.0),
        c in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let c = DVector::from_vec(c);
        let h = build_h(&a_k, &h_w, 6).unwrap();
        for i in 1..6 {
            let l_i = build_l(&a_k, &h_w, i).unwrap();
            let l_next = build_l(&a_k, &h_w, i + 1).unwrap();
            let lhs = h[i + 1].support(&c).unwrap();
            let rhs = h[i].support(&c).unwrap() + l_next.support(&c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            // L(i+1) = A_K L(i), so its support is that of L(i) along A_K' c
            let pulled = l_i.support(&(a_k.transpose() * &c)).unwrap();
            prop_assert!((l_next.support(&c).unwrap() - pulled).abs() <= 1e-9 * (1.0 + pulled.abs()));
            prop_assert!(l_next.generators().norm() <= 0.95 * l_i.generators().norm() + 1e-12);
        }
    }

    #[test]
    fn tail_norm_is_submultiplicative(a in matrix(3, 3, 1.0), p in 1usize..5, q in 1usize..5) {
        let joint = tail_norm(&a, p + q + 1);
        let split = tail_norm(&a, p + 1) * tail_norm(&a, q + 1);
        prop_assert!(joint <= split * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn symmetric_tail_norm_is_spectral_radius_power(m in matrix(3, 3, 1.0), horizon in 1usize..8) {
        let a = (&m + m.transpose()) * 0.5;
        let radius = a.clone().symmetric_eigen().eigenvalues.amax();
        let expected = radius.powi(2 * (horizon as i32 - 1));
        prop_assert!((tail_norm(&a, horizon) - expected).abs() <= 1e-9 * (1.0 + expected));
    }

    #[test]
    fn qp_matches_active_set_oracle(seed in any::<u64>(), nv in 1usize..5, nr in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, nv, nr);
        let settings = QpSettings::default();
        let sol = solve_qp(&p, None, &settings).unwrap();
        let opt = active_set_oracle(&p);
        prop_assume!(opt.is_finite());
        prop_assert!(sol.is_solved());
        let scale = 1.0 + opt.abs();
        prop_assert!(sol.objective >= opt - 10.0 * settings.tol * scale);
        prop_assert!((sol.objective - opt).abs() <= 10.0 * settings.tol * scale);
        prop_assert!(p.violation(sol.x.as_slice()) <= settings.tol);
        if sol.polished {
            prop_assert!(p.violation(sol.x.as_slice()) <= 1e-9);
        }

        let warm = WarmStart { x: sol.x.clone(), z: sol.z.clone(), y: sol.y.clone() };
        let again = solve_qp(&p, Some(&warm), &settings).unwrap();
        prop_assert!(again.is_solved());
        prop_assert!(again.iterations <= 5, "warm start took {} iterations", again.iterations);
    }

    #[test]
    fn quadratic_difference_is_bounded(
        m in matrix(3, 3, 2.0),
        l in matrix(3, 3, 1.0),
        b in prop::collection::vec(-5.0..5.0f64, 3),
        w in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let q = &l * l.transpose();
        let (lhs, rhs) = quadratic_difference_bound(&q, &m, &DVector::from_vec(b), &DVector::from_vec(w));
        prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn disturbance_samples_lie_in_w(z in zonotope(3, 4), seed in any::<u64>(), vertex in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if vertex { DisturbanceMode::Vertex } else { DisturbanceMode::Uniform };
        for _ in 0..5 {
            let w = sample_disturbance(&z, mode, &mut rng);
            prop_assert!(zonotope_contains(&z, &w, 1e-9));
        }
    }

    #[test]
    fn dare_solution_has_small_residual(a in matrix(3, 3, 1.5), b in matrix(3, 2, 1.0), l in matrix(3, 3, 1.0)) {
        let q = &l * l.transpose() + DMatrix::identity(3, 3) * 0.1;
        let r = DMatrix::identity(2, 2);
        let ctrb = nalgebra::stack![b.clone(), &a * &b, &a * &a * &b];
        prop_assume!(ctrb.svd(false, false).singular_values.min() > 1e-2);
        let (k, p) = solve_dare(&a, &b, &q, &r).unwrap();
        let res = dare_residual(&a, &b, &q, &r, &p).amax();
        prop_assert!(res <= 1e-8 * (1.0 + p.amax()), "residual {res}");
        let closed = &a + &b * &k;
        let radius = closed.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        prop_assert!(radius < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shifted_candidate_is_feasible_and_dominates(
        x0 in prop::collection::vec(-6.0..6.0f64, 2),
        v in unit_box_point(2),
    ) {
        let bundle = proposed();
        let x = DVector::from_vec(x0);
        let sol = solve_ocp(bundle, &x).unwrap();
        prop_assume!(sol.is_solved());
        let w = bundle.model.w().point(&v).unwrap();
        let cand = build_candidate(bundle, &sol, &w);
        let report = verify_candidate_feasible(bundle, &cand, 1e-6);
        prop_assert!(report.feasible, "{:?}", report.violations);
        let next = bundle.model.step(&x, sol.first_input(), &w);
        let opt = solve_ocp(bundle, &next).unwrap();
        prop_assert!(opt.is_solved());
        let v_cand = bundle.cost(&cand.states, &cand.inputs);
        prop_assert!(opt.cost <= v_cand + 1e-3 * (1.0 + v_cand));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn larger_disturbance_never_lowers_gamma(s in 0.1..0.5f64, grow in 1.1..1.6f64) {
        let (model, x, u) = common::double_integrator();
        let (x, u) = (x.normalize().unwrap(), u.normalize().unwrap());
        let gamma = |scale: f64| {
            let scaled = model.with_disturbance(model.w().scale(scale)).unwrap();
            let (v, _) = half_vertices(scaled.w(), 16).unwrap();
            let (p, vars) = k_problem(&scaled, &x, &u, &v, 0.9, 1.0, 1.0, 1.0, 1e-6);
            let sol = p.minimize_linear().unwrap();
            sol.is_feasible().then(|| sol.scalar(vars.gamma))
        };
        let small = gamma(s).unwrap();
        if let Some(large) = gamma(s * grow) {
            prop_assert!(large >= small - 1e-6, "gamma {large} at scale {} below {small} at scale {s}", s * grow);
        }
    }
}
