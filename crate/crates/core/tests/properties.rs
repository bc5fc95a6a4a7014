use std::sync::Arc;

use proptest::prelude::*;

use immidx::immersion::{
    lift, one_loop_curve, standard_value, Lift, Perturb, SharedImmersion,
};
use immidx::intersections::{
    find_self_intersections, sign_of_intersection, IntersectionRecord, SolverConfig,
};
use immidx::linalg::{Matrix, StiefelPoint};
use immidx::quadrature::{integrate_adaptive, IndexReport, Integral, Method, QuadratureConfig};
use immidx::stiefel_form::{check_closedness, ClosednessConfig, OmegaEvaluator};

fn lifted() -> SharedImmersion {
    lift(one_loop_curve(), Lift::default_bump()).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Matrix::from_row_major(rows, cols, d))
}

fn stiefel_and_tangents() -> impl Strategy<Value = (StiefelPoint, Vec<Matrix>)> {
    (matrix(4, 2), proptest::collection::vec(matrix(4, 2), 2)).prop_filter_map(
        "full rank",
        |(m, t)| {
            let phi = StiefelPoint::new(m).ok()?;
            (immidx::linalg::gram(&phi).ok()?.det > 1e-3).then_some((phi, t))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_is_linear_in_each_tangent((phi, t) in stiefel_and_tangents(), c in -3.0f64..3.0, extra in matrix(4, 2), slot in 0usize..2) {
        let eval = OmegaEvaluator::new(2).unwrap();
        let base = eval.eval(&phi, &t).unwrap();
        let mut scaled = t.clone();
        scaled[slot] = t[slot].scaled(c);
        let mut summed = t.clone();
        summed[slot] = t[slot].add_scaled(&extra, 1.0);
        let mut other = t.clone();
        other[slot] = extra;
        let tol = 1e-11 * (1.0 + base.abs() + eval.eval(&phi, &other).unwrap().abs());
        prop_assert!((eval.eval(&phi, &scaled).unwrap() - c * base).abs() <= tol * (1.0 + c.abs()));
        prop_assert!((eval.eval(&phi, &summed).unwrap() - base - eval.eval(&phi, &other).unwrap()).abs() <= tol);
    }

    #[test]
    fn omega_alternates((phi, t) in stiefel_and_tangents()) {
        let eval = OmegaEvaluator::new(2).unwrap();
        let a = eval.eval(&phi, &t).unwrap();
        let b = eval.eval(&phi, &[t[1].clone(), t[0].clone()]).unwrap();
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn omega_is_invariant_under_positive_rescaling((phi, t) in stiefel_and_tangents(), c in 0.2f64..5.0) {
        // omega is homogeneous of degree 0 in phi jointly with its tangents.
        let eval = OmegaEvaluator::new(2).unwrap();
        let a = eval.eval(&phi, &t).unwrap();
        let sphi = StiefelPoint::new(phi.entries().scaled(c)).unwrap();
        let st: Vec<Matrix> = t.iter().map(|m| m.scaled(c)).collect();
        let b = eval.eval(&sphi, &st).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn gauss_rules_are_exact_for_low_degree(px in 0i32..9, py in 0i32..9, lo in -2.0f64..0.0, w in 0.1f64..2.0) {
        let cfg = QuadratureConfig { initial_divisions: 1, rule_order: 5, ..Default::default() };
        let r = integrate_adaptive(|x| Ok(x[0].powi(px) * x[1].powi(py)), &[lo, lo], &[lo + w, lo + w], &cfg).unwrap();
        let one = |p: i32| ((lo + w).powi(p + 1) - lo.powi(p + 1)) / (p + 1) as f64;
        let exact = one(px) * one(py);
        prop_assert!((r.value - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
    }

    #[test]
    fn rounding_accepts_only_near_integers(k in -5i64..5, d in -0.5f64..0.5) {
        let integral = Integral { value: k as f64 + d, error_estimate: 0.0, evaluations: 1, cells: 1 };
        match IndexReport::rounded(Method::Integral, &integral) {
            Ok(r) => {
                prop_assert!(d.abs() < 0.1);
                prop_assert_eq!(r.index, k);
                prop_assert!((r.residual - d.abs()).abs() < 1e-12);
            }
            Err(_) => prop_assert!(d.abs() >= 0.1 - 1e-12),
        }
    }

    #[test]
    fn lift_is_standard_outside_the_cube(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        prop_assume!(x.abs() >= 1.0 || y.abs() >= 1.0);
        let f = lifted();
        prop_assert_eq!(f.value(&[x, y]), standard_value(&[x, y]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn closedness_holds_for_any_seed(seed in any::<u64>()) {
        let r = check_closedness(&ClosednessConfig { samples: 5, seed, ..Default::default() }).unwrap();
        prop_assert!(r.pass, "{:e}", r.max_normalized_d_omega);
    }

    #[test]
    fn signs_ignore_preimage_order_after_perturbation(component in 0usize..4, cx in -0.4f64..0.4, cy in -0.4f64..0.4, amp in -0.02f64..0.02) {
        let f: SharedImmersion = Arc::new(Perturb::new(lifted(), component, amp, &[cx, cy], 0.5).unwrap());
        let cfg = SolverConfig { check_completeness: false, ..SolverConfig::default() };
        let recs = find_self_intersections(f.as_ref(), &cfg).unwrap();
        prop_assert_eq!(recs.len(), 1);
        for rec in recs {
            let swapped = IntersectionRecord { preimage_1: rec.preimage_2.clone(), preimage_2: rec.preimage_1.clone(), ..rec.clone() };
            let a = sign_of_intersection(&rec, f.as_ref(), 1e-8).unwrap();
            let b = sign_of_intersection(&swapped, f.as_ref(), 1e-8).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, -1);
        }
    }
}
