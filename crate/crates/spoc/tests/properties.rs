//! Property tests for the solver invariants: exact identities hold for
//! arbitrary data, not just the seeds used in the unit tests.

use proptest::collection::vec;
use proptest::prelude::*;

use spoc::control::{BoxBounds, ControlField, ControlMode};
use spoc::fem::{build_space, prolong};
use spoc::noise::{build_tree, cond_expect, ito_integral, AdaptedField};
use spoc::study::estimate_rate;

fn coeff_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // the discrete heat semigroup is an L^2 contraction and satisfies the
    // smoothing bound |(I - e^{tD}) v| <= t |v|_{H^2}
    #[test]
    fn semigroup_contracts_and_smooths(v in coeff_vec(11), t in 0.0f64..4.0) {
        let space = build_space(0.0, 1.0, 12).unwrap();
        let sp = space.spectral().unwrap();
        let w = sp.semigroup_apply(t, &v).unwrap();
        prop_assert!(space.l2_norm(&w) <= space.l2_norm(&v) * (1.0 + 1e-12));

        let diff: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
        let lhs = sp.norm_beta(&diff, 0).unwrap();
        let rhs = t * sp.norm_beta(&v, 2).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }

    // projecting a V_h function onto V_h reproduces its coefficients
    #[test]
    fn l2_projection_is_idempotent(v in coeff_vec(7)) {
        let space = build_space(0.0, 1.0, 8).unwrap();
        let v2 = v.clone();
        let space2 = space.clone();
        let c = space
            .l2_project(move |x| space2.eval(&v2, x), 4)
            .unwrap();
        for (a, b) in c.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    // nested prolongation preserves the function, hence the L^2 norm
    #[test]
    fn prolongation_preserves_norm(v in coeff_vec(5), factor in 1usize..5) {
        let coarse = build_space(0.0, 1.0, 6).unwrap();
        let fine = build_space(0.0, 1.0, 6 * factor).unwrap();
        let p = prolong(&coarse, &fine, &v).unwrap();
        let a = coarse.l2_norm(&v);
        let b = fine.l2_norm(&p);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    // box projection is idempotent and nonexpansive in L^2
    #[test]
    fn box_projection_nonexpansive(
        w1 in coeff_vec(7 * 7),
        w2 in coeff_vec(7 * 7),
        lower in -2.0f64..0.0,
        gap in 0.1f64..2.0,
        p0 in any::<bool>(),
    ) {
        let space = build_space(0.0, 1.0, 8).unwrap();
        let tree = build_tree(1.0, 2).unwrap();
        let view = tree.view();
        let bounds = BoxBounds::new(lower, lower + gap).unwrap();
        let mode = if p0 { ControlMode::P0 } else { ControlMode::ClampedP1 };

        let fill = |data: &[f64]| {
            let mut f = AdaptedField::zero_intervals(&view, space.dim());
            let mut it = data.iter();
            for l in 0..f.n_levels() {
                for v in f.level_mut(l).iter_mut() {
                    *v = *it.next().unwrap();
                }
            }
            f
        };
        let f1 = fill(&w1);
        let f2 = fill(&w2);
        let p1 = ControlField::project_p1_field(&space, &f1, bounds, mode).unwrap();
        let p2 = ControlField::project_p1_field(&space, &f2, bounds, mode).unwrap();

        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for step in 0..view.steps() {
            for node in 0..view.nodes_at(step) {
                lhs += p1.diff_norm_sq(&space, &p2, step, node);
                let d: Vec<f64> = f1
                    .node(step, node)
                    .iter()
                    .zip(f2.node(step, node))
                    .map(|(a, b)| a - b)
                    .collect();
                rhs += space.inner(&d, &d);
            }
        }
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));

        // idempotence: projecting the projection changes nothing
        if mode == ControlMode::P0 {
            let again = ControlField::project_p0_values(p1.values(), bounds);
            prop_assert_eq!(p1.values(), again.values());
        }
        prop_assert!(p1.max_violation(&space, 4) <= 1e-14);
    }

    // conditional expectations are measurable projections: applying the
    // level-j expectation to level-j data is the identity, and the tower
    // property holds exactly
    #[test]
    fn filtration_consistency(leaves in coeff_vec(8)) {
        let tree = build_tree(1.0, 3).unwrap();
        let view = tree.view();
        let at2 = cond_expect(&view, 2, &leaves, 1).unwrap();
        let at1 = cond_expect(&view, 1, &at2, 1).unwrap();
        let at0 = cond_expect(&view, 0, &at1, 1).unwrap();
        let total: f64 = leaves.iter().sum::<f64>() / 8.0;
        prop_assert!((at0[0] - total).abs() <= 1e-15 * total.abs().max(1.0));
    }

    // exact discrete Ito isometry for arbitrary adapted integrands
    #[test]
    fn ito_isometry_exact(data in coeff_vec(1 + 2 + 4 + 8), t_end in 0.1f64..4.0) {
        let tree = build_tree(t_end, 4).unwrap();
        let view = tree.view();
        let mut f = AdaptedField::zero_intervals(&view, 1);
        let mut it = data.iter();
        for l in 0..4 {
            for v in f.level_mut(l).iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        let leaves = ito_integral(&view, &f).unwrap();
        let lhs: f64 = leaves.iter().map(|v| v * v).sum::<f64>() / 16.0;
        let mut rhs = 0.0;
        let tau = view.tau();
        for step in 0..4 {
            let w = view.node_weight(step);
            for node in 0..view.nodes_at(step) {
                let v = f.node(step, node)[0];
                rhs += tau * w * v * v;
            }
        }
        prop_assert!((lhs - rhs).abs() <= 1e-14 * rhs.max(1.0));
    }

    // the rate fit recovers exact power laws
    #[test]
    fn rate_fit_recovers_powers(c in 0.001f64..100.0, p in -3.0f64..3.0) {
        let sizes = [0.125, 0.25, 0.5, 1.0];
        let errors: Vec<f64> = sizes.iter().map(|s: &f64| c * f64::powf(*s, p)).collect();
        let (slope, residual) = estimate_rate(&sizes, &errors).unwrap();
        prop_assert!((slope - p).abs() <= 1e-9);
        prop_assert!(residual <= 1e-9);
    }
}
