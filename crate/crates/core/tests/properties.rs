mod common;

use codiff_core::analysis::{dir_deriv, quasidiff};
use codiff_core::codiff::{codiff_with_value, normalize, rule_scale, rule_sum};
use codiff_core::descent::{benchmark_suite, minimize, DescentConfig};
use codiff_core::optimality::{check, check_max_unconstrained, check_min_unconstrained, Problem};
use codiff_core::{codiff, parse, Expr, Tolerances, VPolytope};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn expr(t: &Tree, dim: usize) -> Expr {
    parse(&t.text(), dim).unwrap_or_else(|e| panic!("{}: {e}", t.text()))
}

fn pair_of(c: &codiff_core::Codifferential) -> Pair {
    Pair {
        hypo: c.hypo().to_vecs(),
        hyper: c.hyper().to_vecs(),
    }
}

fn small_unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| norm(v) > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prune_is_idempotent_and_keeps_the_hull(pts in cloud(3, 10), g in small_unit(3)) {
        let p = VPolytope::new(3, pts.clone()).unwrap();
        let once = p.prune();
        let twice = once.prune();
        prop_assert!(same_points(&once.to_vecs(), &twice.to_vecs(), 0.0));
        let s = support(&pts, &g);
        prop_assert!((once.support(&g).unwrap().value - s).abs() <= 1e-12 * (1.0 + s.abs()));
    }

    #[test]
    fn minkowski_support_identity(a in cloud(2, 6), b in cloud(2, 6), g in small_unit(2)) {
        let pa = VPolytope::new(2, a.clone()).unwrap();
        let pb = VPolytope::new(2, b.clone()).unwrap();
        let sum = pa.minkowski_sum(&pb).unwrap();
        let expected = support(&a, &g) + support(&b, &g);
        prop_assert!((sum.support(&g).unwrap().value - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
    }

    #[test]
    fn distance_matches_enumeration(pts in cloud(3, 7), q in point(3, 3.0)) {
        let p = VPolytope::new(3, pts.clone()).unwrap();
        let got = p.distance_to_hull(&q, 1e-9).unwrap().distance;
        let want = hull_distance(&pts, &q);
        prop_assert!((got - want).abs() <= 1e-8, "got {got} want {want}");
    }

    #[test]
    fn convex_combinations_are_members(pts in cloud(4, 8), w in prop::collection::vec(0.0f64..1.0, 8)) {
        let p = VPolytope::new(4, pts.clone()).unwrap();
        let total: f64 = w[..pts.len()].iter().sum::<f64>() + 1e-12;
        let mut q = vec![0.0; 4];
        for (pt, wi) in pts.iter().zip(&w) {
            for (qc, pc) in q.iter_mut().zip(pt) {
                *qc += wi / total * pc;
            }
        }
        prop_assert!(p.distance_to_hull(&q, 1e-9).unwrap().distance <= 1e-8);
    }

    #[test]
    fn hausdorff_is_a_metric(a in cloud(2, 5), b in cloud(2, 5), c in cloud(2, 5)) {
        let [pa, pb, pc] = [a, b, c].map(|v| VPolytope::new(2, v).unwrap().prune());
        let ab = pa.hausdorff_distance(&pb).unwrap();
        let ba = pb.hausdorff_distance(&pa).unwrap();
        let bc = pb.hausdorff_distance(&pc).unwrap();
        let ac = pa.hausdorff_distance(&pc).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(pa.hausdorff_distance(&pa).unwrap() <= 1e-9);
    }

    #[test]
    fn print_parse_round_trip(t in tree(3), x in point(3, 2.0)) {
        let e = expr(&t, 3);
        let again = parse(&e.to_string(), 3).unwrap();
        prop_assert_eq!(e.to_string(), again.to_string());
        let want = t.eval(&x);
        let got = e.eval(&x).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
        prop_assert_eq!(got.to_bits(), again.eval(&x).unwrap().to_bits());
    }

    #[test]
    fn piecewise_linear_expansion_is_exact(t in pl_tree(2), x in point(2, 2.0), dx in point(2, 2.0)) {
        let e = expr(&t, 2);
        prop_assert!(e.is_piecewise_linear());
        let (f, c) = codiff_with_value(&e, &x).unwrap();
        let moved = add(&x, &dx);
        let lhs = t.eval(&moved) - f;
        let rhs = c.increment(&dx).unwrap();
        let scale = 1.0 + f.abs() + c.lipschitz_bound() * (1.0 + norm(&x) + norm(&dx));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn smooth_expansion_residual_vanishes(t in tree(2), x in point(2, 1.5), dx in small_unit(2)) {
        let e = expr(&t, 2);
        let (f, c) = codiff_with_value(&e, &x).unwrap();
        let r = |a: f64| {
            let step: Vec<f64> = dx.iter().map(|d| a * d).collect();
            (t.eval(&add(&x, &step)) - f - c.increment(&step).unwrap()).abs() / a
        };
        let l = c.lipschitz_bound();
        prop_assume!(f.abs() < 1e3 && l < 1e2);
        // r(a)/a = O(a) once the step no longer crosses a kink.
        let floor = 1e-12 * (1.0 + f.abs() + l * (1.0 + norm(&x))) / 1e-7;
        prop_assert!(r(1e-7) <= 1e-3 * (1.0 + f.abs() + l * l) + floor, "ratio {}", r(1e-7));
    }

    #[test]
    fn sum_rule_consistency(a in tree(2), b in tree(2), x in point(2, 2.0), dx in point(2, 1.0)) {
        let ea = expr(&a, 2);
        let eb = expr(&b, 2);
        let whole = codiff(&(ea.clone() + eb.clone()), &x).unwrap();
        let parts = rule_sum(&codiff(&ea, &x).unwrap(), &codiff(&eb, &x).unwrap()).unwrap();
        let (u, v) = (whole.increment(&dx).unwrap(), parts.increment(&dx).unwrap());
        prop_assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
    }

    #[test]
    fn scale_rule_swaps_sets(t in pl_tree(2), x in point(2, 2.0), alpha in -3.0f64..-0.1) {
        let e = expr(&t, 2);
        let c = codiff(&e, &x).unwrap();
        let raw = rule_scale(&c, alpha);
        let want = pair_of(&c).scale(alpha);
        prop_assert!(same_points(&raw.hypo().to_vecs(), &want.hypo, 1e-12));
        prop_assert!(same_points(&raw.hyper().to_vecs(), &want.hyper, 1e-12));
        let scaled = codiff(&(Expr::constant(alpha) * e), &x).unwrap();
        if c.hypo().len() > 1 && c.hyper().len() > 1 {
            let h = c.hyper().scale(alpha).prune();
            prop_assert!(same_points(&scaled.hypo().to_vecs(), &h.to_vecs(), 1e-9));
        }
        for dx in [[1.0, 0.3], [-0.4, 0.8], [0.0, -1.0]] {
            let (u, v) = (scaled.increment(&dx).unwrap(), want.increment(&dx));
            prop_assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn normalization_keeps_values(
        hypo in cloud(3, 5),
        hyper in cloud(3, 5),
        dxs in prop::collection::vec(point(2, 1.0), 5),
    ) {
        // Make Phi(0) + Psi(0) = 0 in the raw pair.
        let top = hypo.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let bottom = hyper.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hyper: Gens = hyper.iter().map(|p| {
            let mut q = p.clone();
            q[0] -= top + bottom;
            q
        }).collect();
        let raw = Pair { hypo: hypo.clone(), hyper: hyper.clone() };
        let n = normalize(&VPolytope::new(3, hypo).unwrap(), &VPolytope::new(3, hyper).unwrap()).unwrap();
        for dx in &dxs {
            let (u, v) = (n.codiff.increment(dx).unwrap(), raw.increment(dx));
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()) + 1e-12);
        }
    }

    #[test]
    fn increment_is_lipschitz(t in tree(2), x in point(2, 2.0), a in point(2, 1.0), b in point(2, 1.0)) {
        let c = codiff(&expr(&t, 2), &x).unwrap();
        let gap = (c.increment(&a).unwrap() - c.increment(&b).unwrap()).abs();
        let dist = norm(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        prop_assert!(gap <= c.lipschitz_bound() * dist * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn directional_derivative_is_positively_homogeneous(t in tree(2), x in point(2, 2.0), g in small_unit(2), s in 0.1f64..10.0) {
        let c = codiff(&expr(&t, 2), &x).unwrap();
        let one = dir_deriv(&c, &g);
        let many = dir_deriv(&c, &g.iter().map(|v| s * v).collect::<Vec<_>>());
        prop_assert!((many - s * one).abs() <= 1e-12 * (1.0 + many.abs()));
    }

    #[test]
    fn quasidifferential_support_identity(t in pl_tree(2), x in prop::collection::vec(-2i32..=2, 2), g in small_unit(2)) {
        // Integer points make kinks likely.
        let x: Vec<f64> = x.iter().map(|&v| v as f64 * 0.5).collect();
        let c = codiff(&expr(&t, 2), &x).unwrap();
        let q = quasidiff(&c);
        let sub = q.sub.to_vecs();
        let sup = q.sup.to_vecs();
        let want = support(&sub, &g) - support(&negate(&sup), &g);
        prop_assert!((dir_deriv(&c, &g) - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn dir_deriv_matches_differences_on_benchmarks(i in 0usize..9, x in point(2, 2.0), g in small_unit(2)) {
        let suite = benchmark_suite();
        let b = &suite[i % suite.len()];
        let e = &b.problem.objective;
        let c = codiff(e, &x).unwrap();
        let fd = fd_dir_deriv(|y| e.eval(y).unwrap(), &x, &g);
        prop_assert!((dir_deriv(&c, &g) - fd).abs() <= 1e-5, "{}: {} vs {fd}", b.name, dir_deriv(&c, &g));
    }

    #[test]
    fn non_stationary_points_come_with_descent_directions(t in pl_tree(2), x in prop::collection::vec(-4i32..=4, 2)) {
        let x: Vec<f64> = x.iter().map(|&v| v as f64 * 0.5).collect();
        let e = expr(&t, 2);
        let (f, c) = codiff_with_value(&e, &x).unwrap();
        let tol = Tolerances { active: Tolerances::default().active_at(f), ..Tolerances::default() };
        let r = check_min_unconstrained(&c, &tol).unwrap();
        if let Some(g) = r.descent_direction() {
            prop_assert!(dir_deriv(&c, g) < 0.0);
            let decreased = (1..40).any(|k| e.eval(&axpy(&x, 0.5f64.powi(k), g)).unwrap() < f);
            prop_assert!(decreased);
        } else {
            prop_assert!(r.is_stationary());
            prop_assert!(compass_nonnegative(&c));
        }
    }

    #[test]
    fn maximality_mirrors_minimality(t in pl_tree(2), x in prop::collection::vec(-4i32..=4, 2)) {
        let x: Vec<f64> = x.iter().map(|&v| v as f64 * 0.5).collect();
        let e = expr(&t, 2);
        let tol = Tolerances::default();
        let c = codiff(&e, &x).unwrap();
        let neg = codiff(&(-e), &x).unwrap();
        let max = check_max_unconstrained(&c, &tol).unwrap();
        let min = check_min_unconstrained(&neg, &tol).unwrap();
        prop_assert_eq!(max.verdict, min.verdict);
        prop_assert!((max.worst_violation - min.worst_violation).abs() <= 1e-9);
    }

    #[test]
    fn inactive_constraints_do_not_change_the_verdict(i in 0usize..6, x in point(2, 2.0)) {
        let suite = benchmark_suite();
        let b = suite.iter().filter(|b| b.is_unconstrained()).nth(i).unwrap();
        let tol = Tolerances::default();
        let slack = parse("x1^2 + x2^2 - 100", 2).unwrap();
        for y in [b.minimizer.clone(), x] {
            let plain = check(&b.problem, &y, &tol).unwrap();
            let constrained = check(&b.problem.clone().with_inequality(slack.clone()), &y, &tol).unwrap();
            prop_assert_eq!(plain.verdict, constrained.verdict);
        }
    }
}

/// Nonnegative directional derivative along 16 compass directions.
fn compass_nonnegative(c: &codiff_core::Codifferential) -> bool {
    (0..16).all(|k| {
        let t = k as f64 * std::f64::consts::PI / 8.0;
        dir_deriv(c, &[t.cos(), t.sin()]) >= -1e-6
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn descent_is_deterministic_and_monotone(t in pl_tree(2), x0 in point(2, 2.0), seed in 0u64..4) {
        let e = expr(&t, 2);
        let cfg = DescentConfig { max_iters: 60, seed, ..DescentConfig::default() };
        let a = minimize(&e, &x0, &cfg).unwrap();
        let b = minimize(&e, &x0, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iterates.windows(2).all(|w| w[1].f <= w[0].f));
    }
}

#[test]
fn lipschitz_holds_on_some_verified_radius() {
    // For every benchmark and sample point some radius r > 0 verifies
    // |F(x+dx) - F(x)| <= (L + 1e-2)|dx| on 200 samples of the r-ball.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for b in benchmark_suite() {
        let e = &b.problem.objective;
        let mut points = vec![b.minimizer.clone(), b.start.clone()];
        points.extend((0..5).map(|_| in_box(&mut rng, 2, 2.0)));
        for x in points {
            let (f, c) = codiff_with_value(e, &x).unwrap();
            let l = c.lipschitz_bound();
            let verified = [1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 1e-4].into_iter().find(|&r| {
                (0..200).all(|_| {
                    let dx = in_ball(&mut rng, 2, r);
                    (e.eval(&add(&x, &dx)).unwrap() - f).abs() <= (l + 1e-2) * norm(&dx) + 1e-14
                })
            });
            assert!(verified.is_some(), "{} at {x:?}", b.name);
        }
    }
}

#[test]
fn benchmark_values_match_a_grid_search() {
    for b in benchmark_suite() {
        if !b.problem.equalities.is_empty() {
            continue;
        }
        let p: &Problem = &b.problem;
        let feasible = |x: &[f64]| p.violation(x).unwrap() <= 0.0;
        let (best, at) = grid_min(|x| p.objective.eval(x).unwrap(), feasible, 5.0, 200);
        let c = codiff(&p.objective, &at).unwrap();
        let h = 5.0 / 200.0;
        assert!(
            (best - b.value).abs() <= c.lipschitz_bound() * h * 2f64.sqrt() + 1e-12,
            "{}: grid {best} at {at:?}, stated {}",
            b.name,
            b.value
        );
        assert!(best >= b.value - 1e-12, "{}: grid beats the stated minimum", b.name);
    }
}
