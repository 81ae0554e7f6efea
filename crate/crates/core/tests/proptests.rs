use mfg_core::det_hjb::{solve_det_hjb, stable_time_grid, DetHjbProblem};
use mfg_core::fokker_planck::*;
use mfg_core::grid::*;
use mfg_core::hamiltonian::{legendre, Diffusion};
use mfg_core::noise_tree::*;
use mfg_core::problems::*;
use mfg_core::transform::shift_density;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn m_plus_dominates(x in -1e6f64..1e6) {
        let v = m_plus(x).unwrap();
        prop_assert!(v >= 0.0 && v >= x);
    }

    #[test]
    fn semiconcavity_exact_on_quadratics(a in -3.0f64..3.0, b in -2.0f64..2.0, c in -1.0f64..1.0, n in 8usize..200) {
        let g = Grid1D::new(-2.0, 2.0, n).unwrap();
        let u = GridField::from_fn(g, |x| a * x * x + b * x + c);
        let sc = semiconcavity_constant(&u).unwrap();
        prop_assert!((sc - (2.0 * a).max(0.0)).abs() <= 1e-8 * (1.0 + a.abs()));
    }

    #[test]
    fn interpolation_bound_dominates_sup(
        knots in prop::collection::vec(-2.0f64..2.0, 1..8),
        p in 1.0f64..6.0,
    ) {
        let g = Grid1D::new(-1.0, 1.0, 401).unwrap();
        let k = knots.len() + 1;
        let w = GridField::from_fn(g, |x| {
            let s = (x + 1.0) * 0.5 * k as f64;
            let i = (s.floor() as usize).min(k - 1);
            let f = s - i as f64;
            let at = |j: usize| if j == 0 || j == k { 0.0 } else { knots[j - 1] };
            (1.0 - f) * at(i) + f * at(i + 1)
        });
        let lip = lipschitz_constant(&w).unwrap();
        prop_assume!(lip > 0.0);
        let bound = interp_sup_bound(p, lip, lp_norm(&w, p).unwrap(), 1).unwrap();
        prop_assert!(w.sup_norm() <= bound + 1e-10);
    }

    #[test]
    fn psi_is_a_supersolution(l in 0.01f64..5.0, k in 0.01f64..5.0, t in 0.0f64..5.0, x in -20.0f64..20.0) {
        prop_assert!(psi_residual(l, k, t, x).unwrap() >= -1e-12);
        let v = psi_test(l, k, t, x).unwrap();
        prop_assert!(v.value >= 0.0 && v.value <= 1.0);
        let r = (x.abs() - k * t).max(0.0);
        if r * r / (4.0 * l * (t + 1.0)) < 700.0 {
            prop_assert!(v.value > 0.0);
        }
    }

    #[test]
    fn fenchel_inequality(p in -3.0f64..3.0, alpha in -2.0f64..2.0) {
        for h in [quadratic(), relativistic(4.0)] {
            let hs = legendre(&h, 0.0, 0.0, alpha * 0.45, 20.0, 2001).unwrap();
            prop_assert!(p * alpha * 0.45 <= h.eval(0.0, 0.0, p) + hs + 1e-6);
        }
    }

    #[test]
    fn tree_moments(n in 1usize..12, horizon in 0.1f64..5.0) {
        let tree = build_tree(n, horizon, 0.1).unwrap();
        let (m1, m2) = tree.moments(n);
        prop_assert!(m1.abs() <= 1e-12 * horizon.max(1.0));
        prop_assert!((m2 - horizon).abs() <= 1e-12 * horizon.max(1.0));
    }

    #[test]
    fn conditional_expectation_of_shifted_walk(n in 1usize..6, c in -2.0f64..2.0) {
        let tree = build_tree(n, 1.0, 0.0).unwrap();
        let g = Grid1D::new(0.0, 1.0, 9).unwrap();
        let leaves = TreeField::new(
            n,
            tree.node_ids(n).map(|id| GridField::constant(g, c + tree.node(id).w_value)).collect(),
        ).unwrap();
        let parent = conditional_expectation(&tree, &leaves).unwrap();
        for id in tree.node_ids(n - 1) {
            prop_assert!((parent.get(id).values[2] - c - tree.node(id).w_value).abs() <= 1e-12);
        }
        prop_assert!(martingale_residual_of(&martingale_increments(&leaves, &parent).unwrap()) <= 1e-12);
    }

    #[test]
    fn shifting_keeps_mass(s in -1.5f64..1.5, mu in -0.5f64..0.5) {
        let g = Grid1D::symmetric(4.0, 201).unwrap();
        let m = gaussian_density(g, mu, 0.4);
        let moved = shift_density(&m, s).unwrap();
        prop_assert!((moved.mass() - 1.0).abs() <= 1e-12);
        prop_assert!(moved.min() >= 0.0);
    }

    #[test]
    fn wasserstein_is_symmetric_and_translation_exact(a in -1.0f64..1.0, b in -1.0f64..1.0, k in 0usize..20) {
        let g = Grid1D::symmetric(8.0, 321).unwrap();
        let m1 = gaussian_density(g, a, 0.4);
        let m2 = gaussian_density(g, b, 0.3);
        let d12 = wasserstein2_1d(&m1, &m2).unwrap();
        prop_assert!((d12 - wasserstein2_1d(&m2, &m1).unwrap()).abs() <= 1e-12);
        let mut r = m1.clone();
        r.values.rotate_right(k);
        prop_assert!(m1.values[g.n_points - k..].iter().sum::<f64>() < 1e-40);
        prop_assert!((wasserstein2_1d(&m1, &r).unwrap() - k as f64 * g.dx()).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fp_conserves_mass_and_sign(c in -1.0f64..1.0, nu in 0.0f64..0.3, w in 0.5f64..2.0) {
        let g = Grid1D::symmetric(4.0, 129).unwrap();
        let drift = GridField::from_fn(g, |x| c * (w * x).sin());
        let diffusion = Diffusion::from_a(nu);
        let dx = g.dx();
        let dt = 0.9 * dx * dx / (2.0 * nu + dx * c.abs().max(1e-3));
        let n = (0.5 / dt).ceil() as usize;
        let prob = FpProblem::with_constant_drift(gaussian_density(g, 0.0, 0.5), drift, diffusion, 0.0, TimeGrid::new(0.5, n).unwrap());
        let path = solve_fp(&prob).unwrap();
        prop_assert!(path.max_mass_error() <= 1e-12);
        prop_assert!(path.min_value() >= -1e-12);
    }

    #[test]
    fn constants_ride_through_the_hjb(c in -2.0f64..2.0) {
        let g = Grid1D::symmetric(2.0, 65).unwrap();
        let t1 = GridField::from_fn(g, kinked);
        let t2 = t1.map(|v| v + c);
        let tg = stable_time_grid(&quadratic(), &Diffusion::zero(), &t1, 0.5, 0.0, 1).unwrap();
        let s1 = solve_det_hjb(&DetHjbProblem::new(quadratic(), Diffusion::zero(), t1, tg, 0.0)).unwrap();
        let s2 = solve_det_hjb(&DetHjbProblem::new(quadratic(), Diffusion::zero(), t2, tg, 0.0)).unwrap();
        for (a, b) in s1.u.iter().zip(&s2.u) {
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| (y - x - c).abs() <= 1e-12));
        }
    }

    #[test]
    fn scheme_is_monotone_in_the_data(c in 0.0f64..0.5, amp in 0.0f64..0.3) {
        let g = Grid1D::symmetric(2.0, 65).unwrap();
        let lo = GridField::from_fn(g, capped_square);
        let hi = GridField::from_fn(g, |x| capped_square(x) + c + amp * (3.0 * x).cos().abs());
        let mut p1 = DetHjbProblem::new(quadratic(), Diffusion::zero(), lo, TimeGrid::new(0.5, 1).unwrap(), 0.0);
        let mut p2 = DetHjbProblem::new(quadratic(), Diffusion::zero(), hi, TimeGrid::new(0.5, 1).unwrap(), 0.0);
        let theta = 2.0 * p2.gradient_bound().max(p1.gradient_bound());
        p1.viscosity = Some(theta);
        p2.viscosity = Some(theta);
        let tg = TimeGrid::with_max_dt(0.5, p1.max_stable_dt().min(p2.max_stable_dt()), 1).unwrap();
        p1.tgrid = tg;
        p2.tgrid = tg;
        let (s1, s2) = (solve_det_hjb(&p1).unwrap(), solve_det_hjb(&p2).unwrap());
        for (a, b) in s1.u.iter().zip(&s2.u) {
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| *x <= y + 1e-10));
        }
    }
}
