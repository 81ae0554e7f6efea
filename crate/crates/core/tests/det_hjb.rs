mod common;

use common::*;
use mfg_core::det_hjb::*;
use mfg_core::grid::{semiconcavity_constant, Grid1D, GridField};
use mfg_core::hamiltonian::{Diffusion, Hamiltonian};
use mfg_core::problems::*;
use mfg_core::MfgError;

#[test]
fn heat_case_within_two_dx_of_gaussian_convolution() {
    for dx in [1.0 / 32.0, 1.0 / 64.0] {
        let g = Grid1D::with_spacing(-6.0, 6.0, dx).unwrap();
        let sol = solve(Hamiltonian::zero(), Diffusion::from_a(0.5), g, bump, 1.0);
        for k in [0, sol.tgrid.n_steps / 2] {
            let tau = 1.0 - sol.tgrid.time(k);
            let e = interior_third_error(&sol.u[k], |x| heat(bump, 0.5, tau, x));
            assert!(e <= 2.0 * dx, "dx {dx} level {k}: {e}");
        }
    }
}

#[test]
fn hopf_lax_errors_shrink() {
    let mut errs = vec![];
    for dx in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let g = Grid1D::with_spacing(-3.0, 3.0, dx).unwrap();
        let sol = solve(quadratic(), Diffusion::zero(), g, capped_square, 0.5);
        let e = interior_third_error(sol.initial(), |x| hopf_lax(capped_square, 0.5, x, 3.0));
        assert!(e <= 3.0 * dx, "dx {dx}: {e}");
        errs.push(e);
    }
    assert!(log_slope(&[4.0, 2.0, 1.0], &errs) > 0.7);
}

#[test]
fn terminal_level_is_the_data() {
    let g = Grid1D::with_spacing(-2.0, 2.0, 1.0 / 16.0).unwrap();
    let sol = solve(quadratic(), Diffusion::zero(), g, kinked, 0.5);
    assert_eq!(sol.u.last().unwrap().values, GridField::from_fn(g, kinked).values);
    assert!(sol.gamma_series.iter().chain(&sol.sup_series).chain(&sol.lip_series).all(|v| v.is_finite()));
}

#[test]
fn affine_case_propagates_with_zero_constant() {
    let g = Grid1D::with_spacing(-2.0, 2.0, 1.0 / 32.0).unwrap();
    let sol = solve(quadratic(), Diffusion::zero(), g, |_| 2.0, 1.0);
    let rep = check_propagation(&sol, 0.0);
    assert!(rep.passes);
    assert_eq!(rep.c_min, 0.0);
}

#[test]
fn heat_case_gamma_decreases_backward() {
    let g = Grid1D::with_spacing(-6.0, 6.0, 1.0 / 32.0).unwrap();
    let sol = solve(Hamiltonian::zero(), Diffusion::from_a(0.5), g, bump, 1.0);
    let gs = &sol.gamma_series;
    assert!(gs.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    assert!(check_propagation(&sol, 0.0).passes);
}

#[test]
fn fitted_constant_is_stable_on_kinked_data() {
    let mut reports = vec![];
    let mut sols = vec![];
    let mut sc = vec![];
    for dx in [1.0 / 64.0, 1.0 / 128.0] {
        let g = Grid1D::with_spacing(-3.0, 3.0, dx).unwrap();
        let case = hjb_case("kinked", g, 1.0).unwrap();
        let sol = solve(case.hamiltonian, case.diffusion, g, kinked, 1.0);
        sc.push(sol.sc_series.iter().cloned().fold(0.0, f64::max));
        reports.push(check_propagation(&sol, 0.0));
        sols.push(sol);
    }
    let cs: Vec<f64> = reports.iter().map(|r| r.c_min).collect();
    let hi = cs.iter().cloned().fold(0.0, f64::max);
    let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(lo > 0.0 && hi <= 1.25 * lo, "{cs:?}");
    // Semiconcavity constant of G is 2; the solution may not exceed it.
    assert!(sc.iter().all(|&c| c <= 2.0 + 1e-9), "{sc:?}");
    let at_hi: Vec<_> = sols.iter().map(|s| check_propagation(s, hi)).collect();
    assert!(at_hi.iter().all(|r| r.passes));
    assert!(violation_monotone_under_refinement(&at_hi));
}

#[test]
fn larger_hamiltonian_and_smaller_data_give_smaller_value() {
    let g = Grid1D::with_spacing(-3.0, 3.0, 1.0 / 32.0).unwrap();
    let big = solve(quadratic_plus(0.2), Diffusion::zero(), g, |x| capped_square(x) - 0.1, 1.0);
    let small = solve(quadratic(), Diffusion::zero(), g, capped_square, 1.0);
    for (a, b) in big.u.iter().zip(&small.u) {
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(x <= &(y + 1e-10));
        }
    }
}

#[test]
fn sup_bound_holds_away_from_the_boundary() {
    let g = Grid1D::with_spacing(-3.0, 3.0, 1.0 / 32.0).unwrap();
    for name in ["heat", "hopf-lax", "relativistic"] {
        let case = hjb_case(name, g, 1.0).unwrap();
        let sol = solve(case.hamiltonian.clone(), case.diffusion, g, |x| case.terminal.interpolate(x), 1.0);
        let gsup = case.terminal.sup_norm();
        for u in &sol.u {
            let n = g.n_points;
            let inner = u.values[n / 3..=2 * n / 3].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(inner <= gsup + 1e-10, "{name}");
        }
    }
}

#[test]
fn vanishing_viscosity_differences_shrink() {
    let g = Grid1D::with_spacing(-3.0, 3.0, 1.0 / 32.0).unwrap();
    let terminal = GridField::from_fn(g, kinked);
    let run = |eps: f64| {
        let tg = stable_time_grid(&quadratic(), &Diffusion::zero(), &terminal, 1.0, 0.04, 1).unwrap();
        solve_det_hjb(&DetHjbProblem::new(quadratic(), Diffusion::zero(), terminal.clone(), tg, eps)).unwrap()
    };
    let sols: Vec<_> = [0.04, 0.02, 0.01].iter().map(|&e| run(e)).collect();
    let d = |a: &DetHjbSolution, b: &DetHjbSolution| a.initial().sup_distance_on(b.initial(), -1.0, 1.0);
    let (d1, d2) = (d(&sols[0], &sols[1]), d(&sols[1], &sols[2]));
    assert!(d2 < d1, "{d1} {d2}");
    assert!(d1 <= 0.04f64.sqrt() && d2 <= 0.02f64.sqrt());
}

#[test]
fn cfl_violation_names_the_inequality() {
    let g = Grid1D::with_spacing(-1.0, 1.0, 1.0 / 64.0).unwrap();
    let p = DetHjbProblem::new(
        Hamiltonian::zero(),
        Diffusion::from_a(1.0),
        GridField::from_fn(g, bump),
        time_grid(1.0, 10),
        0.0,
    );
    let err = solve_det_hjb(&p).unwrap_err();
    assert!(matches!(err, MfgError::Cfl { .. }));
    assert!(err.to_string().contains("0.9*dx^2"));
}

#[test]
fn semiconcavity_of_solution_is_bounded_by_data() {
    let g = Grid1D::with_spacing(-3.0, 3.0, 1.0 / 32.0).unwrap();
    let sol = solve(quadratic(), Diffusion::zero(), g, smooth_profile, 1.0);
    let sc0 = semiconcavity_constant(&GridField::from_fn(g, smooth_profile)).unwrap();
    assert!(sol.sc_series.iter().all(|&c| c <= sc0 + 1e-9));
}
