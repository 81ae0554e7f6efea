//! The invariant battery behind `mfg verify`. Each suite is self-contained
//! and reports through the manifest pass table; a suite that errors is
//! recorded as failed with the error text and the battery continues.

use crate::commands::{export_equilibrium, grid, h_at_zero, interior_sup, sci, weighted_distance};
use crate::{Failure, Run};
use mfg_core::bshjb::*;
use mfg_core::det_hjb::*;
use mfg_core::fokker_planck::*;
use mfg_core::grid::*;
use mfg_core::hamiltonian::{check_structure, Diffusion, SampleLattice};
use mfg_core::mfg::*;
use mfg_core::noise_tree::*;
use mfg_core::problems::*;
use mfg_core::transform::{to_original, to_tilde};
use mfg_core::{MfgError, Result};
use rand::{Rng, SeedableRng};
use serde_json::json;
use std::time::Instant;

type Outcome = Result<(bool, String)>;

struct Battery<'a> {
    run: &'a mut Run,
    martingale: Vec<(String, f64)>,
}

impl Battery<'_> {
    fn suite(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Outcome) {
        let started = Instant::now();
        let (passed, detail) = match f(self) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = started.elapsed().as_secs_f64();
        self.run.record(name, passed, detail, secs);
        self.run.manifest.time(name, secs);
    }

    fn bshjb(&mut self, label: &str, sol: &BshjbSolution) {
        self.martingale.push((label.into(), sol.martingale_residual()));
    }
}

fn tree_setup(run: &Run, n_levels: usize, multiple_of: usize) -> Result<(NoiseTree, Grid1D, TimeGrid)> {
    let g = Grid1D::with_spacing(-4.0, 4.0, 1.0 / 32.0)?;
    let tree = build_tree(n_levels, 1.0, run.cfg.tree.beta)?;
    let term = GridField::from_fn(g, capped_square);
    let tg = stable_time_grid(&quadratic(), &Diffusion::zero(), &term, 1.0, 0.0, multiple_of)?;
    Ok((tree, g, tg))
}

fn structure(_: &mut Battery) -> Outcome {
    let lattice = SampleLattice::uniform(1.0, -4.0, 4.0, 3.0, 17);
    let mut failed = vec![];
    for (name, h) in [("quadratic", quadratic()), ("transport", transport_quadratic()), ("relativistic", relativistic(4.0))] {
        if !check_structure(&h, &lattice).passed() {
            failed.push(name);
        }
    }
    Ok((failed.is_empty(), format!("3 Hamiltonians checked, failing: {failed:?}")))
}

fn affine(_: &mut Battery) -> Outcome {
    let g = Grid1D::with_spacing(-3.0, 3.0, 1.0 / 64.0)?;
    let case = hjb_case("affine", g, 1.0)?;
    let tg = stable_time_grid(&case.hamiltonian, &case.diffusion, &case.terminal, 1.0, 0.0, 1)?;
    let sol = solve_det_hjb(&DetHjbProblem::new(case.hamiltonian, case.diffusion, case.terminal, tg, 0.0))?;
    let n = g.n_points;
    let worst = (0..=tg.n_steps)
        .map(|k| {
            let tau = 1.0 - tg.time(k);
            (n / 3..=2 * n / 3).map(|i| (sol.u[k].values[i] - g.x(i) + 0.5 * tau).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    Ok((worst <= 1e-10, format!("max interior error {worst:.2e}")))
}

fn sup_bound(b: &mut Battery) -> Outcome {
    let g = grid(&b.run.cfg).map_err(|f| MfgError::Configuration(f.message))?;
    let horizon = b.run.cfg.time.horizon;
    let mut worst = f64::NEG_INFINITY;
    for name in HJB_CASES.iter().filter(|n| **n != "affine") {
        let case = hjb_case(name, g, horizon)?;
        let tg = stable_time_grid(&case.hamiltonian, &case.diffusion, &case.terminal, horizon, 0.0, 1)?;
        let sol = solve_det_hjb(&DetHjbProblem::new(case.hamiltonian.clone(), case.diffusion, case.terminal.clone(), tg, 0.0))?;
        let h0 = h_at_zero(&case.hamiltonian, &tg, g);
        for k in 0..=tg.n_steps {
            worst = worst.max(interior_sup(&sol.u[k]) - case.terminal.sup_norm() - h0 * (horizon - tg.time(k)));
        }
    }
    Ok((worst <= 1e-10, format!("max interior excess over the bound {worst:.2e} on {} problems", HJB_CASES.len() - 1)))
}

fn semiconcavity(b: &mut Battery) -> Outcome {
    let horizon = 1.0;
    let mut cs = vec![];
    let mut last = None;
    for dx in [1.0 / 64.0, 1.0 / 128.0] {
        let g = Grid1D::with_spacing(-3.0, 3.0, dx)?;
        let case = hjb_case("kinked", g, horizon)?;
        let tg = stable_time_grid(&case.hamiltonian, &case.diffusion, &case.terminal, horizon, 0.0, 1)?;
        let sol = solve_det_hjb(&DetHjbProblem::new(case.hamiltonian, case.diffusion, case.terminal, tg, 0.0))?;
        cs.push(check_propagation(&sol, 0.0).c_min);
        last = Some(sol);
    }
    let sol = last.unwrap();
    let hi = cs.iter().cloned().fold(0.0, f64::max);
    let report = check_propagation(&sol, hi);
    let times: Vec<f64> = (0..=sol.tgrid.n_steps).map(|k| sol.tgrid.time(k)).collect();
    b.run.manifest.diag(
        "gamma",
        json!({ "t": times, "gamma": sol.gamma_series, "bound": report.fitted_bound, "c_fit": hi, "gamma_terminal": report.gamma_terminal }),
    );
    let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    let stable = lo > 0.0 && hi <= 1.25 * lo;
    Ok((stable && report.passes, format!("fitted C {:.4}, {:.4} at dx 1/64, 1/128; bound holds: {}", cs[0], cs[1], report.passes)))
}

fn comparison(b: &mut Battery) -> Outcome {
    let (tree, g, tg) = tree_setup(b.run, 3, 3)?;
    let mut mins = vec![];
    let mut pass = true;
    for name in COMPARISON_PAIRS {
        let (p1, p2) = comparison_pair(name, &tree, g, tg)?;
        let r = comparison_test(&p1, &p2)?;
        b.bshjb(name, &solve_bshjb(&p1)?);
        pass &= r.min_difference >= -1e-10;
        mins.push(format!("{name} {:.2e}", r.min_difference));
    }
    Ok((pass, format!("min(u1 - u2): {}", mins.join(", "))))
}

fn stability(b: &mut Battery) -> Outcome {
    let (tree, g, tg) = tree_setup(b.run, 3, 3)?;
    let mut ratios = vec![];
    for &d in &b.run.cfg.sweep.deltas {
        let (p1, p2) = stability_pair(&tree, g, tg, d)?;
        ratios.push(stability_estimate(&p1, &p2, 2.0)?.ratio);
    }
    let pass = ratios.iter().all(|r| r.is_finite()) && ratios.windows(2).all(|w| w[1] < 2.0 * w[0]);
    b.run.manifest.diag("stability", json!({ "deltas": b.run.cfg.sweep.deltas, "ratio": ratios }));
    Ok((pass, format!("lhs/rhs {}", sci(&ratios))))
}

fn degeneration(b: &mut Battery) -> Outcome {
    let (tree, g, tg) = tree_setup(b.run, 3, 3)?;
    let term = GridField::from_fn(g, capped_square);
    let p = BshjbProblem::deterministic(tree, tg, quadratic(), Diffusion::zero(), term, 0.0)?;
    let sol = solve_bshjb(&p)?;
    b.bshjb("deterministic data", &sol);
    let dm = sol.dm.iter().flat_map(|tf| tf.fields.iter()).map(GridField::sup_norm).fold(0.0, f64::max);
    let spread = sol
        .u
        .iter()
        .flat_map(|tf| tf.fields.iter().map(move |f| f.sup_distance_on(&tf.fields[0], f64::NEG_INFINITY, f64::INFINITY)))
        .fold(0.0, f64::max);
    Ok((dm <= 1e-12 && spread <= 1e-12, format!("max |dM| {dm:.2e}, max node spread {spread:.2e}")))
}

fn control(b: &mut Battery) -> Outcome {
    let g = Grid1D::with_spacing(-4.0, 4.0, 1.0 / 32.0)?;
    let tree = build_tree(2, 1.0, 0.0)?;
    let term = GridField::from_fn(g, |x| 0.5 * x * x);
    let tg = stable_time_grid(&quadratic(), &Diffusion::zero(), &term, 1.0, 0.0, 2)?;
    let p = BshjbProblem::deterministic(tree, tg, quadratic(), Diffusion::zero(), term, 0.0)?;
    let sol = solve_bshjb(&p)?;
    b.bshjb("linear-quadratic", &sol);
    let r = control_representation_check(&sol, &p, 1.0, b.run.cfg.verify.mc_paths, b.run.cfg.seed)?;
    let detail = format!(
        "PDE {:.5}, feedback MC {:.5} +- {:.1e}, zero control {:.5} ({} paths)",
        r.pde_value, r.mc_mean, r.mc_standard_error, r.zero_control_mean, r.paths
    );
    b.run.manifest.diag("control_representation", &r);
    Ok((r.passed, detail))
}

fn fokker_planck(_: &mut Battery) -> Outcome {
    let g = Grid1D::new(-4.0, 4.0, 257)?;
    let mut mass: f64 = 0.0;
    let mut min = f64::INFINITY;
    let sin = FpProblem::with_constant_drift(
        gaussian_density(g, 0.0, 0.4),
        GridField::from_fn(g, f64::sin),
        Diffusion::from_a(0.1),
        0.0,
        TimeGrid::new(1.0, 800)?,
    );
    let path = solve_fp(&sin)?;
    mass = mass.max(path.max_mass_error());
    min = min.min(path.min_value());
    let wide = Grid1D::new(-10.0, 10.0, 641)?;
    let mut linf = true;
    for c in [1.0, -1.0] {
        let p = FpProblem::with_constant_drift(
            gaussian_density(wide, 0.0, 0.8),
            GridField::from_fn(wide, |x| c * x),
            Diffusion::zero(),
            0.0,
            TimeGrid::new(1.0, 800)?,
        );
        let path = solve_fp(&p)?;
        mass = mass.max(path.max_mass_error());
        min = min.min(path.min_value());
        linf &= verify_linf_growth(&path, p.divergence_constant());
    }
    Ok((
        mass <= 1e-12 && min >= -1e-12 && linf,
        format!("max mass error {mass:.1e}, min density {min:.1e}, L-inf growth bound: {linf}"),
    ))
}

fn wasserstein(_: &mut Battery) -> Outcome {
    let g = Grid1D::new(-4.0, 4.0, 257)?;
    let m = gaussian_density(g, 0.0, 0.4);
    let mut r = m.clone();
    r.values.rotate_right(10);
    let trans = (wasserstein2_1d(&m, &r)? - 10.0 * g.dx()).abs();
    let sym = (wasserstein2_1d(&m, &r)? - wasserstein2_1d(&r, &m)?).abs();
    let mut consts = vec![];
    for n in [400, 800, 1600] {
        let p = FpProblem::with_constant_drift(m.clone(), GridField::from_fn(g, f64::sin), Diffusion::from_a(0.1), 0.0, TimeGrid::new(1.0, n)?);
        consts.push(solve_fp(&p)?.holder_d2_constant(33)?);
    }
    let (lo, hi) = (consts.iter().cloned().fold(f64::INFINITY, f64::min), consts.iter().cloned().fold(0.0, f64::max));
    Ok((
        trans <= 1e-6 && sym <= 1e-12 && lo > 0.0 && hi <= 1.1 * lo,
        format!("translation error {trans:.1e}, asymmetry {sym:.1e}, Holder constants {consts:.4?}"),
    ))
}

fn psi(b: &mut Battery) -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(b.run.cfg.seed);
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let (l, k) = (rng.gen_range(0.05..3.0), rng.gen_range(0.05..3.0));
        let (t, x) = (rng.gen_range(0.0..3.0), rng.gen_range(-8.0..8.0));
        worst = worst.min(psi_residual(l, k, t, x)?);
    }
    Ok((worst >= -1e-12, format!("min residual {worst:.2e} on 10^4 samples")))
}

fn cauchy(b: &mut Battery) -> Outcome {
    let levels = [2usize, 4, 8];
    let (_, g, tg) = tree_setup(b.run, 2, 8)?;
    let mut roots = vec![];
    for n in levels {
        let tree = build_tree(n, 1.0, b.run.cfg.tree.beta)?;
        let p = shifted_terminal_bshjb(&tree, g, tg, smooth_profile)?;
        let sol = solve_bshjb(&p)?;
        b.bshjb(&format!("refinement N = {n}"), &sol);
        roots.push(sol.root_initial().clone());
    }
    let d: Vec<f64> = roots.windows(2).map(|w| weighted_distance(&w[0], &w[1])).collect();
    b.run.manifest.diag("refinement", json!({ "levels": levels, "distance": d }));
    Ok((d[1] < d[0], format!("weighted root distance N 2-4 {:.2e}, N 4-8 {:.2e}", d[0], d[1])))
}

fn monotonicity(b: &mut Battery) -> Outcome {
    let cfg = &b.run.cfg;
    let prob = monotone_separated(cfg.monotone_params(), cfg.fixpoint_config())?;
    let g = prob.grid();
    let probes: Vec<GridField> = [-1.0, -0.3, 0.0, 0.5, 1.0].iter().map(|&c| gaussian_density(g, c, 0.4)).collect();
    let r = monotonicity_check(&prob.coupling, &probes, 0.0)?;
    Ok((r.passed, format!("min pairing {:.3e} over {} pairs", r.min_over_distinct, r.pairs)))
}

/// Fixed point, twin run and round trip on the configured monotone problem.
fn mfg_block(b: &mut Battery) -> std::result::Result<(), Failure> {
    let cfg = b.run.cfg.clone();
    let started = Instant::now();
    let mut prob = monotone_separated(cfg.monotone_params(), cfg.fixpoint_config()).map_err(|e| Failure::core("mfg", e))?;
    prob.hjb_epsilon = cfg.hjb.epsilon;
    let (twin, a, _) = match twin_run(&prob) {
        Ok(r) => r,
        Err(e) => {
            if let MfgError::NonConvergence { residual_series, .. } = &e {
                b.run.manifest.diag("residual_series", residual_series);
            }
            let msg = format!("error: {e}");
            b.run.record("mfg-fixed-point", false, msg.clone(), started.elapsed().as_secs_f64());
            b.run.record("pathwise-uniqueness", false, msg.clone(), 0.0);
            b.run.record("transform-round-trip", false, msg, 0.0);
            return Ok(());
        }
    };
    let secs = started.elapsed().as_secs_f64();
    b.run.manifest.time("mfg", secs);
    b.bshjb("MFG equilibrium", &a.u);
    let last = *a.residual_series.last().unwrap_or(&f64::NAN);
    b.run.manifest.diag("residual_series", &a.residual_series);
    b.run.manifest.diag("duality_gap", twin.gap);
    b.run.manifest.diag("twin", &twin);
    b.run.record(
        "mfg-fixed-point",
        last <= cfg.fixpoint.tol_d2 && a.iterations <= cfg.fixpoint.max_iters,
        format!("residual {last:.2e} after {} iterations", a.iterations),
        secs,
    );
    b.run.record(
        "pathwise-uniqueness",
        twin.passed,
        format!("sup_t E d2 {:.2e}, duality gap {:.2e} (tol {:.2e})", twin.flow_distance, twin.gap.total, twin.gap_tolerance),
        0.0,
    );
    export_equilibrium(b.run, &a)?;

    let s = Instant::now();
    let outcome: Outcome = (|| {
        let flow = a.flow();
        let back = to_original(&prob.tree, &to_tilde(&prob.tree, &flow)?)?;
        let dx = prob.grid().dx();
        let l1 = flow
            .m
            .iter()
            .zip(&back.m)
            .flat_map(|(x, y)| x.fields.iter().zip(&y.fields))
            .map(|(x, y)| x.values.iter().zip(&y.values).map(|(p, q)| (p - q).abs()).sum::<f64>() * dx)
            .fold(0.0, f64::max);
        let (lo, hi) = (prob.grid().x_min / 3.0, prob.grid().x_max / 3.0);
        let linf = flow
            .u
            .iter()
            .zip(&back.u)
            .flat_map(|(x, y)| x.fields.iter().zip(&y.fields))
            .map(|(x, y)| x.sup_distance_on(y, lo, hi))
            .fold(0.0, f64::max);
        let flat = build_tree(prob.tree.n_levels, prob.tree.horizon, 0.0)?;
        let same = to_original(&flat, &to_tilde(&flat, &flow)?)?;
        let identical = same.m == flow.m && same.u == flow.u;
        Ok((
            l1 <= 1e-3 && linf <= 1e-3 && identical,
            format!("L1 on m {l1:.1e}, interior L-inf on u {linf:.1e}, beta = 0 bit-identical: {identical}"),
        ))
    })();
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    b.run.record("transform-round-trip", passed, detail, s.elapsed().as_secs_f64());
    Ok(())
}

fn decoupled_case(b: &mut Battery) -> Outcome {
    let cfg = &b.run.cfg;
    let prob = decoupled(cfg.monotone_params(), cfg.fixpoint_config())?;
    let sol = solve_mfg(&prob, &InitialGuess::Initial)?;
    b.bshjb("decoupled MFG", &sol.u);
    let after = sol.residual_series.get(1).copied().unwrap_or(f64::NAN);
    Ok((after <= 1e-12, format!("residual series {}", sci(&sol.residual_series))))
}

pub fn verify(run: &mut Run) -> std::result::Result<(), Failure> {
    let mut b = Battery { run, martingale: vec![] };
    b.suite("hamiltonian-structure", structure);
    b.suite("affine-exact", affine);
    b.suite("sup-bound", sup_bound);
    b.suite("semiconcavity-propagation", semiconcavity);
    b.suite("comparison", comparison);
    b.suite("stability", stability);
    b.suite("deterministic-degeneration", degeneration);
    b.suite("control-representation", control);
    b.suite("fokker-planck", fokker_planck);
    b.suite("wasserstein", wasserstein);
    b.suite("coupling-monotonicity", monotonicity);
    mfg_block(&mut b)?;
    b.suite("decoupled-one-iteration", decoupled_case);
    b.suite("psi-supersolution", psi);
    b.suite("n-refinement-cauchy", cauchy);
    let runs = std::mem::take(&mut b.martingale);
    b.suite("martingale", |b| {
        let worst = runs.iter().map(|m| m.1).fold(0.0, f64::max);
        b.run.manifest.diag("martingale", runs.iter().map(|(l, r)| json!({ "run": l, "residual": r })).collect::<Vec<_>>());
        Ok((worst <= 1e-12 && !runs.is_empty(), format!("max residual {worst:.1e} over {} runs", runs.len())))
    });
    b.run.check_table("verify")
}
