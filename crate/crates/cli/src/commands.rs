//! The solve commands and the sweep.

use crate::config::RunConfig;
use crate::output;
use crate::{Failure, Run};
use mfg_core::bshjb::{self, stability_estimate, BshjbSolution};
use mfg_core::det_hjb::{check_propagation, solve_det_hjb, stable_time_grid, DetHjbProblem};
use mfg_core::fokker_planck::{self, gaussian_density, verify_linf_growth, FpProblem};
use mfg_core::grid::{cfl_limit, psi_test, Grid1D, GridField, TimeGrid};
use mfg_core::hamiltonian::{Diffusion, Hamiltonian};
use mfg_core::mfg::{self, monotonicity_check, InitialGuess, MfgSolution};
use mfg_core::noise_tree::{build_tree, project_path_error, NoiseTree};
use mfg_core::problems::*;
use mfg_core::MfgError;
use serde_json::json;
use std::time::Instant;

pub fn grid(cfg: &RunConfig) -> Result<Grid1D, Failure> {
    Grid1D::symmetric(cfg.grid.half_width, cfg.grid.n_points).map_err(|e| Failure::core("grid", e))
}

pub fn profile(name: &str) -> fn(f64) -> f64 {
    match name {
        "capped-square" => capped_square,
        "kinked" => kinked,
        "bump" => bump,
        _ => smooth_profile,
    }
}

pub fn drift(name: &str, g: Grid1D) -> GridField {
    match name {
        "zero" => GridField::constant(g, 0.0),
        "constant" => GridField::constant(g, 0.5),
        "contracting" => GridField::from_fn(g, |x| x),
        "expanding" => GridField::from_fn(g, |x| -x),
        _ => GridField::from_fn(g, f64::sin),
    }
}

/// `max |f|` over the middle third of the grid, away from the extrapolated
/// ghost cells.
pub fn interior_sup(f: &GridField) -> f64 {
    let n = f.len();
    f.values[n / 3..=2 * n / 3].iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `sup |H(t, x, 0)|` over the time levels and grid points.
pub fn h_at_zero(h: &Hamiltonian, tg: &TimeGrid, g: Grid1D) -> f64 {
    let xs = g.points();
    (0..=tg.n_steps)
        .flat_map(|k| xs.iter().map(move |&x| (k, x)))
        .map(|(k, x)| h.eval(tg.time(k), x, 0.0).abs())
        .fold(0.0, f64::max)
}

/// Time levels at the slab boundaries `t_0, ..., t_N`.
pub fn slab_levels(steps_per_slab: usize, n_levels: usize) -> Vec<usize> {
    (0..=n_levels).map(|l| l * steps_per_slab).collect()
}

pub fn solve_hjb(run: &mut Run) -> Result<(), Failure> {
    let cfg = run.cfg.clone();
    let g = grid(&cfg)?;
    let case = hjb_case(&cfg.problem.hjb, g, cfg.time.horizon).map_err(|e| Failure::core("problems", e))?;
    let tg = match cfg.time.n_steps {
        Some(n) => TimeGrid::new(cfg.time.horizon, n),
        None => stable_time_grid(&case.hamiltonian, &case.diffusion, &case.terminal, case.horizon, cfg.hjb.epsilon, 1),
    }
    .map_err(|e| Failure::core("det-hjb", e))?;
    let prob = DetHjbProblem::new(case.hamiltonian.clone(), case.diffusion.clone(), case.terminal.clone(), tg, cfg.hjb.epsilon);
    run.manifest.diag("cfl", json!({ "dt": tg.dt(), "max_stable_dt": prob.max_stable_dt(), "n_steps": tg.n_steps }));
    let sol = run.stage("det-hjb", |_| solve_det_hjb(&prob)).map_err(|e| Failure::core("det-hjb", e))?;
    let prop = check_propagation(&sol, 0.0);
    run.manifest.diag("problem", case.name);
    run.manifest.diag("solution", &sol);
    run.manifest.diag("propagation", &prop);

    let finite = sol.u.iter().all(|f| f.values.iter().all(|v| v.is_finite()));
    run.record("finite-values", finite, format!("{} time levels", sol.u.len()), 0.0);
    if case.name != "affine" {
        let h0 = h_at_zero(&case.hamiltonian, &tg, g);
        let worst = (0..=tg.n_steps)
            .map(|k| interior_sup(&sol.u[k]) - case.terminal.sup_norm() - h0 * (case.horizon - tg.time(k)))
            .fold(f64::NEG_INFINITY, f64::max);
        run.record("sup-bound", worst <= 1e-10, format!("max interior excess {worst:.2e}"), 0.0);
    }
    let p = output::write_single(&run.dir, "u.csv", &tg, &sol.u, cfg.snapshots);
    run.file(p)?;
    run.check_table("det-hjb")
}

fn bshjb_run(run: &mut Run) -> Result<(NoiseTree, f64, BshjbSolution), Failure> {
    let cfg = run.cfg.clone();
    let g = grid(&cfg)?;
    let tree = build_tree(cfg.tree.n_levels, cfg.time.horizon, cfg.tree.beta).map_err(|e| Failure::core("noise-tree", e))?;
    let prof = profile(&cfg.problem.terminal);
    let term = GridField::from_fn(g, prof);
    let tg = match cfg.time.n_steps {
        Some(n) => TimeGrid::new(cfg.time.horizon, n),
        None => stable_time_grid(&quadratic(), &Diffusion::zero(), &term, cfg.time.horizon, cfg.hjb.epsilon, cfg.tree.n_levels),
    }
    .map_err(|e| Failure::core("bshjb", e))?;
    let mut p = shifted_terminal_bshjb(&tree, g, tg, prof).map_err(|e| Failure::core("bshjb", e))?;
    p.epsilon = cfg.hjb.epsilon;
    let sol = run.stage("bshjb", |_| bshjb::solve_bshjb(&p)).map_err(|e| Failure::core("bshjb", e))?;
    let g_sup = p.terminal.fields.iter().map(GridField::sup_norm).fold(0.0, f64::max);
    Ok((tree, g_sup, sol))
}

pub fn solve_bshjb(run: &mut Run) -> Result<(), Failure> {
    let (tree, g_sup, sol) = bshjb_run(run)?;
    let residual = sol.martingale_residual();
    let bounds = sol.uniform_bounds();
    let gamma_max: Vec<f64> = sol.gamma.iter().map(|v| v.iter().cloned().fold(0.0, f64::max)).collect();
    run.manifest.diag("tree", tree.manifest());
    run.manifest.diag("martingale_residual", residual);
    run.manifest.diag("uniform_bounds", json!({ "sup": bounds.0, "lipschitz": bounds.1, "semiconcavity": bounds.2 }));
    run.manifest.diag("gamma_max", &gamma_max);
    run.manifest.diag("tgrid", sol.tgrid);

    run.record("martingale", residual <= 1e-12, format!("residual {residual:.1e}"), 0.0);
    let interior = sol.u.iter().flat_map(|tf| tf.fields.iter()).map(interior_sup).fold(0.0, f64::max);
    run.record(
        "sup-bound",
        interior <= g_sup + 1e-10,
        format!("max interior |u| {interior:.4e} against sup |G| {g_sup:.4e}"),
        0.0,
    );

    let levels = slab_levels(sol.steps_per_slab, sol.n_levels);
    let p = output::write_tree(&run.dir, "u.csv", &sol.tgrid, &sol.u, &levels);
    run.file(p)?;
    let mut w = output::FieldWriter::create(&run.dir, "dm.csv")?;
    for (n, tf) in sol.dm.iter().enumerate() {
        w.tree_field(tree.slab_start(n + 1), tf)?;
    }
    run.file(w.finish())?;
    run.check_table("bshjb")
}

pub fn solve_fp(run: &mut Run) -> Result<(), Failure> {
    let cfg = run.cfg.clone();
    let g = grid(&cfg)?;
    let m0 = gaussian_density(g, cfg.fp.m0_mean, cfg.fp.m0_sd);
    let b = drift(&cfg.problem.drift, g);
    let diffusion = Diffusion::from_a(cfg.fp.nu);
    let tg = match cfg.time.n_steps {
        Some(n) => TimeGrid::new(cfg.time.horizon, n),
        None => TimeGrid::new(cfg.time.horizon, 1).and_then(|probe_tg| {
            let probe = FpProblem::with_constant_drift(m0.clone(), b.clone(), diffusion.clone(), cfg.fp.epsilon, probe_tg);
            let (d, s) = probe.cfl_coefficients();
            TimeGrid::with_max_dt(cfg.time.horizon, cfl_limit(g.dx(), d, s), 1)
        }),
    }
    .map_err(|e| Failure::core("fokker-planck", e))?;
    let prob = FpProblem::with_constant_drift(m0, b, diffusion, cfg.fp.epsilon, tg);
    let path = run.stage("fokker-planck", |_| fokker_planck::solve_fp(&prob)).map_err(|e| Failure::core("fokker-planck", e))?;
    let c_div = prob.divergence_constant();
    let linf = verify_linf_growth(&path, c_div);
    let holder = path.holder_d2_constant(33.min(tg.n_steps + 1)).ok();
    run.manifest.diag("path", &path);
    run.manifest.diag("divergence_constant", c_div);
    run.manifest.diag("holder_d2_constant", holder);

    let mass = path.max_mass_error();
    let min = path.min_value();
    run.record("mass", mass <= 1e-12, format!("max |mass - 1| {mass:.1e}"), 0.0);
    run.record("positivity", min >= -1e-12, format!("min density {min:.1e}"), 0.0);
    run.record("linf-growth", linf, format!("bound exp(C t) |m0|_inf with C = {c_div:.4}"), 0.0);
    let p = output::write_single(&run.dir, "m.csv", &tg, &path.m, cfg.snapshots);
    run.file(p)?;
    run.check_table("fokker-planck")
}

/// Writes `u.csv`, `m.csv` and `residuals.csv` for an equilibrium.
pub fn export_equilibrium(run: &mut Run, sol: &MfgSolution) -> Result<(), Failure> {
    let levels = slab_levels(sol.u.steps_per_slab, sol.u.n_levels);
    let p = output::write_tree(&run.dir, "u.csv", &sol.u.tgrid, &sol.u.u, &levels);
    run.file(p)?;
    let p = output::write_tree(&run.dir, "m.csv", &sol.u.tgrid, &sol.m, &levels);
    run.file(p)?;
    let p = output::write_series(&run.dir, "residuals.csv", &sol.residual_series);
    run.file(p)
}

pub fn solve_mfg(run: &mut Run) -> Result<(), Failure> {
    let cfg = run.cfg.clone();
    let mut prob =
        mfg_case(&cfg.problem.mfg, cfg.monotone_params(), cfg.fixpoint_config()).map_err(|e| Failure::core("mfg", e))?;
    prob.hjb_epsilon = cfg.hjb.epsilon;
    run.manifest.diag("tree", prob.tree.manifest());
    let g = prob.grid();
    let probes: Vec<GridField> = [-1.0, -0.3, 0.0, 0.5, 1.0].iter().map(|&c| gaussian_density(g, c, 0.4)).collect();
    let mono = monotonicity_check(&prob.coupling, &probes, 0.0).map_err(|e| Failure::core("mfg", e))?;
    run.manifest.diag("monotonicity", mono);

    let sol = match run.stage("mfg", |_| mfg::solve_mfg(&prob, &InitialGuess::Initial)) {
        Ok(s) => s,
        Err(e) => {
            if let MfgError::NonConvergence { residual_series, last } = &e {
                run.manifest.diag("residual_series", residual_series);
                run.manifest.diag("last_residual", last);
                let p = output::write_series(&run.dir, "residuals.csv", residual_series);
                run.file(p)?;
            }
            return Err(Failure::core("mfg", e));
        }
    };
    let residual = sol.u.martingale_residual();
    run.manifest.diag("residual_series", &sol.residual_series);
    run.manifest.diag("iterations", sol.iterations);
    run.manifest.diag("fp_epsilon", sol.fp_epsilon);
    run.manifest.diag("epsilon_refinement_shift", sol.epsilon_refinement_shift);
    run.manifest.diag("martingale_residual", residual);

    let last = *sol.residual_series.last().unwrap_or(&f64::NAN);
    run.record(
        "fixed-point",
        last <= prob.fixpoint.tol_d2,
        format!("residual {last:.2e} after {} iterations", sol.iterations),
        0.0,
    );
    run.record("martingale", residual <= 1e-12, format!("residual {residual:.1e}"), 0.0);
    let mass = sol
        .m
        .iter()
        .flat_map(|tf| tf.fields.iter())
        .map(|f| (f.mass() - 1.0).abs())
        .fold(0.0, f64::max);
    run.record("mass", mass <= 1e-10, format!("max |mass - 1| {mass:.1e}"), 0.0);
    if prob.coupling.declared_monotone {
        run.record(
            "coupling-monotonicity",
            mono.passed,
            format!("min pairing {:.3e} over {} pairs", mono.min_over_distinct, mono.pairs),
            0.0,
        );
    }
    export_equilibrium(run, &sol)?;
    run.check_table("mfg")
}

pub fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// `sup_x |a - b| psi_{1,1}(0, x)`.
pub fn weighted_distance(a: &GridField, b: &GridField) -> f64 {
    (0..a.len())
        .map(|i| (a.values[i] - b.values[i]).abs() * psi_test(1.0, 1.0, 0.0, a.grid.x(i)).map(|p| p.value).unwrap_or(1.0))
        .fold(0.0, f64::max)
}

pub fn sweep(run: &mut Run) -> Result<(), Failure> {
    let cfg = run.cfg.clone();
    let g = grid(&cfg)?;
    let horizon = cfg.time.horizon;
    let core = |m: &'static str| move |e: MfgError| Failure::core(m, e);

    // Stability: ratio lhs/rhs over the delta sweep.
    let s = Instant::now();
    let tree = build_tree(cfg.tree.n_levels, horizon, cfg.tree.beta).map_err(core("noise-tree"))?;
    let tg = stable_time_grid(&quadratic(), &Diffusion::zero(), &GridField::from_fn(g, capped_square), horizon, 0.0, cfg.tree.n_levels)
        .map_err(core("bshjb"))?;
    let mut ratios = vec![];
    for &d in &cfg.sweep.deltas {
        let (a, b) = stability_pair(&tree, g, tg, d).map_err(core("bshjb"))?;
        ratios.push(stability_estimate(&a, &b, 2.0).map_err(core("bshjb"))?);
    }
    let r: Vec<f64> = ratios.iter().map(|e| e.ratio).collect();
    run.manifest.diag("stability", json!({ "deltas": cfg.sweep.deltas, "estimates": ratios }));
    run.record(
        "stability",
        r.iter().all(|x| x.is_finite()) && r.windows(2).all(|w| w[1] < 2.0 * w[0]),
        format!("lhs/rhs {}", sci(&r)),
        s.elapsed().as_secs_f64(),
    );
    run.manifest.time("stability", s.elapsed().as_secs_f64());

    // N-refinement: weighted distance between root fields at successive depths.
    let s = Instant::now();
    let multiple = cfg.sweep.levels.iter().fold(1, |a, &n| lcm(a, n));
    let tg = stable_time_grid(&quadratic(), &Diffusion::zero(), &GridField::from_fn(g, capped_square), horizon, 0.0, multiple)
        .map_err(core("bshjb"))?;
    let mut roots = vec![];
    let mut residuals = vec![];
    for &n in &cfg.sweep.levels {
        let tree = build_tree(n, horizon, cfg.tree.beta).map_err(core("noise-tree"))?;
        let p = shifted_terminal_bshjb(&tree, g, tg, smooth_profile).map_err(core("bshjb"))?;
        let sol = bshjb::solve_bshjb(&p).map_err(core("bshjb"))?;
        residuals.push(sol.martingale_residual());
        roots.push(sol.root_initial().clone());
    }
    let dists: Vec<f64> = roots.windows(2).map(|w| weighted_distance(&w[0], &w[1])).collect();
    run.manifest.diag("refinement", json!({ "levels": cfg.sweep.levels, "distance": dists, "martingale_residuals": residuals }));
    run.record(
        "n-refinement-cauchy",
        dists.windows(2).all(|w| w[1] < w[0]),
        format!("weighted root distances {}", sci(&dists)),
        s.elapsed().as_secs_f64(),
    );
    let worst = residuals.iter().cloned().fold(0.0, f64::max);
    run.record("martingale", worst <= 1e-12, format!("max residual {worst:.1e}"), 0.0);
    run.manifest.time("n-refinement", s.elapsed().as_secs_f64());

    // Semiconcavity constant under dx-refinement on the kinked problem, on a
    // unit horizon so that gamma has time to grow.
    let s = Instant::now();
    let mut cs = vec![];
    for &dx in &cfg.sweep.spacings {
        let gk = Grid1D::with_spacing(-3.0, 3.0, dx).map_err(core("grid"))?;
        let case = hjb_case("kinked", gk, 1.0).map_err(core("problems"))?;
        let tg = stable_time_grid(&case.hamiltonian, &case.diffusion, &case.terminal, 1.0, 0.0, 1).map_err(core("det-hjb"))?;
        let sol = solve_det_hjb(&DetHjbProblem::new(case.hamiltonian, case.diffusion, case.terminal, tg, 0.0)).map_err(core("det-hjb"))?;
        cs.push(check_propagation(&sol, 0.0).c_min);
    }
    let (lo, hi) = (cs.iter().cloned().fold(f64::INFINITY, f64::min), cs.iter().cloned().fold(0.0, f64::max));
    run.manifest.diag("semiconcavity_refinement", json!({ "dx": cfg.sweep.spacings, "c_fit": cs }));
    run.record(
        "semiconcavity-refinement",
        lo > 0.0 && hi <= 1.25 * lo,
        format!("fitted C {cs:.4?}"),
        s.elapsed().as_secs_f64(),
    );
    run.manifest.time("semiconcavity", s.elapsed().as_secs_f64());

    // Projection of Brownian paths onto the tree.
    let s = Instant::now();
    let mut errs = vec![];
    for &n in &cfg.sweep.levels {
        errs.push(project_path_error(n, cfg.sweep.projection_samples, cfg.seed).map_err(core("noise-tree"))?);
    }
    run.manifest.diag("projection", json!({ "levels": cfg.sweep.levels, "error": errs }));
    run.record(
        "projection-error",
        errs.windows(2).all(|w| w[1] < w[0]),
        format!("E sup |pi W - W| {}", sci(&errs)),
        s.elapsed().as_secs_f64(),
    );
    run.manifest.time("projection", s.elapsed().as_secs_f64());

    run.check_table("sweep")
}
