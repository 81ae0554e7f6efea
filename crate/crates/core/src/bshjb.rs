//! Backward stochastic HJB equation on the noise tree. Inside each time slab
//! every node of the owning level runs a deterministic solve with its frozen
//! data; at slab boundaries the terminal data of a node is the conditional
//! expectation of its children, and the jump `child - parent` is recorded as
//! the martingale increment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::det_hjb::{self, DetHjbProblem};
use crate::error::{MfgError, Result};
use crate::grid::{self, Grid1D, GridField, TimeGrid};
use crate::hamiltonian::{legendre, Diffusion, Hamiltonian};
use crate::noise_tree::{self, NodeId, NoiseTree, TreeField};
use crate::par;

/// Data of one node over its slab, frozen at the slab's left endpoint.
#[derive(Debug, Clone)]
pub struct SlabData {
    pub hamiltonian: Hamiltonian,
    pub diffusion: Diffusion,
}

#[derive(Debug, Clone)]
pub struct BshjbProblem {
    pub tree: NoiseTree,
    pub grid: Grid1D,
    pub tgrid: TimeGrid,
    pub epsilon: f64,
    /// `slab_data[n][j]` for nodes `(n, j)` with `n < N`.
    pub slab_data: Vec<Vec<SlabData>>,
    /// Terminal data per leaf.
    pub terminal: TreeField,
    pub gradient_bound: Option<f64>,
    /// Global Lax-Friedrichs coefficient for every slab solve.
    pub viscosity: Option<f64>,
}

impl BshjbProblem {
    pub fn from_fn(
        tree: NoiseTree,
        grid: Grid1D,
        tgrid: TimeGrid,
        epsilon: f64,
        data: impl Fn(NodeId) -> SlabData,
        terminal: impl Fn(NodeId) -> GridField,
    ) -> Result<Self> {
        let n = tree.n_levels;
        let slab_data = (0..n)
            .map(|l| tree.node_ids(l).map(&data).collect())
            .collect();
        let terminal = TreeField::new(n, tree.node_ids(n).map(terminal).collect())?;
        let prob = BshjbProblem {
            tree,
            grid,
            tgrid,
            epsilon,
            slab_data,
            terminal,
            gradient_bound: None,
            viscosity: None,
        };
        prob.validate()?;
        Ok(prob)
    }

    /// The same data at every node.
    pub fn deterministic(
        tree: NoiseTree,
        tgrid: TimeGrid,
        hamiltonian: Hamiltonian,
        diffusion: Diffusion,
        terminal: GridField,
        epsilon: f64,
    ) -> Result<Self> {
        let grid = terminal.grid;
        Self::from_fn(
            tree,
            grid,
            tgrid,
            epsilon,
            |_| SlabData {
                hamiltonian: hamiltonian.clone(),
                diffusion: diffusion.clone(),
            },
            |_| terminal.clone(),
        )
    }

    pub fn with_gradient_bound(mut self, p_max: f64) -> Self {
        self.gradient_bound = Some(p_max);
        self
    }

    pub fn steps_per_slab(&self) -> usize {
        self.tgrid.n_steps / self.tree.n_levels
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tree.n_levels;
        if self.tgrid.n_steps % n != 0 {
            return Err(MfgError::Configuration(format!(
                "n_steps = {} is not a multiple of the tree depth N = {n}",
                self.tgrid.n_steps
            )));
        }
        if (self.tgrid.horizon - self.tree.horizon).abs() > 1e-12 * self.tree.horizon
            || self.tgrid.t_start != 0.0
        {
            return Err(MfgError::Configuration(
                "time grid and noise tree must share the horizon [0, T]".into(),
            ));
        }
        if self.slab_data.len() != n
            || self.slab_data.iter().enumerate().any(|(l, d)| d.len() != 1 << l)
        {
            return Err(MfgError::invalid("slab data must cover every node of levels 0..N-1"));
        }
        if self.terminal.level != n || self.terminal.fields.iter().any(|f| f.grid != self.grid) {
            return Err(MfgError::invalid("terminal data must be leaf fields on the problem grid"));
        }
        Ok(())
    }

    /// Time level range `[k0, k1]` of the slab owned by `level`.
    pub fn slab_steps(&self, level: usize) -> (usize, usize) {
        let s = self.steps_per_slab();
        (level * s, (level + 1) * s)
    }

    /// The deterministic problem solved at `node` over its slab, given the
    /// terminal data at the slab's right endpoint.
    pub fn slab_problem(&self, node: NodeId, terminal: GridField) -> Result<DetHjbProblem> {
        let (k0, k1) = self.slab_steps(node.level);
        let d = &self.slab_data[node.level][node.index];
        let mut p = DetHjbProblem::new(
            d.hamiltonian.clone(),
            d.diffusion.clone(),
            terminal,
            self.tgrid.slice(k0, k1)?,
            self.epsilon,
        );
        p.gradient_bound = Some(self.gradient_bound());
        p.viscosity = self.viscosity;
        Ok(p)
    }

    /// Gradient bound shared by every slab: `2 max(Lip of leaf data, 1)`.
    pub fn gradient_bound(&self) -> f64 {
        self.gradient_bound.unwrap_or_else(|| {
            let lip = self
                .terminal
                .fields
                .iter()
                .map(|f| grid::lipschitz_constant(f).unwrap_or(0.0))
                .fold(0.0, f64::max);
            2.0 * lip.max(1.0)
        })
    }

    /// Owning tree level of time level `k`.
    pub fn level_of_step(&self, k: usize) -> usize {
        (k / self.steps_per_slab()).min(self.tree.n_levels)
    }
}

#[derive(Debug, Clone)]
pub struct BshjbSolution {
    pub tgrid: TimeGrid,
    pub steps_per_slab: usize,
    pub n_levels: usize,
    /// `u[k]`: right-continuous value at time level `k`, carried by the owning level.
    pub u: Vec<TreeField>,
    /// `pre_jump[n - 1]`: left limit at `t_n` (level `n - 1`), `n = 1..=N`.
    pub pre_jump: Vec<TreeField>,
    /// `dm[n - 1]`: jump at `t_n` on level `n`.
    pub dm: Vec<TreeField>,
    /// `gamma[k][j]`: semiconcavity monitor of node `j` of the owning level.
    pub gamma: Vec<Vec<f64>>,
}

impl BshjbSolution {
    pub fn level_of_step(&self, k: usize) -> usize {
        (k / self.steps_per_slab).min(self.n_levels)
    }

    pub fn root_initial(&self) -> &GridField {
        &self.u[0].fields[0]
    }

    pub fn martingale_residual(&self) -> f64 {
        self.dm
            .iter()
            .map(noise_tree::martingale_residual_of)
            .fold(0.0, f64::max)
    }

    /// `(sup |u|, sup Lip(u), sup semiconcavity)` over nodes and times.
    pub fn uniform_bounds(&self) -> (f64, f64, f64) {
        let mut b = (0.0f64, 0.0f64, 0.0f64);
        for tf in &self.u {
            for f in &tf.fields {
                b.0 = b.0.max(f.sup_norm());
                b.1 = b.1.max(grid::lipschitz_constant(f).unwrap_or(0.0));
                b.2 = b.2.max(grid::semiconcavity_constant(f).unwrap_or(0.0));
            }
        }
        b
    }
}

pub fn martingale_residual(sol: &BshjbSolution) -> f64 {
    sol.martingale_residual()
}

pub fn solve_bshjb(prob: &BshjbProblem) -> Result<BshjbSolution> {
    prob.validate()?;
    let n_levels = prob.tree.n_levels;
    let s = prob.steps_per_slab();
    let n_steps = prob.tgrid.n_steps;
    let lambda0: Vec<Vec<f64>> = prob
        .slab_data
        .iter()
        .map(|l| l.iter().map(|d| d.hamiltonian.lambda0).collect())
        .collect();

    let mut u: Vec<Option<TreeField>> = vec![None; n_steps + 1];
    let mut pre_jump: Vec<Option<TreeField>> = vec![None; n_levels];
    let mut dm: Vec<Option<TreeField>> = vec![None; n_levels];
    u[n_steps] = Some(prob.terminal.clone());
    let mut current = prob.terminal.clone();

    for level in (0..n_levels).rev() {
        let cond = noise_tree::conditional_expectation(&prob.tree, &current)?;
        dm[level] = Some(noise_tree::martingale_increments(&current, &cond)?);
        let solves: Vec<Result<Vec<GridField>>> = par::map_range(prob.tree.width(level), |j| {
            let node = NodeId::new(level, j);
            let p = prob.slab_problem(node, cond.fields[j].clone())?;
            det_hjb::solve_det_hjb(&p)
                .map(|sol| sol.u)
                .map_err(|e| e.at_node(node))
        });
        let mut per_node = Vec::with_capacity(solves.len());
        for r in solves {
            per_node.push(r?);
        }
        let (k0, _) = prob.slab_steps(level);
        for off in 0..s {
            let fields = per_node.iter().map(|v| v[off].clone()).collect();
            u[k0 + off] = Some(TreeField { level, fields });
        }
        current = u[k0].clone().expect("slab start written");
        pre_jump[level] = Some(cond);
    }

    let u: Vec<TreeField> = u.into_iter().map(|f| f.expect("every level written")).collect();
    let gamma = u
        .iter()
        .map(|tf| {
            let l = tf.level.min(n_levels - 1);
            tf.fields
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    let lam = lambda0[l][if tf.level == n_levels { j >> 1 } else { j }];
                    det_hjb::gamma_functional(f, lam)
                })
                .collect()
        })
        .collect();
    Ok(BshjbSolution {
        tgrid: prob.tgrid,
        steps_per_slab: s,
        n_levels,
        u,
        pre_jump: pre_jump.into_iter().map(|f| f.expect("written")).collect(),
        dm: dm.into_iter().map(|f| f.expect("written")).collect(),
        gamma,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub min_difference: f64,
    /// `(time level, node, x)` of the minimum.
    pub at: (usize, NodeId, f64),
    pub passed: bool,
}

fn p_samples(p_max: f64) -> Vec<f64> {
    (0..33).map(|i| -p_max + 2.0 * p_max * i as f64 / 32.0).collect()
}

fn x_samples(grid: &Grid1D) -> Vec<f64> {
    let stride = (grid.n_points / 64).max(1);
    (0..grid.n_points).step_by(stride).map(|i| grid.x(i)).collect()
}

fn check_same_shape(p1: &BshjbProblem, p2: &BshjbProblem) -> Result<()> {
    if p1.tree != p2.tree || p1.grid != p2.grid || p1.tgrid != p2.tgrid {
        return Err(MfgError::invalid("problems must share the tree, the grid and the time grid"));
    }
    Ok(())
}

/// Solves both problems after checking `H1 <= H2` and `G1 >= G2` on the lattice
/// at every node, and reports `min (u1 - u2)`.
pub fn comparison_test(p1: &BshjbProblem, p2: &BshjbProblem) -> Result<ComparisonReport> {
    check_same_shape(p1, p2)?;
    let xs = x_samples(&p1.grid);
    let ps = p_samples(p1.gradient_bound().max(p2.gradient_bound()));
    for level in 0..p1.tree.n_levels {
        let t = p1.tree.slab_start(level);
        for node in p1.tree.node_ids(level) {
            let (d1, d2) = (
                &p1.slab_data[level][node.index],
                &p2.slab_data[level][node.index],
            );
            for &x in &xs {
                let (a1, a2) = (d1.diffusion.a(t, x), d2.diffusion.a(t, x));
                if (a1 - a2).abs() > 1e-14 * (1.0 + a1.abs()) {
                    return Err(MfgError::invalid(format!(
                        "diffusions differ at node {node}, x = {x}: {a1} vs {a2}"
                    )));
                }
                for &p in &ps {
                    let (h1, h2) = (d1.hamiltonian.eval(t, x, p), d2.hamiltonian.eval(t, x, p));
                    if h1 > h2 + 1e-14 * (1.0 + h2.abs()) {
                        return Err(MfgError::invalid(format!(
                            "H1 > H2 at node {node}, (t, x, p) = ({t}, {x}, {p}): {h1} > {h2}"
                        )));
                    }
                }
            }
        }
    }
    for node in p1.tree.node_ids(p1.tree.n_levels) {
        let (g1, g2) = (p1.terminal.get(node), p2.terminal.get(node));
        if let Some(i) = (0..g1.len()).find(|&i| g1.values[i] < g2.values[i]) {
            return Err(MfgError::invalid(format!(
                "G1 < G2 at leaf {node}, x = {}: {} < {}",
                p1.grid.x(i),
                g1.values[i],
                g2.values[i]
            )));
        }
    }
    // one scheme for both: a shared global viscosity coefficient
    let xs = p1.grid.points();
    let p_max = p1.gradient_bound().max(p2.gradient_bound());
    let theta = [p1, p2]
        .iter()
        .flat_map(|p| {
            p.slab_data.iter().enumerate().flat_map(move |(l, level)| {
                let t = p.tree.slab_start(l);
                level.iter().map(move |d| (t, d))
            })
        })
        .map(|(t, d)| d.hamiltonian.speed_bound(t, &xs, p_max))
        .fold(0.0, f64::max);
    let (mut q1, mut q2) = (p1.clone(), p2.clone());
    q1.viscosity = Some(theta);
    q2.viscosity = Some(theta);
    let (s1, s2) = (solve_bshjb(&q1)?, solve_bshjb(&q2)?);
    let mut best = (f64::INFINITY, (0, NodeId::ROOT, 0.0));
    for (k, (f1, f2)) in s1.u.iter().zip(&s2.u).enumerate() {
        for (j, (a, b)) in f1.fields.iter().zip(&f2.fields).enumerate() {
            for i in 0..a.len() {
                let d = a.values[i] - b.values[i];
                if d < best.0 {
                    best = (d, (k, NodeId::new(f1.level, j), p1.grid.x(i)));
                }
            }
        }
    }
    Ok(ComparisonReport {
        min_difference: best.0,
        at: best.1,
        passed: best.0 >= -1e-10,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StabilityEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `lhs = sup_t E |u1_t - u2_t|_{inf, B_R}^3` against
/// `rhs = E[sup_t |a1 - a2|_{C^{0,1}} + sup_t |H1 - H2|_{inf, lattice} + |G1 - G2|_inf]`.
pub fn stability_estimate(p1: &BshjbProblem, p2: &BshjbProblem, r: f64) -> Result<StabilityEstimate> {
    check_same_shape(p1, p2)?;
    let (s1, s2) = (solve_bshjb(p1)?, solve_bshjb(p2)?);
    let lhs = s1
        .u
        .iter()
        .zip(&s2.u)
        .map(|(f1, f2)| {
            let w = 1.0 / f1.fields.len() as f64;
            f1.fields
                .iter()
                .zip(&f2.fields)
                .map(|(a, b)| w * a.sup_distance_on(b, -r, r).powi(3))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);

    let n = p1.tree.n_levels;
    let xs = p1.grid.points();
    let dx = p1.grid.dx();
    let ps = p_samples(p1.gradient_bound().max(p2.gradient_bound()));
    let node_terms = |node: NodeId| -> (f64, f64) {
        let t = p1.tree.slab_start(node.level);
        let (d1, d2) = (
            &p1.slab_data[node.level][node.index],
            &p2.slab_data[node.level][node.index],
        );
        let da: Vec<f64> = xs
            .iter()
            .map(|&x| d1.diffusion.a(t, x) - d2.diffusion.a(t, x))
            .collect();
        let a_norm = da.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + grid::lipschitz_constant_of(&da, dx).unwrap_or(0.0);
        let mut h_norm: f64 = 0.0;
        for &x in &x_samples(&p1.grid) {
            for &p in &ps {
                h_norm = h_norm
                    .max((d1.hamiltonian.eval(t, x, p) - d2.hamiltonian.eval(t, x, p)).abs());
            }
        }
        (a_norm, h_norm)
    };
    let per_node: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|l| par::map_range(p1.tree.width(l), |j| node_terms(NodeId::new(l, j))))
        .collect();
    let rhs = p1
        .tree
        .node_ids(n)
        .map(|leaf| {
            let (mut a, mut h) = (0.0f64, 0.0f64);
            for l in 0..n {
                let anc = leaf.ancestor(l);
                a = a.max(per_node[l][anc.index].0);
                h = h.max(per_node[l][anc.index].1);
            }
            let g = p1
                .terminal
                .get(leaf)
                .values
                .iter()
                .zip(&p2.terminal.get(leaf).values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            p1.tree.node(leaf).probability * (a + h + g)
        })
        .sum::<f64>();
    Ok(StabilityEstimate {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { f64::NAN },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub x0: f64,
    pub pde_value: f64,
    pub mc_mean: f64,
    pub mc_standard_error: f64,
    pub zero_control_mean: f64,
    pub zero_control_standard_error: f64,
    pub paths: usize,
    pub discarded: usize,
    pub tolerance: f64,
    /// `|mc_mean - pde_value| <= 3 SE + 5 dx`.
    pub representation_ok: bool,
    /// `zero_control_mean >= pde_value - 3 SE - 5 dx`.
    pub suboptimality_ok: bool,
    /// At most 1% of the paths left the truncated domain.
    pub domain_ok: bool,
    pub passed: bool,
}

/// Simulates `dX = -alpha ds + sqrt(2 a) dB` from `(0, x0)` under the feedback
/// `alpha = D_p H(X, D u(X))` read off the solution (the common path follows
/// a uniformly drawn tree branch) and compares the mean cost
/// `int H*(X, alpha) ds + G(X_T)` with `u_0(x0)`. The zero control is run
/// on the same draws.
pub fn control_representation_check(
    sol: &BshjbSolution,
    prob: &BshjbProblem,
    x0: f64,
    mc_paths: usize,
    seed: u64,
) -> Result<McReport> {
    if mc_paths < 2 {
        return Err(MfgError::invalid("need at least two Monte Carlo paths"));
    }
    let grid = prob.grid;
    if !grid.contains(x0) {
        return Err(MfgError::invalid(format!("x0 = {x0} is outside the grid")));
    }
    let dt = prob.tgrid.dt();
    let s = prob.steps_per_slab();
    let n_levels = prob.tree.n_levels;

    let grads: Vec<Vec<GridField>> = sol
        .u
        .iter()
        .map(|tf| {
            tf.fields
                .iter()
                .map(|f| GridField {
                    grid,
                    values: f.centered_gradient(),
                })
                .collect()
        })
        .collect();

    // H*(x, 0) = -inf_p H on the grid of every node.
    let radius = 4.0 * prob.gradient_bound();
    let mut zero_cost: Vec<Vec<GridField>> = Vec::with_capacity(n_levels);
    for level in 0..n_levels {
        let t = prob.tree.slab_start(level);
        let fields: Vec<Result<GridField>> = par::map_range(prob.tree.width(level), |j| {
            let h = &prob.slab_data[level][j].hamiltonian;
            let mut values = Vec::with_capacity(grid.n_points);
            for i in 0..grid.n_points {
                let x = grid.x(i);
                let mut r = radius;
                let v = loop {
                    match legendre(h, t, x, 0.0, r, 401) {
                        Err(MfgError::RadiusTooSmall { .. }) if r < 1e6 => r *= 4.0,
                        other => break other,
                    }
                }?;
                values.push(v);
            }
            Ok(GridField { grid, values })
        });
        zero_cost.push(fields.into_iter().collect::<Result<Vec<_>>>()?);
    }

    let outcomes: Vec<Option<(f64, f64)>> = par::map_range(mc_paths, |path| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        let mut branch = 0usize;
        let (mut x_opt, mut x_zero) = (x0, x0);
        let (mut c_opt, mut c_zero) = (0.0, 0.0);
        for k in 0..prob.tgrid.n_steps {
            let level = k / s;
            if k % s == 0 && level > 0 {
                branch = 2 * branch + usize::from(rng.gen::<bool>());
            }
            let d = &prob.slab_data[level][branch];
            let t = prob.tgrid.time(k);
            let z: f64 = rng.sample(StandardNormal);

            let p = grads[k][branch].interpolate(x_opt);
            let alpha = d.hamiltonian.grad_p(t, x_opt, p);
            c_opt += dt * (alpha * p - d.hamiltonian.eval(t, x_opt, p));
            let sig = d.diffusion.sigma(t, x_opt);
            x_opt += -alpha * dt + std::f64::consts::SQRT_2 * sig * dt.sqrt() * z;

            c_zero += dt * zero_cost[level][branch].interpolate(x_zero);
            let sig0 = d.diffusion.sigma(t, x_zero);
            x_zero += std::f64::consts::SQRT_2 * sig0 * dt.sqrt() * z;

            if !grid.contains(x_opt) || !grid.contains(x_zero) {
                return None;
            }
        }
        let leaf = 2 * branch + usize::from(rng.gen::<bool>());
        let g = &prob.terminal.fields[leaf];
        Some((c_opt + g.interpolate(x_opt), c_zero + g.interpolate(x_zero)))
    });

    let kept: Vec<(f64, f64)> = outcomes.iter().flatten().cloned().collect();
    let discarded = mc_paths - kept.len();
    let stats = |v: &dyn Fn(&(f64, f64)) -> f64| -> (f64, f64) {
        let n = kept.len() as f64;
        if kept.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let mean = kept.iter().map(v).sum::<f64>() / n;
        let var = kept.iter().map(|o| (v(o) - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    };
    let (mean, se) = stats(&|o| o.0);
    let (zmean, zse) = stats(&|o| o.1);
    let pde_value = sol.root_initial().interpolate(x0);
    let dx = grid.dx();
    let tolerance = 3.0 * se + 5.0 * dx;
    let representation_ok = (mean - pde_value).abs() <= tolerance;
    let suboptimality_ok = zmean >= pde_value - 3.0 * zse - 5.0 * dx;
    let domain_ok = discarded * 100 <= mc_paths;
    Ok(McReport {
        x0,
        pde_value,
        mc_mean: mean,
        mc_standard_error: se,
        zero_control_mean: zmean,
        zero_control_standard_error: zse,
        paths: mc_paths,
        discarded,
        tolerance,
        representation_ok,
        suboptimality_ok,
        domain_ok,
        passed: representation_ok && suboptimality_ok && domain_ok,
    })
}
