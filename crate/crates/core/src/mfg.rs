//! The coupled system on the noise tree: backward stochastic HJB for the
//! value, forward Fokker-Planck for the density, both in the frame that
//! moves with the common noise, tied together by a damped fixed point.

use serde::{Deserialize, Serialize};

use crate::bshjb::{self, BshjbProblem, BshjbSolution, SlabData};
use crate::error::{MfgError, Result};
use crate::fokker_planck::{self, FpProblem};
use crate::grid::{Grid1D, GridField, TimeGrid};
use crate::hamiltonian::{
    check_structure, Coupling, DependenceMode, Diffusion, Hamiltonian, MeasureDependence,
    SampleLattice,
};
use crate::noise_tree::{NodeId, NoiseTree, TreeField};
use crate::par;
use crate::transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixpointMode {
    Picard,
    FictitiousPlay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixpointConfig {
    pub max_iters: usize,
    /// Picard damping `theta` in `(0, 1]`.
    pub damping: f64,
    pub tol_d2: f64,
    pub mode: FixpointMode,
    /// Mollification radius for drifts; `None` means `2 dx`.
    pub mollify_delta: Option<f64>,
    /// Regularisation of the forward equation; `None` means `1e-3 (sup a + 1)`.
    pub fp_epsilon: Option<f64>,
    /// Rerun the forward equation with `eps = 0` after convergence.
    pub epsilon_refinement: bool,
}

impl Default for FixpointConfig {
    fn default() -> Self {
        FixpointConfig {
            max_iters: 50,
            damping: 0.5,
            tol_d2: 1e-4,
            mode: FixpointMode::Picard,
            mollify_delta: None,
            fp_epsilon: None,
            epsilon_refinement: true,
        }
    }
}

#[derive(Debug, Clone)]
pub enum InitialGuess {
    /// `m0` at every time and node.
    Initial,
    /// The normalised uniform density at every time and node.
    Uniform,
    Flow(Vec<TreeField>),
}

#[derive(Debug, Clone)]
pub struct MfgProblem {
    pub hamiltonian: Hamiltonian,
    pub diffusion: Diffusion,
    pub coupling: Coupling,
    pub dependence: MeasureDependence,
    pub m0: GridField,
    pub tree: NoiseTree,
    pub tgrid: TimeGrid,
    pub fixpoint: FixpointConfig,
    /// Vanishing viscosity added to the HJB equation.
    pub hjb_epsilon: f64,
    pub gradient_bound: Option<f64>,
}

impl MfgProblem {
    pub fn grid(&self) -> Grid1D {
        self.m0.grid
    }

    pub fn steps_per_slab(&self) -> usize {
        self.tgrid.n_steps / self.tree.n_levels
    }

    /// Tree level carrying the density at time level `k`.
    pub fn m_level(&self, k: usize) -> usize {
        (k / self.steps_per_slab()).min(self.tree.n_levels - 1)
    }

    pub fn mollify_delta(&self) -> f64 {
        self.fixpoint
            .mollify_delta
            .unwrap_or(2.0 * self.grid().dx())
    }

    pub fn fp_epsilon(&self) -> f64 {
        self.fixpoint.fp_epsilon.unwrap_or_else(|| {
            let xs = self.grid().points();
            let sup_a = (0..=self.tgrid.n_steps)
                .map(|k| self.diffusion.sup_a(self.tgrid.time(k), &xs))
                .fold(0.0, f64::max);
            1e-3 * (sup_a + 1.0)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tree.n_levels;
        if self.tgrid.n_steps % n != 0 {
            return Err(MfgError::Configuration(format!(
                "n_steps = {} is not a multiple of the tree depth N = {n}",
                self.tgrid.n_steps
            )));
        }
        if (self.tgrid.horizon - self.tree.horizon).abs() > 1e-12 * self.tree.horizon {
            return Err(MfgError::Configuration("time grid and tree horizons differ".into()));
        }
        let fp = &self.fixpoint;
        if !(fp.damping > 0.0 && fp.damping <= 1.0) {
            return Err(MfgError::Configuration(format!(
                "damping must lie in (0, 1], got {}",
                fp.damping
            )));
        }
        if fp.max_iters == 0 || !(fp.tol_d2 > 0.0) {
            return Err(MfgError::Configuration("max_iters and tol_d2 must be positive".into()));
        }
        let mass = self.m0.mass();
        if self.m0.min() < 0.0 || (mass - 1.0).abs() > 1e-10 {
            return Err(MfgError::invalid(format!(
                "m0 must be a probability density (mass {mass}, min {})",
                self.m0.min()
            )));
        }
        let g = self.grid();
        let lattice = SampleLattice::default_for(
            self.tgrid.horizon,
            g.x_min,
            g.x_max,
            self.gradient_bound.unwrap_or(2.0),
        );
        let report = check_structure(&self.hamiltonian, &lattice);
        if let Some(e) = report.entries.iter().find(|e| !e.passed && !e.advisory) {
            return Err(MfgError::StructuralAssumption(format!(
                "{} fails with margin {:e} at {:?}",
                e.name, e.worst_margin, e.worst_at
            )));
        }
        Ok(())
    }

    pub fn initial_flow(&self, guess: &InitialGuess) -> Result<Vec<TreeField>> {
        let base = match guess {
            InitialGuess::Initial => self.m0.clone(),
            InitialGuess::Uniform => fokker_planck::uniform_density(self.grid()),
            InitialGuess::Flow(f) => {
                if f.len() != self.tgrid.n_steps + 1
                    || f.iter().enumerate().any(|(k, tf)| tf.level != self.m_level(k))
                {
                    return Err(MfgError::invalid("initial flow does not match the tree layout"));
                }
                return Ok(f.clone());
            }
        };
        Ok((0..=self.tgrid.n_steps)
            .map(|k| {
                if k == 0 {
                    TreeField::replicate(0, &self.m0)
                } else {
                    TreeField::replicate(self.m_level(k), &base)
                }
            })
            .collect())
    }

    /// Frame data of every node with the density flow `m` frozen.
    pub fn hjb_problem(&self, m: &[TreeField]) -> Result<BshjbProblem> {
        let n = self.tree.n_levels;
        let s = self.steps_per_slab();
        let slab_data: Vec<Vec<SlabData>> = (0..n)
            .map(|level| {
                let t = self.tgrid.time(level * s);
                par::map_range(self.tree.width(level), |j| {
                    let d = transform::build_node_data(
                        &self.tree,
                        NodeId::new(level, j),
                        t,
                        &self.hamiltonian,
                        &self.diffusion,
                        &self.coupling,
                        &m[level * s].fields[j],
                    );
                    SlabData {
                        hamiltonian: d.hamiltonian_with_running,
                        diffusion: d.diffusion,
                    }
                })
            })
            .collect();
        let m_t = &m[self.tgrid.n_steps];
        let terminal = par::map_range(self.tree.width(n), |leaf| {
            let s_leaf = self.tree.shift(NodeId::new(n, leaf));
            transform::tilde_terminal(&self.coupling, &m_t.fields[leaf >> 1], s_leaf)
        });
        let prob = BshjbProblem {
            tree: self.tree.clone(),
            grid: self.grid(),
            tgrid: self.tgrid,
            epsilon: self.hjb_epsilon,
            slab_data,
            terminal: TreeField::new(n, terminal)?,
            gradient_bound: self.gradient_bound,
            viscosity: None,
        };
        prob.validate()?;
        Ok(prob)
    }

    /// Density flow of one node over its slab, started from `m_start`.
    pub fn node_slab_flow(
        &self,
        u: &BshjbSolution,
        node: NodeId,
        m_start: &GridField,
        eps: f64,
    ) -> Result<Vec<GridField>> {
        let s = self.steps_per_slab();
        let k0 = node.level * s;
        let t0 = self.tgrid.time(k0);
        let shift = self.tree.shift(node);
        let h = self.hamiltonian.frozen_at(t0).shifted(shift, None);
        let diffusion = self.diffusion.frozen_at(t0).shifted(shift);
        let delta = self.mollify_delta();
        let drift = (k0..k0 + s)
            .map(|k| {
                fokker_planck::drift_from_value(
                    &h,
                    self.tgrid.time(k),
                    &u.u[k].fields[node.index],
                    delta,
                )
            })
            .collect();
        let prob = FpProblem::new(
            m_start.clone(),
            drift,
            diffusion,
            eps,
            self.tgrid.slice(k0, k0 + s)?,
        );
        let path = fokker_planck::solve_fp(&prob).map_err(|e| e.at_node(node))?;
        Ok(path.m)
    }

    /// Forward flow of the best response to `u`, level by level.
    pub fn forward_flow(&self, u: &BshjbSolution, eps: f64) -> Result<Vec<TreeField>> {
        let n = self.tree.n_levels;
        let s = self.steps_per_slab();
        let mut flow: Vec<Option<TreeField>> = vec![None; self.tgrid.n_steps + 1];
        let mut start = TreeField::replicate(0, &self.m0);
        for level in 0..n {
            let paths: Vec<Result<Vec<GridField>>> = par::map_range(self.tree.width(level), |j| {
                self.node_slab_flow(u, NodeId::new(level, j), &start.fields[j], eps)
            });
            let paths = paths.into_iter().collect::<Result<Vec<_>>>()?;
            for off in 0..s {
                flow[level * s + off] = Some(TreeField {
                    level,
                    fields: paths.iter().map(|p| p[off].clone()).collect(),
                });
            }
            let ends: Vec<GridField> = paths.iter().map(|p| p[s].clone()).collect();
            if level + 1 < n {
                start = TreeField {
                    level: level + 1,
                    fields: ends.iter().flat_map(|e| [e.clone(), e.clone()]).collect(),
                };
            } else {
                flow[self.tgrid.n_steps] = Some(TreeField { level, fields: ends });
            }
        }
        Ok(flow.into_iter().map(|f| f.expect("every level written")).collect())
    }

    /// Densities along the path to `node`, recomputed from its ancestors only,
    /// at time levels `0..=(node.level + 1) s`.
    pub fn path_flow(&self, u: &BshjbSolution, node: NodeId, eps: f64) -> Result<Vec<GridField>> {
        let s = self.steps_per_slab();
        let mut out = vec![self.m0.clone()];
        for level in 0..=node.level {
            let anc = node.ancestor(level);
            let start = out.last().expect("nonempty").clone();
            let slab = self.node_slab_flow(u, anc, &start, eps)?;
            out.extend(slab.into_iter().skip(1));
        }
        debug_assert_eq!(out.len(), (node.level + 1) * s + 1);
        Ok(out)
    }

    /// `Phi(m)`: the value for the frozen flow and the resulting density flow.
    pub fn best_response(&self, m: &[TreeField], eps: f64) -> Result<(BshjbSolution, Vec<TreeField>)> {
        let u = bshjb::solve_bshjb(&self.hjb_problem(m)?)?;
        let flow = self.forward_flow(&u, eps)?;
        Ok((u, flow))
    }
}

/// `sup_k E d2(a_k, b_k)` over time levels, the expectation taken on the tree.
pub fn flow_distance(a: &[TreeField], b: &[TreeField]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MfgError::invalid("flows have different lengths"));
    }
    let per_level: Vec<Result<f64>> = par::map_range(a.len(), |k| {
        let (fa, fb) = (&a[k], &b[k]);
        if fa.level != fb.level {
            return Err(MfgError::invalid("flows live on different tree levels"));
        }
        let w = 1.0 / fa.fields.len() as f64;
        let mut e = 0.0;
        for (x, y) in fa.fields.iter().zip(&fb.fields) {
            if x.values != y.values {
                e += w * fokker_planck::wasserstein2_1d(x, y)?;
            }
        }
        Ok(e)
    });
    let mut sup: f64 = 0.0;
    for r in per_level {
        sup = sup.max(r?);
    }
    Ok(sup)
}

fn mix(old: &[TreeField], new: &[TreeField], w: f64) -> Vec<TreeField> {
    if w == 1.0 {
        return new.to_vec();
    }
    old.iter()
        .zip(new)
        .map(|(o, n)| TreeField {
            level: o.level,
            fields: o
                .fields
                .iter()
                .zip(&n.fields)
                .map(|(a, b)| a.zip_with(b, |x, y| (1.0 - w) * x + w * y))
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub u: BshjbSolution,
    pub m: Vec<TreeField>,
    /// Flow from the final forward pass with `eps = 0`.
    pub m_refined: Option<Vec<TreeField>>,
    pub epsilon_refinement_shift: Option<f64>,
    pub residual_series: Vec<f64>,
    pub iterations: usize,
    pub fp_epsilon: f64,
}

impl MfgSolution {
    pub fn flow(&self) -> transform::TreeFlow {
        transform::TreeFlow {
            steps_per_slab: self.u.steps_per_slab,
            u: self.u.u.clone(),
            m: self.m.clone(),
        }
    }
}

/// Runs the fixed point. Picard mixes `m <- (1 - theta) m + theta Phi(m)` and
/// reports `sup_t E d2` between successive iterates; fictitious play averages
/// the best responses and reports `sup_t E d2(Phi(m), m)`. The first step is
/// undamped in both modes.
pub fn solve_mfg(prob: &MfgProblem, guess: &InitialGuess) -> Result<MfgSolution> {
    prob.validate()?;
    let cfg = prob.fixpoint;
    let eps = prob.fp_epsilon();
    let mut m = prob.initial_flow(guess)?;
    let mut series = Vec::new();
    let mut converged = false;
    for it in 0..cfg.max_iters {
        let (_, phi) = prob.best_response(&m, eps)?;
        let (w, r) = match cfg.mode {
            FixpointMode::Picard => {
                let w = if it == 0 { 1.0 } else { cfg.damping };
                let next = mix(&m, &phi, w);
                let r = flow_distance(&next, &m)?;
                m = next;
                (w, r)
            }
            FixpointMode::FictitiousPlay => {
                let r = flow_distance(&phi, &m)?;
                let w = 1.0 / (it as f64 + 1.0);
                m = mix(&m, &phi, w);
                (w, r)
            }
        };
        log::debug!("fixed point iteration {} weight {w} residual {r:e}", it + 1);
        if !r.is_finite() {
            return Err(MfgError::NumericalBlowup {
                level: it + 1,
                detail: "fixed point residual is not finite".into(),
            });
        }
        series.push(r);
        if r <= cfg.tol_d2 {
            converged = true;
            break;
        }
    }
    if !converged {
        let last = *series.last().unwrap_or(&f64::NAN);
        return Err(MfgError::NonConvergence {
            residual_series: series,
            last,
        });
    }
    let u = bshjb::solve_bshjb(&prob.hjb_problem(&m)?)?;
    let (m_refined, shift) = if cfg.epsilon_refinement && eps > 0.0 {
        let refined = prob.forward_flow(&u, 0.0)?;
        let d = flow_distance(&refined, &m)?;
        (Some(refined), Some(d))
    } else {
        (None, None)
    };
    Ok(MfgSolution {
        u,
        m,
        m_refined,
        epsilon_refinement_shift: shift,
        iterations: series.len(),
        residual_series: series,
        fp_epsilon: eps,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonotonicityReport {
    pub min_running: f64,
    pub min_terminal: f64,
    /// Smallest of both integrals over pairs with `d2 > 1e-6`.
    pub min_over_distinct: f64,
    pub pairs: usize,
    pub passed: bool,
}

fn pairing(f1: &GridField, f2: &GridField, m1: &GridField, m2: &GridField) -> f64 {
    let dx = m1.grid.dx();
    (0..m1.len())
        .map(|i| (f1.values[i] - f2.values[i]) * (m1.values[i] - m2.values[i]) * dx)
        .sum()
}

/// `int (F(m) - F(m')) d(m - m')` and the same for `G` over all probe pairs.
pub fn monotonicity_check(coupling: &Coupling, probes: &[GridField], t: f64) -> Result<MonotonicityReport> {
    if probes.len() < 2 {
        return Err(MfgError::invalid("need at least two probe measures"));
    }
    let mass = probes[0].mass();
    if probes
        .iter()
        .any(|p| (p.mass() - mass).abs() > 1e-8 * mass.abs().max(1.0) || p.grid != probes[0].grid)
    {
        return Err(MfgError::invalid("probe measures must share the grid and the mass"));
    }
    let f: Vec<GridField> = probes.iter().map(|m| coupling.running_field(t, m, 0.0)).collect();
    let g: Vec<GridField> = probes.iter().map(|m| coupling.terminal_field(m, 0.0)).collect();
    let mut rep = MonotonicityReport {
        min_running: f64::INFINITY,
        min_terminal: f64::INFINITY,
        min_over_distinct: f64::INFINITY,
        pairs: 0,
        passed: true,
    };
    for i in 0..probes.len() {
        for j in i..probes.len() {
            let r = pairing(&f[i], &f[j], &probes[i], &probes[j]);
            let q = pairing(&g[i], &g[j], &probes[i], &probes[j]);
            rep.min_running = rep.min_running.min(r);
            rep.min_terminal = rep.min_terminal.min(q);
            rep.pairs += 1;
            if i != j && fokker_planck::wasserstein2_1d(&probes[i], &probes[j])? > 1e-6 {
                rep.min_over_distinct = rep.min_over_distinct.min(r.min(q));
            }
        }
    }
    rep.passed = rep.min_running >= -1e-10 && rep.min_terminal >= -1e-10 && rep.min_over_distinct > 0.0;
    Ok(rep)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DualityGap {
    pub terminal: f64,
    pub running: f64,
    pub bregman: f64,
    pub total: f64,
    /// Smallest pointwise Bregman integrand.
    pub min_bregman_integrand: f64,
}

/// Terminal and running monotonicity terms plus the two Bregman terms of
/// `H`, integrated on the tree.
pub fn duality_gap_flows(
    prob: &MfgProblem,
    u1: &BshjbSolution,
    m1: &[TreeField],
    u2: &BshjbSolution,
    m2: &[TreeField],
) -> Result<DualityGap> {
    if prob.dependence.mode == DependenceMode::GeneralLipschitz {
        return Err(MfgError::UnsupportedMode(
            "the duality gap needs separated dependence on the measure".into(),
        ));
    }
    let n = prob.tree.n_levels;
    let s = prob.steps_per_slab();
    let dt = prob.tgrid.dt();
    let dx = prob.grid().dx();
    let nt = prob.tgrid.n_steps;

    let terminal: f64 = (0..prob.tree.width(n))
        .map(|leaf| {
            let sh = prob.tree.shift(NodeId::new(n, leaf));
            let (a, b) = (&m1[nt].fields[leaf >> 1], &m2[nt].fields[leaf >> 1]);
            let g1 = transform::tilde_terminal(&prob.coupling, a, sh);
            let g2 = transform::tilde_terminal(&prob.coupling, b, sh);
            pairing(&g1, &g2, a, b) / prob.tree.width(n) as f64
        })
        .sum();

    let per_step: Vec<(f64, f64, f64)> = par::map_range(nt, |k| {
        let level = k / s;
        let t0 = prob.tgrid.time(level * s);
        let t = prob.tgrid.time(k);
        let w = 1.0 / prob.tree.width(level) as f64;
        let (mut run, mut breg, mut min_i) = (0.0, 0.0, f64::INFINITY);
        for j in 0..prob.tree.width(level) {
            let sh = prob.tree.shift(NodeId::new(level, j));
            let (a, b) = (&m1[k].fields[j], &m2[k].fields[j]);
            let f1 = transform::tilde_running(&prob.coupling, t0, a, sh);
            let f2 = transform::tilde_running(&prob.coupling, t0, b, sh);
            run += w * dt * pairing(&f1, &f2, a, b);
            let h = prob.hamiltonian.frozen_at(t0).shifted(sh, None);
            let p1 = u1.u[k].fields[j].centered_gradient();
            let p2 = u2.u[k].fields[j].centered_gradient();
            for i in 0..a.len() {
                let x = a.grid.x(i);
                let (h1, h2) = (h.eval(t, x, p1[i]), h.eval(t, x, p2[i]));
                let d1 = h2 - h1 - h.grad_p(t, x, p1[i]) * (p2[i] - p1[i]);
                let d2 = h1 - h2 - h.grad_p(t, x, p2[i]) * (p1[i] - p2[i]);
                min_i = f64::min(min_i, d1.min(d2));
                breg += w * dt * dx * (a.values[i] * d1 + b.values[i] * d2);
            }
        }
        (run, breg, min_i)
    });
    let running = per_step.iter().map(|v| v.0).sum::<f64>();
    let bregman = per_step.iter().map(|v| v.1).sum::<f64>();
    let min_b = per_step.iter().map(|v| v.2).fold(f64::INFINITY, f64::min);
    Ok(DualityGap {
        terminal,
        running,
        bregman,
        total: terminal + running + bregman,
        min_bregman_integrand: min_b,
    })
}

pub fn duality_gap(prob: &MfgProblem, s1: &MfgSolution, s2: &MfgSolution) -> Result<DualityGap> {
    duality_gap_flows(prob, &s1.u, &s1.m, &s2.u, &s2.m)
}

#[derive(Debug, Clone, Serialize)]
pub struct TwinReport {
    pub flow_distance: f64,
    pub gap: DualityGap,
    pub gap_tolerance: f64,
    pub iterations: (usize, usize),
    pub passed: bool,
}

/// Solves from `m0` and from the uniform density and compares the equilibria.
pub fn twin_run(prob: &MfgProblem) -> Result<(TwinReport, MfgSolution, MfgSolution)> {
    let a = solve_mfg(prob, &InitialGuess::Initial)?;
    let b = solve_mfg(prob, &InitialGuess::Uniform)?;
    let d = flow_distance(&a.m, &b.m)?;
    let gap = duality_gap(prob, &a, &b)?;
    let tol = 10.0 * prob.fixpoint.tol_d2 * prob.dependence.lipschitz_in_d2.max(1.0);
    let report = TwinReport {
        flow_distance: d,
        gap,
        gap_tolerance: tol,
        iterations: (a.iterations, b.iterations),
        passed: d <= 1e-3 && gap.total <= tol,
    };
    Ok((report, a, b))
}
