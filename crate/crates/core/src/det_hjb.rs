//! Deterministic degenerate HJB terminal-value problem
//! `-u_t - (a + eps) u_xx + H(t, x, u_x) = 0`, `u(T) = G`,
//! solved by an explicit monotone local Lax-Friedrichs march backwards in time,
//! together with the semiconcavity monitor `gamma_t`.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::{self, check_cfl, GridField, TimeGrid};
use crate::hamiltonian::{Diffusion, Hamiltonian};
use crate::par;

#[derive(Debug, Clone)]
pub struct DetHjbProblem {
    pub hamiltonian: Hamiltonian,
    pub diffusion: Diffusion,
    pub terminal: GridField,
    pub tgrid: TimeGrid,
    pub epsilon: f64,
    /// Bound on `|u_x|` used for the CFL condition and to clip the local
    /// viscosity coefficient. Defaults to `2 max(Lip(G), 1)`.
    pub gradient_bound: Option<f64>,
    /// Global Lax-Friedrichs coefficient replacing the local one. Two problems
    /// solved with the same coefficient share one monotone scheme.
    pub viscosity: Option<f64>,
}

impl DetHjbProblem {
    pub fn new(
        hamiltonian: Hamiltonian,
        diffusion: Diffusion,
        terminal: GridField,
        tgrid: TimeGrid,
        epsilon: f64,
    ) -> Self {
        DetHjbProblem {
            hamiltonian,
            diffusion,
            terminal,
            tgrid,
            epsilon,
            gradient_bound: None,
            viscosity: None,
        }
    }

    pub fn with_gradient_bound(mut self, p_max: f64) -> Self {
        self.gradient_bound = Some(p_max);
        self
    }

    pub fn gradient_bound(&self) -> f64 {
        self.gradient_bound.unwrap_or_else(|| {
            2.0 * grid::lipschitz_constant(&self.terminal)
                .unwrap_or(1.0)
                .max(1.0)
        })
    }

    /// `(sup (a + eps), sup |D_p H|)` over the time levels and nodes.
    pub fn cfl_coefficients(&self) -> (f64, f64) {
        let xs = self.terminal.grid.points();
        let p_max = self.gradient_bound();
        let mut diff: f64 = 0.0;
        let mut speed: f64 = 0.0;
        for k in 0..=self.tgrid.n_steps {
            let t = self.tgrid.time(k);
            diff = diff.max(self.diffusion.sup_a(t, &xs));
            speed = speed.max(self.hamiltonian.speed_bound(t, &xs, p_max));
        }
        (diff + self.epsilon, speed.max(self.viscosity.unwrap_or(0.0)))
    }

    /// Largest stable step for this problem.
    pub fn max_stable_dt(&self) -> f64 {
        let (d, s) = self.cfl_coefficients();
        grid::cfl_limit(self.terminal.grid.dx(), d, s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(MfgError::Configuration(format!(
                "epsilon must be finite and >= 0 (got {})",
                self.epsilon
            )));
        }
        if let Some(i) = self.terminal.values.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::invalid(format!("terminal data non-finite at node {i}")));
        }
        let (d, s) = self.cfl_coefficients();
        check_cfl(self.tgrid.dt(), self.terminal.grid.dx(), d, s)
    }
}

/// Time step count on `[t0, t1]` that satisfies the CFL bound of `prob`'s data.
pub fn stable_time_grid(
    hamiltonian: &Hamiltonian,
    diffusion: &Diffusion,
    terminal: &GridField,
    horizon: f64,
    epsilon: f64,
    multiple_of: usize,
) -> Result<TimeGrid> {
    let probe = DetHjbProblem::new(
        hamiltonian.clone(),
        diffusion.clone(),
        terminal.clone(),
        TimeGrid::new(horizon, 1)?,
        epsilon,
    );
    TimeGrid::with_max_dt(horizon, probe.max_stable_dt(), multiple_of)
}

#[derive(Debug, Clone, Serialize)]
pub struct DetHjbSolution {
    pub tgrid: TimeGrid,
    /// `u[k]` lives at `tgrid.time(k)`; `u[n_steps]` is the terminal data.
    #[serde(skip)]
    pub u: Vec<GridField>,
    pub gamma_series: Vec<f64>,
    pub sup_series: Vec<f64>,
    pub lip_series: Vec<f64>,
    pub sc_series: Vec<f64>,
    pub lambda0: f64,
    /// Node updates whose viscosity coefficient had to be clipped.
    pub clipped_updates: usize,
}

impl DetHjbSolution {
    pub fn initial(&self) -> &GridField {
        &self.u[0]
    }

    pub fn gamma_terminal(&self) -> f64 {
        *self.gamma_series.last().expect("non-empty series")
    }
}

/// One backward step from level `k + 1` to level `k`. Returns the number of
/// clipped viscosity coefficients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_step(
    h: &Hamiltonian,
    a: &[f64],
    epsilon: f64,
    t: f64,
    xs: &[f64],
    dx: f64,
    dt: f64,
    theta_max: f64,
    fixed_theta: Option<f64>,
    u: &[f64],
    out: &mut [f64],
) -> usize {
    let n = u.len();
    let ghost = |i: isize| -> f64 {
        if i < 0 {
            2.0 * u[0] - u[1]
        } else if i as usize >= n {
            2.0 * u[n - 1] - u[n - 2]
        } else {
            u[i as usize]
        }
    };
    let clipped = std::sync::atomic::AtomicUsize::new(0);
    par::fill_indexed(out, |i| {
        let ui = u[i];
        let pm = (ui - ghost(i as isize - 1)) / dx;
        let pp = (ghost(i as isize + 1) - ui) / dx;
        let x = xs[i];
        let pc = 0.5 * (pm + pp);
        let mut theta = match fixed_theta {
            Some(th) => th,
            None => h.grad_p(t, x, pm).abs().max(h.grad_p(t, x, pp).abs()),
        };
        if theta > theta_max {
            theta = theta_max;
            clipped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        let d2 = (pp - pm) / dx;
        ui + dt * ((a[i] + epsilon) * d2 - h.eval(t, x, pc) + 0.5 * theta * (pp - pm))
    });
    clipped.into_inner()
}

pub fn solve_det_hjb(prob: &DetHjbProblem) -> Result<DetHjbSolution> {
    prob.validate()?;
    let grid = prob.terminal.grid;
    let xs = grid.points();
    let dx = grid.dx();
    let dt = prob.tgrid.dt();
    let n_steps = prob.tgrid.n_steps;
    let theta_max = {
        let (_, s) = prob.cfl_coefficients();
        s
    };
    let h = &prob.hamiltonian;

    let mut u: Vec<GridField> = vec![GridField::constant(grid, 0.0); n_steps + 1];
    u[n_steps] = prob.terminal.clone();
    let mut clipped = 0;
    for k in (0..n_steps).rev() {
        let t = prob.tgrid.time(k + 1);
        let a = prob.diffusion.a_field(t, &xs);
        let mut next = vec![0.0; grid.n_points];
        clipped += backward_step(
            h,
            &a,
            prob.epsilon,
            t,
            &xs,
            dx,
            dt,
            theta_max,
            prob.viscosity,
            &u[k + 1].values,
            &mut next,
        );
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NumericalBlowup {
                level: k,
                detail: format!("non-finite value at node {i} (x = {})", xs[i]),
            });
        }
        u[k] = GridField { grid, values: next };
    }

    let lambda0 = h.lambda0;
    let monitors: Vec<(f64, f64, f64, f64)> = par::map_slice(&u, |f| {
        (
            gamma_functional(f, lambda0),
            f.sup_norm(),
            grid::lipschitz_constant(f).unwrap_or(0.0),
            grid::semiconcavity_constant(f).unwrap_or(0.0),
        )
    });
    Ok(DetHjbSolution {
        tgrid: prob.tgrid,
        u,
        gamma_series: monitors.iter().map(|m| m.0).collect(),
        sup_series: monitors.iter().map(|m| m.1).collect(),
        lip_series: monitors.iter().map(|m| m.2).collect(),
        sc_series: monitors.iter().map(|m| m.3).collect(),
        lambda0,
        clipped_updates: clipped,
    })
}

/// `max_x { (m_+(u_xx)^2 + u_x^2)^{1/2} - sqrt(2) lambda0 u }_+` over interior
/// nodes, with centred differences.
pub fn gamma_functional(u: &GridField, lambda0: f64) -> f64 {
    let v = &u.values;
    let dx = u.grid.dx();
    let n = v.len();
    let mut g: f64 = 0.0;
    for i in 1..n.saturating_sub(1) {
        let d2 = ((v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dx * dx)).max(0.0);
        let d1 = (v[i + 1] - v[i - 1]) / (2.0 * dx);
        let val = (d2 * d2 + d1 * d1).sqrt() - std::f64::consts::SQRT_2 * lambda0 * v[i];
        if val.is_finite() {
            g = g.max(val);
        }
    }
    g
}

/// Right side of the semiconcavity propagation bound,
/// `C (T - t) + e^{C (T - t)} gamma_T`.
pub fn propagation_bound(c: f64, tau: f64, gamma_terminal: f64) -> f64 {
    c * tau + (c * tau).exp() * gamma_terminal
}

/// Smallest `C >= 0` with `gamma <= C tau + e^{C tau} gamma_T`.
pub fn minimal_constant(gamma: f64, tau: f64, gamma_terminal: f64) -> f64 {
    if gamma <= propagation_bound(0.0, tau, gamma_terminal) || tau <= 0.0 {
        return 0.0;
    }
    let f = |c: f64| propagation_bound(c, tau, gamma_terminal) - gamma;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

#[derive(Debug, Clone, Serialize)]
pub struct PropagationReport {
    pub c_given: f64,
    pub passes: bool,
    /// Smallest constant for which the bound holds at every time level.
    pub c_min: f64,
    /// `max_t (gamma_t - bound(c_given))`; nonpositive when the bound holds.
    pub worst_violation: f64,
    pub gamma_terminal: f64,
    /// `bound(c_min)` at every time level, for plotting against `gamma_series`.
    pub fitted_bound: Vec<f64>,
}

pub fn check_propagation(sol: &DetHjbSolution, c_fit: f64) -> PropagationReport {
    let t_end = sol.tgrid.t_end();
    let gt = sol.gamma_terminal();
    let mut c_min: f64 = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (k, &g) in sol.gamma_series.iter().enumerate() {
        let tau = t_end - sol.tgrid.time(k);
        c_min = c_min.max(minimal_constant(g, tau, gt));
        worst = worst.max(g - propagation_bound(c_fit, tau, gt));
    }
    let fitted_bound = (0..sol.gamma_series.len())
        .map(|k| propagation_bound(c_min, t_end - sol.tgrid.time(k), gt))
        .collect();
    PropagationReport {
        c_given: c_fit,
        passes: worst <= 1e-12 * (1.0 + gt),
        c_min,
        worst_violation: worst,
        gamma_terminal: gt,
        fitted_bound,
    }
}

/// Whether the violations of a refinement sequence (coarse to fine) are
/// nonincreasing.
pub fn violation_monotone_under_refinement(reports: &[PropagationReport]) -> bool {
    reports
        .windows(2)
        .all(|w| w[1].worst_violation.max(0.0) <= w[0].worst_violation.max(0.0) + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;

    #[test]
    fn affine_terminal_is_exact() {
        let g = Grid1D::new(-2.0, 2.0, 81).unwrap();
        let prob = DetHjbProblem::new(
            Hamiltonian::quadratic(),
            Diffusion::zero(),
            GridField::from_fn(g, |x| x),
            TimeGrid::new(1.0, 100).unwrap(),
            0.0,
        );
        let sol = solve_det_hjb(&prob).unwrap();
        for k in 0..=100 {
            let tau = 1.0 - sol.tgrid.time(k);
            for i in 1..80 {
                assert!((sol.u[k].values[i] - (g.x(i) - 0.5 * tau)).abs() < 1e-12);
            }
        }
        let rep = check_propagation(&sol, 1.0);
        assert!(rep.passes);
        let mut flat = sol.clone();
        flat.gamma_series.iter_mut().for_each(|g| *g = 0.0);
        let rep = check_propagation(&flat, 0.0);
        assert!(rep.passes && rep.c_min == 0.0);
    }

    #[test]
    fn gamma_examples() {
        let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
        assert_eq!(gamma_functional(&GridField::constant(g, 2.0), 1.0), 0.0);
        let neg = gamma_functional(&GridField::constant(g, -1.0), 1.0);
        assert!((neg - 2f64.sqrt()).abs() < 1e-15);
        let q = gamma_functional(&GridField::from_fn(g, |x| 0.5 * x * x), 1.0);
        assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = Grid1D::new(-2.0, 2.0, 81).unwrap();
        let prob = DetHjbProblem::new(
            Hamiltonian::zero(),
            Diffusion::from_a(1.0),
            GridField::constant(g, 0.0),
            TimeGrid::new(1.0, 10).unwrap(),
            0.0,
        );
        assert!(matches!(solve_det_hjb(&prob), Err(MfgError::Cfl { .. })));
    }

    #[test]
    fn minimal_constant_inverts_bound() {
        let c = minimal_constant(3.0, 0.5, 1.0);
        assert!((propagation_bound(c, 0.5, 1.0) - 3.0).abs() < 1e-10);
        assert_eq!(minimal_constant(0.5, 0.5, 1.0), 0.0);
    }
}
