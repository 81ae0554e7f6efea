//! Forward Fokker-Planck solver
//! `m_t = d_x [eps m_x + (a m)_x + b m]` on a truncated interval with zero flux
//! at both ends, and exact one-dimensional Wasserstein-2 distances.
//!
//! Densities live on cells of width `dx` centred at the grid nodes, so the
//! mass of a field is `sum m_i dx` and its CDF is piecewise linear.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::{self, Grid1D, GridField, TimeGrid};
use crate::hamiltonian::{Diffusion, Hamiltonian};
use crate::par;

/// Number of quantile samples used by the Wasserstein distance.
pub const QUANTILE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone)]
pub struct FpProblem {
    pub m0: GridField,
    /// `drift[k]` is used on `[t_k, t_{k+1}]`; mass flows along `-b`.
    pub drift: Vec<GridField>,
    pub diffusion: Diffusion,
    pub epsilon: f64,
    pub tgrid: TimeGrid,
}

impl FpProblem {
    pub fn new(
        m0: GridField,
        drift: Vec<GridField>,
        diffusion: Diffusion,
        epsilon: f64,
        tgrid: TimeGrid,
    ) -> Self {
        FpProblem {
            m0,
            drift,
            diffusion,
            epsilon,
            tgrid,
        }
    }

    /// Time-independent drift.
    pub fn with_constant_drift(
        m0: GridField,
        drift: GridField,
        diffusion: Diffusion,
        epsilon: f64,
        tgrid: TimeGrid,
    ) -> Self {
        let drift = vec![drift; tgrid.n_steps];
        Self::new(m0, drift, diffusion, epsilon, tgrid)
    }

    pub fn grid(&self) -> Grid1D {
        self.m0.grid
    }

    pub fn validate(&self) -> Result<()> {
        check_density(&self.m0, 1e-10)?;
        if self.drift.len() < self.tgrid.n_steps {
            return Err(MfgError::invalid(format!(
                "need {} drift fields, got {}",
                self.tgrid.n_steps,
                self.drift.len()
            )));
        }
        if self.drift.iter().any(|b| b.grid != self.m0.grid) {
            return Err(MfgError::invalid("drift fields must live on the density grid"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(MfgError::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        let (d, s) = self.cfl_coefficients();
        grid::check_cfl(self.tgrid.dt(), self.grid().dx(), d, s)
    }

    /// `(sup (eps + a), sup |b|)` over the run.
    pub fn cfl_coefficients(&self) -> (f64, f64) {
        let xs = self.grid().points();
        let mut d: f64 = 0.0;
        for k in 0..self.tgrid.n_steps {
            d = d.max(self.diffusion.sup_a(self.tgrid.time(k), &xs));
        }
        let s = self
            .drift
            .iter()
            .take(self.tgrid.n_steps)
            .map(GridField::sup_norm)
            .fold(0.0, f64::max);
        (d + self.epsilon, s)
    }

    /// `sup (b_x + a_xx)^+`: the rate in the maximum principle for `m`.
    pub fn divergence_constant(&self) -> f64 {
        let g = self.grid();
        let dx = g.dx();
        let xs = g.points();
        let mut c: f64 = 0.0;
        for k in 0..self.tgrid.n_steps {
            let b = &self.drift[k].values;
            let a = self.diffusion.a_field(self.tgrid.time(k), &xs);
            for i in 1..g.n_points - 1 {
                let bx = (b[i + 1] - b[i - 1]) / (2.0 * dx);
                let axx = (a[i + 1] - 2.0 * a[i] + a[i - 1]) / (dx * dx);
                c = c.max(bx + axx);
            }
        }
        c
    }
}

fn check_density(m: &GridField, mass_tol: f64) -> Result<()> {
    if let Some(i) = m.values.iter().position(|&v| v < 0.0) {
        return Err(MfgError::invalid(format!(
            "density is negative at x = {}: {}",
            m.grid.x(i),
            m.values[i]
        )));
    }
    let mass = m.mass();
    if (mass - 1.0).abs() > mass_tol {
        return Err(MfgError::invalid(format!("density has mass {mass}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityPath {
    pub tgrid: TimeGrid,
    #[serde(skip)]
    pub m: Vec<GridField>,
    pub mass_series: Vec<f64>,
    pub linf_series: Vec<f64>,
    pub min_series: Vec<f64>,
    /// Fourth moment `int |x|^4 m`.
    pub moment_series: Vec<f64>,
}

impl DensityPath {
    pub fn from_fields(tgrid: TimeGrid, m: Vec<GridField>) -> Self {
        let mass_series = m.iter().map(GridField::mass).collect();
        let linf_series = m.iter().map(GridField::max).collect();
        let min_series = m.iter().map(GridField::min).collect();
        let moment_series = m.iter().map(|f| moment(f, 4.0)).collect();
        DensityPath {
            tgrid,
            m,
            mass_series,
            linf_series,
            min_series,
            moment_series,
        }
    }

    pub fn final_density(&self) -> &GridField {
        self.m.last().expect("a path has at least one level")
    }

    pub fn max_mass_error(&self) -> f64 {
        self.mass_series
            .iter()
            .map(|m| (m - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|mass_{k+1} - mass_k|`.
    pub fn max_step_mass_change(&self) -> f64 {
        self.mass_series
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.min_series.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `holder[k] = max_j d2(m_j, m_k) / |t_j - t_k|^{1/2}` over (at most)
    /// `samples` evenly spaced time levels `j != k`; returns `(levels, holder)`.
    pub fn holder_d2_series(&self, samples: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let n = self.m.len();
        let count = samples.clamp(2, n.max(2)).min(n);
        let levels: Vec<usize> = (0..count)
            .map(|i| ((i as f64) * (n - 1) as f64 / (count - 1).max(1) as f64).round() as usize)
            .collect();
        let quantiles: Vec<Vec<f64>> = par::map_slice(&levels, |&k| quantile_function(&self.m[k]))
            .into_iter()
            .collect::<Result<_>>()?;
        let series = par::map_range(levels.len(), |a| {
            let mut h: f64 = 0.0;
            for b in 0..levels.len() {
                if a == b {
                    continue;
                }
                let dt = (self.tgrid.time(levels[a]) - self.tgrid.time(levels[b])).abs();
                h = h.max(quantile_distance(&quantiles[a], &quantiles[b]) / dt.sqrt());
            }
            h
        });
        Ok((levels, series))
    }

    pub fn holder_d2_constant(&self, samples: usize) -> Result<f64> {
        Ok(self.holder_d2_series(samples)?.1.into_iter().fold(0.0, f64::max))
    }
}

/// `int |x|^p m dx`.
pub fn moment(m: &GridField, p: f64) -> f64 {
    let dx = m.grid.dx();
    m.values
        .iter()
        .enumerate()
        .map(|(i, v)| m.grid.x(i).abs().powf(p) * v * dx)
        .sum()
}

pub fn mean(m: &GridField) -> f64 {
    let dx = m.grid.dx();
    let mass = m.mass();
    m.values
        .iter()
        .enumerate()
        .map(|(i, v)| m.grid.x(i) * v * dx)
        .sum::<f64>()
        / mass
}

pub fn variance(m: &GridField) -> f64 {
    let mu = mean(m);
    let dx = m.grid.dx();
    m.values
        .iter()
        .enumerate()
        .map(|(i, v)| (m.grid.x(i) - mu).powi(2) * v * dx)
        .sum::<f64>()
        / m.mass()
}

/// One explicit step of the conservative scheme; returns the new density.
pub(crate) fn forward_step(
    m: &[f64],
    b: &[f64],
    a: &[f64],
    eps: f64,
    dx: f64,
    dt: f64,
    out: &mut [f64],
) {
    let n = m.len();
    let flux = |i: usize| -> f64 {
        // interface between cells i and i + 1
        let v = -0.5 * (b[i] + b[i + 1]);
        let adv = v.max(0.0) * m[i] + v.min(0.0) * m[i + 1];
        let dif = (eps * (m[i + 1] - m[i]) + a[i + 1] * m[i + 1] - a[i] * m[i]) / dx;
        adv - dif
    };
    let r = dt / dx;
    par::fill_indexed(out, |i| {
        let right = if i + 1 < n { flux(i) } else { 0.0 };
        let left = if i > 0 { flux(i - 1) } else { 0.0 };
        m[i] - r * (right - left)
    });
}

pub fn solve_fp(prob: &FpProblem) -> Result<DensityPath> {
    prob.validate()?;
    let g = prob.grid();
    let dx = g.dx();
    let dt = prob.tgrid.dt();
    let xs = g.points();
    let mut fields = Vec::with_capacity(prob.tgrid.n_steps + 1);
    fields.push(prob.m0.clone());
    let mut cur = prob.m0.values.clone();
    let mut next = vec![0.0; cur.len()];
    for k in 0..prob.tgrid.n_steps {
        let a = prob.diffusion.a_field(prob.tgrid.time(k), &xs);
        forward_step(&cur, &prob.drift[k].values, &a, prob.epsilon, dx, dt, &mut next);
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NumericalBlowup {
                level: k + 1,
                detail: format!("density is not finite at x = {}", g.x(i)),
            });
        }
        let (imin, vmin) = next
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        if vmin < -1e-8 {
            return Err(MfgError::SchemeFailure(format!(
                "density {vmin} < -1e-8 at t = {}, x = {}",
                prob.tgrid.time(k + 1),
                g.x(imin)
            )));
        }
        std::mem::swap(&mut cur, &mut next);
        fields.push(GridField {
            grid: g,
            values: cur.clone(),
        });
    }
    Ok(DensityPath::from_fields(prob.tgrid, fields))
}

/// Drift `b = D_p H(t, x, D(rho_delta * u))` read off a value field.
pub fn drift_from_value(h: &Hamiltonian, t: f64, u: &GridField, delta: f64) -> GridField {
    let smooth = if delta > 0.0 {
        grid::mollify(u, delta)
    } else {
        u.clone()
    };
    let du = smooth.centered_gradient();
    let g = u.grid;
    GridField {
        grid: g,
        values: (0..g.n_points)
            .map(|i| h.grad_p(t, g.x(i), du[i]))
            .collect(),
    }
}

/// `F^{-1}` at the midpoints `(k + 1/2) / Q` of `Q = QUANTILE_SAMPLES` levels,
/// for the piecewise constant density normalised to mass 1.
pub fn quantile_function(m: &GridField) -> Result<Vec<f64>> {
    if m.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(MfgError::invalid("Wasserstein distance needs a nonnegative density"));
    }
    let total: f64 = m.values.iter().sum();
    if total <= 0.0 {
        return Err(MfgError::invalid("Wasserstein distance of a zero-mass density"));
    }
    let dx = m.grid.dx();
    let q_n = QUANTILE_SAMPLES;
    let mut out = Vec::with_capacity(q_n);
    let mut i = 0usize;
    let mut below = 0.0; // normalised mass of cells < i
    for k in 0..q_n {
        let q = (k as f64 + 0.5) / q_n as f64;
        while i + 1 < m.values.len() && below + m.values[i] / total < q {
            below += m.values[i] / total;
            i += 1;
        }
        let w = m.values[i] / total;
        let frac = if w > 0.0 { ((q - below) / w).clamp(0.0, 1.0) } else { 0.5 };
        out.push(m.grid.x(i) - 0.5 * dx + frac * dx);
    }
    Ok(out)
}

fn quantile_distance(q1: &[f64], q2: &[f64]) -> f64 {
    let s: f64 = q1.iter().zip(q2).map(|(a, b)| (a - b) * (a - b)).sum();
    (s / q1.len() as f64).sqrt()
}

pub fn wasserstein2_1d(mu: &GridField, nu: &GridField) -> Result<f64> {
    let (m1, m2) = (mu.mass(), nu.mass());
    if m1 > 0.0 && m2 > 0.0 && (m1 - m2).abs() > 1e-8 * m1.max(m2) {
        return Err(MfgError::invalid(format!("unequal masses {m1} and {m2}")));
    }
    Ok(quantile_distance(&quantile_function(mu)?, &quantile_function(nu)?))
}

/// `|m_t|_inf <= e^{C t} |m_0|_inf (1 + 10 dx)` at every time level.
pub fn verify_linf_growth(path: &DensityPath, c_div: f64) -> bool {
    let dx = path.m[0].grid.dx();
    let m0 = path.linf_series[0];
    path.linf_series
        .iter()
        .enumerate()
        .all(|(k, &l)| l <= (c_div * (path.tgrid.time(k) - path.tgrid.t_start)).exp() * m0 * (1.0 + 10.0 * dx))
}

/// Gaussian density with the given mean and standard deviation, normalised
/// to unit mass on the grid.
pub fn gaussian_density(grid: Grid1D, mean: f64, sd: f64) -> GridField {
    let f = GridField::from_fn(grid, |x| (-(x - mean).powi(2) / (2.0 * sd * sd)).exp());
    let mass = f.mass();
    f.map(|v| v / mass)
}

pub fn uniform_density(grid: Grid1D) -> GridField {
    let f = GridField::constant(grid, 1.0);
    let mass = f.mass();
    f.map(|v| v / mass)
}
