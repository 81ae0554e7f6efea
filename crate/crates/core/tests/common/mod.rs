//! Independent reference solutions shared by the integration tests. None of
//! these call into the solvers they are used to check.

#![allow(dead_code)]

use mfg_core::det_hjb::{self, DetHjbProblem, DetHjbSolution};
use mfg_core::grid::{Grid1D, GridField, TimeGrid};
use mfg_core::hamiltonian::{Diffusion, Hamiltonian};

/// `(e^{a tau d_xx} g)(x)`: convolution with a Gaussian of variance `2 a tau`.
pub fn heat(g: impl Fn(f64) -> f64, a: f64, tau: f64, x: f64) -> f64 {
    if tau <= 0.0 || a <= 0.0 {
        return g(x);
    }
    let sd = (2.0 * a * tau).sqrt();
    let n = 4001;
    let h = 16.0 * sd / (n - 1) as f64;
    let c = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = 0.0;
    for k in 0..n {
        let z = -8.0 * sd + k as f64 * h;
        let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        s += w * c * (-0.5 * z * z / (sd * sd)).exp() * g(x - z);
    }
    s * h
}

/// `inf_y [g(y) + |x - y|^2 / (2 tau)]` by brute force on a fine mesh.
pub fn hopf_lax(g: impl Fn(f64) -> f64, tau: f64, x: f64, reach: f64) -> f64 {
    if tau <= 0.0 {
        return g(x);
    }
    let n = 20_001;
    let h = 2.0 * reach / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let y = x - reach + k as f64 * h;
            g(y) + (x - y) * (x - y) / (2.0 * tau)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Hopf-Lax applied to a grid field, reading it by linear interpolation.
pub fn hopf_lax_field(f: &GridField, tau: f64, reach: f64) -> GridField {
    let g = f.grid;
    GridField::from_fn(g, |x| {
        hopf_lax(
            |y| {
                if y < g.x_min || y > g.x_max {
                    f64::INFINITY
                } else {
                    f.interpolate(y)
                }
            },
            tau,
            x,
            reach,
        )
    })
}

/// `x^2 / (2 (1 + tau))`: the value of the quadratic control problem with
/// terminal cost `x^2 / 2` and no noise.
pub fn riccati(tau: f64, x: f64) -> f64 {
    x * x / (2.0 * (1.0 + tau))
}

/// Largest error over nodes in the middle third of the grid.
pub fn interior_third_error(u: &GridField, exact: impl Fn(f64) -> f64) -> f64 {
    let g = u.grid;
    let n = g.n_points;
    (n / 3..=2 * n / 3)
        .map(|i| (u.values[i] - exact(g.x(i))).abs())
        .fold(0.0, f64::max)
}

pub fn solve(
    h: Hamiltonian,
    diffusion: Diffusion,
    grid: Grid1D,
    g: impl Fn(f64) -> f64,
    horizon: f64,
) -> DetHjbSolution {
    let terminal = GridField::from_fn(grid, g);
    let tgrid = det_hjb::stable_time_grid(&h, &diffusion, &terminal, horizon, 0.0, 1).unwrap();
    det_hjb::solve_det_hjb(&DetHjbProblem::new(h, diffusion, terminal, tgrid, 0.0)).unwrap()
}

pub fn time_grid(horizon: f64, n: usize) -> TimeGrid {
    TimeGrid::new(horizon, n).unwrap()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}
