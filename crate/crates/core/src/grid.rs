//! Uniform 1-d grids, grid fields, difference stencils, norms, the
//! expanding-cone weight `psi` and the sup/L^p interpolation bound.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

/// Uniform grid on `[x_min, x_max]` with `n_points` nodes, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid1D {
    pub const MIN_POINTS: usize = 8;

    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() || x_max <= x_min {
            return Err(MfgError::invalid(format!(
                "grid bounds must be finite with x_max > x_min (got [{x_min}, {x_max}])"
            )));
        }
        if n_points < Self::MIN_POINTS {
            return Err(MfgError::invalid(format!(
                "grid needs at least {} points (got {n_points})",
                Self::MIN_POINTS
            )));
        }
        Ok(Grid1D {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Grid on `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    /// Grid on `[x_min, x_max]` whose spacing is exactly `dx`; the upper
    /// bound is moved outwards when the interval is not a multiple of `dx`.
    pub fn with_spacing(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(MfgError::invalid("grid spacing must be positive"));
        }
        let cells = ((x_max - x_min) / dx - 1e-9).ceil().max(1.0) as usize;
        Self::new(x_min, x_min + cells as f64 * dx, cells + 1)
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Cell index and fractional offset of `x`: `x = x(i) + frac*dx` with
    /// `i` clamped to `[0, n-2]` (so `frac` may leave `[0,1]` outside the grid).
    /// Offsets within `1e-9` of an integer are snapped so that positions that
    /// fall on nodes reproduce node values exactly.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.x_min) / self.dx();
        let r = s.round();
        let s = if (s - r).abs() < 1e-9 { r } else { s };
        let i = (s.floor().max(0.0) as usize).min(self.n_points - 2);
        (i, s - i as f64)
    }
}

/// Values of a scalar quantity at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(MfgError::invalid(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.n_points
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::invalid(format!(
                "non-finite field value at node {i}"
            )));
        }
        Ok(GridField { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_points).map(|i| f(grid.x(i))).collect();
        GridField { grid, values }
    }

    pub fn constant(grid: Grid1D, c: f64) -> Self {
        GridField {
            grid,
            values: vec![c; grid.n_points],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Riemann mass `sum v_i dx` (cell-centred quadrature).
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    /// Linear interpolation, linearly extrapolated beyond the end nodes.
    pub fn interpolate(&self, x: f64) -> f64 {
        let (i, f) = self.grid.locate(x);
        if f == 0.0 {
            return self.values[i];
        }
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }

    /// Linear interpolation with zero extension outside `[x_min, x_max]`.
    pub fn interpolate_zero(&self, x: f64) -> f64 {
        let dx = self.grid.dx();
        if x < self.grid.x_min - 1e-9 * dx || x > self.grid.x_max + 1e-9 * dx {
            return 0.0;
        }
        self.interpolate(x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `max |self - other|` over nodes whose abscissa lies in `[lo, hi]`.
    pub fn sup_distance_on(&self, other: &GridField, lo: f64, hi: f64) -> f64 {
        (0..self.len())
            .filter(|&i| {
                let x = self.grid.x(i);
                x >= lo && x <= hi
            })
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn centered_gradient(&self) -> Vec<f64> {
        centered_gradient(&self.values, self.grid.dx())
    }
}

/// Time partition of `[t_start, t_start + horizon]` into `n_steps` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::on_interval(0.0, horizon, n_steps)
    }

    pub fn on_interval(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(MfgError::invalid(format!(
                "time interval must satisfy t1 > t0 (got [{t0}, {t1}])"
            )));
        }
        if n_steps == 0 {
            return Err(MfgError::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid {
            t_start: t0,
            horizon: t1 - t0,
            n_steps,
        })
    }

    /// Smallest step count on `[0, horizon]` with `dt <= max_dt` and
    /// `n_steps` a multiple of `multiple_of`.
    pub fn with_max_dt(horizon: f64, max_dt: f64, multiple_of: usize) -> Result<Self> {
        if !(max_dt > 0.0) {
            return Err(MfgError::invalid("max_dt must be positive"));
        }
        let m = multiple_of.max(1);
        let mut n = (horizon / max_dt).ceil().max(1.0) as usize;
        n = n.div_ceil(m) * m;
        Self::new(horizon, n)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    #[inline]
    pub fn t_end(&self) -> f64 {
        self.t_start + self.horizon
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end()
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    /// The sub-grid covering steps `[k0, k1]`.
    pub fn slice(&self, k0: usize, k1: usize) -> Result<TimeGrid> {
        if k1 <= k0 || k1 > self.n_steps {
            return Err(MfgError::invalid(format!(
                "invalid step range [{k0}, {k1}] for {} steps",
                self.n_steps
            )));
        }
        TimeGrid::on_interval(self.time(k0), self.time(k1), k1 - k0)
    }
}

/// Explicit-scheme step limit `0.9 dx^2 / (2 (a + eps) + dx |b|)` shared by the
/// HJB and Fokker-Planck marches.
pub fn cfl_limit(dx: f64, diffusion: f64, speed: f64) -> f64 {
    let denom = 2.0 * diffusion + dx * speed;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        0.9 * dx * dx / denom
    }
}

/// Checks `dt` against [`cfl_limit`].
pub fn check_cfl(dt: f64, dx: f64, diffusion: f64, speed: f64) -> Result<()> {
    let limit = cfl_limit(dx, diffusion, speed);
    if dt > limit * (1.0 + 1e-12) {
        return Err(MfgError::Cfl {
            dt,
            limit,
            dx,
            diffusion,
            speed,
        });
    }
    Ok(())
}

/// Largest nonnegative eigenvalue of a 1x1 symmetric matrix.
pub fn m_plus(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(MfgError::invalid(format!("m_plus of non-finite value {x}")));
    }
    Ok(x.max(0.0))
}

/// Centred second differences at interior nodes (length `n - 2`).
pub fn second_differences(values: &[f64], dx: f64) -> Result<Vec<f64>> {
    if values.len() < 3 {
        return Err(MfgError::invalid(format!(
            "second differences need at least 3 points (got {})",
            values.len()
        )));
    }
    let inv = 1.0 / (dx * dx);
    Ok(values
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]) * inv)
        .collect())
}

/// Centred gradient at interior nodes, one-sided at the two ends.
pub fn centered_gradient(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut g = vec![0.0; n];
    g[0] = (values[1] - values[0]) / dx;
    g[n - 1] = (values[n - 1] - values[n - 2]) / dx;
    for i in 1..n - 1 {
        g[i] = (values[i + 1] - values[i - 1]) / (2.0 * dx);
    }
    g
}

/// Discrete `ess sup m_+(D^2 u)`: the largest interior second difference, clipped at 0.
pub fn semiconcavity_constant_of(values: &[f64], dx: f64) -> Result<f64> {
    if values.len() < 3 {
        return second_differences(values, dx).map(|_| 0.0);
    }
    // second differences at the level of rounding count as zero
    let inv = 1.0 / (dx * dx);
    Ok(values
        .windows(3)
        .map(|w| {
            let num = w[2] - 2.0 * w[1] + w[0];
            let floor = 8.0 * f64::EPSILON * (w[2].abs() + 2.0 * w[1].abs() + w[0].abs());
            if num.abs() <= floor { 0.0 } else { num * inv }
        })
        .fold(0.0, f64::max))
}

pub fn semiconcavity_constant(u: &GridField) -> Result<f64> {
    semiconcavity_constant_of(&u.values, u.grid.dx())
}

/// Largest slope between adjacent nodes.
pub fn lipschitz_constant_of(values: &[f64], dx: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(MfgError::invalid(format!(
            "Lipschitz constant needs at least 2 points (got {})",
            values.len()
        )));
    }
    Ok(values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / dx)
        .fold(0.0, f64::max))
}

pub fn lipschitz_constant(u: &GridField) -> Result<f64> {
    lipschitz_constant_of(&u.values, u.grid.dx())
}

/// Exact `L^p` norm of the piecewise-linear interpolant of `w`.
pub fn lp_norm(w: &GridField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(MfgError::invalid(format!("L^p norm needs p >= 1 (got {p})")));
    }
    let dx = w.grid.dx();
    let q = p + 1.0;
    let mut acc = 0.0;
    for seg in w.values.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let (aa, bb) = (a.abs(), b.abs());
        acc += if a * b < 0.0 {
            dx * (aa.powf(q) + bb.powf(q)) / (q * (aa + bb))
        } else if (aa - bb).abs() <= 1e-14 * aa.max(bb) {
            dx * aa.max(bb).powf(p)
        } else {
            dx * (bb.powf(q) - aa.powf(q)) / (q * (bb - aa))
        };
    }
    Ok(acc.powf(1.0 / p))
}

/// Sup bound of a Lipschitz `L^p` function in dimension `d`:
/// `C_{d,p} |Dw|_inf^{d/(d+p)} |w|_p^{p/(d+p)}`, where `C_{d,p}` is fixed by
/// the cone `(h - L|y|)_+` for which the bound is an equality.
pub fn interp_sup_bound(p: f64, grad_inf: f64, lp_norm: f64, d: usize) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(MfgError::invalid(format!("interpolation bound needs p >= 1 (got {p})")));
    }
    if !(grad_inf >= 0.0) || !(lp_norm >= 0.0) || !grad_inf.is_finite() || !lp_norm.is_finite() {
        return Err(MfgError::invalid(format!(
            "norms must be finite and nonnegative (got |Dw| = {grad_inf}, |w|_p = {lp_norm})"
        )));
    }
    let c = match d {
        1 => ((p + 1.0) / 2.0).powf(1.0 / (p + 1.0)),
        // cone volume 2 pi h^{p+2} / (L^2 (p+1)(p+2))
        2 => ((p + 1.0) * (p + 2.0) / (2.0 * std::f64::consts::PI)).powf(1.0 / (p + 2.0)),
        _ => {
            return Err(MfgError::invalid(format!(
                "interpolation bound implemented for d = 1, 2 (got {d})"
            )))
        }
    };
    let df = d as f64;
    Ok(c * grad_inf.powf(df / (df + p)) * lp_norm.powf(p / (df + p)))
}

/// Value and derivatives of `psi(t,x) = exp(-(|x| - K t)_+^2 / (4 lambda (t+1)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiValue {
    pub value: f64,
    pub time_derivative: f64,
    pub gradient: f64,
    pub second_derivative: f64,
}

pub fn psi_test(lambda: f64, k: f64, t: f64, x: f64) -> Result<PsiValue> {
    if !(lambda > 0.0) || !(k > 0.0) {
        return Err(MfgError::invalid(format!(
            "psi needs lambda > 0 and K > 0 (got {lambda}, {k})"
        )));
    }
    if !(t >= 0.0) || !x.is_finite() {
        return Err(MfgError::invalid(format!("psi evaluated at t = {t}, x = {x}")));
    }
    let r = (x.abs() - k * t).max(0.0);
    let s = t + 1.0;
    let value = (-r * r / (4.0 * lambda * s)).exp();
    if r == 0.0 {
        return Ok(PsiValue {
            value,
            time_derivative: 0.0,
            gradient: 0.0,
            second_derivative: 0.0,
        });
    }
    let time_derivative = value * (r * r / (4.0 * lambda * s * s) + k * r / (2.0 * lambda * s));
    let gradient = -value * r / (2.0 * lambda * s) * x.signum();
    let second_derivative =
        value * (r * r / (4.0 * lambda * lambda * s * s) - 1.0 / (2.0 * lambda * s));
    Ok(PsiValue {
        value,
        time_derivative,
        gradient,
        second_derivative,
    })
}

/// `psi_t - lambda m_+(psi_xx) - K |psi_x|`, nonnegative for a supersolution.
pub fn psi_residual(lambda: f64, k: f64, t: f64, x: f64) -> Result<f64> {
    let p = psi_test(lambda, k, t, x)?;
    Ok(p.time_derivative - lambda * m_plus(p.second_derivative)? - k * p.gradient.abs())
}

/// Smooths `u` with the normalised discrete kernel `(1 - (y/delta)^2)^3` on
/// `|y| < delta`; values beyond the ends are linearly extrapolated.
pub fn mollify(u: &GridField, delta: f64) -> GridField {
    let dx = u.grid.dx();
    let r = (delta / dx).floor() as isize;
    if r < 1 {
        return u.clone();
    }
    let weights: Vec<f64> = (-r..=r)
        .map(|j| {
            let y = j as f64 * dx / delta;
            (1.0 - y * y).max(0.0).powi(3)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let n = u.len() as isize;
    let v = &u.values;
    let at = |i: isize| -> f64 {
        if i < 0 {
            v[0] + i as f64 * (v[1] - v[0])
        } else if i >= n {
            v[(n - 1) as usize] + (i - n + 1) as f64 * (v[(n - 1) as usize] - v[(n - 2) as usize])
        } else {
            v[i as usize]
        }
    };
    let values = (0..n)
        .map(|i| {
            (-r..=r)
                .zip(&weights)
                .map(|(j, w)| w * at(i + j))
                .sum::<f64>()
                / total
        })
        .collect();
    GridField { grid: u.grid, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, b: f64, n: usize) -> Grid1D {
        Grid1D::new(a, b, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(0.0, 1.0, 7).is_err());
        assert!(Grid1D::new(1.0, 1.0, 10).is_err());
        let g = grid(-1.0, 1.0, 9);
        assert_eq!(g.dx(), 0.25);
        assert_eq!(g.x(8), 1.0);
        let h = Grid1D::with_spacing(-4.0, 4.0, 1.0 / 64.0).unwrap();
        assert_eq!(h.n_points, 513);
        assert_eq!(h.dx(), 1.0 / 64.0);
    }

    #[test]
    fn field_rejects_bad_values() {
        let g = grid(0.0, 1.0, 8);
        assert!(GridField::new(g, vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(GridField::new(g, v).is_err());
    }

    #[test]
    fn m_plus_examples() {
        assert_eq!(m_plus(0.0).unwrap(), 0.0);
        assert_eq!(m_plus(-3.5).unwrap(), 0.0);
        assert_eq!(m_plus(2.0).unwrap(), 2.0);
        assert!(m_plus(f64::NAN).is_err());
        assert!(m_plus(f64::INFINITY).is_err());
    }

    #[test]
    fn semiconcavity_examples() {
        let g = grid(-2.0, 2.0, 41);
        let q = GridField::from_fn(g, |x| x * x / 2.0);
        assert!((semiconcavity_constant(&q).unwrap() - 1.0).abs() < 1e-12);
        let c = GridField::constant(g, 3.0);
        assert_eq!(semiconcavity_constant(&c).unwrap(), 0.0);
        let cone = GridField::from_fn(g, |x| -x.abs());
        let d2 = second_differences(&cone.values, g.dx()).unwrap();
        assert!(d2.iter().all(|&v| v <= 1e-12));
        assert_eq!(semiconcavity_constant(&cone).unwrap(), 0.0);
        assert!(semiconcavity_constant_of(&[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let g = grid(-1.0, 1.0, 21);
        assert_eq!(lipschitz_constant(&GridField::constant(g, 1.0)).unwrap(), 0.0);
        let lin = GridField::from_fn(g, |x| 3.0 * x);
        assert!((lipschitz_constant(&lin).unwrap() - 3.0).abs() < 1e-12);
        let mut prev = 0.0;
        for n in [17, 33, 65, 129, 257] {
            let s = GridField::from_fn(grid(-1.0, 1.0, n), f64::sin);
            let l = lipschitz_constant(&s).unwrap();
            assert!(l > prev && l < 1.0);
            prev = l;
        }
        assert!(prev > 0.999);
        assert!(lipschitz_constant_of(&[1.0], 0.1).is_err());
    }

    #[test]
    fn cone_saturates_interpolation_bound() {
        let g = grid(-2.0, 2.0, 81);
        let cone = GridField::from_fn(g, |x| (1.0 - x.abs()).max(0.0));
        let l1 = lp_norm(&cone, 1.0).unwrap();
        assert!((l1 - 1.0).abs() < 1e-12);
        let b = interp_sup_bound(1.0, lipschitz_constant(&cone).unwrap(), l1, 1).unwrap();
        assert!((b - 1.0).abs() < 1e-12);
        let cone2 = cone.map(|v| 2.0 * v);
        let b2 = interp_sup_bound(
            1.0,
            lipschitz_constant(&cone2).unwrap(),
            lp_norm(&cone2, 1.0).unwrap(),
            1,
        )
        .unwrap();
        assert!((b2 - 2.0).abs() < 1e-12);
        assert_eq!(interp_sup_bound(2.0, 1.0, 0.0, 1).unwrap(), 0.0);
        assert!(interp_sup_bound(0.5, 1.0, 1.0, 1).is_err());
        assert!(interp_sup_bound(2.0, -1.0, 1.0, 1).is_err());
        assert!(interp_sup_bound(2.0, 1.0, -1.0, 1).is_err());
    }

    #[test]
    fn lp_norm_matches_closed_form() {
        // |x| on [-1,1]: integral of |x|^p = 2/(p+1)
        let g = grid(-1.0, 1.0, 11);
        let w = GridField::from_fn(g, f64::abs);
        let p: f64 = 3.0;
        let exact = (2.0 / (p + 1.0)).powf(1.0 / p);
        assert!((lp_norm(&w, p).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn psi_examples() {
        let v = psi_test(1.0, 2.0, 0.5, 0.7).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.gradient, 0.0);
        let far = psi_test(1.0, 1.0, 0.0, 200.0).unwrap();
        assert!(far.value < 1e-300);
        assert!(psi_test(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(psi_test(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn psi_derivatives_match_finite_differences() {
        let (lam, k) = (0.7, 1.3);
        for &(t, x) in &[(0.2, 2.5), (0.9, -3.1), (0.0, 1.2), (1.5, -4.0)] {
            let p = psi_test(lam, k, t, x).unwrap();
            let h = 1e-5;
            let f = |t: f64, x: f64| psi_test(lam, k, t, x).unwrap().value;
            let dx = (f(t, x + h) - f(t, x - h)) / (2.0 * h);
            let dxx = (f(t, x + h) - 2.0 * f(t, x) + f(t, x - h)) / (h * h);
            let dt = (f(t + h, x) - f((t - h).max(0.0), x)) / (t + h - (t - h).max(0.0));
            assert!((p.gradient - dx).abs() < 1e-7, "{t} {x}");
            assert!((p.second_derivative - dxx).abs() < 1e-4, "{t} {x}");
            assert!((p.time_derivative - dt).abs() < 1e-4, "{t} {x}");
        }
    }

    #[test]
    fn time_grid_helpers() {
        let tg = TimeGrid::with_max_dt(1.0, 0.03, 4).unwrap();
        assert_eq!(tg.n_steps, 36);
        assert!(tg.dt() <= 0.03);
        assert_eq!(tg.time(36), 1.0);
        let s = tg.slice(9, 18).unwrap();
        assert_eq!(s.n_steps, 9);
        assert!((s.t_start - 0.25).abs() < 1e-15);
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn interpolation_reproduces_nodes_and_lines() {
        let g = grid(-1.0, 1.0, 21);
        let f = GridField::from_fn(g, |x| 2.0 * x + 1.0);
        for i in 0..21 {
            assert_eq!(f.interpolate(g.x(i)), f.values[i]);
        }
        assert!((f.interpolate(0.333) - 1.666).abs() < 1e-12);
        assert!((f.interpolate(1.5) - 4.0).abs() < 1e-12);
        assert_eq!(f.interpolate_zero(1.5), 0.0);
    }

    #[test]
    fn mollify_preserves_affine() {
        let g = grid(-1.0, 1.0, 41);
        let f = GridField::from_fn(g, |x| 0.5 * x - 2.0);
        let m = mollify(&f, 2.0 * g.dx());
        for (a, b) in m.values.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
