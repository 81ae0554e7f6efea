//! Problem data (Hamiltonian, diffusion, mean-field coupling), checks of the
//! structural inequalities on a sample lattice, and numerical Legendre
//! transforms.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::grid::GridField;

/// `(t, x, p) -> value`
pub type TxpFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, x) -> value`
pub type TxFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `(t, x, m) -> value`
pub type RunningCouplingFn = Arc<dyn Fn(f64, f64, &GridField) -> f64 + Send + Sync>;
/// `(x, m) -> value`
pub type TerminalCouplingFn = Arc<dyn Fn(f64, &GridField) -> f64 + Send + Sync>;

/// A Hamiltonian `H(t, x, p)`, convex in `p`, with its partial derivatives
/// and the constants `lambda0`, `c0` of the structural inequalities.
#[derive(Clone)]
pub struct Hamiltonian {
    pub eval: TxpFn,
    pub grad_p: TxpFn,
    pub grad_x: TxpFn,
    pub lambda0: f64,
    pub c0: f64,
    /// Lower bound on `D_pp H` over the range of gradients in use.
    pub convexity_modulus: f64,
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hamiltonian")
            .field("lambda0", &self.lambda0)
            .field("c0", &self.c0)
            .field("convexity_modulus", &self.convexity_modulus)
            .finish_non_exhaustive()
    }
}

impl Hamiltonian {
    pub fn new(
        eval: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        grad_p: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        lambda0: f64,
        c0: f64,
        convexity_modulus: f64,
    ) -> Result<Self> {
        Self::from_arcs(
            Arc::new(eval),
            Arc::new(grad_p),
            Arc::new(grad_x),
            lambda0,
            c0,
            convexity_modulus,
        )
    }

    pub fn from_arcs(
        eval: TxpFn,
        grad_p: TxpFn,
        grad_x: TxpFn,
        lambda0: f64,
        c0: f64,
        convexity_modulus: f64,
    ) -> Result<Self> {
        if !(lambda0 > 0.0) {
            return Err(MfgError::invalid(format!("lambda0 must be > 0 (got {lambda0})")));
        }
        if !(c0 >= 0.0) {
            return Err(MfgError::invalid(format!("C0 must be >= 0 (got {c0})")));
        }
        if !(convexity_modulus > 0.0) {
            return Err(MfgError::invalid(format!(
                "convexity modulus must be > 0 (got {convexity_modulus})"
            )));
        }
        Ok(Hamiltonian {
            eval,
            grad_p,
            grad_x,
            lambda0,
            c0,
            convexity_modulus,
        })
    }

    /// `p^2/2`.
    pub fn quadratic() -> Self {
        Self::new(|_, _, p| 0.5 * p * p, |_, _, p| p, |_, _, _| 0.0, 1.0, 1.0, 1.0)
            .expect("valid constants")
    }

    /// The identically zero Hamiltonian (pure diffusion). It is not uniformly
    /// convex; the modulus is a nominal placeholder and `check_structure` flags it.
    pub fn zero() -> Self {
        Self::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0, 1.0, 0.0, 1e-300)
            .expect("valid constants")
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, p: f64) -> f64 {
        (self.eval)(t, x, p)
    }

    #[inline]
    pub fn grad_p(&self, t: f64, x: f64, p: f64) -> f64 {
        (self.grad_p)(t, x, p)
    }

    #[inline]
    pub fn grad_x(&self, t: f64, x: f64, p: f64) -> f64 {
        (self.grad_x)(t, x, p)
    }

    pub fn with_constants(mut self, lambda0: f64, c0: f64) -> Result<Self> {
        if !(lambda0 > 0.0) || !(c0 >= 0.0) {
            return Err(MfgError::invalid("lambda0 must be > 0 and C0 >= 0"));
        }
        self.lambda0 = lambda0;
        self.c0 = c0;
        Ok(self)
    }

    /// `H(t, x + s, p) - f(x)`: the data seen in a frame translated by `s`,
    /// minus a frozen running cost `f` interpolated from a grid field.
    pub fn shifted(&self, s: f64, running: Option<GridField>) -> Hamiltonian {
        let (e, gp, gx) = (self.eval.clone(), self.grad_p.clone(), self.grad_x.clone());
        let (r1, r2) = (running.clone(), running);
        Hamiltonian {
            eval: Arc::new(move |t, x, p| {
                e(t, x + s, p) - r1.as_ref().map_or(0.0, |f| f.interpolate(x))
            }),
            grad_p: Arc::new(move |t, x, p| gp(t, x + s, p)),
            grad_x: Arc::new(move |t, x, p| {
                let df = r2.as_ref().map_or(0.0, |f| {
                    let h = f.grid.dx();
                    (f.interpolate(x + 0.5 * h) - f.interpolate(x - 0.5 * h)) / h
                });
                gx(t, x + s, p) - df
            }),
            ..self.clone()
        }
    }

    /// `H(t_frozen, x, p)`: the Hamiltonian with its time argument frozen.
    pub fn frozen_at(&self, t_frozen: f64) -> Hamiltonian {
        let (e, gp, gx) = (self.eval.clone(), self.grad_p.clone(), self.grad_x.clone());
        Hamiltonian {
            eval: Arc::new(move |_, x, p| e(t_frozen, x, p)),
            grad_p: Arc::new(move |_, x, p| gp(t_frozen, x, p)),
            grad_x: Arc::new(move |_, x, p| gx(t_frozen, x, p)),
            ..self.clone()
        }
    }

    /// `sup |D_p H|` over the given abscissae and `|p| <= p_max`. Convexity
    /// in `p` puts the extremes at `p = +-p_max`.
    pub fn speed_bound(&self, t: f64, xs: &[f64], p_max: f64) -> f64 {
        xs.iter()
            .map(|&x| {
                self.grad_p(t, x, p_max)
                    .abs()
                    .max(self.grad_p(t, x, -p_max).abs())
                    .max(self.grad_p(t, x, 0.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Idiosyncratic diffusion `sigma(t, x)`; the generator coefficient is `a = sigma^2`.
#[derive(Clone)]
pub struct Diffusion {
    pub sigma: TxFn,
    /// Lipschitz bound of `sigma` in `x`.
    pub sigma_lipschitz: f64,
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffusion")
            .field("sigma_lipschitz", &self.sigma_lipschitz)
            .finish_non_exhaustive()
    }
}

impl Diffusion {
    pub fn new(
        sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma_lipschitz: f64,
    ) -> Self {
        Diffusion {
            sigma: Arc::new(sigma),
            sigma_lipschitz,
        }
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0, 0.0)
    }

    pub fn constant(sigma: f64) -> Self {
        Self::new(move |_, _| sigma, 0.0)
    }

    /// Constant diffusion with generator coefficient `a`.
    pub fn from_a(a: f64) -> Self {
        Self::constant(a.max(0.0).sqrt())
    }

    #[inline]
    pub fn sigma(&self, t: f64, x: f64) -> f64 {
        (self.sigma)(t, x)
    }

    #[inline]
    pub fn a(&self, t: f64, x: f64) -> f64 {
        let s = (self.sigma)(t, x);
        s * s
    }

    pub fn a_field(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.a(t, x)).collect()
    }

    pub fn sup_a(&self, t: f64, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| self.a(t, x)).fold(0.0, f64::max)
    }

    pub fn shifted(&self, s: f64) -> Diffusion {
        let sig = self.sigma.clone();
        Diffusion {
            sigma: Arc::new(move |t, x| sig(t, x + s)),
            sigma_lipschitz: self.sigma_lipschitz,
        }
    }

    pub fn frozen_at(&self, t_frozen: f64) -> Diffusion {
        let sig = self.sigma.clone();
        Diffusion {
            sigma: Arc::new(move |_, x| sig(t_frozen, x)),
            sigma_lipschitz: self.sigma_lipschitz,
        }
    }
}

/// Running coupling `F(t, x, m)` and terminal cost `G(x, m)`.
#[derive(Clone)]
pub struct Coupling {
    pub running: RunningCouplingFn,
    pub terminal: TerminalCouplingFn,
    pub declared_monotone: bool,
}

impl fmt::Debug for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coupling")
            .field("declared_monotone", &self.declared_monotone)
            .finish_non_exhaustive()
    }
}

impl Coupling {
    pub fn new(
        running: impl Fn(f64, f64, &GridField) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64, &GridField) -> f64 + Send + Sync + 'static,
        declared_monotone: bool,
    ) -> Self {
        Coupling {
            running: Arc::new(running),
            terminal: Arc::new(terminal),
            declared_monotone,
        }
    }

    /// `F = 0` and `G = g(x)`.
    pub fn decoupled(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(|_, _, _| 0.0, move |x, _| g(x), true)
    }

    #[inline]
    pub fn running(&self, t: f64, x: f64, m: &GridField) -> f64 {
        (self.running)(t, x, m)
    }

    #[inline]
    pub fn terminal(&self, x: f64, m: &GridField) -> f64 {
        (self.terminal)(x, m)
    }

    /// `F(t, x_i + s, m)` at every node of `m`'s grid.
    pub fn running_field(&self, t: f64, m: &GridField, s: f64) -> GridField {
        let g = m.grid;
        GridField::from_fn(g, |x| self.running(t, x + s, m))
    }

    /// `G(x_i + s, m)` at every node of `m`'s grid.
    pub fn terminal_field(&self, m: &GridField, s: f64) -> GridField {
        let g = m.grid;
        GridField::from_fn(g, |x| self.terminal(x + s, m))
    }
}

/// How the data depend on the population measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DependenceMode {
    None,
    Separated,
    GeneralLipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureDependence {
    pub mode: DependenceMode,
    /// Lipschitz constant of `F` and `G` in the Wasserstein-2 distance.
    pub lipschitz_in_d2: f64,
}

/// Sample points `(t, x, p)` used by the structural checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleLattice {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl SampleLattice {
    /// `n` equispaced values per axis on `[0,T] x [x_min,x_max] x [-P,P]`.
    pub fn uniform(horizon: f64, x_min: f64, x_max: f64, p_max: f64, n: usize) -> Self {
        let axis = |a: f64, b: f64| -> Vec<f64> {
            if n == 1 {
                vec![0.5 * (a + b)]
            } else {
                (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
            }
        };
        SampleLattice {
            t: axis(0.0, horizon),
            x: axis(x_min, x_max),
            p: axis(-p_max, p_max),
        }
    }

    /// The default 33 x 33 x 33 lattice.
    pub fn default_for(horizon: f64, x_min: f64, x_max: f64, p_max: f64) -> Self {
        Self::uniform(horizon, x_min, x_max, p_max, 33)
    }

    pub fn len(&self) -> usize {
        self.t.len() * self.x.len() * self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome of one inequality over the whole lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    /// Smallest value of `rhs - lhs` met on the lattice (negative = violated).
    pub worst_margin: f64,
    /// Where the worst margin was found, as `(t, x, p)`.
    pub worst_at: (f64, f64, f64),
    /// Advisory entries are reported but do not decide the overall verdict.
    pub advisory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<CheckEntry>,
    pub lattice_points: usize,
    pub note: String,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().filter(|e| !e.advisory).all(|e| e.passed)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

const CHECK_TOL: f64 = 1e-8;

struct Tracker {
    name: &'static str,
    worst: f64,
    at: (f64, f64, f64),
    advisory: bool,
}

impl Tracker {
    fn new(name: &'static str, advisory: bool) -> Self {
        Tracker {
            name,
            worst: f64::INFINITY,
            at: (f64::NAN, f64::NAN, f64::NAN),
            advisory,
        }
    }

    fn record(&mut self, margin: f64, at: (f64, f64, f64)) {
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.worst {
            self.worst = margin;
            self.at = at;
        }
    }

    fn finish(self) -> CheckEntry {
        CheckEntry {
            name: self.name.to_string(),
            passed: self.worst >= -CHECK_TOL,
            worst_margin: self.worst,
            worst_at: self.at,
            advisory: self.advisory,
        }
    }
}

/// Finite-difference derivatives of `H` at one sample.
struct LocalDerivatives {
    h: f64,
    hp: f64,
    hx: f64,
    hpp: f64,
    hpx: f64,
    hxx: f64,
}

fn local_derivatives(h: &Hamiltonian, t: f64, x: f64, p: f64) -> LocalDerivatives {
    let ep = 1e-5 * p.abs().max(1.0);
    let ex = 1e-5 * x.abs().max(1.0);
    let hp = h.grad_p(t, x, p);
    LocalDerivatives {
        h: h.eval(t, x, p),
        hp,
        hx: h.grad_x(t, x, p),
        hpp: (h.grad_p(t, x, p + ep) - h.grad_p(t, x, p - ep)) / (2.0 * ep),
        hpx: (h.grad_p(t, x + ex, p) - h.grad_p(t, x - ex, p)) / (2.0 * ex),
        hxx: (h.grad_x(t, x + ex, p) - h.grad_x(t, x - ex, p)) / (2.0 * ex),
    }
}

/// Lower bound over `q` and unit `z` of the second structural expression
/// `lambda0 (p H_p - H) + H_pp q^2 + 2 H_px z q + H_xx`, in one dimension.
fn second_order_expression(h: &Hamiltonian, d: &LocalDerivatives, p: f64) -> f64 {
    let base = h.lambda0 * (p * d.hp - d.h) + d.hxx;
    if d.hpp > 0.0 {
        base - d.hpx * d.hpx / d.hpp
    } else if d.hpx.abs() < 1e-12 {
        base
    } else {
        f64::NEG_INFINITY
    }
}

/// Verifies on the lattice: consistency of `grad_p` with `eval`, uniform
/// convexity with the declared modulus, and the two structural inequalities
/// `|D_x H| <= C0 + lambda0 (p D_p H - H)` and
/// `lambda0 (p D_p H - H) + D_pp H q^2 + 2 D_px H z q + D_xx H |z|^2 >= -C0`.
/// The Lagrangian forms `|D_x H*| <= C0 + lambda0 H*` and
/// `D_xx H* <= C0 + lambda0 H*` are spot-checked on a sub-lattice and reported
/// as advisory: they agree with the Hamiltonian forms only up to the constants.
pub fn check_structure(h: &Hamiltonian, lattice: &SampleLattice) -> ValidationReport {
    let mut grad = Tracker::new("grad_p consistency", false);
    let mut convex = Tracker::new("uniform convexity", false);
    let mut first = Tracker::new("first-order inequality", false);
    let mut second = Tracker::new("second-order inequality", false);
    let mut lag_first = Tracker::new("Lagrangian first-order (advisory)", true);
    let mut lag_second = Tracker::new("Lagrangian second-order (advisory)", true);

    for &t in &lattice.t {
        for &x in &lattice.x {
            for &p in &lattice.p {
                let at = (t, x, p);
                let e = 1e-5 * p.abs().max(1.0);
                let fd = (h.eval(t, x, p + e) - h.eval(t, x, p - e)) / (2.0 * e);
                let g = h.grad_p(t, x, p);
                grad.record(1e-5 * g.abs().max(1.0) - (fd - g).abs(), at);

                let c = 1e-3 * p.abs().max(1.0);
                let d2 = (h.eval(t, x, p + c) - 2.0 * h.eval(t, x, p) + h.eval(t, x, p - c))
                    / (c * c);
                convex.record(d2 - h.convexity_modulus * (1.0 - 1e-4), at);

                let d = local_derivatives(h, t, x, p);
                first.record(h.c0 + h.lambda0 * (p * d.hp - d.h) - d.hx.abs(), at);
                second.record(second_order_expression(h, &d, p) + h.c0, at);
            }
        }
    }

    let p_max = lattice.p.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let stride = |v: &Vec<f64>| -> Vec<f64> {
        let k = (v.len() / 5).max(1);
        v.iter().step_by(k).cloned().collect()
    };
    for &t in &stride(&lattice.t) {
        for &x in &stride(&lattice.x) {
            for &p in &stride(&lattice.p) {
                let alpha = h.grad_p(t, x, p);
                let ex = 1e-3 * x.abs().max(1.0);
                let radius = 4.0 * p_max.max(1.0);
                let l = |y: f64| legendre(h, t, y, alpha, radius, 801);
                if let (Ok(l0), Ok(lm), Ok(lp)) = (l(x), l(x - ex), l(x + ex)) {
                    let dl = (lp - lm) / (2.0 * ex);
                    let d2l = (lp - 2.0 * l0 + lm) / (ex * ex);
                    let rhs = h.c0 + h.lambda0 * l0;
                    lag_first.record(rhs - dl.abs(), (t, x, alpha));
                    lag_second.record(rhs - d2l, (t, x, alpha));
                }
            }
        }
    }

    ValidationReport {
        entries: vec![
            grad.finish(),
            convex.finish(),
            first.finish(),
            second.finish(),
            lag_first.finish(),
            lag_second.finish(),
        ],
        lattice_points: lattice.len(),
        note: format!(
            "lattice of {} x {} x {} samples; second derivatives by central differences; the \
             lattice density is a pragmatic default, not a guarantee",
            lattice.t.len(),
            lattice.x.len(),
            lattice.p.len()
        ),
    }
}

/// Smallest `C0` for which both structural inequalities hold on the lattice
/// with the Hamiltonian's `lambda0`.
pub fn calibrate_c0(h: &Hamiltonian, lattice: &SampleLattice) -> f64 {
    let mut c0 = 0.0f64;
    for &t in &lattice.t {
        for &x in &lattice.x {
            for &p in &lattice.p {
                let d = local_derivatives(h, t, x, p);
                c0 = c0.max(d.hx.abs() - h.lambda0 * (p * d.hp - d.h));
                c0 = c0.max(-second_order_expression(h, &d, p));
            }
        }
    }
    c0
}

/// `H*(t, x, alpha) = sup_p (p alpha - H(t, x, p))`, see [`legendre_with_argmax`].
pub fn legendre(
    h: &Hamiltonian,
    t: f64,
    x: f64,
    alpha: f64,
    p_radius: f64,
    n_samples: usize,
) -> Result<f64> {
    legendre_with_argmax(h, t, x, alpha, p_radius, n_samples).map(|(v, _)| v)
}

/// Maximises `p alpha - H` over an `n_samples` lattice on `[-p_radius, p_radius]`
/// and polishes the maximiser with three Newton steps on `D_p H(p) = alpha`.
/// Returns the value and the maximiser.
pub fn legendre_with_argmax(
    h: &Hamiltonian,
    t: f64,
    x: f64,
    alpha: f64,
    p_radius: f64,
    n_samples: usize,
) -> Result<(f64, f64)> {
    if !(p_radius > 0.0) || n_samples < 5 {
        return Err(MfgError::invalid(format!(
            "Legendre lattice needs p_radius > 0 and >= 5 samples (got {p_radius}, {n_samples})"
        )));
    }
    if !alpha.is_finite() {
        return Err(MfgError::invalid("Legendre transform at non-finite alpha"));
    }
    let dp = 2.0 * p_radius / (n_samples - 1) as f64;
    let ps: Vec<f64> = (0..n_samples).map(|k| -p_radius + k as f64 * dp).collect();
    let hs: Vec<f64> = ps.iter().map(|&p| h.eval(t, x, p)).collect();
    let scale = hs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for k in 1..n_samples - 1 {
        let d2 = hs[k + 1] - 2.0 * hs[k] + hs[k - 1];
        if d2 < -1e-10 * scale {
            return Err(MfgError::StructuralAssumption(format!(
                "H is not convex in p near p = {:.6e} at (t, x) = ({t}, {x})",
                ps[k]
            )));
        }
    }
    let (mut kbest, mut best) = (0, f64::NEG_INFINITY);
    for k in 0..n_samples {
        let v = ps[k] * alpha - hs[k];
        if v > best {
            best = v;
            kbest = k;
        }
    }
    if kbest == 0 || kbest == n_samples - 1 {
        return Err(MfgError::RadiusTooSmall {
            p: ps[kbest],
            radius: p_radius,
        });
    }
    let (lo, hi) = (ps[kbest - 1], ps[kbest + 1]);
    let mut p = ps[kbest];
    for _ in 0..3 {
        let g = alpha - h.grad_p(t, x, p);
        let e = 1e-6 * p.abs().max(1.0);
        let hpp = (h.grad_p(t, x, p + e) - h.grad_p(t, x, p - e)) / (2.0 * e);
        if !(hpp > 0.0) {
            break;
        }
        p = (p + g / hpp).clamp(lo, hi);
    }
    let refined = p * alpha - h.eval(t, x, p);
    if refined >= best {
        Ok((refined, p))
    } else {
        Ok((best, ps[kbest]))
    }
}
