//! Built-in problem library used by the command line driver, the tests and
//! the benches.

use crate::bshjb::BshjbProblem;
use crate::error::{MfgError, Result};
use crate::fokker_planck::gaussian_density;
use crate::grid::{Grid1D, GridField, TimeGrid};
use crate::hamiltonian::{Coupling, DependenceMode, Diffusion, Hamiltonian, MeasureDependence};
use crate::mfg::{FixpointConfig, MfgProblem};
use crate::noise_tree::{build_tree, NodeId, NoiseTree};

/// `p^2 / 2`.
pub fn quadratic() -> Hamiltonian {
    Hamiltonian::quadratic()
}

/// `sqrt(1 + p^2) - 1`, uniformly convex on `|p| <= p_max`.
pub fn relativistic(p_max: f64) -> Hamiltonian {
    Hamiltonian::new(
        |_, _, p| (1.0 + p * p).sqrt() - 1.0,
        |_, _, p| p / (1.0 + p * p).sqrt(),
        |_, _, _| 0.0,
        1.0,
        0.0,
        (1.0 + p_max * p_max).powf(-1.5),
    )
    .expect("valid constants")
}

/// `p^2 / 2 + c`.
pub fn quadratic_plus(c: f64) -> Hamiltonian {
    Hamiltonian::new(
        move |_, _, p| 0.5 * p * p + c,
        |_, _, p| p,
        |_, _, _| 0.0,
        1.0,
        1.0 + c.abs(),
        1.0,
    )
    .expect("valid constants")
}

/// `p^2 / 2 + sin(x) p`.
pub fn transport_quadratic() -> Hamiltonian {
    Hamiltonian::new(
        |_, x, p| 0.5 * p * p + x.sin() * p,
        |_, x, p| p + x.sin(),
        |_, x, p| x.cos() * p,
        1.0,
        1.0,
        1.0,
    )
    .expect("valid constants")
}

/// `1 / (1 + |x|) - 1`: bounded, Lipschitz, semiconcave, with a concave kink at 0.
pub fn kinked(x: f64) -> f64 {
    1.0 / (1.0 + x.abs()) - 1.0
}

/// `cos(x)`.
pub fn smooth_profile(x: f64) -> f64 {
    x.cos()
}

/// `min(x^2, 1)`.
pub fn capped_square(x: f64) -> f64 {
    (x * x).min(1.0)
}

/// `exp(-x^2)`.
pub fn bump(x: f64) -> f64 {
    (-x * x).exp()
}

/// Unit-mass Gaussian kernel of standard deviation `width`.
pub fn gaussian_kernel(width: f64) -> impl Fn(f64) -> f64 + Copy {
    let c = 1.0 / (width * (2.0 * std::f64::consts::PI).sqrt());
    move |z| c * (-0.5 * z * z / (width * width)).exp()
}

/// `(rho * m)(x)` by the midpoint rule on `m`'s grid.
pub fn convolve(m: &GridField, x: f64, width: f64) -> f64 {
    let rho = gaussian_kernel(width);
    let dx = m.grid.dx();
    m.values
        .iter()
        .enumerate()
        .map(|(i, v)| rho(x - m.grid.x(i)) * v * dx)
        .sum()
}

/// `F = kappa (rho * m)`, `G = g(x) + kappa_g (rho * m)`.
pub fn convolution_coupling(
    width: f64,
    kappa: f64,
    kappa_g: f64,
    g: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Coupling {
    Coupling::new(
        move |_, x, m| kappa * convolve(m, x, width),
        move |x, m| g(x) + kappa_g * convolve(m, x, width),
        kappa >= 0.0 && kappa_g >= 0.0,
    )
}

/// Deterministic one-node problem description used by the HJB drivers.
#[derive(Debug, Clone)]
pub struct HjbCase {
    pub name: &'static str,
    pub hamiltonian: Hamiltonian,
    pub diffusion: Diffusion,
    pub terminal: GridField,
    pub horizon: f64,
}

pub const HJB_CASES: &[&str] = &["affine", "heat", "hopf-lax", "kinked", "transport", "relativistic"];

pub fn hjb_case(name: &str, grid: Grid1D, horizon: f64) -> Result<HjbCase> {
    let (hamiltonian, diffusion, g): (Hamiltonian, Diffusion, fn(f64) -> f64) = match name {
        "affine" => (quadratic(), Diffusion::zero(), |x| x),
        "heat" => (Hamiltonian::zero(), Diffusion::from_a(0.5), bump),
        "hopf-lax" => (quadratic(), Diffusion::zero(), capped_square),
        "kinked" => (quadratic_plus(1.0), Diffusion::zero(), kinked),
        "transport" => (
            transport_quadratic(),
            Diffusion::new(|_, x: f64| 0.3 * (0.5 * x).sin(), 0.15),
            smooth_profile,
        ),
        "relativistic" => (relativistic(4.0), Diffusion::zero(), capped_square),
        other => {
            return Err(MfgError::Configuration(format!(
                "unknown HJB problem '{other}' (known: {})",
                HJB_CASES.join(", ")
            )))
        }
    };
    Ok(HjbCase {
        name: HJB_CASES.iter().find(|n| **n == name).copied().unwrap_or("custom"),
        hamiltonian,
        diffusion,
        terminal: GridField::from_fn(grid, g),
        horizon,
    })
}

/// `(H1, G1)` and `(H2, G2)` with `H1 <= H2` and `G1 >= G2`.
pub const COMPARISON_PAIRS: &[&str] = &["terminal-shift", "hamiltonian-shift", "relativistic-vs-quadratic"];

/// Builds a comparison pair on a tree whose terminal data depend on the leaf
/// through `g(x + sqrt(2 beta) W_T)`.
pub fn comparison_pair(
    name: &str,
    tree: &NoiseTree,
    grid: Grid1D,
    tgrid: TimeGrid,
) -> Result<(BshjbProblem, BshjbProblem)> {
    let (h1, h2, c1) = match name {
        "terminal-shift" => (quadratic(), quadratic(), 0.3),
        "hamiltonian-shift" => (quadratic_plus(-0.1), quadratic(), 0.0),
        "relativistic-vs-quadratic" => (relativistic(4.0), quadratic(), 0.0),
        other => {
            return Err(MfgError::Configuration(format!(
                "unknown comparison pair '{other}' (known: {})",
                COMPARISON_PAIRS.join(", ")
            )))
        }
    };
    let build = |h: Hamiltonian, c: f64| {
        BshjbProblem::from_fn(
            tree.clone(),
            grid,
            tgrid,
            0.0,
            |_| crate::bshjb::SlabData {
                hamiltonian: h.clone(),
                diffusion: Diffusion::zero(),
            },
            |leaf: NodeId| {
                let s = tree.shift(leaf);
                GridField::from_fn(grid, |x| kinked(x + s) + c)
            },
        )
    };
    Ok((build(h1, c1)?, build(h2, 0.0)?))
}

/// `(p^2/2, g)` against `((1 + delta) p^2/2, g + delta sin)` with
/// `g(x + sqrt(2 beta) W_T)` at the leaves.
pub fn stability_pair(
    tree: &NoiseTree,
    grid: Grid1D,
    tgrid: TimeGrid,
    delta: f64,
) -> Result<(BshjbProblem, BshjbProblem)> {
    let build = |h: Hamiltonian, c: f64| {
        BshjbProblem::from_fn(
            tree.clone(),
            grid,
            tgrid,
            0.0,
            |_| crate::bshjb::SlabData {
                hamiltonian: h.clone(),
                diffusion: Diffusion::zero(),
            },
            |leaf: NodeId| {
                let s = tree.shift(leaf);
                GridField::from_fn(grid, |x| smooth_profile(x + s) + c * x.sin())
            },
        )
    };
    let k = 1.0 + delta;
    let scaled = Hamiltonian::new(
        move |_, _, p| 0.5 * k * p * p,
        move |_, _, p| k * p,
        |_, _, _| 0.0,
        1.0,
        1.0,
        k,
    )?;
    Ok((build(quadratic(), 0.0)?, build(scaled, delta)?))
}

/// Quadratic Hamiltonian, no idiosyncratic noise, `G(x, w) = g(x + sqrt(2 beta) W_T)`.
pub fn shifted_terminal_bshjb(
    tree: &NoiseTree,
    grid: Grid1D,
    tgrid: TimeGrid,
    g: fn(f64) -> f64,
) -> Result<BshjbProblem> {
    BshjbProblem::from_fn(
        tree.clone(),
        grid,
        tgrid,
        0.0,
        |_| crate::bshjb::SlabData {
            hamiltonian: quadratic(),
            diffusion: Diffusion::zero(),
        },
        |leaf| {
            let s = tree.shift(leaf);
            GridField::from_fn(grid, |x| g(x + s))
        },
    )
}

/// Parameters of the monotone separated test problem.
#[derive(Debug, Clone, Copy)]
pub struct MonotoneParams {
    pub horizon: f64,
    pub beta: f64,
    pub n_levels: usize,
    pub n_points: usize,
    pub half_width: f64,
    pub n_steps: usize,
    pub kernel_width: f64,
    pub kappa: f64,
    pub sigma: f64,
}

impl Default for MonotoneParams {
    fn default() -> Self {
        MonotoneParams {
            horizon: 0.5,
            beta: 0.2,
            n_levels: 4,
            n_points: 256,
            half_width: 4.0,
            n_steps: 200,
            kernel_width: 0.5,
            kappa: 1.0,
            sigma: 0.3,
        }
    }
}

/// Monotone separated problem: `H = p^2/2`, degenerate diffusion
/// `sigma(x) = s sin(x / 2)`, Gaussian-kernel couplings, quadratic target.
pub fn monotone_separated(p: MonotoneParams, fixpoint: FixpointConfig) -> Result<MfgProblem> {
    let grid = Grid1D::symmetric(p.half_width, p.n_points)?;
    let tree = build_tree(p.n_levels, p.horizon, p.beta)?;
    let tgrid = TimeGrid::new(p.horizon, p.n_steps)?;
    let sigma = p.sigma;
    Ok(MfgProblem {
        hamiltonian: quadratic(),
        diffusion: Diffusion::new(move |_, x| sigma * (0.5 * x).sin(), 0.5 * sigma),
        coupling: convolution_coupling(p.kernel_width, p.kappa, p.kappa, |x| {
            0.25 * (x - 0.5).powi(2)
        }),
        dependence: MeasureDependence {
            mode: DependenceMode::Separated,
            lipschitz_in_d2: p.kappa * gaussian_kernel(p.kernel_width)(p.kernel_width)
                / p.kernel_width,
        },
        m0: gaussian_density(grid, -0.5, 0.4),
        tree,
        tgrid,
        fixpoint,
        hjb_epsilon: 0.0,
        gradient_bound: Some(4.0),
    })
}

/// Same layout with `F = 0` and an `m`-independent terminal cost.
pub fn decoupled(p: MonotoneParams, fixpoint: FixpointConfig) -> Result<MfgProblem> {
    let mut prob = monotone_separated(p, fixpoint)?;
    prob.coupling = Coupling::decoupled(|x| 0.25 * (x - 0.5).powi(2));
    prob.dependence = MeasureDependence {
        mode: DependenceMode::None,
        lipschitz_in_d2: 0.0,
    };
    Ok(prob)
}

pub const MFG_CASES: &[&str] = &["monotone", "decoupled"];

pub fn mfg_case(name: &str, p: MonotoneParams, fixpoint: FixpointConfig) -> Result<MfgProblem> {
    match name {
        "monotone" => monotone_separated(p, fixpoint),
        "decoupled" => decoupled(p, fixpoint),
        other => Err(MfgError::Configuration(format!(
            "unknown MFG problem '{other}' (known: {})",
            MFG_CASES.join(", ")
        ))),
    }
}
