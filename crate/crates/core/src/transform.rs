//! Change of variables that removes the common noise: in the frame moving
//! with `s_t = sqrt(2 beta) W_t` the value is `u~(x) = u(x + s)` and the
//! density is `m~ = (Id - s)# m`. The data seen in that frame are the
//! original data translated by `s`, with measure arguments pushed forward
//! by `+s`.

use crate::error::{MfgError, Result};
use crate::grid::{Grid1D, GridField};
use crate::hamiltonian::{Coupling, Diffusion, Hamiltonian};
use crate::noise_tree::{NodeId, NoiseTree, TreeField};

/// Largest mass loss that `shift_density` repairs by renormalising.
pub const MAX_SHIFT_MASS_LOSS: f64 = 1e-6;

/// `x -> m(x + s)` on the same grid, i.e. the push-forward of `m` by `-s`.
/// Integer multiples of `dx` shift indices exactly; other shifts use cubic
/// convolution with zero extension, clip undershoot at zero and renormalise
/// the mass.
pub fn shift_density(m: &GridField, s: f64) -> Result<GridField> {
    if s == 0.0 {
        return Ok(m.clone());
    }
    let g = m.grid;
    let n = g.n_points;
    let dx = g.dx();
    let steps = s / dx;
    let values: Vec<f64> = if (steps - steps.round()).abs() < 1e-9 {
        let k = steps.round() as i64;
        (0..n as i64)
            .map(|i| {
                let j = i + k;
                if (0..n as i64).contains(&j) {
                    m.values[j as usize]
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        let at = |j: i64| {
            if (0..n as i64).contains(&j) {
                m.values[j as usize]
            } else {
                0.0
            }
        };
        let base = steps.floor();
        let t = steps - base;
        let w = cubic_weights(t);
        (0..n as i64)
            .map(|i| {
                let j = i + base as i64;
                let v = w[0] * at(j - 1) + w[1] * at(j) + w[2] * at(j + 1) + w[3] * at(j + 2);
                v.max(0.0)
            })
            .collect()
    };
    let before = m.mass();
    let shifted = GridField { grid: g, values };
    if before == 0.0 {
        return Ok(shifted);
    }
    let loss = (before - shifted.mass()) / before;
    if loss > MAX_SHIFT_MASS_LOSS {
        return Err(MfgError::DomainTooSmall { mass_loss: loss });
    }
    if loss == 0.0 {
        return Ok(shifted);
    }
    let scale = before / shifted.mass();
    Ok(shifted.map(|v| v * scale))
}

/// Cubic convolution weights (Keys, `a = -1/2`) for the nodes `-1, 0, 1, 2`
/// at fractional offset `t`.
fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// `(Id + s)# m` represented exactly on the grid translated by `s`.
pub fn push_forward(m: &GridField, s: f64) -> GridField {
    if s == 0.0 {
        return m.clone();
    }
    GridField {
        grid: Grid1D {
            x_min: m.grid.x_min + s,
            x_max: m.grid.x_max + s,
            n_points: m.grid.n_points,
        },
        values: m.values.clone(),
    }
}

/// Data of one node in the moving frame, frozen at time `t`.
#[derive(Debug, Clone)]
pub struct ShiftedData {
    pub node: NodeId,
    pub shift: f64,
    pub t: f64,
    /// `H(t, x + s, p)` without the running coupling.
    pub hamiltonian: Hamiltonian,
    /// `H(t, x + s, p) - F(t, x + s, (Id + s)# m~)`.
    pub hamiltonian_with_running: Hamiltonian,
    pub diffusion: Diffusion,
    pub running: GridField,
}

/// `F~(t, ., m~) = F(t, . + s, (Id + s)# m~)` on the grid of `m_tilde`.
pub fn tilde_running(coupling: &Coupling, t: f64, m_tilde: &GridField, s: f64) -> GridField {
    let pushed = push_forward(m_tilde, s);
    GridField::from_fn(m_tilde.grid, |x| coupling.running(t, x + s, &pushed))
}

/// `G~(., m~) = G(. + s, (Id + s)# m~)` on the grid of `m_tilde`.
pub fn tilde_terminal(coupling: &Coupling, m_tilde: &GridField, s: f64) -> GridField {
    let pushed = push_forward(m_tilde, s);
    GridField::from_fn(m_tilde.grid, |x| coupling.terminal(x + s, &pushed))
}

/// Wraps the original data for `node` at time `t` given the frame density.
pub fn build_node_data(
    tree: &NoiseTree,
    node: NodeId,
    t: f64,
    hamiltonian: &Hamiltonian,
    diffusion: &Diffusion,
    coupling: &Coupling,
    m_tilde: &GridField,
) -> ShiftedData {
    let s = tree.shift(node);
    let running = tilde_running(coupling, t, m_tilde, s);
    let frozen = hamiltonian.frozen_at(t);
    ShiftedData {
        node,
        shift: s,
        t,
        hamiltonian: frozen.shifted(s, None),
        hamiltonian_with_running: frozen.shifted(s, Some(running.clone())),
        diffusion: diffusion.frozen_at(t).shifted(s),
        running,
    }
}

/// Value and density flows on the tree, indexed by time level. `u[k]` is
/// carried by level `min(k / s, N)` and `m[k]` by level `min(k / s, N - 1)`
/// where `s` is the number of steps per slab.
#[derive(Debug, Clone)]
pub struct TreeFlow {
    pub steps_per_slab: usize,
    pub u: Vec<TreeField>,
    pub m: Vec<TreeField>,
}

fn map_flow(
    tree: &NoiseTree,
    flow: &TreeFlow,
    sign: f64,
) -> Result<TreeFlow> {
    let shift = |level: usize, j: usize| sign * tree.shift(NodeId::new(level, j));
    let u = flow
        .u
        .iter()
        .map(|tf| {
            let fields = tf
                .fields
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    let s = shift(tf.level, j);
                    if s == 0.0 {
                        f.clone()
                    } else {
                        GridField::from_fn(f.grid, |x| f.interpolate(x - s))
                    }
                })
                .collect();
            TreeField {
                level: tf.level,
                fields,
            }
        })
        .collect();
    let mut m = Vec::with_capacity(flow.m.len());
    for tf in &flow.m {
        let mut fields = Vec::with_capacity(tf.fields.len());
        for (j, f) in tf.fields.iter().enumerate() {
            fields.push(shift_density(f, -shift(tf.level, j))?);
        }
        m.push(TreeField {
            level: tf.level,
            fields,
        });
    }
    Ok(TreeFlow {
        steps_per_slab: flow.steps_per_slab,
        u,
        m,
    })
}

/// `u_t(x) = u~_t(x - s_t)` and `m_t = (Id + s_t)# m~_t` node by node.
pub fn to_original(tree: &NoiseTree, flow: &TreeFlow) -> Result<TreeFlow> {
    map_flow(tree, flow, 1.0)
}

/// Inverse of [`to_original`].
pub fn to_tilde(tree: &NoiseTree, flow: &TreeFlow) -> Result<TreeFlow> {
    map_flow(tree, flow, -1.0)
}

/// `dM / dW` at every node of the jump level: the increment ratio standing in
/// for the martingale integrand.
pub fn increment_ratio(tree: &NoiseTree, dm: &TreeField) -> TreeField {
    let fields = dm
        .fields
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let inc = tree.node(NodeId::new(dm.level, j)).increment;
            f.map(|v| if inc != 0.0 { v / inc } else { 0.0 })
        })
        .collect();
    TreeField {
        level: dm.level,
        fields,
    }
}

/// Centre of mass of a density.
pub fn center_of_mass(m: &GridField) -> f64 {
    crate::fokker_planck::mean(m)
}
