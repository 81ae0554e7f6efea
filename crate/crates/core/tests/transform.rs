use mfg_core::fokker_planck::{gaussian_density, mean, wasserstein2_1d};
use mfg_core::grid::{Grid1D, GridField};
use mfg_core::hamiltonian::{check_structure, Diffusion, SampleLattice};
use mfg_core::noise_tree::{build_tree, NodeId};
use mfg_core::problems::*;
use mfg_core::transform::*;

fn grid() -> Grid1D {
    Grid1D::symmetric(4.0, 257).unwrap()
}

#[test]
fn round_trip_of_smooth_density() {
    let g = grid();
    let m = gaussian_density(g, 0.1, 0.5);
    for s in [0.37, -0.81, 1.3] {
        let back = shift_density(&shift_density(&m, s).unwrap(), -s).unwrap();
        let l1: f64 = m.values.iter().zip(&back.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.dx();
        assert!(l1 <= 1e-3, "s {s}: {l1}");
    }
}

#[test]
fn shifting_moves_mass_by_s() {
    let g = grid();
    let m = gaussian_density(g, 0.0, 0.5);
    for s in [0.2, -0.45, 0.9] {
        let moved = shift_density(&m, s).unwrap();
        assert!((moved.mass() - m.mass()).abs() <= 1e-12);
        assert!((wasserstein2_1d(&moved, &m).unwrap() - s.abs()).abs() <= 2.0 * g.dx());
        assert!((mean(&moved) - (mean(&m) - s)).abs() <= 2.0 * g.dx());
    }
}

#[test]
fn push_forward_is_exact_translation() {
    let g = grid();
    let m = gaussian_density(g, 0.0, 0.5);
    let p = push_forward(&m, 0.3);
    assert_eq!(p.values, m.values);
    assert!((mean(&p) - mean(&m) - 0.3).abs() <= 1e-12);
}

#[test]
fn root_data_equal_the_deterministic_data() {
    let g = grid();
    let tree = build_tree(3, 1.0, 0.2).unwrap();
    let coupling = convolution_coupling(0.5, 1.0, 1.0, |x| 0.25 * x * x);
    let m = gaussian_density(g, 0.0, 0.5);
    let h = transport_quadratic();
    let d = build_node_data(&tree, NodeId::new(0, 0), 0.0, &h, &Diffusion::constant(0.3), &coupling, &m);
    assert_eq!(d.shift, 0.0);
    assert_eq!(d.running.values, coupling.running_field(0.0, &m, 0.0).values);
    for &x in &[-1.0, 0.0, 0.7] {
        for &p in &[-2.0, 0.5] {
            assert_eq!(d.hamiltonian.eval(0.0, x, p), h.eval(0.0, x, p));
        }
    }
}

#[test]
fn m_free_terminal_is_translated() {
    let g = grid();
    let coupling = mfg_core::hamiltonian::Coupling::decoupled(smooth_profile);
    let m = gaussian_density(g, 0.0, 0.5);
    let s = 0.4;
    let gt = tilde_terminal(&coupling, &m, s);
    for i in 0..g.n_points {
        assert_eq!(gt.values[i], smooth_profile(g.x(i) + s));
    }
}

#[test]
fn convolution_commutes_with_the_shift() {
    let g = grid();
    let width = 0.5;
    let coupling = convolution_coupling(width, 1.0, 0.0, |_| 0.0);
    let m_tilde = gaussian_density(g, -0.3, 0.4);
    let f = tilde_running(&coupling, 0.0, &m_tilde, 0.55);
    for i in (0..g.n_points).step_by(8) {
        assert!((f.values[i] - convolve(&m_tilde, g.x(i), width)).abs() <= 1e-6);
    }
}

#[test]
fn shifted_hamiltonian_keeps_its_constants() {
    let g = grid();
    let tree = build_tree(3, 1.0, 0.3).unwrap();
    let h = transport_quadratic();
    let coupling = convolution_coupling(0.5, 1.0, 1.0, |_| 0.0);
    let m = gaussian_density(g, 0.0, 0.5);
    let lattice = SampleLattice::uniform(1.0, g.x_min, g.x_max, 3.0, 17);
    assert!(check_structure(&h, &lattice).passed());
    for id in tree.node_ids(3) {
        let d = build_node_data(&tree, id, 0.5, &h, &Diffusion::zero(), &coupling, &m);
        assert_eq!(d.hamiltonian.lambda0, h.lambda0);
        assert_eq!(d.hamiltonian.c0, h.c0);
        assert!(check_structure(&d.hamiltonian, &lattice).passed(), "{id}");
    }
}

#[test]
fn increment_ratio_divides_by_the_step() {
    let g = grid();
    let tree = build_tree(2, 1.0, 0.0).unwrap();
    let dm = mfg_core::noise_tree::TreeField::new(
        1,
        tree.node_ids(1).map(|id| GridField::constant(g, 2.0 * tree.node(id).increment)).collect(),
    )
    .unwrap();
    let r = increment_ratio(&tree, &dm);
    assert!(r.fields.iter().all(|f| f.values.iter().all(|&v| (v - 2.0).abs() <= 1e-12)));
}
