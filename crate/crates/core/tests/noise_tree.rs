use mfg_core::grid::{Grid1D, GridField};
use mfg_core::noise_tree::*;

#[test]
fn moments_at_every_level() {
    for n in 1..=10 {
        let tree = build_tree(n, 1.5, 0.3).unwrap();
        for level in 0..=n {
            let (m1, m2) = tree.moments(level);
            let total: f64 = tree.levels[level].iter().map(|v| v.probability).sum();
            assert!((total - 1.0).abs() <= 1e-12);
            assert!(m1.abs() <= 1e-12);
            assert!((m2 - level as f64 * tree.dt_noise).abs() <= 1e-12);
        }
    }
}

#[test]
fn linear_fields_are_martingales() {
    let tree = build_tree(6, 1.0, 0.2).unwrap();
    let g = Grid1D::new(-1.0, 1.0, 21).unwrap();
    for level in 1..=6 {
        let field = TreeField::new(
            level,
            tree.node_ids(level)
                .map(|id| {
                    let w = tree.node(id).w_value;
                    GridField::from_fn(g, |x| 2.0 * w + x * w - 0.5)
                })
                .collect(),
        )
        .unwrap();
        let parent = conditional_expectation(&tree, &field).unwrap();
        for id in tree.node_ids(level - 1) {
            let w = tree.node(id).w_value;
            let exact = GridField::from_fn(g, |x| 2.0 * w + x * w - 0.5);
            assert!(parent.get(id).sup_distance_on(&exact, -1.0, 1.0) <= 1e-12);
        }
        let dm = martingale_increments(&field, &parent).unwrap();
        assert!(martingale_residual_of(&dm) <= 1e-12);
    }
}

#[test]
fn parents_point_backward() {
    let tree = build_tree(5, 1.0, 0.0).unwrap();
    for level in 1..=5 {
        for id in tree.node_ids(level) {
            let node = tree.node(id);
            let parent = id.parent().unwrap();
            assert_eq!(node.parent, Some(parent.index));
            assert!(parent.children().contains(&id));
            let pw = tree.node(parent).w_value;
            assert_eq!(node.w_value, pw + node.increment);
        }
    }
}

#[test]
fn projection_error_decays() {
    let coarse = project_path_error(4, 1000, 3).unwrap();
    let fine = project_path_error(8, 1000, 3).unwrap();
    assert!(fine < coarse, "{fine} vs {coarse}");
    assert_eq!(project_path_error(4, 1000, 3).unwrap(), coarse);
}

#[test]
fn manifest_serialises() {
    let tree = build_tree(2, 1.0, 0.5).unwrap();
    let json = serde_json::to_value(tree.manifest()).unwrap();
    assert_eq!(json["levels"].as_array().unwrap().len(), 3);
    assert_eq!(json["levels"][2]["w_values"].as_array().unwrap().len(), 4);
}

#[test]
fn cap_is_enforced() {
    assert!(build_tree_with_cap(4, 1.0, 0.0, 8).is_err());
    assert!(build_tree_with_cap(3, 1.0, 0.0, 8).is_ok());
    assert!(build_tree(15, 1.0, 0.0).is_err());
}
