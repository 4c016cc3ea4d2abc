//! Sample a point on a fusion surface, move the node there, fuse, and check
//! that the removed members were cancelled.

use cellmorph::engine::{BasisTransform, CellInput, EngineConfig, MorphoStep, Run};
use cellmorph::placement::{placement_for, sample_surface, PlacementConstraint, PlacementRequest, Region};
use cellmorph::{CellSpec, Member, NodeId, Point3};
use proptest::prelude::*;

fn m(a: u32, b: u32) -> Member {
    Member::new(a, b)
}

fn p(v: [f64; 3]) -> Point3 {
    Point3::from(v)
}

/// Seed `{1..5}` and one adhered cell; `None` for degenerate draws.
fn two_cells(seed_pts: [[f64; 3]; 5], cell: [u32; 5], new: &[(u32, [f64; 3])]) -> Option<Run> {
    let cfg = EngineConfig::default();
    let spec = CellSpec::from_points([1, 2, 3, 4, 5].map(NodeId), seed_pts.map(p)).ok()?;
    let mut run = Run::new();
    run.apply(MorphoStep::Seed(spec), &cfg).ok()?;
    let input = CellInput {
        nodes: cell.map(NodeId),
        new_nodes: new.iter().map(|(n, v)| (NodeId(*n), p(*v))).collect(),
        anchor: None,
        anchor_value: 1.0,
    };
    run.apply(MorphoStep::Adhere(input), &cfg).ok()?;
    Some(run)
}

fn region(run: &Run) -> Region {
    let pts: Vec<_> = run.design.state.nodes().values().copied().collect();
    Region::around(&pts, 1.0)
}

/// Places `node` on `req`'s surface, fuses, and returns the largest
/// elimination residual, or `None` if no sample was found.
fn place_and_fuse(run: &mut Run, node: u32, req: &PlacementRequest, seed: u64) -> Option<f64> {
    let cfg = EngineConfig::default();
    let placement = placement_for(&run.design, req).ok()?;
    assert_eq!(placement.free_node, NodeId(node));
    let at = *sample_surface(&placement.constraints[0], 1, &region(run), seed, cfg.execution).ok()?.first()?;
    let dim = run.design.state.dim_w();
    run.apply(
        MorphoStep::Place {
            node: NodeId(node),
            at,
            constraint: Some(req.clone()),
        },
        &cfg,
    )
    .ok()?;
    let log = run.apply(MorphoStep::Fuse { members: req.remove.clone() }, &cfg).unwrap().clone();
    assert_eq!(run.design.state.dim_w(), dim - 1);
    let BasisTransform::Eliminated { eliminations } = log.transform else {
        panic!("fusion must eliminate");
    };
    Some(eliminations.iter().map(|e| e.residual).fold(0.0, f64::max))
}

fn coords() -> impl Strategy<Value = [[f64; 3]; 6]> {
    prop::array::uniform6(prop::array::uniform3(-1.0..1.0f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn quadric_round_trip(c in coords(), seed in 0u64..1000) {
        let Some(mut run) = two_cells([c[0], c[1], c[2], c[3], c[4]], [2, 3, 4, 5, 6], &[(6, c[5])]) else {
            return Ok(());
        };
        let req = PlacementRequest { remove: vec![m(2, 4), m(3, 5)], fixed: None };
        if let Some(r) = place_and_fuse(&mut run, 6, &req, seed) {
            prop_assert!(r <= 1e-8, "residual {r:e}");
        }
    }

    #[test]
    fn plane_round_trip(c in coords(), seed in 0u64..1000) {
        let Some(mut run) = two_cells([c[0], c[1], c[2], c[3], c[4]], [2, 3, 4, 5, 6], &[(6, c[5])]) else {
            return Ok(());
        };
        let req = PlacementRequest { remove: vec![m(2, 3), m(2, 4)], fixed: Some(NodeId(5)) };
        let placement = placement_for(&run.design, &req).unwrap();
        let is_plane = matches!(placement.constraints[0], PlacementConstraint::Plane { .. });
        prop_assert!(is_plane);
        if let Some(r) = place_and_fuse(&mut run, 6, &req, seed) {
            prop_assert!(r <= 1e-8, "residual {r:e}");
        }
    }

    #[test]
    fn bilinear_round_trip(c in coords(), d in prop::array::uniform3(-1.0..1.0f64), seed in 0u64..1000) {
        let Some(mut run) = two_cells([c[0], c[1], c[2], c[3], c[4]], [2, 3, 4, 6, 7], &[(6, c[5]), (7, d)]) else {
            return Ok(());
        };
        let cfg = EngineConfig::default();
        // Move the first free node anywhere, then the second onto the plane
        // the bilinear form leaves for it.
        let moved = p(c[5]) + Point3::new(0.13, -0.07, 0.21);
        if run.apply(MorphoStep::Place { node: NodeId(6), at: moved, constraint: None }, &cfg).is_err() {
            return Ok(());
        }
        let req = PlacementRequest { remove: vec![m(2, 3), m(2, 4)], fixed: Some(NodeId(6)) };
        let Ok(placement) = placement_for(&run.design, &req) else { return Ok(()) };
        let bilinear = placement.bilinear[0].clone();
        if let Some(r) = place_and_fuse(&mut run, 7, &req, seed) {
            prop_assert!(r <= 1e-8, "residual {r:e}");
            let PlacementConstraint::Bilinear { m: form } = &bilinear else { panic!("bilinear expected") };
            let scale = form.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            let nodes = run.design.state.nodes();
            let value = bilinear.value_pair(&nodes[&NodeId(6)], &nodes[&NodeId(7)]);
            prop_assert!(value.abs() <= 1e-8 * scale * 16.0, "bilinear {value:e}");
        }
    }
}

