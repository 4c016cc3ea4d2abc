use std::path::PathBuf;

use cellmorph::engine::{run_script, BasisTransform, EngineConfig, MorphoStep, Run};
use cellmorph::linalg::abs_cosine;
use cellmorph::placement::{placement_for, sample_surface, PlacementRequest, Region};
use cellmorph::structure::{audit, count_report, Member, MemberRole};
use cellmorph::{fixtures, io, MorphoError, NodeId};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn m(a: u32, b: u32) -> Member {
    Member::new(a, b)
}

#[test]
fn fixture_files_match_the_builders() {
    for (file, script) in [
        ("three-cell.toml", fixtures::three_cell_script()),
        ("triplex.toml", fixtures::triplex_script()),
        ("icosahedron.toml", fixtures::icosahedron_script()),
        ("tet-block.toml", fixtures::tet_block_script(2, 1, 1)),
    ] {
        let text = std::fs::read_to_string(fixture(file)).unwrap();
        assert_eq!(io::parse_script(&text).unwrap(), script, "{file}");
    }
}

#[test]
fn every_fixture_runs_and_audits_clean() {
    let cfg = EngineConfig::default();
    for file in ["three-cell.toml", "triplex.toml", "icosahedron.toml", "tet-block.toml"] {
        let script = io::parse_script(&std::fs::read_to_string(fixture(file)).unwrap()).unwrap();
        let run = run_script(&script, &cfg).unwrap_or_else(|f| panic!("{file}: {f}"));
        assert!(audit(&run.design.state, 1e-9).unwrap().is_empty(), "{file}");
        let counts = count_report(&run.design.state, 1e-9).unwrap();
        assert!(counts.maxwell_holds(), "{file}");
    }
}

#[test]
fn fusion_of_the_shared_member() {
    let cfg = EngineConfig::default();
    let before = run_script(&fixtures::three_cell_script(), &cfg).unwrap();
    let w = before.design.state.basis().to_vec();
    let i23 = before.design.state.member_index(&m(2, 3)).unwrap();
    let mut run = before.clone();
    let log = run.apply(MorphoStep::Fuse { members: vec![m(2, 3)] }, &cfg).unwrap().clone();
    assert_eq!(run.design.state.dim_w(), 3);
    assert!(log.generic);
    let BasisTransform::Eliminated { eliminations } = &log.transform else {
        panic!("expected eliminations");
    };
    assert_eq!(eliminations.len(), 1);
    assert!(eliminations[0].residual <= 1e-9);

    // Each survivor is a column minus the matching multiple of w3.
    let idx: Vec<usize> = before.design.state.members().iter().enumerate().filter(|(k, _)| *k != i23).map(|(k, _)| k).collect();
    for (col, k) in run.design.state.basis().iter().zip([0usize, 1, 3]) {
        let combo: Vec<f64> = idx.iter().map(|&r| w[k][r] - w[k][i23] / w[2][i23] * w[2][r]).collect();
        assert!(abs_cosine(col, &combo) >= 1.0 - 1e-12);
    }
}

#[test]
fn triplex_state_and_typology() {
    let run = run_script(&fixtures::triplex_script(), &EngineConfig::default()).unwrap();
    let s = &run.design.state;
    let struts = fixtures::triplex_struts();
    let sides = [m(1, 4), m(2, 5), m(3, 6)];
    let expected: Vec<f64> = s
        .members()
        .iter()
        .map(|mm| {
            if struts.contains(mm) {
                -3f64.sqrt()
            } else if sides.contains(mm) {
                3f64.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    assert!(abs_cosine(&s.basis()[0], &expected) >= 1.0 - 1e-12);
    let n_struts = s.typology().iter().filter(|r| **r == MemberRole::Strut).count();
    assert_eq!((n_struts, s.members().len() - n_struts), (3, 9));
    assert_eq!(run.log.last().unwrap().mechanisms, 1);
}

#[test]
fn triplex_is_independent_of_height() {
    // Cells built from the same prism at another height give the same state.
    for h in [0.5, 2.0, 3.7] {
        let p = fixtures::triplex_coords(h);
        let mut script = fixtures::triplex_script();
        if let MorphoStep::Seed(spec) = &mut script.steps[0].step {
            *spec = cellmorph::CellSpec::new(*spec.nodes(), [p[0], p[1], p[2], p[3], p[4]], spec.anchor(), 1.0).unwrap();
        }
        if let MorphoStep::Adhere(c) = &mut script.steps[1].step {
            c.new_nodes.insert(NodeId(6), p[5]);
        }
        let run = run_script(&script, &EngineConfig::default()).unwrap();
        assert_eq!(run.design.state.dim_w(), 1, "h = {h}");
    }
}

#[test]
fn icosahedron_reaches_the_known_state() {
    let run = run_script(&fixtures::icosahedron_script(), &EngineConfig::default()).unwrap();
    let s = &run.design.state;
    assert_eq!((s.nodes().len(), s.members().len(), s.dim_w()), (12, 30, 1));
    let struts = fixtures::icosahedron_struts();
    let w = &s.basis()[0];
    let cable = w[s.members().iter().position(|mm| !struts.contains(mm)).unwrap()];
    for (mm, v) in s.members().iter().zip(w) {
        let want = if struts.contains(mm) { -1.5 } else { 1.0 };
        assert!((v / cable - want).abs() <= 1e-6, "{mm}: {}", v / cable);
    }
    assert_eq!(count_report(s, 1e-9).unwrap().mechanisms, 1);
}

#[test]
fn expectation_mismatch_is_reported() {
    let mut script = fixtures::triplex_script();
    script.steps[1].expect.dim_w = Some(3);
    let f = run_script(&script, &EngineConfig::default()).unwrap_err();
    assert!(matches!(f.error, MorphoError::Expectation { index: 1, .. }));
    assert_eq!(f.partial.steps.len(), 2);
}

#[test]
fn placement_on_the_quadric_then_fusion() {
    let cfg = EngineConfig::default();
    let script = fixtures::triplex_script();
    let mut run = Run::new();
    for s in &script.steps[..2] {
        run.apply(s.step.clone(), &cfg).unwrap();
    }
    let req = PlacementRequest {
        remove: vec![m(2, 4), m(3, 5)],
        fixed: None,
    };
    let placement = placement_for(&run.design, &req).unwrap();
    assert_eq!(placement.free_node, NodeId(6));
    let pts: Vec<_> = run.design.state.nodes().values().copied().collect();
    let region = Region::around(&pts, 0.5);
    let samples = sample_surface(&placement.constraints[0], 5, &region, 7, cfg.execution).unwrap();
    assert!(!samples.is_empty());
    for p in samples {
        let mut moved = run.clone();
        moved
            .apply(
                MorphoStep::Place {
                    node: NodeId(6),
                    at: p,
                    constraint: Some(req.clone()),
                },
                &cfg,
            )
            .unwrap();
        let log = moved.apply(MorphoStep::Fuse { members: req.remove.clone() }, &cfg).unwrap().clone();
        assert_eq!(moved.design.state.dim_w(), 1);
        let BasisTransform::Eliminated { eliminations } = &log.transform else {
            panic!("expected eliminations");
        };
        assert!(eliminations.iter().all(|e| e.residual <= 1e-8));
    }
}

#[test]
fn placement_off_the_surface_is_rejected() {
    let cfg = EngineConfig::default();
    let script = fixtures::triplex_script();
    let mut run = Run::new();
    for s in &script.steps[..2] {
        run.apply(s.step.clone(), &cfg).unwrap();
    }
    let err = run
        .apply(
            MorphoStep::Place {
                node: NodeId(6),
                at: cellmorph::Point3::new(0.3, -0.8, 1.4),
                constraint: Some(PlacementRequest {
                    remove: vec![m(2, 4), m(3, 5)],
                    fixed: None,
                }),
            },
            &cfg,
        )
        .unwrap_err();
    assert!(matches!(err, MorphoError::Step { .. }));
    assert_eq!(run.steps.len(), 2);
}

#[test]
fn structure_file_round_trip_for_every_fixture() {
    let cfg = EngineConfig::default();
    for script in [fixtures::three_cell_script(), fixtures::triplex_script(), fixtures::icosahedron_script()] {
        let run = run_script(&script, &cfg).unwrap();
        let text = io::structure_to_string(&run.design).unwrap();
        assert_eq!(io::parse_structure(&text).unwrap(), run.design);
    }
}

#[test]
fn corrupted_structure_fails_the_audit() {
    let text = std::fs::read_to_string(fixture("corrupted-triplex.toml")).unwrap();
    let design = io::parse_structure(&text).unwrap();
    let violations = audit(&design.state, 1e-9).unwrap();
    assert!(violations.iter().any(|v| v.invariant == "equilibrium-residual"));
    let text = std::fs::read_to_string(fixture("triplex-structure.toml")).unwrap();
    assert!(audit(&io::parse_structure(&text).unwrap().state, 1e-9).unwrap().is_empty());
}
