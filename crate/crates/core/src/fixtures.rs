//! Reference geometries and scripts: the three-cell example, the Triplex,
//! the Icosahedron and a tetrahedral block built from centred cells.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::CellSpec;
use crate::engine::{CellInput, EngineConfig, Expect, MorphoScript, MorphoStep, Run, ScriptStep};
use crate::error::{MorphoError, Result};
use crate::morpho_graph::OrganismKind;
use crate::geometry::Point3;
use crate::structure::Member;
use crate::NodeId;

fn ids<const N: usize>(v: [u32; N]) -> [NodeId; N] {
    v.map(NodeId)
}

fn m(a: u32, b: u32) -> Member {
    Member::new(a, b)
}

fn with_expect(step: MorphoStep, expect: Expect) -> ScriptStep {
    ScriptStep { step, expect }
}

fn adhere(nodes: [u32; 5], new: &[(u32, Point3)], anchor: Option<Member>, value: f64) -> MorphoStep {
    MorphoStep::Adhere(CellInput {
        nodes: ids(nodes),
        new_nodes: new.iter().map(|(n, p)| (NodeId(*n), *p)).collect(),
        anchor,
        anchor_value: value,
    })
}

/// Nodes 1–7 of the three-cell example.
pub const THREE_CELL_NODES: [[f64; 3]; 7] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.9, 0.0],
    [-0.3, 1.0, 0.5],
    [0.5, 0.3, 1.0],
    [1.2, 0.6, 0.6],
    [1.2, 0.6, -0.6],
];

fn tc(n: u32) -> Point3 {
    Point3::from(THREE_CELL_NODES[n as usize - 1])
}

/// First cell `{1,2,3,4,5}`, anchored on `(1,2)`.
pub fn three_cell_seed() -> CellSpec {
    CellSpec::new(ids([1, 2, 3, 4, 5]), [1, 2, 3, 4, 5].map(tc), m(1, 2), 1.0).expect("valid cell")
}

/// Seed, adhesion of `{2,3,4,5,6}` on four nodes, adhesion of
/// `{1,2,3,6,7}` on four nodes with one extra existing member.
pub fn three_cell_script() -> MorphoScript {
    MorphoScript::new(
        "three-cell example",
        vec![
            with_expect(
                MorphoStep::Seed(three_cell_seed()),
                Expect {
                    dim_w: Some(1),
                    ..Expect::default()
                },
            ),
            with_expect(
                adhere([2, 3, 4, 5, 6], &[(6, tc(6))], Some(m(2, 3)), 1.0),
                Expect {
                    dim_w: Some(2),
                    nodes: Some(6),
                    members: Some(14),
                    ..Expect::default()
                },
            ),
            with_expect(
                adhere([1, 2, 3, 6, 7], &[(7, tc(7))], Some(m(1, 2)), 1.0),
                Expect {
                    dim_w: Some(4),
                    nodes: Some(7),
                    members: Some(19),
                    virtual_states: Some(1),
                    ..Expect::default()
                },
            ),
        ],
    )
}

/// Regular Triplex, nodes `A..F = 1..6`: bottom triangle on the unit circle
/// at `z = 0`, top triangle turned by π/6 at height `h`.
pub fn triplex_coords(h: f64) -> [Point3; 6] {
    let at = |t: f64, z: f64| Point3::new(t.cos(), t.sin(), z);
    let third = 2.0 * std::f64::consts::PI / 3.0;
    let twist = std::f64::consts::PI / 6.0;
    [
        at(0.0, 0.0),
        at(third, 0.0),
        at(2.0 * third, 0.0),
        at(twist, h),
        at(third + twist, h),
        at(2.0 * third + twist, h),
    ]
}

/// Struts of the Triplex: `CD`, `AE`, `BF`.
pub fn triplex_struts() -> [Member; 3] {
    [m(3, 4), m(1, 5), m(2, 6)]
}

/// Cells `ABCDE` and `BCDEF` sharing `BCDE`, then `BD` and `CE` fused.
pub fn triplex_script() -> MorphoScript {
    let p = triplex_coords(1.0);
    let seed = CellSpec::new(ids([1, 2, 3, 4, 5]), [p[0], p[1], p[2], p[3], p[4]], m(1, 2), 2.0 / 3f64.sqrt())
        .expect("valid cell");
    MorphoScript::new(
        "triplex",
        vec![
            MorphoStep::Seed(seed).into(),
            with_expect(
                adhere([2, 3, 4, 5, 6], &[(6, p[5])], Some(m(2, 3)), 3f64.sqrt()),
                Expect {
                    dim_w: Some(2),
                    ..Expect::default()
                },
            ),
            with_expect(
                MorphoStep::Fuse {
                    members: vec![m(2, 4), m(3, 5)],
                },
                Expect {
                    dim_w: Some(1),
                    nodes: Some(6),
                    members: Some(12),
                    ..Expect::default()
                },
            ),
        ],
    )
}

/// Expanded octahedron, nodes `A..L = 1..12`, struts parallel to the axes
/// in pairs. `a` is the half-offset of a strut pair and `b` the strut
/// half-length; `(0.5, 1)` is the equilibrium shape.
pub fn icosahedron_coords(a: f64, b: f64) -> [Point3; 12] {
    [
        Point3::new(a, 0.0, b),
        Point3::new(a, 0.0, -b),
        Point3::new(-a, 0.0, b),
        Point3::new(-a, 0.0, -b),
        Point3::new(b, a, 0.0),
        Point3::new(-b, a, 0.0),
        Point3::new(b, -a, 0.0),
        Point3::new(-b, -a, 0.0),
        Point3::new(0.0, b, a),
        Point3::new(0.0, -b, a),
        Point3::new(0.0, b, -a),
        Point3::new(0.0, -b, -a),
    ]
}

/// Equilibrium parameters of [`icosahedron_coords`].
pub const ICOSAHEDRON_AB: (f64, f64) = (0.5, 1.0);

fn letters(s: &str) -> Vec<u32> {
    s.bytes().map(|c| (c - b'A' + 1) as u32).collect()
}

fn pair(s: &str) -> Member {
    let v = letters(s);
    m(v[0], v[1])
}

/// Struts `AB, CD, EF, GH, IJ, KL`.
pub fn icosahedron_struts() -> Vec<Member> {
    ["AB", "CD", "EF", "GH", "IJ", "KL"].iter().map(|s| pair(s)).collect()
}

/// The 24 cables.
pub fn icosahedron_cables() -> Vec<Member> {
    [
        "AE", "AG", "AI", "AJ", "BE", "BG", "BK", "BL", "CF", "CH", "CI", "CJ", "DF", "DH", "DK", "DL", "EI", "EK", "FI",
        "FK", "GJ", "GL", "HJ", "HL",
    ]
    .iter()
    .map(|s| pair(s))
    .collect()
}

/// Sixteen cells, fifteen adhesions and nine fusions ending on the
/// Icosahedron. Node letters `A..L` map to ids `1..12`.
pub fn icosahedron_script() -> MorphoScript {
    let (a, b) = ICOSAHEDRON_AB;
    let p = icosahedron_coords(a, b);
    let mut introduced = std::collections::BTreeSet::new();
    let mut cell = |s: &str| -> ([u32; 5], Vec<(u32, Point3)>) {
        let v = letters(s);
        let nodes = [v[0], v[1], v[2], v[3], v[4]];
        let new = nodes
            .iter()
            .filter(|n| introduced.insert(**n))
            .map(|n| (*n, p[*n as usize - 1]))
            .collect();
        (nodes, new)
    };
    let mut steps: Vec<ScriptStep> = Vec::new();
    let (nodes, _) = cell("ABEGJ");
    let coords = nodes.map(|n| p[n as usize - 1]);
    steps.push(MorphoStep::Seed(CellSpec::from_points(ids(nodes), coords).expect("valid cell")).into());
    let plan: [(&[&str], &[&str]); 9] = [
        (&["AEFIJ", "CFGHJ"], &["AF", "BJ", "CG", "EG", "EJ", "FG", "FH", "FJ"]),
        (&["CDFHK"], &["CK", "FH", "HK"]),
        (&["BDHKL"], &["BD", "BH", "HK"]),
        (&["CEFIK"], &["CE", "CK", "IK"]),
        (&["AGHJL"], &["AH", "AL", "JL"]),
        (&["ABEFK", "AEFIK", "BEFIK"], &["AF", "AK", "BF", "BI", "IK"]),
        (&["AGHIJ"], &["AH", "GI", "HI"]),
        (&["DGHKL", "BDGKL", "BDHKL", "BCDHK"], &["BC", "BD", "BH", "CK", "DG", "GK", "HK"]),
        (&["AEFIJ"], &["AF", "EJ", "FJ"]),
    ];
    for (cells, fuse) in plan {
        for c in cells {
            let (nodes, new) = cell(c);
            steps.push(adhere(nodes, &new, None, 1.0).into());
        }
        steps.push(
            MorphoStep::Fuse {
                members: fuse.iter().map(|s| pair(s)).collect(),
            }
            .into(),
        );
    }
    if let Some(last) = steps.last_mut() {
        last.expect = Expect {
            dim_w: Some(1),
            nodes: Some(12),
            members: Some(30),
            mechanisms: Some(1),
            ..Expect::default()
        };
    }
    MorphoScript::new("icosahedron", steps)
}

/// Kuhn subdivision of an `nx × ny × nz` block of unit cubes into
/// tetrahedra, each turned into a Type II cell by adding its centroid.
/// Cells are ordered so that every one shares at least a face with the
/// structure built so far.
pub fn tet_block_script(nx: u32, ny: u32, nz: u32) -> MorphoScript {
    let grid_id = |x: u32, y: u32, z: u32| 1 + x + (nx + 1) * (y + (ny + 1) * z);
    let grid_pt = |x: u32, y: u32, z: u32| {
        // A small shear keeps the lattice away from special positions.
        Point3::new(x as f64 + 0.07 * y as f64, y as f64 + 0.05 * z as f64, z as f64 + 0.03 * x as f64)
    };
    let mut tets: Vec<[(u32, u32, u32); 4]> = Vec::new();
    let perms: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                for perm in perms {
                    let mut c = [x, y, z];
                    let mut t = [(x, y, z); 4];
                    for (k, axis) in perm.iter().enumerate() {
                        c[*axis] += 1;
                        t[k + 1] = (c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let mut coords: BTreeMap<u32, Point3> = BTreeMap::new();
    for t in &tets {
        for &(x, y, z) in t {
            coords.insert(grid_id(x, y, z), grid_pt(x, y, z));
        }
    }
    let next_centre = coords.keys().next_back().copied().unwrap_or(0) + 1;
    let tet_ids: Vec<[u32; 4]> = tets.iter().map(|t| t.map(|(x, y, z)| grid_id(x, y, z))).collect();

    // Greedy order: always continue with the first tet sharing a face.
    let mut placed = vec![false; tet_ids.len()];
    let mut have = std::collections::BTreeSet::new();
    let mut order = vec![0usize];
    placed[0] = true;
    have.extend(tet_ids[0]);
    while order.len() < tet_ids.len() {
        let next = (0..tet_ids.len())
            .find(|i| !placed[*i] && tet_ids[*i].iter().filter(|n| have.contains(*n)).count() >= 3)
            .expect("face-connected block");
        placed[next] = true;
        have.extend(tet_ids[next]);
        order.push(next);
    }

    let mut known = std::collections::BTreeSet::new();
    let mut steps: Vec<ScriptStep> = Vec::new();
    for (k, &t) in order.iter().enumerate() {
        let corners = tet_ids[t];
        let pts = corners.map(|n| coords[&n]);
        let centre = (pts[0] + pts[1] + pts[2] + pts[3]) * 0.25;
        let c = next_centre + k as u32;
        let nodes = [corners[0], corners[1], corners[2], corners[3], c];
        if k == 0 {
            let spec = CellSpec::from_points(ids(nodes), [pts[0], pts[1], pts[2], pts[3], centre]).expect("valid cell");
            steps.push(MorphoStep::Seed(spec).into());
        } else {
            let mut new: Vec<(u32, Point3)> = corners
                .iter()
                .zip(pts)
                .filter(|(n, _)| !known.contains(*n))
                .map(|(n, p)| (*n, p))
                .collect();
            new.push((c, centre));
            steps.push(adhere(nodes, &new, None, 1.0).into());
        }
        known.extend(corners);
    }
    MorphoScript::new(&format!("tet-block-{nx}x{ny}x{nz}"), steps)
}

/// A random growth sequence of `cells` cells: each adhesion reuses three or
/// four nodes of an existing cell, and with probability `fuse_rate` a
/// stressed member is fused away after it. The structure stays rigid, so
/// every step is generic. Deterministic in `seed`.
pub fn random_script(seed: u64, cells: usize, fuse_rate: f64, cfg: &EngineConfig) -> Result<MorphoScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng, centre: Point3, r: f64| {
        centre + Point3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
    };
    let mut run = Run::new();
    let mut steps: Vec<ScriptStep> = Vec::new();
    loop {
        let pts: [Point3; 5] = std::array::from_fn(|_| point(&mut rng, Point3::default(), 1.0));
        if let Ok(spec) = CellSpec::from_points(ids([1, 2, 3, 4, 5]), pts) {
            let step = MorphoStep::Seed(spec);
            if run.apply(step.clone(), cfg).is_ok() {
                steps.push(step.into());
                break;
            }
        }
    }
    let mut next_id = 6u32;
    let mut placed = 1;
    let mut attempts = 0;
    while placed < cells {
        attempts += 1;
        if attempts > 50 * cells {
            return Err(MorphoError::Usage(format!("could not grow {cells} cells from seed {seed}")));
        }
        let regular: Vec<Vec<NodeId>> = run
            .design
            .morpho
            .cells()
            .values()
            .filter(|o| o.kind == OrganismKind::Regular)
            .map(|o| o.nodes.iter().copied().collect())
            .collect();
        let host = &regular[rng.random_range(0..regular.len())];
        let shared_count = if rng.random_bool(0.5) { 3 } else { 4 };
        let mut pool = host.clone();
        let mut shared = Vec::new();
        for _ in 0..shared_count {
            shared.push(pool.swap_remove(rng.random_range(0..pool.len())));
        }
        let centre = shared.iter().map(|n| run.design.state.node(*n).expect("node")).fold(Point3::default(), |a, b| a + b)
            * (1.0 / shared_count as f64);
        let scale = run.design.state.diameter().max(1.0) * 0.3;
        let mut new_nodes = BTreeMap::new();
        for k in 0..5 - shared_count {
            new_nodes.insert(NodeId(next_id + k as u32), point(&mut rng, centre, scale));
        }
        let mut nodes = shared.clone();
        nodes.extend(new_nodes.keys().copied());
        let step = MorphoStep::Adhere(CellInput {
            nodes: nodes.try_into().expect("five nodes"),
            new_nodes,
            anchor: None,
            anchor_value: 1.0,
        });
        if run.apply(step.clone(), cfg).is_err() {
            continue;
        }
        next_id += 5 - shared_count as u32;
        placed += 1;
        steps.push(step.into());

        if rng.random_bool(fuse_rate) {
            let state = &run.design.state;
            let stressed: Vec<Member> = state
                .members()
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    state.basis().iter().any(|c| {
                        let n = crate::linalg::norm(c);
                        c[*i].abs() > 1e-3 * n
                    })
                })
                .map(|(_, m)| *m)
                .collect();
            if !stressed.is_empty() {
                let member = stressed[rng.random_range(0..stressed.len())];
                let step = MorphoStep::Fuse { members: vec![member] };
                if run.apply(step.clone(), cfg).is_ok() {
                    steps.push(step.into());
                }
            }
        }
    }
    Ok(MorphoScript::new(&format!("random-{seed}"), steps))
}
