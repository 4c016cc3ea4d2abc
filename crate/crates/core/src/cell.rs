//! The K5 cell: closed-form self-stress and Type I / Type II classification.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::geometry::{diameter, general_position, oriented_volume, GeneralPosition, Point3, DEFAULT_GP_TOL};
use crate::structure::{complete_graph, Member};
use crate::NodeId;

/// Five nodes in general position plus the normalisation of the stress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCellSpec", into = "RawCellSpec")]
pub struct CellSpec {
    nodes: [NodeId; 5],
    coords: [Point3; 5],
    anchor: Member,
    anchor_value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCellSpec {
    nodes: [NodeId; 5],
    coords: [Point3; 5],
    anchor: Member,
    #[serde(default = "one")]
    anchor_value: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawCellSpec> for CellSpec {
    type Error = MorphoError;
    fn try_from(r: RawCellSpec) -> Result<Self> {
        CellSpec::new(r.nodes, r.coords, r.anchor, r.anchor_value)
    }
}

impl From<CellSpec> for RawCellSpec {
    fn from(c: CellSpec) -> Self {
        RawCellSpec {
            nodes: c.nodes,
            coords: c.coords,
            anchor: c.anchor,
            anchor_value: c.anchor_value,
        }
    }
}

impl CellSpec {
    pub fn new(nodes: [NodeId; 5], coords: [Point3; 5], anchor: Member, anchor_value: f64) -> Result<Self> {
        Self::with_tolerance(nodes, coords, anchor, anchor_value, DEFAULT_GP_TOL)
    }

    /// As [`CellSpec::new`] with an explicit coplanarity tolerance.
    pub fn with_tolerance(
        nodes: [NodeId; 5],
        coords: [Point3; 5],
        anchor: Member,
        anchor_value: f64,
        gp_tol: f64,
    ) -> Result<Self> {
        let distinct: BTreeSet<NodeId> = nodes.iter().copied().collect();
        if distinct.len() != 5 {
            return Err(MorphoError::Usage(format!("cell nodes {nodes:?} are not distinct")));
        }
        if !nodes.contains(&anchor.lo()) || !nodes.contains(&anchor.hi()) {
            return Err(MorphoError::Usage(format!("anchor {anchor} is not a member of the cell")));
        }
        if anchor_value == 0.0 || !anchor_value.is_finite() {
            return Err(MorphoError::Usage("anchor value must be finite and non-zero".into()));
        }
        if let GeneralPosition::No { quadruple, volume } = general_position(&coords, gp_tol)? {
            return Err(MorphoError::DegenerateGeometry {
                quadruple: quadruple.map(|i| nodes[i]),
                volume,
            });
        }
        Ok(Self {
            nodes,
            coords,
            anchor,
            anchor_value,
        })
    }

    /// Anchor on the first two listed nodes with value 1.
    pub fn from_points(nodes: [NodeId; 5], coords: [Point3; 5]) -> Result<Self> {
        Self::new(nodes, coords, Member::new(nodes[0], nodes[1]), 1.0)
    }

    pub fn nodes(&self) -> &[NodeId; 5] {
        &self.nodes
    }

    pub fn coords(&self) -> &[Point3; 5] {
        &self.coords
    }

    pub fn anchor(&self) -> Member {
        self.anchor
    }

    pub fn anchor_value(&self) -> f64 {
        self.anchor_value
    }

    pub fn coord(&self, n: NodeId) -> Option<Point3> {
        self.nodes.iter().position(|m| *m == n).map(|i| self.coords[i])
    }

    /// The ten members in canonical order.
    pub fn members(&self) -> Vec<Member> {
        complete_graph(&self.nodes)
    }

    pub fn with_anchor(&self, anchor: Member, anchor_value: f64) -> Result<Self> {
        Self::with_tolerance(self.nodes, self.coords, anchor, anchor_value, 0.0)
    }

    pub(crate) fn coord_map(&self) -> BTreeMap<NodeId, Point3> {
        self.nodes.iter().copied().zip(self.coords).collect()
    }
}

/// Force densities on the ten members of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellStress {
    entries: BTreeMap<Member, f64>,
}

impl CellStress {
    pub fn from_entries(entries: BTreeMap<Member, f64>) -> Result<Self> {
        if entries.len() != 10 {
            return Err(MorphoError::Usage(format!(
                "a cell stress has 10 entries, got {}",
                entries.len()
            )));
        }
        let nodes: BTreeSet<NodeId> = entries.keys().flat_map(|m| m.ends()).collect();
        if nodes.len() != 5 {
            return Err(MorphoError::Usage("cell stress members do not form a K5".into()));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, m: &Member) -> Option<f64> {
        self.entries.get(m).copied()
    }

    pub fn entries(&self) -> &BTreeMap<Member, f64> {
        &self.entries
    }

    /// Values in canonical member order.
    pub fn values(&self) -> Vec<f64> {
        self.entries.values().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    /// The four-member group is a triangle plus the opposite edge.
    TypeI,
    /// The four-member group is a star around one node.
    TypeII,
}

/// Closed-form self-stress of a K5 cell.
///
/// With `F_k` the oriented volume of the four nodes other than `P_k` and the
/// anchor on `(P1,P2)`:
///
/// ```text
/// w12 = α            w23 =  α F3/F1       w13 = −α F3/F2
/// w14 =  α F4/F2     w24 = −α F4/F1       w34 =  α F3F4/(F1F2)
/// w15 = −α F5/F2     w25 =  α F5/F1       w35 = −α F3F5/(F1F2)
/// w45 =  α F4F5/(F1F2)
/// ```
///
/// Other anchors are handled by relabelling the nodes so that the anchor
/// becomes `(P1,P2)`; the expressions keep their form under any permutation.
pub fn cell_self_stress(spec: &CellSpec) -> Result<CellStress> {
    let a = spec.anchor;
    let ia = spec.nodes.iter().position(|n| *n == a.lo()).expect("anchor checked");
    let ib = spec.nodes.iter().position(|n| *n == a.hi()).expect("anchor checked");
    let mut order = vec![ia, ib];
    order.extend((0..5).filter(|i| *i != ia && *i != ib));
    let p: Vec<Point3> = order.iter().map(|&i| spec.coords[i]).collect();
    let f = |i: usize, j: usize, k: usize, l: usize| oriented_volume(&p[i], &p[j], &p[k], &p[l]);
    // F[k] omits node k (0-based).
    let fv = [f(1, 2, 3, 4), f(0, 2, 3, 4), f(0, 1, 3, 4), f(0, 1, 2, 4), f(0, 1, 2, 3)];
    let [f1, f2, f3, f4, f5] = fv;
    let al = spec.anchor_value;
    let mut w = [[0.0f64; 5]; 5];
    let mut set = |i: usize, j: usize, v: f64| {
        w[i][j] = v;
        w[j][i] = v;
    };
    set(0, 1, al);
    set(1, 2, al * f3 / f1);
    set(0, 2, -al * f3 / f2);
    set(0, 3, al * f4 / f2);
    set(1, 3, -al * f4 / f1);
    set(2, 3, al * f3 * f4 / (f1 * f2));
    set(0, 4, -al * f5 / f2);
    set(1, 4, al * f5 / f1);
    set(2, 4, -al * f3 * f5 / (f1 * f2));
    set(3, 4, al * f4 * f5 / (f1 * f2));
    let mut entries = BTreeMap::new();
    for i in 0..5 {
        for j in i + 1..5 {
            let m = Member::new(spec.nodes[order[i]], spec.nodes[order[j]]);
            let v = w[i][j];
            if !v.is_finite() {
                return Err(MorphoError::NumericDegeneracy(format!(
                    "non-finite force density on {m}"
                )));
            }
            entries.insert(m, v);
        }
    }
    Ok(CellStress { entries })
}

/// Type I or Type II from the sign pattern.
pub fn classify_cell(stress: &CellStress) -> Result<CellKind> {
    let scale = stress.max_abs();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (m, v) in &stress.entries {
        if scale == 0.0 || v.abs() <= 1e-12 * scale {
            return Err(MorphoError::ZeroForceDensity(*m));
        }
        if *v > 0.0 {
            pos.push(*m);
        } else {
            neg.push(*m);
        }
    }
    let err = MorphoError::Classification {
        positive: pos.len(),
        negative: neg.len(),
    };
    let four = match (pos.len(), neg.len()) {
        (6, 4) => neg,
        (4, 6) => pos,
        _ => return Err(err),
    };
    let mut degree: BTreeMap<NodeId, usize> = BTreeMap::new();
    for m in &four {
        for e in m.ends() {
            *degree.entry(e).or_default() += 1;
        }
    }
    let mut pattern: Vec<usize> = degree.values().copied().collect();
    pattern.sort_unstable();
    match pattern.as_slice() {
        [1, 1, 1, 1, 4] => Ok(CellKind::TypeII),
        [1, 1, 2, 2, 2] => {
            let in_triangle = four.iter().filter(|m| m.ends().iter().all(|e| degree[e] == 2)).count();
            if in_triangle == 3 {
                Ok(CellKind::TypeI)
            } else {
                Err(err)
            }
        }
        _ => Err(err),
    }
}

/// Largest nodal out-of-balance force `‖Σ_j w_ij (x_i − x_j)‖`.
pub fn cell_equilibrium_residual(spec: &CellSpec, stress: &CellStress) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, n) in spec.nodes.iter().enumerate() {
        let mut f = Point3::default();
        for (j, o) in spec.nodes.iter().enumerate() {
            if i == j {
                continue;
            }
            let w = stress.get(&Member::new(*n, *o)).unwrap_or(0.0);
            f = f + (spec.coords[i] - spec.coords[j]) * w;
        }
        worst = worst.max(f.norm());
    }
    worst
}

/// Residual bound a genuine cell stress must meet.
pub fn residual_bound(spec: &CellSpec, stress: &CellStress) -> f64 {
    1e-9 * stress.max_abs() * diameter(&spec.coords)
}
