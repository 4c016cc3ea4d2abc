//! The evolving tensegrity: nodes, members, the self-stress basis and the
//! member typology, plus the equilibrium matrix and Maxwell-style counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::geometry::{diameter, Point3};
use crate::linalg;
use crate::{CellId, NodeId};

/// Relative bound on `‖A·w‖ / (‖w‖·diameter)` for a stored state.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

/// Unordered node pair, stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[NodeId; 2]", into = "[NodeId; 2]")]
pub struct Member {
    lo: NodeId,
    hi: NodeId,
}

impl Member {
    pub fn new(a: impl Into<NodeId>, b: impl Into<NodeId>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Self { lo: a, hi: b }
        } else {
            Self { lo: b, hi: a }
        }
    }

    pub fn lo(&self) -> NodeId {
        self.lo
    }

    pub fn hi(&self) -> NodeId {
        self.hi
    }

    pub fn ends(&self) -> [NodeId; 2] {
        [self.lo, self.hi]
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.lo == n || self.hi == n
    }

    pub fn shares_node(&self, o: &Member) -> Option<NodeId> {
        self.ends().into_iter().find(|n| o.touches(*n))
    }

    pub fn other(&self, n: NodeId) -> Option<NodeId> {
        if self.lo == n {
            Some(self.hi)
        } else if self.hi == n {
            Some(self.lo)
        } else {
            None
        }
    }
}

impl From<[NodeId; 2]> for Member {
    fn from(a: [NodeId; 2]) -> Self {
        Member::new(a[0], a[1])
    }
}

impl From<Member> for [NodeId; 2] {
    fn from(m: Member) -> Self {
        m.ends()
    }
}

impl fmt::Display for Member {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.lo, self.hi)
    }
}

impl FromStr for Member {
    type Err = MorphoError;

    /// Accepts `2-3`, `2,3` or `(2,3)`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut parts = t.split(['-', ',']).map(str::trim);
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(MorphoError::Usage(format!("malformed member `{s}`"))),
        };
        let a: NodeId = a.parse()?;
        let b: NodeId = b.parse()?;
        if a == b {
            return Err(MorphoError::Usage(format!("member `{s}` joins a node to itself")));
        }
        Ok(Member::new(a, b))
    }
}

/// Every unordered pair of `nodes`, in canonical order.
pub fn complete_graph(nodes: &[NodeId]) -> Vec<Member> {
    let mut sorted = nodes.to_vec();
    sorted.sort();
    let mut out = Vec::with_capacity(sorted.len() * (sorted.len().saturating_sub(1)) / 2);
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            out.push(Member::new(*a, *b));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemberRole {
    Cable,
    Strut,
    /// Carries no force in the current combination; removable without
    /// disturbing equilibrium.
    RemovedCandidate,
    Unassigned,
}

impl MemberRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            MemberRole::Cable => "cable",
            MemberRole::Strut => "strut",
            MemberRole::RemovedCandidate => "removed-candidate",
            MemberRole::Unassigned => "unassigned",
        }
    }
}

/// Snapshot of a tensegrity under construction.
///
/// Members are kept in canonical (lexicographic) order and every basis
/// column is aligned with them. `origins[k]` names the unicellular organism
/// (cell, virtual cell or fused cell) that column `k` stabilises.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructureState {
    nodes: BTreeMap<NodeId, Point3>,
    members: Vec<Member>,
    basis: Vec<Vec<f64>>,
    origins: Vec<CellId>,
    typology: Vec<MemberRole>,
}

impl StructureState {
    /// Builds a state, sorting members (and permuting basis rows to match).
    pub fn new(
        nodes: BTreeMap<NodeId, Point3>,
        members: Vec<Member>,
        basis: Vec<Vec<f64>>,
        origins: Vec<CellId>,
        typology: Vec<MemberRole>,
    ) -> Result<Self> {
        let n = members.len();
        if basis.iter().any(|c| c.len() != n) {
            return Err(MorphoError::Usage(
                "basis column length differs from member count".into(),
            ));
        }
        if origins.len() != basis.len() {
            return Err(MorphoError::Usage(
                "one origin cell per basis column is required".into(),
            ));
        }
        if typology.len() != n {
            return Err(MorphoError::Usage(
                "one typology entry per member is required".into(),
            ));
        }
        for m in &members {
            for e in m.ends() {
                if !nodes.contains_key(&e) {
                    return Err(MorphoError::UnknownNode(e));
                }
            }
            if m.lo() == m.hi() {
                return Err(MorphoError::DegenerateMember(*m));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| members[i]);
        let sorted: Vec<Member> = order.iter().map(|&i| members[i]).collect();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(MorphoError::Usage("duplicate member".into()));
        }
        let basis = basis
            .into_iter()
            .map(|c| order.iter().map(|&i| c[i]).collect())
            .collect();
        let typology = order.iter().map(|&i| typology[i]).collect();
        Ok(Self {
            nodes,
            members: sorted,
            basis,
            origins,
            typology,
        })
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, Point3> {
        &self.nodes
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn origins(&self) -> &[CellId] {
        &self.origins
    }

    pub fn typology(&self) -> &[MemberRole] {
        &self.typology
    }

    pub fn dim_w(&self) -> usize {
        self.basis.len()
    }

    pub fn node(&self, id: NodeId) -> Option<Point3> {
        self.nodes.get(&id).copied()
    }

    pub fn member_index(&self, m: &Member) -> Option<usize> {
        self.members.binary_search(m).ok()
    }

    pub fn has_member(&self, m: &Member) -> bool {
        self.member_index(m).is_some()
    }

    /// Number of members incident to each node.
    pub fn degrees(&self) -> BTreeMap<NodeId, usize> {
        let mut d: BTreeMap<NodeId, usize> = self.nodes.keys().map(|k| (*k, 0)).collect();
        for m in &self.members {
            for e in m.ends() {
                *d.entry(e).or_default() += 1;
            }
        }
        d
    }

    pub fn diameter(&self) -> f64 {
        let pts: Vec<Point3> = self.nodes.values().copied().collect();
        diameter(&pts)
    }

    /// Column `k` as a member → force-density map, zeros dropped.
    pub fn column_entries(&self, k: usize) -> BTreeMap<Member, f64> {
        self.members
            .iter()
            .zip(&self.basis[k])
            .filter(|(_, w)| **w != 0.0)
            .map(|(m, w)| (*m, *w))
            .collect()
    }

    /// `W · combination`.
    pub fn combined_stress(&self, combination: &[f64]) -> Result<Vec<f64>> {
        if combination.len() != self.basis.len() {
            return Err(MorphoError::Usage(format!(
                "combination has {} coefficients for {} states",
                combination.len(),
                self.basis.len()
            )));
        }
        let mut w = vec![0.0; self.members.len()];
        for (col, c) in self.basis.iter().zip(combination) {
            for (acc, v) in w.iter_mut().zip(col) {
                *acc += c * v;
            }
        }
        Ok(w)
    }

    pub(crate) fn into_parts(
        self,
    ) -> (
        BTreeMap<NodeId, Point3>,
        Vec<Member>,
        Vec<Vec<f64>>,
        Vec<CellId>,
        Vec<MemberRole>,
    ) {
        (self.nodes, self.members, self.basis, self.origins, self.typology)
    }

    pub(crate) fn from_parts_unchecked(
        nodes: BTreeMap<NodeId, Point3>,
        members: Vec<Member>,
        basis: Vec<Vec<f64>>,
        origins: Vec<CellId>,
        typology: Vec<MemberRole>,
    ) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        Self {
            nodes,
            members,
            basis,
            origins,
            typology,
        }
    }

    /// Same state with a replaced typology.
    pub fn with_typology(mut self, typology: Vec<MemberRole>) -> Result<Self> {
        if typology.len() != self.members.len() {
            return Err(MorphoError::Usage("typology length mismatch".into()));
        }
        self.typology = typology;
        Ok(self)
    }
}

/// Dense equilibrium matrix: 3 rows per node (ascending id), one column per
/// member (canonical order).
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumMatrix {
    pub nodes: Vec<NodeId>,
    pub members: Vec<Member>,
    pub matrix: DMatrix<f64>,
}

/// Equilibrium matrix for an arbitrary node table and member list.
pub fn equilibrium_matrix(
    nodes: &BTreeMap<NodeId, Point3>,
    members: &[Member],
) -> Result<EquilibriumMatrix> {
    let ids: Vec<NodeId> = nodes.keys().copied().collect();
    let row_of: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(k, n)| (*n, k)).collect();
    let mut a = DMatrix::zeros(3 * ids.len(), members.len());
    for (col, m) in members.iter().enumerate() {
        let (i, j) = (m.lo(), m.hi());
        let pi = *nodes.get(&i).ok_or(MorphoError::UnknownNode(i))?;
        let pj = *nodes.get(&j).ok_or(MorphoError::UnknownNode(j))?;
        let d = pi - pj;
        if i == j || d.norm() == 0.0 {
            return Err(MorphoError::DegenerateMember(*m));
        }
        let (ri, rj) = (3 * row_of[&i], 3 * row_of[&j]);
        for (k, v) in d.to_array().into_iter().enumerate() {
            a[(ri + k, col)] = v;
            a[(rj + k, col)] = -v;
        }
    }
    Ok(EquilibriumMatrix {
        nodes: ids,
        members: members.to_vec(),
        matrix: a,
    })
}

pub fn assemble_equilibrium_matrix(state: &StructureState) -> Result<EquilibriumMatrix> {
    equilibrium_matrix(&state.nodes, &state.members)
}

/// Orthonormal basis of the self-stress space, via SVD.
pub fn nullspace_basis(a: &EquilibriumMatrix, tol: f64) -> Result<Vec<Vec<f64>>> {
    if !(tol > 0.0) {
        return Err(MorphoError::Usage("rank tolerance must be positive".into()));
    }
    if a.matrix.ncols() == 0 || a.matrix.nrows() == 0 {
        return Err(MorphoError::Usage("empty equilibrium matrix".into()));
    }
    Ok(linalg::nullspace(&a.matrix, tol)
        .basis
        .into_iter()
        .map(|v| v.iter().copied().collect())
        .collect())
}

/// Maxwell / Laman bookkeeping for a structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub nodes: usize,
    pub members: usize,
    /// `6 + |E| − 3|V|`
    pub laman_bound: i64,
    pub dim_w: i64,
    pub dof: i64,
    pub mechanisms: i64,
    pub rank_a: i64,
    /// `|V|(|V|−1)/2 − |E|`, reported only for `|V| ≤ 4` where both branches
    /// of the degrees-of-freedom rule apply.
    pub small_branch_dof: Option<i64>,
}

impl CountReport {
    /// Counts implied by `|V|`, `|E|` and the self-stress dimension alone.
    pub fn from_counts(nodes: usize, members: usize, dim_w: usize) -> Self {
        let (v, e, s) = (nodes as i64, members as i64, dim_w as i64);
        let laman_bound = 6 + e - 3 * v;
        let rank_a = e - s;
        CountReport {
            nodes,
            members,
            laman_bound,
            dim_w: s,
            dof: s - laman_bound,
            mechanisms: 3 * v - 6 - rank_a,
            rank_a,
            small_branch_dof: (nodes <= 4).then(|| v * (v - 1) / 2 - e),
        }
    }

    pub fn maxwell_holds(&self) -> bool {
        self.dim_w - self.mechanisms == self.members as i64 - 3 * self.nodes as i64 + 6
    }
}

pub fn count_report(state: &StructureState, tol: f64) -> Result<CountReport> {
    let v = state.nodes.len();
    if v < 3 {
        return Err(MorphoError::OutOfDomain(format!(
            "counting rules need at least 3 nodes, structure has {v}"
        )));
    }
    let e = state.members.len();
    let rank = if e == 0 {
        0
    } else {
        linalg::rank(&assemble_equilibrium_matrix(state)?.matrix, tol)
    };
    Ok(CountReport::from_counts(v, e, e - rank))
}

/// Cable for positive force density, strut for negative.
pub fn typology_from_stress(
    state: &StructureState,
    combination: &[f64],
    tol: f64,
) -> Result<BTreeMap<Member, MemberRole>> {
    let w = state.combined_stress(combination)?;
    let scale = linalg::max_abs(&w);
    let ambiguous: Vec<Member> = state
        .members
        .iter()
        .zip(&w)
        .filter(|(_, v)| !(v.abs() > tol * scale) || scale == 0.0)
        .map(|(m, _)| *m)
        .collect();
    if !ambiguous.is_empty() {
        return Err(MorphoError::AmbiguousTypology(ambiguous));
    }
    Ok(state
        .members
        .iter()
        .zip(&w)
        .map(|(m, v)| (*m, if *v > 0.0 { MemberRole::Cable } else { MemberRole::Strut }))
        .collect())
}

/// Typology used after every engine step: the all-ones combination, with
/// zero-force members marked as removal candidates.
pub fn default_typology(members: &[Member], basis: &[Vec<f64>], tol: f64) -> Vec<MemberRole> {
    if basis.is_empty() {
        return vec![MemberRole::Unassigned; members.len()];
    }
    let mut w = vec![0.0; members.len()];
    for col in basis {
        for (acc, v) in w.iter_mut().zip(col) {
            *acc += v;
        }
    }
    let scale = linalg::max_abs(&w);
    w.iter()
        .map(|v| {
            if scale == 0.0 || v.abs() <= tol * scale {
                MemberRole::RemovedCandidate
            } else if *v > 0.0 {
                MemberRole::Cable
            } else {
                MemberRole::Strut
            }
        })
        .collect()
}

/// `‖A·w‖ / (‖w‖·diameter)`; zero for the zero vector.
pub fn relative_residual(a: &EquilibriumMatrix, w: &[f64], diameter: f64) -> f64 {
    let n = linalg::norm(w);
    if n == 0.0 {
        return 0.0;
    }
    let v = nalgebra::DVector::from_column_slice(w);
    (&a.matrix * v).norm() / (n * diameter.max(f64::MIN_POSITIVE))
}

/// One failed structural invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub detail: String,
}

/// Checks the stored basis against the equilibrium matrix: every column is a
/// self-stress, columns are independent, and they span the whole nullspace.
pub fn audit(state: &StructureState, tol: f64) -> Result<Vec<Violation>> {
    let mut out = Vec::new();
    if state.members.is_empty() {
        return Ok(out);
    }
    let a = assemble_equilibrium_matrix(state)?;
    let diam = state.diameter();
    for (k, col) in state.basis.iter().enumerate() {
        let r = relative_residual(&a, col, diam);
        if !(r <= EQUILIBRIUM_TOL) {
            out.push(Violation {
                invariant: "equilibrium-residual".into(),
                detail: format!("column {k}: ‖A·w‖/(‖w‖·diameter) = {r:.3e} > {EQUILIBRIUM_TOL:e}"),
            });
        }
    }
    let n = state.members.len();
    let w_rank = linalg::rank(&linalg::columns_to_matrix(&state.basis, n), tol);
    if w_rank != state.basis.len() {
        out.push(Violation {
            invariant: "basis-independence".into(),
            detail: format!("{} columns but rank {w_rank}", state.basis.len()),
        });
    }
    let nullity = n - linalg::rank(&a.matrix, tol);
    if nullity != w_rank {
        out.push(Violation {
            invariant: "basis-completeness".into(),
            detail: format!("basis rank {w_rank}, self-stress space dimension {nullity}"),
        });
    }
    if out.is_empty() && !state.basis.is_empty() {
        // Same dimension and every column inside the nullspace: the spans coincide.
        let ns = nullspace_basis(&a, tol)?;
        let q = linalg::orthonormal_span(&ns, n, tol);
        for (k, col) in state.basis.iter().enumerate() {
            let d = linalg::distance_from_span(&q, col);
            if d > 1e-8 {
                out.push(Violation {
                    invariant: "basis-span".into(),
                    detail: format!("column {k} lies {d:.3e} outside the nullspace"),
                });
            }
        }
    }
    let declared: BTreeSet<NodeId> = state.members.iter().flat_map(|m| m.ends()).collect();
    for n in declared {
        if !state.nodes.contains_key(&n) {
            out.push(Violation {
                invariant: "member-endpoints".into(),
                detail: format!("node {n} missing"),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_RANK_TOL;

    fn nodes(pts: &[(u32, [f64; 3])]) -> BTreeMap<NodeId, Point3> {
        pts.iter().map(|(i, p)| (NodeId(*i), Point3::from(*p))).collect()
    }

    #[test]
    fn single_member_column() {
        let n = nodes(&[(0, [0., 0., 0.]), (1, [1., 0., 0.])]);
        let a = equilibrium_matrix(&n, &[Member::new(0u32, 1u32)]).unwrap();
        let col: Vec<f64> = a.matrix.column(0).iter().copied().collect();
        assert_eq!(col, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let ns = nullspace_basis(&a, DEFAULT_RANK_TOL).unwrap();
        assert!(ns.is_empty());
    }

    #[test]
    fn coincident_endpoints_rejected() {
        let n = nodes(&[(0, [0., 0., 0.]), (1, [0., 0., 0.])]);
        assert!(matches!(
            equilibrium_matrix(&n, &[Member::new(0u32, 1u32)]),
            Err(MorphoError::DegenerateMember(_))
        ));
    }

    #[test]
    fn empty_matrix_is_usage_error() {
        let a = EquilibriumMatrix {
            nodes: vec![],
            members: vec![],
            matrix: DMatrix::zeros(0, 0),
        };
        assert!(matches!(nullspace_basis(&a, 1e-9), Err(MorphoError::Usage(_))));
    }

    #[test]
    fn member_parsing() {
        assert_eq!("2-3".parse::<Member>().unwrap(), Member::new(2u32, 3u32));
        assert_eq!("(5,1)".parse::<Member>().unwrap(), Member::new(1u32, 5u32));
        assert!("4-4".parse::<Member>().is_err());
        assert!("1-2-3".parse::<Member>().is_err());
    }

    #[test]
    fn closed_form_counts() {
        let k5 = CountReport::from_counts(5, 10, 1);
        assert_eq!((k5.laman_bound, k5.mechanisms), (1, 0));
        let bunny = CountReport::from_counts(34, 134, 41);
        assert_eq!(bunny.mechanisms, 3);
        assert!(bunny.maxwell_holds());
        let high_res = CountReport::from_counts(528, 2126, 548);
        assert_eq!(high_res.laman_bound, 548);
        assert_eq!(high_res.mechanisms, 0);
        assert_eq!(CountReport::from_counts(4, 6, 0).small_branch_dof, Some(0));
    }

    #[test]
    fn too_few_nodes_is_out_of_domain() {
        let n = nodes(&[(0, [0., 0., 0.]), (1, [1., 0., 0.])]);
        let s = StructureState::new(
            n,
            vec![Member::new(0u32, 1u32)],
            vec![],
            vec![],
            vec![MemberRole::Unassigned],
        )
        .unwrap();
        assert!(matches!(count_report(&s, 1e-9), Err(MorphoError::OutOfDomain(_))));
    }
}
