//! The generative loop: seed, adhesion, fusion and placement, with the
//! self-stress basis kept complete after every step.
//!
//! Every operation takes an immutable [`Design`] and returns a new one plus a
//! [`StepLog`]. The observed change in the self-stress dimension always comes
//! from an SVD of the new equilibrium matrix, never from the engine's own
//! bookkeeping.

mod virtual_cells;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cell::{cell_self_stress, classify_cell, CellSpec};
use crate::error::{MorphoError, Result};
use crate::geometry::{Point3, DEFAULT_GP_TOL};
use crate::linalg::{self, DEFAULT_RANK_TOL};
use crate::morpho_graph::{MorphoGraph, OrganismKind};
use crate::par::Execution;
use crate::placement::{self, PlacementRequest};
use crate::structure::{self, default_typology, CountReport, Member, StructureState};
use crate::{CellId, NodeId};

pub use virtual_cells::{find_virtual_cells, VirtualSearch, VirtualState};

/// Default number of candidate evaluations before the virtual-cell search
/// gives up.
pub const DEFAULT_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Relative singular-value threshold for rank decisions.
    pub rank_tol: f64,
    /// Coplanarity tolerance for new cells, relative to `diameter³`.
    pub gp_tol: f64,
    /// A coefficient counts as zero below `zero_tol · ‖column‖`.
    pub zero_tol: f64,
    /// Virtual-cell candidate budget.
    pub budget: usize,
    pub execution: Execution,
    /// Run the structural audit after every step.
    pub audit: bool,
    /// Largest accepted distance-like residual of a placed node, relative to
    /// the structure diameter.
    pub placement_tol: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            gp_tol: DEFAULT_GP_TOL,
            zero_tol: 1e-9,
            budget: DEFAULT_BUDGET,
            execution: Execution::Parallel,
            audit: true,
            placement_tol: 1e-8,
        }
    }
}

/// Structure plus its cell history.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Design {
    pub state: StructureState,
    pub morpho: MorphoGraph,
}

/// A cell to adhere. Nodes already in the structure keep their coordinates;
/// new nodes must be given in `new_nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellInput {
    pub nodes: [NodeId; 5],
    #[serde(default)]
    pub new_nodes: BTreeMap<NodeId, Point3>,
    /// Defaults to the first two listed nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Member>,
    #[serde(default = "one")]
    pub anchor_value: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MorphoStep {
    Seed(CellSpec),
    Adhere(CellInput),
    Fuse {
        members: Vec<Member>,
    },
    /// Moves `node` to `at` and rebuilds the design with the new position.
    /// With a constraint, the point must lie on the corresponding surface.
    Place {
        node: NodeId,
        at: Point3,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constraint: Option<PlacementRequest>,
    },
}

impl MorphoStep {
    pub fn name(&self) -> &'static str {
        match self {
            MorphoStep::Seed(_) => "seed",
            MorphoStep::Adhere(_) => "adhere",
            MorphoStep::Fuse { .. } => "fuse",
            MorphoStep::Place { .. } => "place",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedCell {
    pub id: CellId,
    pub kind: OrganismKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub member: Member,
    /// Cell whose state was used as pivot and dropped; `None` when no state
    /// carried the member any more.
    pub pivot: Option<CellId>,
    /// Largest `|coefficient| / ‖column‖` left on the member before the row
    /// was deleted.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisTransform {
    Initial,
    Appended {
        regular: usize,
        virtual_states: usize,
        candidates_evaluated: usize,
    },
    Eliminated {
        eliminations: Vec<Elimination>,
    },
    Replayed {
        node: NodeId,
        from: Point3,
        to: Point3,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub index: usize,
    pub op: String,
    pub delta_edges: i64,
    pub delta_nodes: i64,
    /// `e − 3v`.
    pub predicted_delta_dim: i64,
    /// From the SVD nullity before and after the step.
    pub observed_delta_dim: i64,
    /// Prediction and observation agree. Placed multi-edge fusions are
    /// deliberately non-generic and cancel several members with one state.
    pub generic: bool,
    pub dim_w: usize,
    pub mechanisms: i64,
    pub cells_created: Vec<CreatedCell>,
    pub transform: BasisTransform,
}

/// Change in the self-stress dimension for `e` added edges and `v` added
/// nodes (negative for removals).
pub fn expected_delta_dim(e: i64, v: i64) -> i64 {
    e - 3 * v
}

fn svd_nullity(state: &StructureState, tol: f64) -> Result<usize> {
    if state.members().is_empty() {
        return Ok(0);
    }
    let a = structure::assemble_equilibrium_matrix(state)?;
    Ok(state.members().len() - linalg::rank(&a.matrix, tol))
}

fn finish(
    design: Design,
    old: &StructureState,
    old_nullity: usize,
    index: usize,
    op: &str,
    cells_created: Vec<CreatedCell>,
    transform: BasisTransform,
    cfg: &EngineConfig,
) -> Result<(Design, StepLog)> {
    let new = &design.state;
    let nullity = svd_nullity(new, cfg.rank_tol)?;
    if nullity != new.dim_w() {
        return Err(MorphoError::Invariant(format!(
            "basis holds {} states but the self-stress space has dimension {nullity}",
            new.dim_w()
        )));
    }
    if cfg.audit {
        let violations = structure::audit(new, cfg.rank_tol)?;
        if let Some(v) = violations.first() {
            return Err(MorphoError::Invariant(format!("{}: {}", v.invariant, v.detail)));
        }
        design.morpho.check()?;
    }
    let delta_edges = new.members().len() as i64 - old.members().len() as i64;
    let delta_nodes = new.nodes().len() as i64 - old.nodes().len() as i64;
    // Starting from nothing also brings in the six rigid-body motions.
    let rigid = if old.nodes().is_empty() { 6 } else { 0 };
    let predicted = expected_delta_dim(delta_edges, delta_nodes) + rigid;
    let observed = nullity as i64 - old_nullity as i64;
    let mechanisms = if new.nodes().len() >= 3 {
        CountReport::from_counts(new.nodes().len(), new.members().len(), nullity).mechanisms
    } else {
        0
    };
    let log = StepLog {
        index,
        op: op.to_string(),
        delta_edges,
        delta_nodes,
        predicted_delta_dim: predicted,
        observed_delta_dim: observed,
        generic: predicted == observed,
        dim_w: nullity,
        mechanisms,
        cells_created,
        transform,
    };
    if !log.generic {
        log::info!(
            "step {index} ({op}) is non-generic: predicted {predicted:+}, observed {observed:+}"
        );
    }
    Ok((design, log))
}

/// Starts a structure from one cell.
pub fn seed(spec: &CellSpec, cfg: &EngineConfig) -> Result<(Design, StepLog)> {
    let spec = CellSpec::with_tolerance(*spec.nodes(), *spec.coords(), spec.anchor(), spec.anchor_value(), cfg.gp_tol)?;
    let stress = cell_self_stress(&spec)?;
    let kind = classify_cell(&stress).ok();
    let members = spec.members();
    let column: Vec<f64> = members.iter().map(|m| stress.get(m).expect("K5 member")).collect();
    let mut morpho = MorphoGraph::new();
    let id = morpho.add(OrganismKind::Regular, kind, members.iter().copied().collect(), 0);
    let typology = default_typology(&members, std::slice::from_ref(&column), cfg.zero_tol);
    let state = StructureState::new(spec.coord_map(), members, vec![column], vec![id], typology)?;
    let empty = StructureState::default();
    finish(
        Design { state, morpho },
        &empty,
        0,
        0,
        "seed",
        vec![CreatedCell {
            id,
            kind: OrganismKind::Regular,
        }],
        BasisTransform::Initial,
        cfg,
    )
}

/// Resolves an adhesion input against the structure into a full cell spec.
pub fn resolve_cell(state: &StructureState, input: &CellInput, cfg: &EngineConfig) -> Result<(CellSpec, usize)> {
    let scale = state.diameter().max(1.0);
    let mut coords = [Point3::default(); 5];
    let mut shared = 0;
    for (i, n) in input.nodes.iter().enumerate() {
        match (state.node(*n), input.new_nodes.get(n)) {
            (Some(p), given) => {
                if let Some(q) = given {
                    if p.distance(q) > 1e-9 * scale {
                        return Err(MorphoError::Usage(format!(
                            "node {n} exists at {p} but the cell gives {q}"
                        )));
                    }
                }
                coords[i] = p;
                shared += 1;
            }
            (None, Some(q)) => {
                if !q.is_finite() {
                    return Err(MorphoError::Usage(format!("node {n} has non-finite coordinates")));
                }
                coords[i] = *q;
            }
            (None, None) => {
                return Err(MorphoError::Usage(format!("new node {n} has no coordinates")));
            }
        }
    }
    for n in input.new_nodes.keys() {
        if !input.nodes.contains(n) {
            return Err(MorphoError::Usage(format!("coordinates given for node {n}, which is not in the cell")));
        }
    }
    let anchor = input.anchor.unwrap_or_else(|| Member::new(input.nodes[0], input.nodes[1]));
    let spec = CellSpec::with_tolerance(input.nodes, coords, anchor, input.anchor_value, cfg.gp_tol)?;
    Ok((spec, shared))
}

/// Glues a cell onto the structure. All members are kept; the basis gains
/// the cell's own state plus any virtual-cell states the new topology
/// creates.
pub fn adhere(design: &Design, input: &CellInput, index: usize, cfg: &EngineConfig) -> Result<(Design, StepLog)> {
    let old = &design.state;
    let (spec, shared) = resolve_cell(old, input, cfg)?;
    if shared < 3 {
        return Err(MorphoError::MechanismRisk { shared });
    }
    let cell_members = spec.members();
    let added: Vec<Member> = cell_members.iter().filter(|m| !old.has_member(m)).copied().collect();
    if added.is_empty() {
        return Err(MorphoError::RedundantCell);
    }
    let stress = cell_self_stress(&spec)?;
    let kind = classify_cell(&stress).ok();

    let (mut nodes, members, basis, mut origins, _) = old.clone().into_parts();
    for (n, p) in spec.nodes().iter().zip(spec.coords()) {
        nodes.entry(*n).or_insert(*p);
    }
    let mut all: Vec<Member> = members.iter().chain(&added).copied().collect();
    all.sort();
    let position: BTreeMap<Member, usize> = all.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut cols: Vec<Vec<f64>> = basis
        .iter()
        .map(|c| {
            let mut v = vec![0.0; all.len()];
            for (m, x) in members.iter().zip(c) {
                v[position[m]] = *x;
            }
            v
        })
        .collect();
    let mut cell_col = vec![0.0; all.len()];
    for (m, w) in stress.entries() {
        cell_col[position[m]] = *w;
    }
    cols.push(cell_col);

    let mut morpho = design.morpho.clone();
    let cell_id = morpho.add(OrganismKind::Regular, kind, cell_members.iter().copied().collect(), index);
    origins.push(cell_id);
    let mut created = vec![CreatedCell {
        id: cell_id,
        kind: OrganismKind::Regular,
    }];

    let typology = default_typology(&all, &cols, cfg.zero_tol);
    let mut state = StructureState::from_parts_unchecked(nodes, all, cols, origins, typology);
    let old_nullity = old.dim_w();
    let nullity = svd_nullity(&state, cfg.rank_tol)?;
    let needed = nullity.saturating_sub(state.dim_w());
    let mut evaluated = 0;
    let mut virtual_states = 0;
    if needed > 0 {
        let interim = Design { state, morpho };
        let search = find_virtual_cells(&interim, needed, cfg)?;
        evaluated = search.evaluated;
        let Design { state: s, morpho: mut m } = interim;
        let (nodes, all, mut cols, mut origins, _) = s.into_parts();
        for v in search.states {
            let id = m.add(OrganismKind::Virtual, None, v.edges.clone(), index);
            created.push(CreatedCell {
                id,
                kind: OrganismKind::Virtual,
            });
            cols.push(v.vector);
            origins.push(id);
            virtual_states += 1;
        }
        let typology = default_typology(&all, &cols, cfg.zero_tol);
        state = StructureState::from_parts_unchecked(nodes, all, cols, origins, typology);
        morpho = m;
    }
    let mech_before = design_mechanisms(old, cfg);
    let result = finish(
        Design { state, morpho },
        old,
        old_nullity,
        index,
        "adhere",
        created,
        BasisTransform::Appended {
            regular: 1,
            virtual_states,
            candidates_evaluated: evaluated,
        },
        cfg,
    )?;
    if shared == 3 && result.1.mechanisms > mech_before {
        log::warn!(
            "step {index}: adhesion on three nodes raised the mechanism count from {mech_before} to {}",
            result.1.mechanisms
        );
    }
    Ok(result)
}

fn design_mechanisms(state: &StructureState, cfg: &EngineConfig) -> i64 {
    structure::count_report(state, cfg.rank_tol).map_or(0, |c| c.mechanisms)
}

/// Picks the pivot state for eliminating a member: the newest regular cell
/// carrying it, unless its coefficient is tiny next to the largest one, in
/// which case the largest coefficient wins.
fn choose_pivot(coefs: &[f64], origins: &[CellId], morpho: &MorphoGraph) -> usize {
    let max = coefs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let newest_regular = coefs
        .iter()
        .enumerate()
        .filter(|(k, c)| {
            **c != 0.0
                && c.abs() >= 1e-2 * max
                && morpho.cell(origins[*k]).map(|o| o.kind) == Some(OrganismKind::Regular)
        })
        .max_by_key(|(k, _)| origins[*k]);
    if let Some((k, _)) = newest_regular {
        return k;
    }
    let mut best = 0;
    for (k, c) in coefs.iter().enumerate() {
        if c.abs() > coefs[best].abs() {
            best = k;
        }
    }
    best
}

/// Removes members by cancelling their force densities. Each member with
/// support costs one state; states already cleared by an earlier elimination
/// in the same batch cost nothing.
pub fn fuse(design: &Design, remove: &[Member], index: usize, cfg: &EngineConfig) -> Result<(Design, StepLog)> {
    let old = &design.state;
    if remove.is_empty() {
        return Err(MorphoError::Usage("fuse needs at least one member".into()));
    }
    let unique: BTreeSet<Member> = remove.iter().copied().collect();
    if unique.len() != remove.len() {
        return Err(MorphoError::Usage("member listed twice in fuse".into()));
    }
    let mut rows = Vec::with_capacity(remove.len());
    for m in remove {
        rows.push(old.member_index(m).ok_or(MorphoError::UnknownMember(*m))?);
    }
    let (nodes, members, basis, origins, _) = old.clone().into_parts();
    let carried = |row: usize| {
        basis
            .iter()
            .any(|c| c[row].abs() > cfg.zero_tol * linalg::norm(c))
    };
    let supported: Vec<bool> = rows.iter().map(|r| carried(*r)).collect();

    let mut cols = basis;
    let mut origins = origins;
    let mut modified = vec![false; cols.len()];
    let mut eliminations = Vec::new();
    for ((m, &row), had_support) in remove.iter().zip(&rows).zip(&supported) {
        let live = cols
            .iter()
            .any(|c| c[row].abs() > cfg.zero_tol * linalg::norm(c));
        if !live {
            if !had_support {
                return Err(MorphoError::CannotFuse(*m));
            }
            let residual = cols
                .iter()
                .map(|c| c[row].abs() / linalg::norm(c).max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            for c in cols.iter_mut() {
                c[row] = 0.0;
            }
            eliminations.push(Elimination {
                member: *m,
                pivot: None,
                residual,
            });
            continue;
        }
        let coefs: Vec<f64> = cols.iter().map(|c| c[row]).collect();
        let p = choose_pivot(&coefs, &origins, &design.morpho);
        let pivot = cols[p].clone();
        let pe = pivot[row];
        let mut residual: f64 = 0.0;
        for (k, c) in cols.iter_mut().enumerate() {
            if k == p || c[row] == 0.0 {
                continue;
            }
            let f = c[row] / pe;
            for (x, y) in c.iter_mut().zip(&pivot) {
                *x -= f * y;
            }
            residual = residual.max(c[row].abs() / linalg::norm(c).max(f64::MIN_POSITIVE));
            c[row] = 0.0;
            modified[k] = true;
        }
        eliminations.push(Elimination {
            member: *m,
            pivot: Some(origins[p]),
            residual,
        });
        cols.remove(p);
        origins.remove(p);
        modified.remove(p);
    }

    let drop: BTreeSet<usize> = rows.iter().copied().collect();
    let kept: Vec<Member> = members
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, m)| *m)
        .collect();
    let cols: Vec<Vec<f64>> = cols
        .into_iter()
        .map(|c| c.into_iter().enumerate().filter(|(i, _)| !drop.contains(i)).map(|(_, v)| v).collect())
        .collect();
    if !cols.is_empty() && linalg::rank(&linalg::columns_to_matrix(&cols, kept.len()), cfg.rank_tol) != cols.len() {
        return Err(MorphoError::NumericDegeneracy(
            "basis became rank deficient during elimination".into(),
        ));
    }
    let used: BTreeSet<NodeId> = kept.iter().flat_map(|m| m.ends()).collect();
    let nodes: BTreeMap<NodeId, Point3> = nodes.into_iter().filter(|(n, _)| used.contains(n)).collect();

    let mut morpho = design.morpho.clone();
    let mut created = Vec::new();
    for (k, c) in cols.iter().enumerate() {
        if !modified[k] {
            continue;
        }
        let scale = linalg::max_abs(c);
        let support = kept
            .iter()
            .zip(c)
            .filter(|(_, v)| v.abs() > cfg.zero_tol * scale)
            .map(|(m, _)| *m)
            .collect();
        let id = morpho.add(OrganismKind::Fused, None, support, index);
        origins[k] = id;
        created.push(CreatedCell {
            id,
            kind: OrganismKind::Fused,
        });
    }
    let typology = default_typology(&kept, &cols, cfg.zero_tol);
    let state = StructureState::from_parts_unchecked(nodes, kept, cols, origins, typology);
    finish(
        Design { state, morpho },
        old,
        old.dim_w(),
        index,
        "fuse",
        created,
        BasisTransform::Eliminated { eliminations },
        cfg,
    )
}

/// Expected values a script can attach to a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expect {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim_w: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mechanisms: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub virtual_states: Option<usize>,
}

impl Expect {
    pub fn is_empty(&self) -> bool {
        *self == Expect::default()
    }

    fn check(&self, index: usize, design: &Design, log: &StepLog) -> Result<()> {
        let s = &design.state;
        let virtual_states = log.cells_created.iter().filter(|c| c.kind == OrganismKind::Virtual).count();
        let checks: [(&str, Option<i64>, i64); 5] = [
            ("dim_w", self.dim_w.map(|v| v as i64), s.dim_w() as i64),
            ("nodes", self.nodes.map(|v| v as i64), s.nodes().len() as i64),
            ("members", self.members.map(|v| v as i64), s.members().len() as i64),
            ("mechanisms", self.mechanisms, log.mechanisms),
            ("virtual_states", self.virtual_states.map(|v| v as i64), virtual_states as i64),
        ];
        for (what, expected, observed) in checks {
            if let Some(e) = expected {
                if e != observed {
                    return Err(MorphoError::Expectation {
                        index,
                        what: what.into(),
                        expected: e.to_string(),
                        observed: observed.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(flatten)]
    pub step: MorphoStep,
    #[serde(default, skip_serializing_if = "Expect::is_empty")]
    pub expect: Expect,
}

impl From<MorphoStep> for ScriptStep {
    fn from(step: MorphoStep) -> Self {
        ScriptStep {
            step,
            expect: Expect::default(),
        }
    }
}

/// A replayable sequence of steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MorphoScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub steps: Vec<ScriptStep>,
}

impl MorphoScript {
    pub fn new(name: &str, steps: Vec<ScriptStep>) -> Self {
        Self {
            name: Some(name.to_string()),
            steps,
        }
    }
}

/// Result of folding a script.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub steps: Vec<MorphoStep>,
    pub design: Design,
    pub log: Vec<StepLog>,
    /// Steps with placements folded into the coordinates; what gets
    /// replayed when a node moves.
    effective: Vec<MorphoStep>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues from a design built elsewhere, e.g. a loaded structure
    /// file. Nodes of such a design cannot be placed: there is no step to
    /// replay them from.
    pub fn resume(design: Design) -> Self {
        Run {
            design,
            ..Self::default()
        }
    }

    /// Applies one step. On error `self` is left untouched.
    pub fn apply(&mut self, step: MorphoStep, cfg: &EngineConfig) -> Result<&StepLog> {
        let (design, log, effective) = self.preview(&step, cfg)?;
        self.steps.push(step);
        self.design = design;
        self.log.push(log);
        self.effective = effective;
        Ok(self.log.last().expect("just pushed"))
    }

    /// What applying `step` would produce, without committing it.
    pub fn preview(&self, step: &MorphoStep, cfg: &EngineConfig) -> Result<(Design, StepLog, Vec<MorphoStep>)> {
        let index = self.steps.len();
        let empty = self.design.state.nodes().is_empty();
        let mut effective = self.effective.clone();
        let (design, log) = match step {
            MorphoStep::Seed(spec) => {
                if !empty {
                    return Err(MorphoError::Usage("seed must be the first step".into()).at_step(index));
                }
                seed(spec, cfg)
            }
            _ if empty => {
                return Err(MorphoError::Usage("the first step must be a seed".into()).at_step(index));
            }
            MorphoStep::Adhere(input) => adhere(&self.design, input, index, cfg),
            MorphoStep::Fuse { members } => fuse(&self.design, members, index, cfg),
            MorphoStep::Place { node, at, constraint } => {
                return self.place(*node, *at, constraint.as_ref(), cfg).map_err(|e| e.at_step(index));
            }
        }
        .map_err(|e| e.at_step(index))?;
        effective.push(step.clone());
        Ok((design, log, effective))
    }

    fn place(
        &self,
        node: NodeId,
        at: Point3,
        constraint: Option<&PlacementRequest>,
        cfg: &EngineConfig,
    ) -> Result<(Design, StepLog, Vec<MorphoStep>)> {
        let index = self.steps.len();
        let from = self.design.state.node(node).ok_or(MorphoError::UnknownNode(node))?;
        if !at.is_finite() {
            return Err(MorphoError::Usage("placement point is not finite".into()));
        }
        if let Some(req) = constraint {
            let placement = placement::placement_for(&self.design, req)?;
            if placement.free_node != node {
                return Err(MorphoError::Usage(format!(
                    "the constraint positions node {}, not node {node}",
                    placement.free_node
                )));
            }
            let tolerance = cfg.placement_tol * self.design.state.diameter().max(1.0);
            let residual = placement.residual(at);
            if !(residual <= tolerance) {
                return Err(MorphoError::PlacementRejected { residual, tolerance });
            }
        }
        let effective = relocate(&self.effective, node, at)?;
        let mut replay = Run::new();
        for s in &effective {
            replay.apply(s.clone(), cfg)?;
        }
        let old = &self.design.state;
        let design = replay.design;
        let nullity = design.state.dim_w();
        let log = StepLog {
            index,
            op: "place".into(),
            delta_edges: design.state.members().len() as i64 - old.members().len() as i64,
            delta_nodes: design.state.nodes().len() as i64 - old.nodes().len() as i64,
            predicted_delta_dim: 0,
            observed_delta_dim: nullity as i64 - old.dim_w() as i64,
            generic: nullity == old.dim_w(),
            dim_w: nullity,
            mechanisms: design_mechanisms(&design.state, cfg),
            cells_created: Vec::new(),
            transform: BasisTransform::Replayed { node, from, to: at },
        };
        Ok((design, log, effective))
    }
}

/// Rewrites the step that introduced `node` so it starts at `at`.
fn relocate(steps: &[MorphoStep], node: NodeId, at: Point3) -> Result<Vec<MorphoStep>> {
    let mut out = steps.to_vec();
    for s in out.iter_mut() {
        match s {
            MorphoStep::Seed(spec) => {
                if let Some(i) = spec.nodes().iter().position(|n| *n == node) {
                    let mut coords = *spec.coords();
                    coords[i] = at;
                    *spec = CellSpec::with_tolerance(*spec.nodes(), coords, spec.anchor(), spec.anchor_value(), 0.0)?;
                    return Ok(out);
                }
            }
            MorphoStep::Adhere(input) => {
                if let Some(p) = input.new_nodes.get_mut(&node) {
                    *p = at;
                    return Ok(out);
                }
            }
            _ => {}
        }
    }
    Err(MorphoError::Usage(format!(
        "node {node} was not introduced by a replayable step and cannot be placed"
    )))
}

/// Failure part-way through a script; `partial` holds every committed step.
#[derive(Debug, Clone)]
pub struct ScriptFailure {
    pub error: MorphoError,
    pub partial: Run,
}

impl std::fmt::Display for ScriptFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} steps committed)", self.error, self.partial.steps.len())
    }
}

impl std::error::Error for ScriptFailure {}

impl From<ScriptFailure> for MorphoError {
    fn from(f: ScriptFailure) -> Self {
        f.error
    }
}

/// Folds a script from its seed, checking per-step expectations.
pub fn run_script(script: &MorphoScript, cfg: &EngineConfig) -> std::result::Result<Run, ScriptFailure> {
    let mut run = Run::new();
    if script.steps.is_empty() {
        return Err(ScriptFailure {
            error: MorphoError::Usage("empty script: no seed step".into()),
            partial: run,
        });
    }
    for (i, s) in script.steps.iter().enumerate() {
        if let Err(error) = run.apply(s.step.clone(), cfg) {
            return Err(ScriptFailure { error, partial: run });
        }
        let log = run.log.last().expect("step committed").clone();
        if let Err(error) = s.expect.check(i, &run.design, &log) {
            return Err(ScriptFailure { error, partial: run });
        }
    }
    Ok(run)
}
