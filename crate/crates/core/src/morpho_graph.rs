//! History graph of the morphogenesis: one vertex per unicellular organism
//! (cell, virtual cell or fused cell), one edge per pair sharing members.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cell::CellKind;
use crate::error::{MorphoError, Result};
use crate::structure::Member;
use crate::{CellId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrganismKind {
    Regular,
    Virtual,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Organism {
    pub id: CellId,
    pub kind: OrganismKind,
    /// Type I / II, for regular cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_kind: Option<CellKind>,
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeSet<Member>,
    /// Index of the step that created it.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adjacency {
    pub cells: [CellId; 2],
    pub shared: BTreeSet<Member>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct MorphoGraph {
    cells: BTreeMap<CellId, Organism>,
    adjacency: BTreeMap<(CellId, CellId), BTreeSet<Member>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    cells: Vec<Organism>,
    adjacency: Vec<Adjacency>,
}

impl TryFrom<RawGraph> for MorphoGraph {
    type Error = MorphoError;
    fn try_from(r: RawGraph) -> Result<Self> {
        MorphoGraph::from_parts(r.cells, r.adjacency)
    }
}

impl From<MorphoGraph> for RawGraph {
    fn from(g: MorphoGraph) -> Self {
        RawGraph {
            adjacency: g.adjacency().collect(),
            cells: g.cells.into_values().collect(),
        }
    }
}

impl MorphoGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cells(&self) -> &BTreeMap<CellId, Organism> {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> Option<&Organism> {
        self.cells.get(&id)
    }

    pub fn adjacency(&self) -> impl Iterator<Item = Adjacency> + '_ {
        self.adjacency.iter().map(|((a, b), s)| Adjacency {
            cells: [*a, *b],
            shared: s.clone(),
        })
    }

    pub fn shared(&self, a: CellId, b: CellId) -> Option<&BTreeSet<Member>> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.adjacency.get(&key)
    }

    pub fn count(&self, kind: OrganismKind) -> usize {
        self.cells.values().filter(|c| c.kind == kind).count()
    }

    fn next_id(&self) -> CellId {
        CellId(self.cells.keys().next_back().map_or(1, |c| c.0 + 1))
    }

    /// Adds an organism over `edges` and links it to every organism it
    /// shares members with.
    pub fn add(
        &mut self,
        kind: OrganismKind,
        cell_kind: Option<CellKind>,
        edges: BTreeSet<Member>,
        step: usize,
    ) -> CellId {
        let id = self.next_id();
        let nodes = edges.iter().flat_map(|m| m.ends()).collect();
        for (other, o) in &self.cells {
            let shared: BTreeSet<Member> = o.edges.intersection(&edges).copied().collect();
            if !shared.is_empty() {
                self.adjacency.insert((*other, id), shared);
            }
        }
        self.cells.insert(
            id,
            Organism {
                id,
                kind,
                cell_kind,
                nodes,
                edges,
                step,
            },
        );
        id
    }

    /// Rebuilds from serialized parts, checking the adjacency invariant.
    pub fn from_parts(cells: Vec<Organism>, adjacency: Vec<Adjacency>) -> Result<Self> {
        let mut g = MorphoGraph::new();
        for c in cells {
            if g.cells.insert(c.id, c).is_some() {
                return Err(MorphoError::Usage("duplicate cell id".into()));
            }
        }
        for a in adjacency {
            let [x, y] = a.cells;
            let key = if x <= y { (x, y) } else { (y, x) };
            g.adjacency.insert(key, a.shared);
        }
        g.check()?;
        Ok(g)
    }

    /// Every adjacency entry equals the intersection of the two edge sets,
    /// and no intersecting pair is missing.
    pub fn check(&self) -> Result<()> {
        let ids: Vec<CellId> = self.cells.keys().copied().collect();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let inter: BTreeSet<Member> = self.cells[a].edges.intersection(&self.cells[b].edges).copied().collect();
                let stored = self.adjacency.get(&(*a, *b));
                let ok = match stored {
                    Some(s) => *s == inter,
                    None => inter.is_empty(),
                };
                if !ok {
                    return Err(MorphoError::Invariant(format!(
                        "adjacency of {a} and {b} does not match their shared members"
                    )));
                }
            }
        }
        for (a, b) in self.adjacency.keys() {
            if !self.cells.contains_key(a) || !self.cells.contains_key(b) {
                return Err(MorphoError::Invariant(format!("adjacency refers to missing cell {a} or {b}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(pairs: &[(u32, u32)]) -> BTreeSet<Member> {
        pairs.iter().map(|(a, b)| Member::new(*a, *b)).collect()
    }

    #[test]
    fn adjacency_is_the_intersection() {
        let mut g = MorphoGraph::new();
        let a = g.add(OrganismKind::Regular, None, edges(&[(1, 2), (2, 3), (1, 3)]), 0);
        let b = g.add(OrganismKind::Regular, None, edges(&[(2, 3), (3, 4)]), 1);
        let c = g.add(OrganismKind::Virtual, None, edges(&[(5, 6)]), 1);
        assert_eq!(g.shared(b, a), Some(&edges(&[(2, 3)])));
        assert_eq!(g.shared(a, c), None);
        assert_eq!(g.count(OrganismKind::Regular), 2);
        g.check().unwrap();
        let rebuilt = MorphoGraph::from_parts(g.cells().values().cloned().collect(), g.adjacency().collect()).unwrap();
        assert_eq!(rebuilt, g);
        let bad = MorphoGraph::from_parts(g.cells().values().cloned().collect(), vec![]);
        assert!(bad.is_err());
    }
}
