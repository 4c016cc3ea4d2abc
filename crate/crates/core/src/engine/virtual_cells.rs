//! Search for virtual cells: unicellular substructures that arise from the
//! interaction of cells and whose states complete the self-stress basis.
//!
//! 1. Strip one private edge from every regular or fused organism. An edge
//!    at a node of degree four takes the node and its other edges with it.
//! 2. With `r` states left, remove `r − 1` further edges, preferring edges
//!    whose two end nodes both have degree five or more.
//! 3. A survivor with exactly one state gives a candidate, kept when it is
//!    independent of the basis and of the states found so far.
//! 4. Choices are enumerated deterministically until enough states are found
//!    or the budget runs out.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use super::{Design, EngineConfig};
use crate::error::{MorphoError, Result};
use crate::geometry::Point3;
use crate::linalg;
use crate::morpho_graph::OrganismKind;
use crate::par;
use crate::structure::{equilibrium_matrix, Member};
use crate::NodeId;

/// Minimum distance (relative) from the current span for a new state.
const INDEPENDENCE_TOL: f64 = 1e-6;
/// Candidates evaluated per parallel batch.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualState {
    /// Full-length, unit-norm, first non-zero entry positive.
    pub vector: Vec<f64>,
    pub edges: BTreeSet<Member>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSearch {
    pub states: Vec<VirtualState>,
    pub evaluated: usize,
}

struct Context<'a> {
    nodes: &'a BTreeMap<NodeId, Point3>,
    members: &'a [Member],
    cfg: &'a EngineConfig,
}

/// Outcome of evaluating one subgraph.
struct Survivor {
    /// Member indices still present.
    edges: Vec<usize>,
    nullspace: Vec<Vec<f64>>,
}

impl Context<'_> {
    fn degrees(&self, edges: &[usize]) -> BTreeMap<NodeId, usize> {
        let mut d = BTreeMap::new();
        for &e in edges {
            for n in self.members[e].ends() {
                *d.entry(n).or_insert(0) += 1;
            }
        }
        d
    }

    /// Removes `cut` from `edges`, applying the degree-four rule against the
    /// degrees before the cut.
    fn strip(&self, edges: &[usize], cut: &[usize]) -> Vec<usize> {
        let deg = self.degrees(edges);
        let mut gone_nodes = BTreeSet::new();
        for &e in cut {
            for n in self.members[e].ends() {
                if deg.get(&n).copied().unwrap_or(0) <= 4 {
                    gone_nodes.insert(n);
                }
            }
        }
        edges
            .iter()
            .copied()
            .filter(|e| !cut.contains(e) && !self.members[*e].ends().iter().any(|n| gone_nodes.contains(n)))
            .collect()
    }

    fn evaluate(&self, edges: Vec<usize>) -> Result<Survivor> {
        if edges.is_empty() {
            return Ok(Survivor {
                edges,
                nullspace: Vec::new(),
            });
        }
        let used: BTreeSet<NodeId> = edges.iter().flat_map(|e| self.members[*e].ends()).collect();
        let nodes: BTreeMap<NodeId, Point3> = used.iter().map(|n| (*n, self.nodes[n])).collect();
        let ms: Vec<Member> = edges.iter().map(|e| self.members[*e]).collect();
        let a = equilibrium_matrix(&nodes, &ms)?;
        let ns = linalg::nullspace(&a.matrix, self.cfg.rank_tol);
        Ok(Survivor {
            edges,
            nullspace: ns.basis.into_iter().map(|v| v.iter().copied().collect()).collect(),
        })
    }

    fn embed(&self, s: &Survivor) -> Vec<f64> {
        let mut v = vec![0.0; self.members.len()];
        for (e, x) in s.edges.iter().zip(&s.nullspace[0]) {
            v[*e] = *x;
        }
        let n = linalg::norm(&v);
        let scale = linalg::max_abs(&v);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12 * scale)
            .map_or(1.0, |x| x.signum());
        for x in v.iter_mut() {
            *x *= sign / n;
            if x.abs() <= 1e-13 {
                *x = 0.0;
            }
        }
        v
    }
}

struct Collector<'a> {
    ctx: &'a Context<'a>,
    span: Vec<Vec<f64>>,
    q: DMatrix<f64>,
    found: Vec<VirtualState>,
    needed: usize,
    evaluated: usize,
}

impl Collector<'_> {
    fn done(&self) -> bool {
        self.found.len() >= self.needed
    }

    fn over_budget(&self) -> bool {
        self.evaluated >= self.ctx.cfg.budget
    }

    fn offer(&mut self, s: &Survivor) {
        if s.nullspace.len() != 1 || self.done() {
            return;
        }
        let v = self.ctx.embed(s);
        if linalg::distance_from_span(&self.q, &v) <= INDEPENDENCE_TOL {
            return;
        }
        let scale = linalg::max_abs(&v);
        let edges = self
            .ctx
            .members
            .iter()
            .zip(&v)
            .filter(|(_, x)| x.abs() > self.ctx.cfg.zero_tol * scale)
            .map(|(m, _)| *m)
            .collect();
        self.span.push(v.clone());
        self.q = linalg::orthonormal_span(&self.span, self.ctx.members.len(), self.ctx.cfg.rank_tol);
        self.found.push(VirtualState { vector: v, edges });
    }

    /// Evaluates candidate edge sets in parallel batches, merging in order.
    fn run_batches<I>(&mut self, mut candidates: I) -> Result<Vec<Survivor>>
    where
        I: Iterator<Item = Vec<usize>>,
    {
        let mut multi = Vec::new();
        loop {
            if self.done() || self.over_budget() {
                return Ok(multi);
            }
            let room = (self.ctx.cfg.budget - self.evaluated).min(CHUNK);
            let batch: Vec<Vec<usize>> = candidates.by_ref().take(room).collect();
            if batch.is_empty() {
                return Ok(multi);
            }
            self.evaluated += batch.len();
            let results = par::map(&batch, self.ctx.cfg.execution, |edges| self.ctx.evaluate(edges.clone()));
            for r in results {
                let s = r?;
                match s.nullspace.len() {
                    0 => {}
                    1 => self.offer(&s),
                    _ => multi.push(s),
                }
            }
        }
    }
}

/// Lexicographic `k`-combinations of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    first: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            first: true,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let k = self.idx.len();
        if k > self.n {
            return None;
        }
        if self.first {
            self.first = false;
            return Some(self.idx.clone());
        }
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(self.idx.clone());
            }
        }
        None
    }
}

/// Mixed-radix counter over per-organism choice lists, first list slowest.
struct Product {
    sizes: Vec<usize>,
    idx: Vec<usize>,
    first: bool,
}

impl Iterator for Product {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.sizes.iter().any(|s| *s == 0) {
            return None;
        }
        if self.first {
            self.first = false;
            return Some(self.idx.clone());
        }
        let mut i = self.sizes.len();
        while i > 0 {
            i -= 1;
            self.idx[i] += 1;
            if self.idx[i] < self.sizes[i] {
                return Some(self.idx.clone());
            }
            self.idx[i] = 0;
        }
        None
    }
}

/// Finds `needed` virtual-cell states independent of the current basis.
pub fn find_virtual_cells(design: &Design, needed: usize, cfg: &EngineConfig) -> Result<VirtualSearch> {
    if needed == 0 {
        return Ok(VirtualSearch {
            states: Vec::new(),
            evaluated: 0,
        });
    }
    let state = &design.state;
    let members = state.members();
    let ctx = Context {
        nodes: state.nodes(),
        members,
        cfg,
    };
    let all: Vec<usize> = (0..members.len()).collect();
    let degree = ctx.degrees(&all);

    let supports: Vec<BTreeSet<usize>> = state
        .basis()
        .iter()
        .map(|c| {
            let s = linalg::max_abs(c);
            (0..c.len()).filter(|i| c[*i].abs() > cfg.zero_tol * s).collect()
        })
        .collect();
    let mut choices: Vec<Vec<usize>> = Vec::new();
    for (k, origin) in state.origins().iter().enumerate() {
        let kind = design.morpho.cell(*origin).map(|o| o.kind);
        if !matches!(kind, Some(OrganismKind::Regular) | Some(OrganismKind::Fused)) {
            continue;
        }
        let mut private: Vec<usize> = supports[k]
            .iter()
            .copied()
            .filter(|e| supports.iter().enumerate().all(|(j, s)| j == k || !s.contains(e)))
            .collect();
        private.sort_by_key(|e| {
            let m = members[*e];
            (degree[&m.lo()].min(degree[&m.hi()]), Reverse(m))
        });
        if !private.is_empty() {
            choices.push(private);
        }
    }

    let q = linalg::orthonormal_span(state.basis(), members.len(), cfg.rank_tol);
    let mut col = Collector {
        ctx: &ctx,
        span: state.basis().to_vec(),
        q,
        found: Vec::new(),
        needed,
        evaluated: 0,
    };
    let product = Product {
        sizes: choices.iter().map(Vec::len).collect(),
        idx: vec![0; choices.len()],
        first: true,
    };
    let mut outer = product.map(|pick| {
        let cut: Vec<usize> = pick.iter().zip(&choices).map(|(i, c)| c[*i]).collect();
        ctx.strip(&all, &cut)
    });
    while !col.done() && !col.over_budget() {
        let batch: Vec<Vec<usize>> = outer.by_ref().take(CHUNK).collect();
        if batch.is_empty() {
            break;
        }
        let multi = col.run_batches(batch.into_iter())?;
        for s in multi {
            if col.done() || col.over_budget() {
                break;
            }
            let extra = s.nullspace.len() - 1;
            let deg = ctx.degrees(&s.edges);
            let mut pool: Vec<usize> = s
                .edges
                .iter()
                .enumerate()
                .filter(|(i, _)| s.nullspace.iter().any(|v| v[*i].abs() > cfg.zero_tol * linalg::max_abs(v)))
                .map(|(_, e)| *e)
                .collect();
            pool.sort_by_key(|e| {
                let m = members[*e];
                (!(deg[&m.lo()] >= 5 && deg[&m.hi()] >= 5), m)
            });
            let base = s.edges.clone();
            let inner = Combinations::new(pool.len(), extra).map(|combo| {
                let cut: Vec<usize> = combo.iter().map(|i| pool[*i]).collect();
                base.iter().copied().filter(|e| !cut.contains(e)).collect::<Vec<usize>>()
            });
            // Deeper survivors are not expanded again.
            col.run_batches(inner)?;
        }
    }
    if !col.done() {
        return Err(MorphoError::IncompleteBasis {
            needed,
            found: col.found.len(),
            evaluated: col.evaluated,
            detail: format!(
                "{} organisms offered private edges; budget {}",
                choices.len(),
                cfg.budget
            ),
        });
    }
    Ok(VirtualSearch {
        states: col.found,
        evaluated: col.evaluated,
    })
}
