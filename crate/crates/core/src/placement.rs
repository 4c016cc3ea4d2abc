//! Constraint surfaces for new nodes so that several members can be fused
//! away at once.
//!
//! Removing two members of a freshly adhered cell is possible only when the
//! cell's stress ratio on them equals the ratio of the rest of the structure.
//! With the cell stress written through oriented volumes, that ratio
//! condition becomes
//!
//! * a bilinear form in the two new nodes when the members share a node and
//!   the cell shares three nodes with the structure,
//! * a plane once one of those two nodes is fixed,
//! * a quadric in the single new node when the members are disjoint.
//!
//! All forms use homogeneous coordinates `[1, x, y, z]`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Design;
use crate::error::{MorphoError, Result};
use crate::geometry::{linear_form, oriented_volume, LinearForm3, Point3};
use crate::morpho_graph::OrganismKind;
use crate::par::{self, Execution};
use crate::structure::Member;
use crate::{CellId, NodeId};

pub type Mat4 = [[f64; 4]; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlacementConstraint {
    /// `c0 + c1·x + c2·y + c3·z = 0`.
    Plane { form: LinearForm3 },
    /// `[1,D]·M·[1,E]ᵀ = 0` for two new nodes `D`, `E`.
    Bilinear { m: Mat4 },
    /// `[1,E]·T·[1,E]ᵀ = 0`, `T` as built (not symmetrised).
    Quadric { t: Mat4 },
}

/// Required densities on the members to remove, from the existing structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTarget {
    pub edges: Vec<Member>,
    pub densities: Vec<f64>,
}

fn homogeneous(p: &Point3) -> [f64; 4] {
    p.homogeneous()
}

/// `M[p][q] = Σ ε_ijpq a_i b_j`, so that `dᵀ M e = det[a; b; d; e]`.
fn wedge_matrix(a: &Point3, b: &Point3) -> Mat4 {
    let (a, b) = (homogeneous(a), homogeneous(b));
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for p in 0..4 {
                for q in 0..4 {
                    let s = levi_civita([i, j, p, q]);
                    if s != 0 {
                        m[p][q] += s as f64 * a[i] * b[j];
                    }
                }
            }
        }
    }
    m
}

fn levi_civita(idx: [usize; 4]) -> i32 {
    let mut v = idx;
    let mut sign = 1;
    for i in 0..4 {
        for j in i + 1..4 {
            if v[i] == v[j] {
                return 0;
            }
        }
    }
    for i in 0..4 {
        while v[i] != i {
            let t = v[i];
            v.swap(i, t);
            sign = -sign;
        }
    }
    sign
}

fn bilinear(m: &Mat4, d: &[f64; 4], e: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for p in 0..4 {
        for q in 0..4 {
            s += d[p] * m[p][q] * e[q];
        }
    }
    s
}

fn frobenius(m: &Mat4) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_ratio(w1: f64, w2: f64) -> Result<f64> {
    if w1 == 0.0 || !w1.is_finite() || !w2.is_finite() {
        return Err(MorphoError::Usage("target density w1 must be finite and non-zero".into()));
    }
    Ok(w2 / w1)
}

/// Cell `A,B,C,D,E` sharing `A,B,C`; members `AB` and `BC` removed. Any
/// `(D,E)` on the returned form gives `w_AB / w_BC = w1 / w2`.
pub fn constraint_adjacent_shared3(a: &Point3, b: &Point3, c: &Point3, w1: f64, w2: f64) -> Result<PlacementConstraint> {
    let r = check_ratio(w1, w2)?;
    if (*b - *a).cross(&(*c - *a)).norm() == 0.0 {
        return Err(MorphoError::DegenerateConfiguration("A, B, C are collinear".into()));
    }
    let mab = wedge_matrix(a, b);
    let mbc = wedge_matrix(b, c);
    let mut m = [[0.0; 4]; 4];
    for p in 0..4 {
        for q in 0..4 {
            m[p][q] = -mab[p][q] + r * mbc[p][q];
        }
    }
    Ok(PlacementConstraint::Bilinear { m })
}

/// As [`constraint_adjacent_shared3`] with `D` fixed: a plane for `E`.
pub fn plane_adjacent_shared4(a: &Point3, b: &Point3, c: &Point3, d: &Point3, w1: f64, w2: f64) -> Result<PlacementConstraint> {
    constraint_adjacent_shared3(a, b, c, w1, w2)?.contract(d)
}

/// Cell `A,B,C,D,E` sharing `A,B,C,D`; members `AB` and `CD` removed. Any
/// `E` on the returned quadric gives `w_AB / w_CD = w1 / w2`.
pub fn quadric_nonadjacent_shared4(a: &Point3, b: &Point3, c: &Point3, d: &Point3, w1: f64, w2: f64) -> Result<PlacementConstraint> {
    let r = check_ratio(w1, w2)?;
    let vol = oriented_volume(a, b, c, d);
    let diam = crate::geometry::diameter(&[*a, *b, *c, *d]);
    if !(vol.abs() > 1e-9 * diam.powi(3)) {
        return Err(MorphoError::DegenerateConfiguration(format!(
            "base tetrahedron is flat (volume {vol:.3e})"
        )));
    }
    let abc = linear_form(a, b, c).coeffs;
    let abd = linear_form(a, b, d).coeffs;
    let bcd = linear_form(b, c, d).coeffs;
    let acd = linear_form(a, c, d).coeffs;
    let mut t = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            t[i][j] = abc[i] * abd[j] - r * bcd[i] * acd[j];
        }
    }
    Ok(PlacementConstraint::Quadric { t })
}

impl PlacementConstraint {
    /// Fixes the first node of a bilinear form; other variants are returned
    /// unchanged.
    pub fn contract(&self, d: &Point3) -> Result<PlacementConstraint> {
        match self {
            PlacementConstraint::Bilinear { m } => {
                let h = homogeneous(d);
                let mut c = [0.0; 4];
                for q in 0..4 {
                    for p in 0..4 {
                        c[q] += h[p] * m[p][q];
                    }
                }
                let form = LinearForm3 { coeffs: c };
                let g = form.gradient().norm();
                if !(g > 1e-14 * frobenius(m) * (1.0 + d.norm())) {
                    return Err(MorphoError::DegenerateConfiguration(
                        "contracted form is identically zero".into(),
                    ));
                }
                Ok(PlacementConstraint::Plane { form })
            }
            other => Ok(other.clone()),
        }
    }

    /// Value of the form at `p`. Bilinear forms need a second point and
    /// give a usage error.
    pub fn value(&self, p: &Point3) -> Result<f64> {
        let h = homogeneous(p);
        match self {
            PlacementConstraint::Plane { form } => Ok(form.eval(p)),
            PlacementConstraint::Quadric { t } => Ok(bilinear(t, &h, &h)),
            PlacementConstraint::Bilinear { .. } => Err(MorphoError::Usage(
                "a bilinear constraint needs both nodes; fix one first".into(),
            )),
        }
    }

    /// Bilinear value for a pair of points; other variants evaluate at `e`.
    pub fn value_pair(&self, d: &Point3, e: &Point3) -> f64 {
        match self {
            PlacementConstraint::Bilinear { m } => bilinear(m, &homogeneous(d), &homogeneous(e)),
            other => other.value(e).expect("single-point form"),
        }
    }

    pub fn gradient(&self, p: &Point3) -> Result<Point3> {
        match self {
            PlacementConstraint::Plane { form } => Ok(form.gradient()),
            PlacementConstraint::Quadric { t } => {
                let h = homogeneous(p);
                let mut g = [0.0; 4];
                for k in 0..4 {
                    for j in 0..4 {
                        g[k] += (t[k][j] + t[j][k]) * h[j];
                    }
                }
                Ok(Point3::new(g[1], g[2], g[3]))
            }
            PlacementConstraint::Bilinear { .. } => Err(MorphoError::Usage(
                "a bilinear constraint needs both nodes; fix one first".into(),
            )),
        }
    }

    /// `|value| / |gradient|`: first-order distance to the surface.
    pub fn distance(&self, p: &Point3) -> Result<f64> {
        let v = self.value(p)?;
        let g = self.gradient(p)?.norm();
        if g > 0.0 {
            Ok(v.abs() / g)
        } else if v == 0.0 {
            Ok(0.0)
        } else {
            Ok(f64::INFINITY)
        }
    }

    /// `|value|` over the coefficient norm times `‖[1,p]‖^degree`; scale
    /// free and defined everywhere.
    pub fn normalized_residual(&self, p: &Point3) -> Result<f64> {
        let v = self.value(p)?;
        let hn = (1.0 + p.dot(p)).sqrt();
        Ok(match self {
            PlacementConstraint::Plane { form } => v.abs() / (form.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt() * hn),
            PlacementConstraint::Quadric { t } => v.abs() / (frobenius(t) * hn * hn),
            PlacementConstraint::Bilinear { .. } => unreachable!("value() rejects bilinear"),
        })
    }

    /// Divides the coefficients by their largest magnitude.
    pub fn normalized(&self) -> PlacementConstraint {
        let scale = |m: &Mat4| {
            let s = m.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
            if s == 0.0 {
                *m
            } else {
                m.map(|r| r.map(|x| x / s))
            }
        };
        match self {
            PlacementConstraint::Plane { form } => PlacementConstraint::Plane { form: form.normalized() },
            PlacementConstraint::Bilinear { m } => PlacementConstraint::Bilinear { m: scale(m) },
            PlacementConstraint::Quadric { t } => PlacementConstraint::Quadric { t: scale(t) },
        }
    }

    /// Coefficients of the symmetric polynomial form of a quadric, in the
    /// order `1, x, y, z, x², y², z², xy, xz, yz`.
    pub fn quadric_polynomial(&self) -> Option<[f64; 10]> {
        let PlacementConstraint::Quadric { t } = self else {
            return None;
        };
        let s = |i: usize, j: usize| t[i][j] + t[j][i];
        Some([
            t[0][0],
            s(0, 1),
            s(0, 2),
            s(0, 3),
            t[1][1],
            t[2][2],
            t[3][3],
            s(1, 2),
            s(1, 3),
            s(2, 3),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Length scale for the convergence test; defaults to `max(1, ‖guess‖)`.
    pub scale: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Step shrink factor during backtracking.
    pub damping: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            scale: None,
            tol: 1e-10,
            max_iter: 200,
            damping: 0.5,
        }
    }
}

fn residuals(cs: &[PlacementConstraint], p: &Point3) -> Result<(Vec<f64>, Vec<Point3>)> {
    let mut r = Vec::with_capacity(cs.len());
    let mut g = Vec::with_capacity(cs.len());
    for c in cs {
        let v = c.value(p)?;
        let grad = c.gradient(p)?;
        let n = grad.norm();
        if n > 0.0 {
            r.push(v / n);
            g.push(grad * (1.0 / n));
        } else {
            r.push(v);
            g.push(grad);
        }
    }
    Ok((r, g))
}

fn sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Point on the intersection of 1–3 plane/quadric constraints near `guess`,
/// by damped Gauss–Newton with minimum-norm steps.
pub fn solve_on_constraints(cs: &[PlacementConstraint], guess: Point3, opts: &SolveOptions) -> Result<Point3> {
    if cs.is_empty() || cs.len() > 3 {
        return Err(MorphoError::Usage(format!("expected 1 to 3 constraints, got {}", cs.len())));
    }
    if !guess.is_finite() {
        return Err(MorphoError::Usage("initial guess is not finite".into()));
    }
    let scale = opts.scale.unwrap_or_else(|| guess.norm().max(1.0));
    let tol = opts.tol * scale;
    let mut p = guess;
    let (mut r, mut g) = residuals(cs, &p)?;
    let mut best = r.clone();
    for _ in 0..opts.max_iter {
        if r.iter().all(|x| x.abs() <= tol) {
            return Ok(p);
        }
        let j = DMatrix::from_fn(cs.len(), 3, |i, k| g[i].to_array()[k]);
        let rv = DVector::from_column_slice(&r);
        let pinv = match j.clone().pseudo_inverse(1e-12) {
            Ok(m) => m,
            Err(_) => break,
        };
        let step = -(pinv * rv);
        let step = Point3::new(step[0], step[1], step[2]);
        let f0 = sq(&r);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let q = p + step * alpha;
            let (rq, gq) = residuals(cs, &q)?;
            if sq(&rq) < f0 {
                p = q;
                r = rq;
                g = gq;
                moved = true;
                break;
            }
            alpha *= opts.damping;
        }
        if sq(&r) < sq(&best) {
            best = r.clone();
        }
        if !moved {
            break;
        }
    }
    if r.iter().all(|x| x.abs() <= tol) {
        return Ok(p);
    }
    Err(MorphoError::NoSolution {
        iterations: opts.max_iter,
        residuals: best.iter().map(|x| x.abs()).collect(),
    })
}

/// Axis-aligned sampling region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Point3,
    pub max: Point3,
}

impl Region {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    /// Bounding box of `points`, grown by `margin` on each side.
    pub fn around(points: &[Point3], margin: f64) -> Self {
        let mut min = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut max = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min = Point3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
            max = Point3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
        }
        let m = Point3::new(margin, margin, margin);
        Self { min: min - m, max: max + m }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y && p.z >= self.min.z && p.z <= self.max.z
    }

    fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Point3 {
        let u = |rng: &mut ChaCha8Rng, a: f64, b: f64| if b > a { rng.random_range(a..b) } else { a };
        Point3::new(
            u(rng, self.min.x, self.max.x),
            u(rng, self.min.y, self.max.y),
            u(rng, self.min.z, self.max.z),
        )
    }
}

fn random_direction(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let d = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = d.norm();
        if n > 1e-3 && n <= 1.0 {
            return d * (1.0 / n);
        }
    }
}

/// Candidate points from one attempt; each attempt has its own RNG stream.
fn attempt(c: &PlacementConstraint, region: &Region, seed: u64, index: usize) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let p = region.random_point(&mut rng);
    match c {
        PlacementConstraint::Plane { form } => {
            let g = form.gradient();
            let n2 = g.dot(&g);
            if n2 == 0.0 {
                return Vec::new();
            }
            vec![p - g * (form.eval(&p) / n2)]
        }
        PlacementConstraint::Quadric { t } => {
            let u = random_direction(&mut rng);
            let h = homogeneous(&p);
            let du = [0.0, u.x, u.y, u.z];
            let a = bilinear(t, &du, &du);
            let b = bilinear(t, &h, &du) + bilinear(t, &du, &h);
            let cc = bilinear(t, &h, &h);
            let scale = a.abs().max(b.abs()).max(cc.abs());
            let roots: Vec<f64> = if a.abs() <= 1e-14 * scale {
                if b == 0.0 {
                    Vec::new()
                } else {
                    vec![-cc / b]
                }
            } else {
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    Vec::new()
                } else {
                    // Stable quadratic roots.
                    let s = disc.sqrt();
                    let q = -0.5 * (b + b.signum() * s);
                    let mut r = vec![q / a];
                    if q != 0.0 {
                        r.push(cc / q);
                    }
                    r
                }
            };
            roots.into_iter().map(|s| p + u * s).collect()
        }
        PlacementConstraint::Bilinear { .. } => Vec::new(),
    }
}

/// Up to `count` points on the surface inside `region`, deterministic for a
/// given `seed`.
pub fn sample_surface(
    c: &PlacementConstraint,
    count: usize,
    region: &Region,
    seed: u64,
    mode: Execution,
) -> Result<Vec<Point3>> {
    if count == 0 {
        return Err(MorphoError::Usage("sample count must be at least 1".into()));
    }
    if matches!(c, PlacementConstraint::Bilinear { .. }) {
        return Err(MorphoError::Usage(
            "a bilinear constraint has no surface until one node is fixed".into(),
        ));
    }
    let scale = region.diagonal().max(1e-300);
    let mut out = Vec::with_capacity(count);
    let attempts = count * 40;
    let batch = count.max(16) * 2;
    let mut start = 0;
    while out.len() < count && start < attempts {
        let end = (start + batch).min(attempts);
        let found = par::map_range(end - start, mode, |i| {
            attempt(c, region, seed, start + i)
                .into_iter()
                .filter_map(|q| polish(c, q))
                .filter(|q| region.contains(q))
                .filter(|q| c.distance(q).map_or(false, |d| d <= 1e-9 * scale))
                .collect::<Vec<Point3>>()
        });
        for pts in found {
            for q in pts {
                if out.len() < count {
                    out.push(q);
                }
            }
        }
        start = end;
    }
    Ok(out)
}

/// One Newton projection onto the surface.
fn polish(c: &PlacementConstraint, p: Point3) -> Option<Point3> {
    let mut q = p;
    for _ in 0..3 {
        let v = c.value(&q).ok()?;
        let g = c.gradient(&q).ok()?;
        let n2 = g.dot(&g);
        if n2 == 0.0 {
            break;
        }
        q = q - g * (v / n2);
    }
    q.is_finite().then_some(q)
}

/// Which surface a design request resolves to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementRequest {
    /// Two or three members of the newest cell to fuse away.
    pub remove: Vec<Member>,
    /// For members sharing a node: the cell node held in place.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub cell: CellId,
    pub free_node: NodeId,
    /// One constraint per pair of removed members.
    pub constraints: Vec<PlacementConstraint>,
    /// The bilinear form before fixing a node, for shared-node pairs.
    pub bilinear: Vec<PlacementConstraint>,
    pub target: FusionTarget,
    pub current: Point3,
}

impl Placement {
    /// Largest first-order distance of `p` from any of the surfaces.
    pub fn residual(&self, p: Point3) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.distance(&p).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }
}

/// Builds the placement constraints for fusing `req.remove` out of the
/// newest regular cell that contains them all.
pub fn placement_for(design: &Design, req: &PlacementRequest) -> Result<Placement> {
    let state = &design.state;
    let n = req.remove.len();
    if !(2..=3).contains(&n) {
        return Err(MorphoError::Usage(format!(
            "placement applies to fusing 2 or 3 members, got {n}"
        )));
    }
    for m in &req.remove {
        if !state.has_member(m) {
            return Err(MorphoError::UnknownMember(*m));
        }
    }
    let (column, cell) = state
        .origins()
        .iter()
        .enumerate()
        .filter_map(|(k, id)| design.morpho.cell(*id).map(|o| (k, o)))
        .filter(|(_, o)| o.kind == OrganismKind::Regular && req.remove.iter().all(|m| o.edges.contains(m)))
        .max_by_key(|(_, o)| o.id)
        .ok_or_else(|| MorphoError::Usage("no active cell contains all members to remove".into()))?;
    let others: Vec<usize> = (0..state.dim_w()).filter(|k| *k != column).collect();
    if others.is_empty() {
        return Err(MorphoError::DegenerateConfiguration(
            "no other state to cancel against".into(),
        ));
    }
    let densities: Vec<f64> = req
        .remove
        .iter()
        .map(|m| {
            let i = state.member_index(m).expect("checked");
            others.iter().map(|k| state.basis()[*k][i]).sum()
        })
        .collect();

    let node = |id: NodeId| state.node(id).expect("cell node in structure");
    let cell_nodes: BTreeSet<NodeId> = cell.nodes.clone();
    let mut free: Option<NodeId> = None;
    let mut constraints = Vec::new();
    let mut bilinears = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (mut e1, mut e2) = (req.remove[i], req.remove[j]);
            let (mut w1, mut w2) = (densities[i], densities[j]);
            if w1 == 0.0 {
                std::mem::swap(&mut e1, &mut e2);
                std::mem::swap(&mut w1, &mut w2);
            }
            if w1 == 0.0 {
                return Err(MorphoError::DegenerateConfiguration(format!(
                    "the structure carries no force on {e1} or {e2}"
                )));
            }
            let (constraint, this_free) = if let Some(b) = e1.shares_node(&e2) {
                let a = e1.other(b).expect("shared");
                let c = e2.other(b).expect("shared");
                let rest: Vec<NodeId> = cell_nodes.iter().copied().filter(|x| ![a, b, c].contains(x)).collect();
                let (d, e) = match req.fixed {
                    Some(f) if rest.contains(&f) => (f, *rest.iter().find(|x| **x != f).expect("two left")),
                    Some(f) => {
                        return Err(MorphoError::Usage(format!(
                            "fixed node {f} must be one of {:?}",
                            rest.iter().map(|x| x.0).collect::<Vec<_>>()
                        )))
                    }
                    None => (rest[0], rest[1]),
                };
                let bil = constraint_adjacent_shared3(&node(a), &node(b), &node(c), w1, w2)?;
                let plane = bil.contract(&node(d))?;
                bilinears.push(bil);
                (plane, e)
            } else {
                let (a, b) = (e1.lo(), e1.hi());
                let (c, d) = (e2.lo(), e2.hi());
                let e = *cell_nodes
                    .iter()
                    .find(|x| ![a, b, c, d].contains(x))
                    .expect("five cell nodes");
                (quadric_nonadjacent_shared4(&node(a), &node(b), &node(c), &node(d), w1, w2)?, e)
            };
            match free {
                Some(f) if f != this_free => {
                    return Err(MorphoError::Usage(format!(
                        "member pairs position different nodes ({f} and {this_free})"
                    )))
                }
                _ => free = Some(this_free),
            }
            constraints.push(constraint);
        }
    }
    let free_node = free.expect("at least one pair");
    let shared_elsewhere = state.origins().iter().enumerate().any(|(k, id)| {
        k != column && design.morpho.cell(*id).is_some_and(|o| o.nodes.contains(&free_node))
    });
    if shared_elsewhere {
        return Err(MorphoError::Usage(format!(
            "node {free_node} also belongs to other states; moving it would change them"
        )));
    }
    Ok(Placement {
        cell: cell.id,
        free_node,
        constraints,
        bilinear: bilinears,
        target: FusionTarget {
            edges: req.remove.clone(),
            densities,
        },
        current: node(free_node),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{cell_self_stress, CellSpec};
    use proptest::prelude::*;

    fn pts() -> [Point3; 5] {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.5, 0.9, 0.0),
            Point3::new(-0.3, 1.0, 0.5),
            Point3::new(0.5, 0.3, 1.0),
        ]
    }

    fn stress(p: [Point3; 5]) -> Vec<f64> {
        let spec = CellSpec::from_points([1, 2, 3, 4, 5].map(crate::NodeId), p).unwrap();
        cell_self_stress(&spec).unwrap().values()
    }

    #[test]
    fn levi_civita_signs() {
        assert_eq!(levi_civita([0, 1, 2, 3]), 1);
        assert_eq!(levi_civita([1, 0, 2, 3]), -1);
        assert_eq!(levi_civita([1, 2, 3, 0]), -1);
        assert_eq!(levi_civita([0, 0, 2, 3]), 0);
    }

    #[test]
    fn wedge_is_the_determinant() {
        let p = pts();
        let m = wedge_matrix(&p[0], &p[1]);
        let v = bilinear(&m, &homogeneous(&p[2]), &homogeneous(&p[3]));
        assert!((v - 6.0 * oriented_volume(&p[0], &p[1], &p[2], &p[3])).abs() < 1e-14);
    }

    #[test]
    fn cell_lies_on_its_own_surfaces() {
        // Values in order 12,13,14,15,23,24,25,34,35,45.
        let p = pts();
        let w = stress(p);
        let (w12, w23, w34) = (w[0], w[4], w[7]);
        let bil = constraint_adjacent_shared3(&p[0], &p[1], &p[2], w12, w23).unwrap();
        assert!(bil.value_pair(&p[3], &p[4]).abs() < 1e-12);
        let plane = plane_adjacent_shared4(&p[0], &p[1], &p[2], &p[3], w12, w23).unwrap();
        assert!(plane.value(&p[4]).unwrap().abs() < 1e-12);
        let q = quadric_nonadjacent_shared4(&p[0], &p[1], &p[2], &p[3], w12, w34).unwrap();
        assert!(q.distance(&p[4]).unwrap() < 1e-12);
        for k in 0..4 {
            assert!(q.value(&p[k]).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn zero_ratio_factorises() {
        let p = pts();
        let q = quadric_nonadjacent_shared4(&p[0], &p[1], &p[2], &p[3], 1.0, 0.0).unwrap();
        let abc = linear_form(&p[0], &p[1], &p[2]);
        let abd = linear_form(&p[0], &p[1], &p[3]);
        let x = Point3::new(0.3, -0.7, 1.9);
        assert!((q.value(&x).unwrap() - abc.eval(&x) * abd.eval(&x)).abs() < 1e-12);
        // w2 = 0 on the plane: E coplanar with A, B, D.
        let plane = plane_adjacent_shared4(&p[0], &p[1], &p[2], &p[3], 1.0, 0.0).unwrap();
        let on = p[0] * 0.2 + p[1] * 0.5 + p[3] * 0.3;
        assert!(plane.value(&on).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bilinear_rejects_single_point_use() {
        let p = pts();
        let bil = constraint_adjacent_shared3(&p[0], &p[1], &p[2], 1.0, 2.0).unwrap();
        assert!(matches!(bil.value(&p[3]), Err(MorphoError::Usage(_))));
        let r = Region::new(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0));
        assert!(sample_surface(&bil, 4, &r, 1, Execution::Sequential).is_err());
        assert!(constraint_adjacent_shared3(&p[0], &p[1], &p[2], 0.0, 2.0).is_err());
    }

    #[test]
    fn plane_solver_and_sampler() {
        let plane = PlacementConstraint::Plane {
            form: LinearForm3::new(0.0, 0.0, 0.0, 1.0),
        };
        let r = Region::new(Point3::new(0.0, 0.0, -0.5), Point3::new(1.0, 1.0, 0.5));
        let s = sample_surface(&plane, 4, &r, 7, Execution::Sequential).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|p| p.z == 0.0));
        assert!(matches!(sample_surface(&plane, 0, &r, 7, Execution::Sequential), Err(MorphoError::Usage(_))));
        let p = solve_on_constraints(&[plane.clone()], Point3::new(0.3, 0.4, 2.0), &SolveOptions::default()).unwrap();
        assert!((p - Point3::new(0.3, 0.4, 0.0)).norm() < 1e-12);
        let parallel = PlacementConstraint::Plane {
            form: LinearForm3::new(-1.0, 0.0, 0.0, 1.0),
        };
        assert!(matches!(
            solve_on_constraints(&[plane, parallel], Point3::new(0.0, 0.0, 0.3), &SolveOptions::default()),
            Err(MorphoError::NoSolution { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_across_modes() {
        let p = pts();
        let w = stress(p);
        let q = quadric_nonadjacent_shared4(&p[0], &p[1], &p[2], &p[3], w[0], w[7]).unwrap();
        let r = Region::around(&p, 0.5);
        let a = sample_surface(&q, 50, &r, 3, Execution::Sequential).unwrap();
        let b = sample_surface(&q, 50, &r, 3, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn plane_moves_with_translation(t in prop::array::uniform3(-3.0..3.0f64), e in prop::array::uniform3(-2.0..2.0f64)) {
            let p = pts();
            let t = Point3::from(t);
            let e = Point3::from(e);
            let a = plane_adjacent_shared4(&p[0], &p[1], &p[2], &p[3], 1.3, -0.4).unwrap();
            let b = plane_adjacent_shared4(&(p[0] + t), &(p[1] + t), &(p[2] + t), &(p[3] + t), 1.3, -0.4).unwrap();
            let va = a.value(&e).unwrap();
            let vb = b.value(&(e + t)).unwrap();
            prop_assert!((va - vb).abs() <= 1e-10 * (1.0 + va.abs()));
        }

        #[test]
        fn plane_is_the_contracted_bilinear(e in prop::array::uniform3(-2.0..2.0f64), r in -3.0..3.0f64) {
            let p = pts();
            let e = Point3::from(e);
            let bil = constraint_adjacent_shared3(&p[0], &p[1], &p[2], 1.0, r).unwrap();
            let plane = plane_adjacent_shared4(&p[0], &p[1], &p[2], &p[3], 1.0, r).unwrap();
            prop_assert!((bil.value_pair(&p[3], &e) - plane.value(&e).unwrap()).abs() <= 1e-12 * (1.0 + e.norm()));
        }

        #[test]
        fn swapping_removed_edges_keeps_the_zero_set(s in 0u64..1000) {
            let p = pts();
            let w = stress(p);
            let q1 = quadric_nonadjacent_shared4(&p[0], &p[1], &p[2], &p[3], w[0], w[7]).unwrap();
            let q2 = quadric_nonadjacent_shared4(&p[2], &p[3], &p[0], &p[1], w[7], w[0]).unwrap();
            let r = Region::around(&p, 0.5);
            for x in sample_surface(&q1, 5, &r, s, Execution::Sequential).unwrap() {
                prop_assert!(q2.normalized_residual(&x).unwrap() <= 1e-9);
            }
        }
    }
}
