//! Oriented volumes, determinant linear forms and the general-position
//! predicate.
//!
//! Everything here is plain binary64 arithmetic. Predicates are tolerance
//! based and scale free: coplanarity is judged against the cube of the
//! point-cloud diameter.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};

/// Default relative tolerance for coplanarity, multiplied by `diameter³`.
pub const DEFAULT_GP_TOL: f64 = 1e-9;

/// A point (or vector) in model space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, o: &Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, o: &Point3) -> f64 {
        (*self - *o).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Homogeneous coordinates `[1, x, y, z]`.
    pub fn homogeneous(&self) -> [f64; 4] {
        [1.0, self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// `c0 + c1·x + c2·y + c3·z`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearForm3 {
    pub coeffs: [f64; 4],
}

impl LinearForm3 {
    pub fn new(c0: f64, c1: f64, c2: f64, c3: f64) -> Self {
        Self {
            coeffs: [c0, c1, c2, c3],
        }
    }

    pub fn eval(&self, p: &Point3) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        c0 + c1 * p.x + c2 * p.y + c3 * p.z
    }

    pub fn gradient(&self) -> Point3 {
        Point3::new(self.coeffs[1], self.coeffs[2], self.coeffs[3])
    }

    pub fn scaled(&self, s: f64) -> Self {
        let c = self.coeffs;
        Self::new(c[0] * s, c[1] * s, c[2] * s, c[3] * s)
    }

    /// Zero-set preserving normalisation: unit gradient.
    pub fn normalized(&self) -> Self {
        let g = self.gradient().norm();
        if g == 0.0 {
            *self
        } else {
            self.scaled(1.0 / g)
        }
    }
}

/// `(1/6)·det[[1,a],[1,b],[1,c],[1,d]]`, the signed volume of tetrahedron abcd.
pub fn oriented_volume(a: &Point3, b: &Point3, c: &Point3, d: &Point3) -> f64 {
    // Row-reduce against `a`; the homogeneous 4×4 collapses to a triple product.
    let ab = *b - *a;
    let ac = *c - *a;
    let ad = *d - *a;
    ab.cross(&ac).dot(&ad) / 6.0
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor expansion of `det[[1,a],[1,b],[1,c],[1,x]]` along its last row.
///
/// The result `L` satisfies `L(d) = 6·oriented_volume(a, b, c, d)`. Collinear
/// inputs give a form with zero gradient; that is returned as is.
pub fn linear_form(a: &Point3, b: &Point3, c: &Point3) -> LinearForm3 {
    let rows = [a.homogeneous(), b.homogeneous(), c.homogeneous()];
    let minor = |skip: usize| {
        let mut m = [[0.0; 3]; 3];
        for (r, row) in rows.iter().enumerate() {
            let mut k = 0;
            for (j, v) in row.iter().enumerate() {
                if j != skip {
                    m[r][k] = *v;
                    k += 1;
                }
            }
        }
        det3(m)
    };
    // Cofactor sign (-1)^(4+j) with 1-based column j.
    LinearForm3::new(-minor(0), minor(1), -minor(2), minor(3))
}

/// Largest pairwise distance.
pub fn diameter(points: &[Point3]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            d = d.max(p.distance(q));
        }
    }
    d
}

/// The five quadruples of a five-point set, in lexicographic order.
pub const QUADRUPLES: [[usize; 4]; 5] = [
    [0, 1, 2, 3],
    [0, 1, 2, 4],
    [0, 1, 3, 4],
    [0, 2, 3, 4],
    [1, 2, 3, 4],
];

/// Outcome of the general-position test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneralPosition {
    Yes,
    /// First quadruple (indices into the input) whose volume is below tolerance.
    No { quadruple: [usize; 4], volume: f64 },
}

impl GeneralPosition {
    pub fn holds(&self) -> bool {
        matches!(self, GeneralPosition::Yes)
    }
}

/// No four of the five points coplanar, judged against `tol · diameter³`.
pub fn general_position(points: &[Point3], tol: f64) -> Result<GeneralPosition> {
    if points.len() != 5 {
        return Err(MorphoError::Usage(format!(
            "general position needs exactly five points, got {}",
            points.len()
        )));
    }
    if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
        return Err(MorphoError::Usage(format!("non-finite point {bad}")));
    }
    let threshold = tol * diameter(points).powi(3);
    for q in QUADRUPLES {
        let v = oriented_volume(&points[q[0]], &points[q[1]], &points[q[2]], &points[q[3]]);
        if !(v.abs() > threshold) {
            return Ok(GeneralPosition::No {
                quadruple: q,
                volume: v,
            });
        }
    }
    Ok(GeneralPosition::Yes)
}
