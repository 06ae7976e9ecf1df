//! Vertex-described scheduling polytopes.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when deciding whether a vertex is redundant.
const EXTREME_TOL: f64 = 1e-7;

/// Convex hull of a finite vertex list. Every stored vertex is an extreme
/// point; boxes remember their bounds so membership and clamping are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct SchedulingPolytope {
    dim: usize,
    vertices: Vec<Vec<f64>>,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    vertices: Vec<Vec<f64>>,
}

impl TryFrom<PolytopeRepr> for SchedulingPolytope {
    type Error = Error;
    fn try_from(r: PolytopeRepr) -> Result<Self> {
        SchedulingPolytope::new(r.vertices)
    }
}

impl From<SchedulingPolytope> for PolytopeRepr {
    fn from(p: SchedulingPolytope) -> Self {
        PolytopeRepr { vertices: p.vertices }
    }
}

impl SchedulingPolytope {
    /// Build from an explicit vertex list. Rejects empty lists, ragged or
    /// zero-dimensional points, duplicates and non-extreme vertices.
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match vertices.first() {
            None => return Err(Error::InvalidPolytope("no vertices".into())),
            Some(v) => v.len(),
        };
        if dim == 0 {
            return Err(Error::InvalidPolytope("scheduling dimension must be positive".into()));
        }
        if let Some(bad) = vertices.iter().find(|v| v.len() != dim) {
            return Err(Error::InvalidPolytope(format!(
                "vertex {bad:?} has dimension {} (expected {dim})",
                bad.len()
            )));
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPolytope("non-finite vertex coordinate".into()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if vertices[..i].iter().any(|w| w == v) {
                return Err(Error::InvalidPolytope(format!("duplicate vertex {v:?}")));
            }
        }
        if vertices.len() > 1 {
            for (i, v) in vertices.iter().enumerate() {
                let others: Vec<&[f64]> = vertices
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, w)| w.as_slice())
                    .collect();
                if hull_distance(v, &others)? <= EXTREME_TOL {
                    return Err(Error::InvalidPolytope(format!(
                        "vertex {v:?} lies in the convex hull of the others"
                    )));
                }
            }
        }
        let bounds = detect_box(dim, &vertices);
        Ok(SchedulingPolytope {
            dim,
            vertices,
            bounds,
        })
    }

    /// Axis-aligned box; corners are enumerated with the first coordinate
    /// varying fastest. Degenerate axes (`lo == hi`) collapse.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dims("box bounds", lo.len(), hi.len()));
        }
        if lo.iter().zip(hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidPolytope("box with lo > hi".into()));
        }
        let mut corners: Vec<Vec<f64>> = vec![Vec::new()];
        for (l, h) in lo.iter().zip(hi) {
            let mut next = Vec::with_capacity(corners.len() * 2);
            for c in &corners {
                let mut a = c.clone();
                a.push(*l);
                next.push(a);
                if h > l {
                    let mut b = c.clone();
                    b.push(*h);
                    next.push(b);
                }
            }
            corners = next;
        }
        // reorder so the first coordinate varies fastest
        corners.sort_by(|a, b| {
            for k in (0..a.len()).rev() {
                match a[k].partial_cmp(&b[k]).unwrap() {
                    std::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            std::cmp::Ordering::Equal
        });
        Self::new(corners)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(&[lo], &[hi])
    }

    /// Single-vertex polytope, used for LTI models.
    pub fn point(p: Vec<f64>) -> Result<Self> {
        Self::new(vec![p])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        self.bounds.as_ref().map(|(l, h)| (l.as_slice(), h.as_slice()))
    }

    /// Signed membership margin: positive inside a box (distance to the
    /// nearest face), zero on the boundary, negative outside. For general
    /// polytopes it is `-dist_inf(rho, P)`, hence never positive.
    pub fn membership_margin(&self, rho: &[f64]) -> Result<f64> {
        if rho.len() != self.dim {
            return Err(Error::dims("membership test", self.dim, rho.len()));
        }
        if let Some((lo, hi)) = &self.bounds {
            let m = rho
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(r, (l, h))| (r - l).min(h - r))
                .fold(f64::INFINITY, f64::min);
            return Ok(m);
        }
        let verts: Vec<&[f64]> = self.vertices.iter().map(Vec::as_slice).collect();
        Ok(-hull_distance(rho, &verts)?)
    }

    pub fn contains(&self, rho: &[f64], tol: f64) -> Result<bool> {
        Ok(self.membership_margin(rho)? >= -tol)
    }

    /// Clamp into a box polytope. Returns `None` for non-box polytopes.
    pub fn clamp(&self, rho: &[f64]) -> Option<Vec<f64>> {
        let (lo, hi) = self.bounds.as_ref()?;
        Some(
            rho.iter()
                .zip(lo.iter().zip(hi))
                .map(|(r, (l, h))| r.clamp(*l, *h))
                .collect(),
        )
    }

    /// `sum_i weights[i] * vertex[i]`.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, v) in weights.iter().zip(&self.vertices) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
        out
    }

    /// Random convex weights over the vertices (normalized exponentials).
    pub fn random_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.len())
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    pub fn centroid(&self) -> Vec<f64> {
        let w = vec![1.0 / self.len() as f64; self.len()];
        self.combine(&w)
    }
}

fn detect_box(dim: usize, vertices: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for v in vertices {
        for k in 0..dim {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let free = lo.iter().zip(&hi).filter(|(l, h)| h > l).count();
    let at_bounds = vertices
        .iter()
        .all(|v| (0..dim).all(|k| v[k] == lo[k] || v[k] == hi[k]));
    (at_bounds && vertices.len() == 1usize << free).then_some((lo, hi))
}

/// Infinity-norm distance from `p` to `conv(points)`, via a small LP:
/// minimize t  s.t.  -t <= p - sum l_i v_i <= t,  l >= 0,  sum l = 1.
pub(crate) fn hull_distance(p: &[f64], points: &[&[f64]]) -> Result<f64> {
    let d = p.len();
    let m = points.len();
    let nvar = m + 1; // lambdas, then t
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut b = Vec::new();
    // equality: sum l = 1
    let mut r = vec![0.0; nvar];
    r[..m].fill(1.0);
    rows.push(r);
    b.push(1.0);
    // nonneg block: s = b - A x >= 0
    for k in 0..d {
        // p_k - sum l v_k + t >= 0  ->  A = [v_k, -1], b = p_k
        let mut r1 = vec![0.0; nvar];
        let mut r2 = vec![0.0; nvar];
        for (i, v) in points.iter().enumerate() {
            r1[i] = v[k];
            r2[i] = -v[k];
        }
        r1[m] = -1.0;
        r2[m] = -1.0;
        rows.push(r1);
        b.push(p[k]);
        rows.push(r2);
        b.push(-p[k]);
    }
    for i in 0..m {
        let mut r = vec![0.0; nvar];
        r[i] = -1.0;
        rows.push(r);
        b.push(0.0);
    }
    let a = CscMatrix::from(&rows);
    let pmat = CscMatrix::zeros((nvar, nvar));
    let mut c = vec![0.0; nvar];
    c[m] = 1.0;
    let cones: Vec<SupportedConeT<f64>> = vec![ZeroConeT(1), NonnegativeConeT(2 * d + m)];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .build()
        .expect("static settings");
    let mut solver = DefaultSolver::new(&pmat, &c, &a, &b, &cones, settings)
        .map_err(|e| Error::NumericalFailure(format!("hull LP setup: {e:?}")))?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(solver.solution.x[m].max(0.0)),
        s => Err(Error::NumericalFailure(format!("hull LP status {s:?}"))),
    }
}
