//! Linear matrix inequality systems and their semidefinite solution.
//!
//! Decision variables are registered on an [`LmiSystem`] and combined into
//! [`MatExpr`] values: matrices that depend affinely on the scalar decision
//! vector. Each constraint `F(x) ≻ 0` is enforced as `F(x) ⪰ δ·I` with the
//! system margin `δ`, and the solved point is certified by recomputing the
//! minimum eigenvalue of every `F(x)`.
//!
//! The numerical backend is the Clarabel interior-point solver (PSD
//! triangle cones); any other SDP method could sit behind [`LmiSystem::solve`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, PSDTriangleConeT, SolverStatus,
    SupportedConeT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, max_abs, max_abs_diff, min_eigenvalue, symmetrize, Mat};
use crate::polytope::SchedulingPolytope;

/// Default strictness margin δ for `≻ 0` constraints.
pub const DEFAULT_MARGIN: f64 = 1e-7;

const ASYMMETRY_LIMIT: f64 = 1e-12;

/// A matrix that is affine in the scalar decision vector:
/// `E(x) = E_0 + Σ_k x_k E_k` (only nonzero `E_k` stored).
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    constant: Mat,
    terms: BTreeMap<usize, Mat>,
}

impl MatExpr {
    pub fn constant(m: Mat) -> Self {
        MatExpr {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Mat::identity(n, n))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn terms(&self) -> &BTreeMap<usize, Mat> {
        &self.terms
    }

    fn map_all(&self, f: impl Fn(&Mat) -> Mat) -> MatExpr {
        MatExpr {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, m)| (*k, f(m))).collect(),
        }
    }

    pub fn add(&self, other: &MatExpr) -> MatExpr {
        assert_eq!(self.shape(), other.shape(), "MatExpr add shape mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms
                .entry(*k)
                .and_modify(|t| *t += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &MatExpr) -> MatExpr {
        self.add(&other.scale(-1.0))
    }

    pub fn add_const(&self, m: &Mat) -> MatExpr {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn scale(&self, s: f64) -> MatExpr {
        self.map_all(|m| m * s)
    }

    /// `L · E(x)`.
    pub fn lmul(&self, left: &Mat) -> MatExpr {
        self.map_all(|m| left * m)
    }

    /// `E(x) · R`.
    pub fn rmul(&self, right: &Mat) -> MatExpr {
        self.map_all(|m| m * right)
    }

    pub fn transpose(&self) -> MatExpr {
        self.map_all(Mat::transpose)
    }

    /// Sum of diagonal entries as a 1×1 expression.
    pub fn trace(&self) -> MatExpr {
        self.map_all(|m| Mat::from_element(1, 1, m.trace()))
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            out += m * x[*k];
        }
        out
    }

    /// Largest entrywise difference over the constant and all terms.
    pub fn max_abs_diff(&self, other: &MatExpr) -> f64 {
        let mut worst = max_abs_diff(&self.constant, &other.constant);
        let zero = Mat::zeros(self.shape().0, self.shape().1);
        for k in self.terms.keys().chain(other.terms.keys()) {
            let a = self.terms.get(k).unwrap_or(&zero);
            let b = other.terms.get(k).unwrap_or(&zero);
            worst = worst.max(max_abs_diff(a, b));
        }
        worst
    }

    fn magnitude(&self) -> f64 {
        self.terms
            .values()
            .map(max_abs)
            .fold(max_abs(&self.constant), f64::max)
    }

    fn asymmetry(&self) -> f64 {
        self.terms
            .values()
            .map(asymmetry)
            .fold(asymmetry(&self.constant), f64::max)
    }

    /// Grid assembly. Row heights come from the first block of each row,
    /// column widths from the first row.
    pub fn block(rows: &[&[&MatExpr]]) -> MatExpr {
        let heights: Vec<usize> = rows.iter().map(|r| r[0].shape().0).collect();
        let widths: Vec<usize> = rows[0].iter().map(|b| b.shape().1).collect();
        let (h, w) = (heights.iter().sum(), widths.iter().sum());
        let mut out = MatExpr::zeros(h, w);
        let mut r0 = 0;
        for (row, bh) in rows.iter().zip(&heights) {
            let mut c0 = 0;
            for (blk, bw) in row.iter().zip(&widths) {
                assert_eq!(blk.shape(), (*bh, *bw), "MatExpr block shape mismatch");
                out.constant
                    .view_mut((r0, c0), (*bh, *bw))
                    .copy_from(&blk.constant);
                for (k, m) in &blk.terms {
                    out.terms
                        .entry(*k)
                        .or_insert_with(|| Mat::zeros(h, w))
                        .view_mut((r0, c0), (*bh, *bw))
                        .copy_from(m);
                }
                c0 += bw;
            }
            r0 += bh;
        }
        out
    }
}

impl From<Mat> for MatExpr {
    fn from(m: Mat) -> Self {
        MatExpr::constant(m)
    }
}

/// Handle to a registered decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarShape {
    Symmetric(usize),
    Full(usize, usize),
}

impl VarShape {
    fn scalars(&self) -> usize {
        match *self {
            VarShape::Symmetric(n) => n * (n + 1) / 2,
            VarShape::Full(r, c) => r * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub shape: VarShape,
    offset: usize,
}

impl VarDecl {
    fn expr(&self) -> MatExpr {
        let mut terms = BTreeMap::new();
        let mut k = self.offset;
        match self.shape {
            VarShape::Symmetric(n) => {
                for j in 0..n {
                    for i in 0..=j {
                        let mut m = Mat::zeros(n, n);
                        m[(i, j)] = 1.0;
                        m[(j, i)] = 1.0;
                        terms.insert(k, m);
                        k += 1;
                    }
                }
                MatExpr {
                    constant: Mat::zeros(n, n),
                    terms,
                }
            }
            VarShape::Full(r, c) => {
                for j in 0..c {
                    for i in 0..r {
                        let mut m = Mat::zeros(r, c);
                        m[(i, j)] = 1.0;
                        terms.insert(k, m);
                        k += 1;
                    }
                }
                MatExpr {
                    constant: Mat::zeros(r, c),
                    terms,
                }
            }
        }
    }

    fn value(&self, x: &[f64]) -> Mat {
        self.expr().eval(x)
    }
}

#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub label: String,
    pub expr: MatExpr,
}

/// Solver tolerances passed to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpOptions {
    pub max_iter: u32,
    pub tol_gap: f64,
    pub tol_feas: f64,
    /// Extra margin added inside the cone on top of δ, so that recomputed
    /// eigenvalues clear δ despite the solver's feasibility tolerance.
    pub guard: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            max_iter: 400,
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            guard: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiSystem {
    vars: Vec<VarDecl>,
    n_scalars: usize,
    constraints: Vec<LmiConstraint>,
    objective: Option<MatExpr>,
    margin: f64,
}

impl Default for LmiSystem {
    fn default() -> Self {
        Self::new(DEFAULT_MARGIN)
    }
}

impl LmiSystem {
    pub fn new(margin: f64) -> Self {
        LmiSystem {
            vars: Vec::new(),
            n_scalars: 0,
            constraints: Vec::new(),
            objective: None,
            margin,
        }
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn variables(&self) -> &[VarDecl] {
        &self.vars
    }

    fn declare(&mut self, name: &str, shape: VarShape) -> VarId {
        let decl = VarDecl {
            name: name.to_string(),
            shape,
            offset: self.n_scalars,
        };
        self.n_scalars += shape.scalars();
        self.vars.push(decl);
        VarId(self.vars.len() - 1)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.declare(name, VarShape::Symmetric(n))
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, VarShape::Full(rows, cols))
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.declare(name, VarShape::Full(1, 1))
    }

    pub fn var(&self, id: VarId) -> MatExpr {
        self.vars[id.0].expr()
    }

    pub fn decl(&self, id: VarId) -> &VarDecl {
        &self.vars[id.0]
    }

    /// Require `expr ≻ 0` (enforced as `expr ⪰ δ·I`). The expression must
    /// be square and symmetric up to 1e-12; it is symmetrized on insertion.
    pub fn require_positive(&mut self, label: impl Into<String>, expr: MatExpr) -> Result<()> {
        let (r, c) = expr.shape();
        if r != c {
            return Err(Error::dims("LMI constraint", format!("{r}x{r}"), format!("{r}x{c}")));
        }
        let asym = expr.asymmetry();
        if asym > ASYMMETRY_LIMIT {
            return Err(Error::AsymmetricConstraint { asymmetry: asym });
        }
        let expr = expr.map_all(symmetrize);
        self.constraints.push(LmiConstraint {
            label: label.into(),
            expr,
        });
        Ok(())
    }

    /// Minimize a 1×1 affine expression.
    pub fn minimize(&mut self, objective: MatExpr) -> Result<()> {
        if objective.shape() != (1, 1) {
            return Err(Error::dims("objective", "1x1", format!("{:?}", objective.shape())));
        }
        self.objective = Some(objective);
        Ok(())
    }

    pub fn clear_objective(&mut self) {
        self.objective = None;
    }

    /// Largest violation of `F(a + b) = F(a) + F(b) - F(0)` over all
    /// constraints at two random points.
    pub fn linearity_residual(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..self.n_scalars).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..self.n_scalars).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let zero = vec![0.0; self.n_scalars];
        self.constraints
            .iter()
            .map(|c| {
                let lhs = c.expr.eval(&ab);
                let rhs = c.expr.eval(&a) + c.expr.eval(&b) - c.expr.eval(&zero);
                max_abs_diff(&lhs, &rhs)
            })
            .fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<SdpSolution> {
        self.solve_with(&SdpOptions::default())
    }

    /// Solve with the backend. Setup problems are errors; infeasibility and
    /// numerical trouble are reported through [`SdpSolution::status`].
    pub fn solve_with(&self, opts: &SdpOptions) -> Result<SdpSolution> {
        let n = self.n_scalars;
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(self.constraints.len());
        let mut row0 = 0;
        for c in &self.constraints {
            let d = c.expr.shape().0;
            let mut f0 = c.expr.constant.clone();
            for i in 0..d {
                f0[(i, i)] -= self.margin + opts.guard;
            }
            b.extend(svec(&f0));
            for (k, m) in &c.expr.terms {
                for (idx, v) in svec(m).into_iter().enumerate() {
                    if v != 0.0 {
                        rows.push(row0 + idx);
                        cols.push(*k);
                        vals.push(-v);
                    }
                }
            }
            cones.push(PSDTriangleConeT(d));
            row0 += d * (d + 1) / 2;
        }
        let a = CscMatrix::new_from_triplets(row0, n, rows, cols, vals);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        let mut obj_offset = 0.0;
        if let Some(obj) = &self.objective {
            obj_offset = obj.constant[(0, 0)];
            for (k, m) in &obj.terms {
                q[*k] = m[(0, 0)];
            }
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(opts.max_iter)
            .tol_gap_abs(opts.tol_gap)
            .tol_gap_rel(opts.tol_gap)
            .tol_feas(opts.tol_feas)
            .build()
            .map_err(|e| Error::NumericalFailure(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::NumericalFailure(format!("solver setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let diagnostics = SolverDiagnostics {
            backend_status: format!("{:?}", sol.status),
            iterations: sol.iterations,
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
            duality_gap: (sol.obj_val - sol.obj_val_dual).abs(),
            solve_time: sol.solve_time,
        };
        let x = sol.x.clone();
        let min_eigenvalues: Vec<f64> = self
            .constraints
            .iter()
            .map(|c| min_eigenvalue(&c.expr.eval(&x)))
            .collect();
        let worst = min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let status = match sol.status {
            SolverStatus::Solved => SdpStatus::Optimal,
            SolverStatus::AlmostSolved if worst >= -1e-7 => SdpStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SdpStatus::Infeasible
            }
            _ => SdpStatus::NumericalFailure,
        };
        let status = if status == SdpStatus::Optimal && (worst < -1e-7 || !worst.is_finite()) {
            SdpStatus::NumericalFailure
        } else {
            status
        };
        let objective = self
            .objective
            .as_ref()
            .map_or(0.0, |o| o.eval(&x)[(0, 0)]);
        debug_assert!((objective - (sol.obj_val + obj_offset)).abs() < 1e-6 * (1.0 + objective.abs()) || status != SdpStatus::Optimal);
        Ok(SdpSolution {
            values: x,
            vars: self.vars.clone(),
            labels: self.constraints.iter().map(|c| c.label.clone()).collect(),
            objective,
            min_eigenvalues,
            status,
            diagnostics,
        })
    }

    /// Sparse SDPA text (`.dat-s`): minimize `c·x` s.t.
    /// `Σ x_i F_i − F_0 ⪰ 0`, one block per constraint, margin folded
    /// into `F_0`.
    pub fn to_sdpa(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\"LMI system: {} scalars, {} blocks, margin {:e}", self.n_scalars, self.constraints.len(), self.margin);
        let _ = writeln!(out, "{}", self.n_scalars);
        let _ = writeln!(out, "{}", self.constraints.len());
        let sizes: Vec<String> = self
            .constraints
            .iter()
            .map(|c| c.expr.shape().0.to_string())
            .collect();
        let _ = writeln!(out, "{}", sizes.join(" "));
        let mut c = vec![0.0; self.n_scalars];
        if let Some(obj) = &self.objective {
            for (k, m) in &obj.terms {
                c[*k] = m[(0, 0)];
            }
        }
        let cs: Vec<String> = c.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "{}", cs.join(" "));
        for (blk, con) in self.constraints.iter().enumerate() {
            let d = con.expr.shape().0;
            let mut f0 = -con.expr.constant.clone();
            for i in 0..d {
                f0[(i, i)] += self.margin;
            }
            write_upper(&mut out, 0, blk + 1, &f0);
            for (k, m) in &con.expr.terms {
                write_upper(&mut out, k + 1, blk + 1, m);
            }
        }
        out
    }
}

fn write_upper(out: &mut String, matno: usize, blkno: usize, m: &Mat) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 {
                let _ = writeln!(out, "{matno} {blkno} {} {} {v:.17e}", i + 1, j + 1);
            }
        }
    }
}

/// Scaled upper-triangular vectorization, column-major, off-diagonals ×√2.
fn svec(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            v.push(if i == j {
                m[(i, j)]
            } else {
                m[(i, j)] * std::f64::consts::SQRT_2
            });
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub backend_status: String,
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    values: Vec<f64>,
    vars: Vec<VarDecl>,
    pub labels: Vec<String>,
    pub objective: f64,
    /// Minimum eigenvalue of each constraint matrix at the solution.
    pub min_eigenvalues: Vec<f64>,
    pub status: SdpStatus,
    pub diagnostics: SolverDiagnostics,
}

impl SdpSolution {
    pub fn value(&self, id: VarId) -> Mat {
        self.vars[id.0].value(&self.values)
    }

    pub fn scalar(&self, id: VarId) -> f64 {
        self.value(id)[(0, 0)]
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn worst_eigenvalue(&self) -> f64 {
        self.min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Converts non-optimal outcomes into errors carrying diagnostics.
    pub fn ensure_optimal(self) -> Result<Self> {
        match self.status {
            SdpStatus::Optimal => Ok(self),
            SdpStatus::Infeasible => Err(Error::Infeasible(format!(
                "backend status {} after {} iterations",
                self.diagnostics.backend_status, self.diagnostics.iterations
            ))),
            SdpStatus::NumericalFailure => Err(Error::NumericalFailure(format!(
                "backend status {}, worst eigenvalue {:.3e}, residuals {:.2e}/{:.2e}",
                self.diagnostics.backend_status,
                self.worst_eigenvalue(),
                self.diagnostics.primal_residual,
                self.diagnostics.dual_residual
            ))),
        }
    }
}

/// Instantiate a scheduling-parameterized constraint at every vertex.
///
/// The template is probed for affinity in ρ first: it is evaluated at the
/// origin and the unit vectors, and the affine prediction is compared with
/// direct evaluation at `-e_i`, `2e_i`, the all-ones point and every
/// vertex. Identical vertex instances are deduplicated.
pub fn enforce_on_vertices<F>(template: F, polytope: &SchedulingPolytope) -> Result<Vec<MatExpr>>
where
    F: Fn(&[f64]) -> Result<MatExpr>,
{
    let k = polytope.dim();
    let origin = vec![0.0; k];
    let base = template(&origin)?;
    let slopes: Vec<MatExpr> = (0..k)
        .map(|i| {
            let mut e = origin.clone();
            e[i] = 1.0;
            Ok(template(&e)?.sub(&base))
        })
        .collect::<Result<_>>()?;
    let predict = |rho: &[f64]| {
        rho.iter()
            .zip(&slopes)
            .fold(base.clone(), |acc, (r, s)| acc.add(&s.scale(*r)))
    };
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        let mut m = origin.clone();
        m[i] = -1.0;
        probes.push(m);
        let mut t = origin.clone();
        t[i] = 2.0;
        probes.push(t);
    }
    probes.push(vec![1.0; k]);
    probes.extend(polytope.vertices().iter().cloned());
    let scale = base.magnitude().max(1.0);
    let mut residual = 0.0_f64;
    for p in &probes {
        residual = residual.max(template(p)?.max_abs_diff(&predict(p)));
    }
    if residual > 1e-9 * scale {
        return Err(Error::NonAffineTemplate { residual });
    }
    let mut out: Vec<MatExpr> = Vec::with_capacity(polytope.len());
    for v in polytope.vertices() {
        let inst = template(v)?;
        if !out.iter().any(|e| e == &inst) {
            out.push(inst);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, data)
    }

    #[test]
    fn minimize_gamma_two_by_two() {
        let mut sys = LmiSystem::default();
        let g = sys.scalar("gamma");
        let ge = sys.var(g);
        let one = MatExpr::constant(mat(1, 1, &[1.0]));
        sys.require_positive("lmi", MatExpr::block(&[&[&ge, &one], &[&one, &ge]]))
            .unwrap();
        sys.minimize(ge.clone()).unwrap();
        let sol = sys.solve().unwrap().ensure_optimal().unwrap();
        assert!((sol.scalar(g) - 1.0).abs() < 1e-6, "{}", sol.scalar(g));
        assert!(sol.worst_eigenvalue() >= DEFAULT_MARGIN - 1e-9, "{}", sol.worst_eigenvalue());
    }

    fn scalar_lyapunov(a: f64) -> (LmiSystem, VarId) {
        let mut sys = LmiSystem::default();
        let p = sys.symmetric("P", 1);
        let pe = sys.var(p);
        sys.require_positive("P", pe.clone()).unwrap();
        let am = mat(1, 1, &[a]);
        let decrease = pe.sub(&pe.lmul(&am.transpose()).rmul(&am));
        sys.require_positive("decrease", decrease).unwrap();
        (sys, p)
    }

    #[test]
    fn stable_scalar_has_lyapunov_certificate() {
        let (sys, p) = scalar_lyapunov(0.5);
        let sol = sys.solve().unwrap().ensure_optimal().unwrap();
        let pv = sol.scalar(p);
        assert!(pv > 0.0);
        assert!(pv - 0.25 * pv > 0.0);
    }

    #[test]
    fn unstable_scalar_is_infeasible() {
        let (sys, _) = scalar_lyapunov(1.1);
        let sol = sys.solve().unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(matches!(sol.ensure_optimal(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn asymmetric_constraint_rejected() {
        let mut sys = LmiSystem::default();
        let x = sys.matrix("X", 2, 2);
        let err = sys.require_positive("bad", sys.var(x)).unwrap_err();
        assert!(matches!(err, Error::AsymmetricConstraint { .. }));
    }

    #[test]
    fn symmetric_variable_roundtrip() {
        let mut sys = LmiSystem::default();
        let s = sys.symmetric("S", 3);
        let target = mat(3, 3, &[2.0, 0.1, 0.2, 0.1, 3.0, 0.3, 0.2, 0.3, 4.0]);
        let x: Vec<f64> = vec![2.0, 0.1, 3.0, 0.2, 0.3, 4.0];
        assert_eq!(sys.var(s).eval(&x), target);
    }

    #[test]
    fn linearity_probe_is_exact() {
        let (sys, _) = scalar_lyapunov(0.7);
        assert!(sys.linearity_residual(3) < 1e-14);
    }

    #[test]
    fn vertex_enforcement_counts_and_dedups() {
        let p = SchedulingPolytope::interval(-1.0, 1.0).unwrap();
        let mut sys = LmiSystem::default();
        let x = sys.symmetric("X", 2);
        let xe = sys.var(x);
        let affine = enforce_on_vertices(
            |rho| Ok(xe.add_const(&(Mat::identity(2, 2) * rho[0]))),
            &p,
        )
        .unwrap();
        assert_eq!(affine.len(), 2);
        let constant = enforce_on_vertices(|_| Ok(xe.clone()), &p).unwrap();
        assert_eq!(constant.len(), 1);
    }

    #[test]
    fn quadratic_template_rejected() {
        let p = SchedulingPolytope::interval(-1.0, 1.0).unwrap();
        let err = enforce_on_vertices(
            |rho| Ok(MatExpr::constant(Mat::identity(1, 1) * (rho[0] * rho[0]))),
            &p,
        )
        .unwrap_err();
        match err {
            Error::NonAffineTemplate { residual } => assert!((residual - 2.0).abs() < 1e-12),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn resolving_is_deterministic() {
        let mut sys = LmiSystem::default();
        let g = sys.scalar("g");
        let ge = sys.var(g);
        let c = MatExpr::constant(mat(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        sys.require_positive("c", MatExpr::block(&[&[&ge, &MatExpr::zeros(1, 1)], &[&MatExpr::zeros(1, 1), &ge]]).add(&c))
            .unwrap();
        sys.minimize(ge).unwrap();
        let a = sys.solve().unwrap();
        let b = sys.clone().solve().unwrap();
        assert_eq!(a.status, b.status);
        assert!((a.objective - b.objective).abs() < 1e-8);
        assert_eq!(a.raw(), b.raw());
    }

    #[test]
    fn sdpa_dump_reconstructs_blocks() {
        let (mut sys, p) = scalar_lyapunov(0.5);
        sys.minimize(sys.var(p)).unwrap();
        let text = sys.to_sdpa();
        let mut lines = text.lines().skip(1);
        assert_eq!(lines.next(), Some("1"));
        assert_eq!(lines.next(), Some("2"));
        assert_eq!(lines.next(), Some("1 1"));
        let c: f64 = lines.next().unwrap().trim().parse().unwrap();
        assert_eq!(c, 1.0);
        // F1 of block 2 is 1 - a^2 = 0.75, F0 of each block carries the margin
        let entries: Vec<(usize, usize, f64)> = lines
            .map(|l| {
                let f: Vec<&str> = l.split_whitespace().collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap(), f[4].parse().unwrap())
            })
            .collect();
        assert!(entries.contains(&(1, 2, 0.75)));
        assert!(entries.contains(&(0, 1, DEFAULT_MARGIN)));
    }
}
