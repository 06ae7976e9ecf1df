//! Output-feedback synthesis for the differential form of a generalized
//! plant.
//!
//! The plant model `x⁺ = A(ρ)x + B_w w + B_u u`, `z = C_z x + D_zw w + D_zu u`,
//! `y = C_y x + D_yw w` is affine in ρ over a polytope. The block LMI
//!
//! ```text
//! [ 𝒫   𝒜(ρ)  ℬ(ρ)  0     ]
//! [ ⋆   G     0     𝒞(ρ)ᵀ ]  ≻ 0
//! [ ⋆   ⋆     γI    𝒟(ρ)ᵀ ]
//! [ ⋆   ⋆     ⋆     γI    ]
//! ```
//!
//! is imposed at every vertex, with `U, V, W, X` affine in ρ, and γ is
//! minimized. The full-order controller is recovered coefficient by
//! coefficient from `Θ(ρ)` through two constant block-triangular inverses,
//! so it is affine in ρ as well.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block, condition_number, max_abs, min_eigenvalue, serde_mat, symmetrize, Mat};
use crate::lpv_model::{AffineLpvStateSpace, AffineMatrixFunction, ChannelPartition};
use crate::sdp::{enforce_on_vertices, LmiSystem, MatExpr, SdpOptions, SolverDiagnostics, VarId, DEFAULT_MARGIN};

/// How `S − NJ` is split into `R·L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factorization {
    /// `L = I`, `R = S − NJ`.
    IdentityL,
    /// `S − NJ = (PᵀL_lu)·U_lu` from an LU decomposition with pivoting.
    Lu,
}

/// When the trace-regularized second solve runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polish {
    Always,
    /// Only when `cond(R)` exceeds the limit.
    WhenIllConditioned,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisOptions {
    pub margin: f64,
    pub factorization: Factorization,
    pub polish: Polish,
    /// γ is fixed to `(1 + slack)·γ_opt` in the second solve.
    pub polish_slack: f64,
    pub cond_limit: f64,
    pub solver: SdpOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            margin: DEFAULT_MARGIN,
            factorization: Factorization::IdentityL,
            polish: Polish::Always,
            polish_slack: 1e-3,
            cond_limit: 1e12,
            solver: SdpOptions::default(),
        }
    }
}

/// Constant plant blocks and scheduled `A`, `B_w`, `C_z`, `D_zw`.
#[derive(Debug, Clone)]
struct Blocks {
    a: AffineMatrixFunction,
    b_w: AffineMatrixFunction,
    c_z: AffineMatrixFunction,
    d_zw: AffineMatrixFunction,
    b_u: Mat,
    c_y: Mat,
    d_yw: Mat,
    d_zu: Mat,
}

fn require_constant(f: AffineMatrixFunction, name: &str) -> Result<Mat> {
    if !f.is_constant() {
        return Err(Error::AffineClosure(format!(
            "{name} depends on the scheduling variable; products with the controller variables would not stay affine"
        )));
    }
    Ok(f.constant_term().clone())
}

fn split(plant: &AffineLpvStateSpace) -> Result<Blocks> {
    let d_yu = plant.d_channel("y", "u")?;
    if !d_yu.is_constant() || max_abs(d_yu.constant_term()) != 0.0 {
        return Err(Error::PlantStructure("nonzero u -> y feedthrough".into()));
    }
    Ok(Blocks {
        a: plant.a.clone(),
        b_w: plant.b_channel("w")?,
        c_z: plant.c_channel("z")?,
        d_zw: plant.d_channel("z", "w")?,
        b_u: require_constant(plant.b_channel("u")?, "B_u")?,
        c_y: require_constant(plant.c_channel("y")?, "C_y")?,
        d_yw: require_constant(plant.d_channel("y", "w")?, "D_yw")?,
        d_zu: require_constant(plant.d_channel("z", "u")?, "D_zu")?,
    })
}

/// Handles of the synthesis decision variables. Scheduled variables hold
/// one handle per affine term (constant first).
#[derive(Debug, Clone)]
pub struct SynthesisVars {
    pub gamma: VarId,
    pub px: VarId,
    pub py: VarId,
    pub pz: VarId,
    pub j: VarId,
    pub n: VarId,
    pub s: VarId,
    pub u: Vec<VarId>,
    pub v: Vec<VarId>,
    pub w: Vec<VarId>,
    pub x: Vec<VarId>,
}

/// The assembled LMI system together with its variable handles.
#[derive(Debug, Clone)]
pub struct SynthesisLmi {
    pub system: LmiSystem,
    pub vars: SynthesisVars,
    plant: AffineLpvStateSpace,
}

fn affine_var(sys: &LmiSystem, ids: &[VarId], rho: &[f64]) -> MatExpr {
    let mut out = sys.var(ids[0]);
    for (id, r) in ids[1..].iter().zip(rho) {
        out = out.add(&sys.var(*id).scale(*r));
    }
    out
}

/// Build the vertex LMIs, `𝒫 ≻ 0` and the objective `min γ`.
pub fn assemble_synthesis_lmi(plant: &AffineLpvStateSpace, margin: f64) -> Result<SynthesisLmi> {
    let bl = split(plant)?;
    let n = plant.n_x();
    let (nw, nu) = (bl.b_w.shape().1, bl.b_u.ncols());
    let (nz, ny) = (bl.c_z.shape().0, bl.c_y.nrows());
    let k = plant.n_rho();
    let mut sys = LmiSystem::new(margin);
    let terms = k + 1;
    let vars = SynthesisVars {
        gamma: sys.scalar("gamma"),
        px: sys.symmetric("Px", n),
        py: sys.matrix("Py", n, n),
        pz: sys.symmetric("Pz", n),
        j: sys.matrix("J", n, n),
        n: sys.matrix("N", n, n),
        s: sys.matrix("S", n, n),
        u: (0..terms).map(|i| sys.matrix(&format!("U{i}"), n, n)).collect(),
        v: (0..terms).map(|i| sys.matrix(&format!("V{i}"), n, ny)).collect(),
        w: (0..terms).map(|i| sys.matrix(&format!("W{i}"), nu, n)).collect(),
        x: (0..terms).map(|i| sys.matrix(&format!("X{i}"), nu, ny)).collect(),
    };
    let (px, py, pz) = (sys.var(vars.px), sys.var(vars.py), sys.var(vars.pz));
    let (j, nn, s) = (sys.var(vars.j), sys.var(vars.n), sys.var(vars.s));
    let gamma = sys.var(vars.gamma);
    let eye = Mat::identity(n, n);
    let p_blk = MatExpr::block(&[&[&px, &py], &[&py.transpose(), &pz]]);
    let g12 = s.transpose().sub(&py).add_const(&eye);
    let g = MatExpr::block(&[
        &[&j.add(&j.transpose()).sub(&px), &g12],
        &[&g12.transpose(), &nn.add(&nn.transpose()).sub(&pz)],
    ]);
    let zero = |r: usize, c: usize| MatExpr::zeros(r, c);

    let template = |rho: &[f64]| -> Result<MatExpr> {
        let a = bl.a.evaluate(rho)?;
        let b_w = bl.b_w.evaluate(rho)?;
        let c_z = bl.c_z.evaluate(rho)?;
        let d_zw = bl.d_zw.evaluate(rho)?;
        let (u, v) = (affine_var(&sys, &vars.u, rho), affine_var(&sys, &vars.v, rho));
        let (w, x) = (affine_var(&sys, &vars.w, rho), affine_var(&sys, &vars.x, rho));
        let cal_a = MatExpr::block(&[
            &[&j.lmul(&a).add(&w.lmul(&bl.b_u)), &x.lmul(&bl.b_u).rmul(&bl.c_y).add_const(&a)],
            &[&u, &nn.rmul(&a).add(&v.rmul(&bl.c_y))],
        ]);
        let cal_b = MatExpr::block(&[
            &[&x.lmul(&bl.b_u).rmul(&bl.d_yw).add_const(&b_w)],
            &[&nn.rmul(&b_w).add(&v.rmul(&bl.d_yw))],
        ]);
        let cal_c = MatExpr::block(&[&[
            &j.lmul(&c_z).add(&w.lmul(&bl.d_zu)),
            &x.lmul(&bl.d_zu).rmul(&bl.c_y).add_const(&c_z),
        ]]);
        let cal_d = x.lmul(&bl.d_zu).rmul(&bl.d_yw).add_const(&d_zw);
        let gw = diag_gamma(&gamma, nw);
        let gz = diag_gamma(&gamma, nz);
        Ok(MatExpr::block(&[
            &[&p_blk, &cal_a, &cal_b, &zero(2 * n, nz)],
            &[&cal_a.transpose(), &g, &zero(2 * n, nw), &cal_c.transpose()],
            &[&cal_b.transpose(), &zero(nw, 2 * n), &gw, &cal_d.transpose()],
            &[&zero(nz, 2 * n), &cal_c, &cal_d, &gz],
        ]))
    };
    let instances = enforce_on_vertices(template, &plant.polytope)?;
    for (i, m) in instances.into_iter().enumerate() {
        sys.require_positive(format!("vertex {i}"), m)?;
    }
    sys.require_positive("P", p_blk.clone())?;
    sys.minimize(gamma)?;
    Ok(SynthesisLmi {
        system: sys,
        vars,
        plant: plant.clone(),
    })
}

/// `γ·I_m` as an expression.
fn diag_gamma(gamma: &MatExpr, m: usize) -> MatExpr {
    let mut out = MatExpr::zeros(m, m);
    for i in 0..m {
        let mut e = Mat::zeros(m, 1);
        e[(i, 0)] = 1.0;
        out = out.add(&gamma.lmul(&e).rmul(&e.transpose()));
    }
    out
}

/// The synthesized differential controller
/// `δx_c⁺ = A_c(ρ)δx_c + B_c(ρ)δu_c`, `δy_c = C_c(ρ)δx_c + D_c(ρ)δu_c`,
/// with input channel `u_c` (plant measurement) and output `y_c` (plant
/// control).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialController {
    pub lpv: AffineLpvStateSpace,
}

impl DifferentialController {
    pub fn new(
        a: AffineMatrixFunction,
        b: AffineMatrixFunction,
        c: AffineMatrixFunction,
        d: AffineMatrixFunction,
        polytope: crate::polytope::SchedulingPolytope,
    ) -> Result<Self> {
        let (nu, ny) = d.shape();
        let lpv = AffineLpvStateSpace::new(
            a,
            b,
            c,
            d,
            polytope,
            ChannelPartition::single("u_c", ny),
            ChannelPartition::single("y_c", nu),
        )?;
        Ok(DifferentialController { lpv })
    }

    pub fn n_x(&self) -> usize {
        self.lpv.n_x()
    }
    pub fn n_in(&self) -> usize {
        self.lpv.n_in()
    }
    pub fn n_out(&self) -> usize {
        self.lpv.n_out()
    }
    pub fn a(&self) -> &AffineMatrixFunction {
        &self.lpv.a
    }
    pub fn b(&self) -> &AffineMatrixFunction {
        &self.lpv.b
    }
    pub fn c(&self) -> &AffineMatrixFunction {
        &self.lpv.c
    }
    pub fn d(&self) -> &AffineMatrixFunction {
        &self.lpv.d
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: DifferentialController = serde_json::from_str(s)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintMargin {
    pub label: String,
    pub min_eigenvalue: f64,
}

/// Solved synthesis variables and the data needed to re-check them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisCertificate {
    pub gamma: f64,
    /// Optimal γ of the first solve; `gamma` differs only after polishing.
    pub gamma_opt: f64,
    pub polished: bool,
    #[serde(with = "serde_mat")]
    pub px: Mat,
    #[serde(with = "serde_mat")]
    pub py: Mat,
    #[serde(with = "serde_mat")]
    pub pz: Mat,
    #[serde(with = "serde_mat")]
    pub j: Mat,
    #[serde(with = "serde_mat")]
    pub n: Mat,
    #[serde(with = "serde_mat")]
    pub s: Mat,
    pub u: AffineMatrixFunction,
    pub v: AffineMatrixFunction,
    pub w: AffineMatrixFunction,
    pub x: AffineMatrixFunction,
    #[serde(with = "serde_mat")]
    pub r: Mat,
    #[serde(with = "serde_mat")]
    pub l: Mat,
    pub cond_r: f64,
    pub margin: f64,
    pub margins: Vec<ConstraintMargin>,
    /// Minimum eigenvalue of `[[Px, Py], [Pyᵀ, Pz]]`.
    pub p_min_eigenvalue: f64,
    /// Minimum eigenvalue of the `G` block.
    pub g_min_eigenvalue: f64,
    pub diagnostics: SolverDiagnostics,
    pub plant: AffineLpvStateSpace,
}

impl SynthesisCertificate {
    pub fn worst_margin(&self) -> f64 {
        self.margins
            .iter()
            .map(|m| m.min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Structured text report with γ, the margin table and all matrices.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "gamma {:.10}", self.gamma);
        let _ = writeln!(out, "gamma_opt {:.10}", self.gamma_opt);
        let _ = writeln!(out, "polished {}", self.polished);
        let _ = writeln!(out, "margin {:e}", self.margin);
        let _ = writeln!(out, "cond_R {:.6e}", self.cond_r);
        let _ = writeln!(out, "solver {} iterations {}", self.diagnostics.backend_status, self.diagnostics.iterations);
        let _ = writeln!(out, "\n[margins]");
        for m in &self.margins {
            let _ = writeln!(out, "{:<12} {:.6e}", m.label, m.min_eigenvalue);
        }
        let _ = writeln!(out, "{:<12} {:.6e}", "P block", self.p_min_eigenvalue);
        let _ = writeln!(out, "{:<12} {:.6e}", "G block", self.g_min_eigenvalue);
        let mats: [(&str, &Mat); 8] = [
            ("Px", &self.px),
            ("Py", &self.py),
            ("Pz", &self.pz),
            ("J", &self.j),
            ("N", &self.n),
            ("S", &self.s),
            ("R", &self.r),
            ("L", &self.l),
        ];
        for (name, m) in mats {
            write_matrix(&mut out, name, m);
        }
        for (name, f) in [("U", &self.u), ("V", &self.v), ("W", &self.w), ("X", &self.x)] {
            for (i, m) in f.terms().enumerate() {
                write_matrix(&mut out, &format!("{name}{i}"), m);
            }
        }
        out
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Mat) {
    let _ = writeln!(out, "\n[{name}] {}x{}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:+.12e}", m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn affine_value(sol: &crate::sdp::SdpSolution, ids: &[VarId]) -> Result<AffineMatrixFunction> {
    AffineMatrixFunction::new(sol.value(ids[0]), ids[1..].iter().map(|id| sol.value(*id)).collect())
}

fn factorize(m: &Mat, how: Factorization) -> (Mat, Mat) {
    match how {
        Factorization::IdentityL => (m.clone(), Mat::identity(m.nrows(), m.ncols())),
        Factorization::Lu => {
            let lu = m.clone().lu();
            let mut r = lu.l();
            lu.p().inv_permute_rows(&mut r);
            (r, lu.u())
        }
    }
}

/// `M⁻¹·T` via a pivoted LU solve (small residual `M·X − T` even when `M`
/// is badly conditioned, unlike an explicit inverse).
fn left_solve(m: &Mat, t: &Mat, what: &'static str) -> Result<Mat> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::BlockInverse(what));
    }
    m.clone().full_piv_lu().solve(t).ok_or(Error::BlockInverse(what))
}

/// Relative rank tolerance of the PBH tests.
const PBH_TOL: f64 = 1e-9;

fn smallest_singular_value(m: &nalgebra::DMatrix<num_complex::Complex64>) -> f64 {
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// PBH tests of `(A(v), B_u)` and `(C_y, A(v))` at every vertex `v` for
/// the eigenvalues on or outside the unit circle. A strictly feasible
/// synthesis LMI stabilizes every frozen vertex model, so a failure here
/// means the LMI is infeasible.
pub fn check_vertex_stabilizability(plant: &AffineLpvStateSpace) -> Result<()> {
    use num_complex::Complex64;
    let blocks = split(plant)?;
    let to_c = |m: &Mat| m.map(|v| Complex64::new(v, 0.0));
    for (i, a) in blocks.a.vertex_images(&plant.polytope)?.iter().enumerate() {
        let n = a.nrows();
        let scale = max_abs(a).max(max_abs(&blocks.b_u)).max(max_abs(&blocks.c_y)).max(1.0);
        for lambda in a.complex_eigenvalues().iter() {
            if lambda.norm() < 1.0 - 1e-12 {
                continue;
            }
            let shifted = to_c(a) - nalgebra::DMatrix::<Complex64>::identity(n, n) * *lambda;
            let ctrb = block_complex(&shifted, &to_c(&blocks.b_u), true);
            if smallest_singular_value(&ctrb) <= PBH_TOL * scale {
                return Err(Error::Infeasible(format!(
                    "mode {lambda:.6} at vertex {i} is not stabilizable from the control input"
                )));
            }
            let obsv = block_complex(&shifted, &to_c(&blocks.c_y), false);
            if smallest_singular_value(&obsv) <= PBH_TOL * scale {
                return Err(Error::Infeasible(format!(
                    "mode {lambda:.6} at vertex {i} is not detectable from the measurement"
                )));
            }
        }
    }
    Ok(())
}

/// `[a, b]` when `beside`, else `[a; b]`.
fn block_complex(
    a: &nalgebra::DMatrix<num_complex::Complex64>,
    b: &nalgebra::DMatrix<num_complex::Complex64>,
    beside: bool,
) -> nalgebra::DMatrix<num_complex::Complex64> {
    let (r, c) = a.shape();
    if beside {
        let mut m = nalgebra::DMatrix::zeros(r, c + b.ncols());
        m.view_mut((0, 0), (r, c)).copy_from(a);
        m.view_mut((0, c), (r, b.ncols())).copy_from(b);
        m
    } else {
        let mut m = nalgebra::DMatrix::zeros(r + b.nrows(), c);
        m.view_mut((0, 0), (r, c)).copy_from(a);
        m.view_mut((r, 0), (b.nrows(), c)).copy_from(b);
        m
    }
}

/// Solve the synthesis LMI and construct the controller.
pub fn synthesize(
    plant: &AffineLpvStateSpace,
    opts: &SynthesisOptions,
) -> Result<(SynthesisCertificate, DifferentialController)> {
    check_vertex_stabilizability(plant)?;
    let lmi = assemble_synthesis_lmi(plant, opts.margin)?;
    let first = lmi.system.solve_with(&opts.solver)?.ensure_optimal()?;
    let gamma_opt = first.scalar(lmi.vars.gamma);
    let mut cert = extract(&lmi, &first, gamma_opt, false, opts)?;
    let polish = match opts.polish {
        Polish::Always => true,
        Polish::WhenIllConditioned => !(cert.cond_r <= opts.cond_limit),
        Polish::Never => false,
    };
    if polish {
        let mut sys = lmi.system.clone();
        let gamma = sys.var(lmi.vars.gamma);
        let cap = MatExpr::constant(Mat::from_element(1, 1, (1.0 + opts.polish_slack) * gamma_opt));
        sys.require_positive("gamma cap", cap.sub(&gamma))?;
        // normalized by its value at the first solution; an O(100) objective
        // against O(1) γ stalls the interior-point method
        let objective = sys.var(lmi.vars.px).trace().add(&sys.var(lmi.vars.pz).trace());
        let scale = (cert.px.trace() + cert.pz.trace()).abs().max(1.0);
        sys.minimize(objective.scale(1.0 / scale))?;
        let second = sys.solve_with(&opts.solver)?.ensure_optimal()?;
        cert = extract(&lmi, &second, gamma_opt, true, opts)?;
        cert.margins.retain(|m| m.label != "gamma cap");
    }
    if !(cert.cond_r <= opts.cond_limit) {
        return Err(Error::SingularFactor { cond: cert.cond_r });
    }
    let ctrl = construct_controller(&cert)?;
    Ok((cert, ctrl))
}

fn extract(
    lmi: &SynthesisLmi,
    sol: &crate::sdp::SdpSolution,
    gamma_opt: f64,
    polished: bool,
    opts: &SynthesisOptions,
) -> Result<SynthesisCertificate> {
    let v = &lmi.vars;
    let (px, py, pz) = (sol.value(v.px), sol.value(v.py), sol.value(v.pz));
    let (j, n, s) = (sol.value(v.j), sol.value(v.n), sol.value(v.s));
    let nx = px.nrows();
    let (r, l) = factorize(&(&s - &n * &j), opts.factorization);
    let cond_r = condition_number(&r).max(condition_number(&l));
    let eye = Mat::identity(nx, nx);
    let g12 = &eye + s.transpose() - &py;
    let g = block(&[
        &[&(&j + j.transpose() - &px), &g12],
        &[&g12.transpose(), &(&n + n.transpose() - &pz)],
    ]);
    let p = block(&[&[&px, &py], &[&py.transpose(), &pz]]);
    Ok(SynthesisCertificate {
        gamma: sol.scalar(v.gamma),
        gamma_opt,
        polished,
        u: affine_value(sol, &v.u)?,
        v: affine_value(sol, &v.v)?,
        w: affine_value(sol, &v.w)?,
        x: affine_value(sol, &v.x)?,
        px,
        py,
        pz,
        j,
        n,
        s,
        r,
        l,
        cond_r,
        margin: opts.margin,
        margins: sol
            .labels
            .iter()
            .zip(&sol.min_eigenvalues)
            .map(|(label, e)| ConstraintMargin {
                label: label.clone(),
                min_eigenvalue: *e,
            })
            .collect(),
        p_min_eigenvalue: min_eigenvalue(&symmetrize(&p)),
        g_min_eigenvalue: min_eigenvalue(&symmetrize(&g)),
        diagnostics: sol.diagnostics.clone(),
        plant: lmi.plant.clone(),
    })
}

/// `[[R, N B_u], [0, I]]` and `[[L, 0], [C_y J, I]]`.
fn outer_factors(cert: &SynthesisCertificate) -> Result<(Mat, Mat)> {
    let bl = split(&cert.plant)?;
    let nx = cert.r.nrows();
    let (nu, ny) = (bl.b_u.ncols(), bl.c_y.nrows());
    let left = block(&[
        &[&cert.r, &(&cert.n * &bl.b_u)],
        &[&Mat::zeros(nu, nx), &Mat::identity(nu, nu)],
    ]);
    let right = block(&[
        &[&cert.l, &Mat::zeros(nx, ny)],
        &[&(&bl.c_y * &cert.j), &Mat::identity(ny, ny)],
    ]);
    Ok((left, right))
}

/// `Θ_i = [[U_i − N A_i J, V_i], [W_i, X_i]]` for each affine term.
fn theta_terms(cert: &SynthesisCertificate) -> Vec<Mat> {
    let a_terms: Vec<&Mat> = cert.plant.a.terms().collect();
    let (u, v, w, x): (Vec<&Mat>, Vec<&Mat>, Vec<&Mat>, Vec<&Mat>) = (
        cert.u.terms().collect(),
        cert.v.terms().collect(),
        cert.w.terms().collect(),
        cert.x.terms().collect(),
    );
    (0..a_terms.len())
        .map(|i| {
            let top_left = u[i] - &cert.n * a_terms[i] * &cert.j;
            block(&[&[&top_left, v[i]], &[w[i], x[i]]])
        })
        .collect()
}

/// Apply the two constant inverses to each term of `Θ(ρ)`.
pub fn construct_controller(cert: &SynthesisCertificate) -> Result<DifferentialController> {
    let (left, right) = outer_factors(cert)?;
    let nx = cert.r.nrows();
    let right_t = right.transpose();
    let ks: Vec<Mat> = theta_terms(cert)
        .iter()
        .map(|t| {
            let lt = left_solve(&left, t, "[[R, N B_u], [0, I]]")?;
            Ok(left_solve(&right_t, &lt.transpose(), "[[L, 0], [C_y J, I]]")?.transpose())
        })
        .collect::<Result<_>>()?;
    let (rows, cols) = ks[0].shape();
    let part = |r: std::ops::Range<usize>, c: std::ops::Range<usize>| -> Result<AffineMatrixFunction> {
        let pick = |m: &Mat| m.view((r.start, c.start), (r.len(), c.len())).into_owned();
        AffineMatrixFunction::new(pick(&ks[0]), ks[1..].iter().map(pick).collect())
    };
    DifferentialController::new(
        part(0..nx, 0..nx)?,
        part(0..nx, nx..cols)?,
        part(nx..rows, 0..nx)?,
        part(nx..rows, nx..cols)?,
        cert.plant.polytope.clone(),
    )
}

/// Max-norm residual of the identity
/// `[[R, N B_u], [0, I]]·K(ρ)·[[L, 0], [C_y J, I]] + [[N A(ρ) J, 0], [0, 0]] = [[U, V], [W, X]](ρ)`.
pub fn reconstruct_theta(
    cert: &SynthesisCertificate,
    ctrl: &DifferentialController,
    rho: &[f64],
) -> Result<f64> {
    let (left, right) = outer_factors(cert)?;
    let k = block(&[
        &[&ctrl.a().evaluate(rho)?, &ctrl.b().evaluate(rho)?],
        &[&ctrl.c().evaluate(rho)?, &ctrl.d().evaluate(rho)?],
    ]);
    let nx = cert.r.nrows();
    let mut lhs = &left * k * &right;
    let nan = &cert.n * cert.plant.a.evaluate(rho)? * &cert.j;
    let mut tl = lhs.view_mut((0, 0), (nx, nx));
    tl += &nan;
    let rhs = block(&[
        &[&cert.u.evaluate(rho)?, &cert.v.evaluate(rho)?],
        &[&cert.w.evaluate(rho)?, &cert.x.evaluate(rho)?],
    ]);
    Ok(max_abs(&(lhs - rhs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::StateSpace;

    /// `x⁺ = 0.5x + w + u`, `z = (x, 0.1u)`, `y = x + w`.
    pub(crate) fn scalar_plant() -> AffineLpvStateSpace {
        let ss = StateSpace::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::from_row_slice(3, 1, &[1.0, 0.0, 1.0]),
            Mat::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.1, 1.0, 0.0]),
        )
        .unwrap();
        AffineLpvStateSpace::from_lti(
            &ss,
            ChannelPartition::new(&[("w", 1), ("u", 1)]).unwrap(),
            ChannelPartition::new(&[("z", 2), ("y", 1)]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_lti_synthesis() {
        let plant = scalar_plant();
        let lmi = assemble_synthesis_lmi(&plant, DEFAULT_MARGIN).unwrap();
        // one vertex copy plus the P block
        assert_eq!(lmi.system.constraints().len(), 2);
        let (cert, ctrl) = synthesize(&plant, &SynthesisOptions::default()).unwrap();
        assert!(cert.gamma < 1.5, "{}", cert.gamma);
        assert!(cert.gamma <= cert.gamma_opt * (1.0 + 1e-3) + 1e-9);
        assert!(cert.worst_margin() >= DEFAULT_MARGIN - 1e-9);
        assert!(cert.p_min_eigenvalue > 0.0 && cert.g_min_eigenvalue > 0.0);
        assert_eq!(ctrl.n_x(), 1);
        assert!(reconstruct_theta(&cert, &ctrl, &[0.0]).unwrap() <= 1e-8);
    }

    #[test]
    fn lu_factorization_also_reconstructs() {
        let opts = SynthesisOptions {
            factorization: Factorization::Lu,
            ..Default::default()
        };
        let (cert, ctrl) = synthesize(&scalar_plant(), &opts).unwrap();
        assert!(reconstruct_theta(&cert, &ctrl, &[0.0]).unwrap() <= 1e-8);
    }

    #[test]
    fn zeroed_state_matrix_breaks_identity() {
        let (cert, mut ctrl) = synthesize(&scalar_plant(), &SynthesisOptions::default()).unwrap();
        let z = AffineMatrixFunction::zeros(1, 1, 1);
        let orig = ctrl.lpv.a.clone();
        ctrl.lpv.a = z;
        let res = reconstruct_theta(&cert, &ctrl, &[0.0]).unwrap();
        // the lost term is R·A_c·L
        let expect = max_abs(&(&cert.r * orig.constant_term() * &cert.l));
        assert!((res - expect).abs() < 1e-9 * expect.max(1.0), "{res} vs {expect}");
    }

    #[test]
    fn scheduled_input_matrix_rejected() {
        let mut plant = scalar_plant();
        plant.polytope = crate::polytope::SchedulingPolytope::interval(-1.0, 1.0).unwrap();
        plant.b = AffineMatrixFunction::new(
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![Mat::from_row_slice(1, 2, &[0.0, 0.3])],
        )
        .unwrap();
        plant.a = plant.a.with_n_rho(1).unwrap();
        plant.c = plant.c.with_n_rho(1).unwrap();
        plant.d = plant.d.with_n_rho(1).unwrap();
        let err = assemble_synthesis_lmi(&plant, DEFAULT_MARGIN).unwrap_err();
        assert!(matches!(err, Error::AffineClosure(_)), "{err}");
    }

    #[test]
    fn controller_json_roundtrip() {
        let (_, ctrl) = synthesize(&scalar_plant(), &SynthesisOptions::default()).unwrap();
        let back = DifferentialController::from_json(&ctrl.to_json().unwrap()).unwrap();
        assert_eq!(back, ctrl);
    }

    fn scalar_with(a: f64, b_u: f64, c_y: f64) -> AffineLpvStateSpace {
        let ss = StateSpace::new(
            Mat::from_element(1, 1, a),
            Mat::from_row_slice(1, 2, &[1.0, b_u]),
            Mat::from_row_slice(2, 1, &[1.0, c_y]),
            Mat::zeros(2, 2),
        )
        .unwrap();
        AffineLpvStateSpace::from_lti(
            &ss,
            ChannelPartition::new(&[("w", 1), ("u", 1)]).unwrap(),
            ChannelPartition::new(&[("z", 1), ("y", 1)]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn unstabilizable_plant_is_infeasible() {
        let err = synthesize(&scalar_with(2.0, 0.0, 1.0), &SynthesisOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("stabilizable")), "{err}");
        let err = synthesize(&scalar_with(1.0, 1.0, 0.0), &SynthesisOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(ref m) if m.contains("detectable")), "{err}");
        // a stable uncontrollable mode is fine
        assert!(check_vertex_stabilizability(&scalar_with(0.5, 0.0, 0.0)).is_ok());
    }
}
