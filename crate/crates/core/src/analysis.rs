//! ℓi2-gain analysis of closed loops and open systems.
//!
//! A system with affine LPV differential form `(A(ρ), B(ρ), C(ρ), D(ρ))` over
//! a polytope has ℓi2-gain at most `γ` if some `P ≻ 0` satisfies, at every
//! vertex,
//!
//! ```text
//! ⎡ P   AP  B   0   ⎤
//! ⎢ ⋆   P   0   PCᵀ ⎥ ≻ 0.
//! ⎢ ⋆   ⋆   γI  Dᵀ  ⎥
//! ⎣ ⋆   ⋆   ⋆   γI  ⎦
//! ```
//!
//! The condition is sufficient only: an infeasible LMI is a refusal, not a
//! proof that the gain exceeds `γ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::differential::NonlinearPlant;
use crate::error::{Error, Result};
use crate::linalg::{block, max_abs, max_abs_diff, min_eigenvalue, serde_mat, symmetrize, Mat};
use crate::lpv_model::{AffineLpvStateSpace, AffineMatrixFunction, ChannelPartition};
use crate::polytope::SchedulingPolytope;
use crate::realization::ControllerRuntime;
use crate::sdp::{enforce_on_vertices, LmiSystem, MatExpr, SdpOptions, SdpStatus, SolverDiagnostics, DEFAULT_MARGIN};
use crate::simulation::simulate;
use crate::synthesis::{ConstraintMargin, DifferentialController};

/// The lower interconnection of a plant (inputs `(w, u)`, outputs `(z, y)`)
/// with a controller, state `(x, x_c)`, inputs `w`, outputs `z`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopLpv {
    pub lpv: AffineLpvStateSpace,
    pub n_plant: usize,
    pub n_controller: usize,
    pub provenance: String,
}

fn is_zero(f: &AffineMatrixFunction) -> bool {
    f.terms().all(|m| max_abs(m) == 0.0)
}

/// Common scheduling dimension and polytope of two models.
fn common_polytope(p: &AffineLpvStateSpace, c: &AffineLpvStateSpace) -> Result<SchedulingPolytope> {
    match (p.is_constant(), c.is_constant()) {
        (_, true) => Ok(p.polytope.clone()),
        (true, false) => Ok(c.polytope.clone()),
        (false, false) => {
            if p.polytope != c.polytope {
                return Err(Error::InvalidPolytope(
                    "plant and controller are scheduled over different polytopes".into(),
                ));
            }
            Ok(p.polytope.clone())
        }
    }
}

/// `𝓕_l(P, K)` with `u_c = y`, `u = y_c`.
pub fn close_loop(plant: &AffineLpvStateSpace, ctrl: &DifferentialController) -> Result<ClosedLoopLpv> {
    let polytope = common_polytope(plant, &ctrl.lpv)?;
    let k = polytope.dim();
    let lift = |f: &AffineMatrixFunction| -> Result<AffineMatrixFunction> {
        if f.n_rho() == k {
            Ok(f.clone())
        } else if f.is_constant() {
            f.with_n_rho(k)
        } else {
            Err(Error::dims("scheduling dimension", k, f.n_rho()))
        }
    };
    let a = lift(&plant.a)?;
    let b_w = lift(&plant.b_channel("w")?)?;
    let b_u = lift(&plant.b_channel("u")?)?;
    let c_z = lift(&plant.c_channel("z")?)?;
    let c_y = lift(&plant.c_channel("y")?)?;
    let d_zw = lift(&plant.d_channel("z", "w")?)?;
    let d_zu = lift(&plant.d_channel("z", "u")?)?;
    let d_yw = lift(&plant.d_channel("y", "w")?)?;
    let d_yu = lift(&plant.d_channel("y", "u")?)?;
    let (ac, bc, cc, dc) = (lift(ctrl.a())?, lift(ctrl.b())?, lift(ctrl.c())?, lift(ctrl.d())?);
    if b_u.shape().1 != dc.shape().0 || c_y.shape().0 != dc.shape().1 {
        return Err(Error::dims(
            "controller (inputs, outputs)",
            format!("({}, {})", c_y.shape().0, b_u.shape().1),
            format!("({}, {})", dc.shape().1, dc.shape().0),
        ));
    }
    if !is_zero(&d_yu) && !is_zero(&dc) {
        return Err(Error::AlgebraicLoop);
    }
    let acl = AffineMatrixFunction::block(&[
        &[&a.add(&b_u.mul(&dc)?.mul(&c_y)?)?, &b_u.mul(&cc)?],
        &[&bc.mul(&c_y)?, &ac.add(&bc.mul(&d_yu)?.mul(&cc)?)?],
    ])?;
    let bcl = AffineMatrixFunction::block(&[
        &[&b_w.add(&b_u.mul(&dc)?.mul(&d_yw)?)?],
        &[&bc.mul(&d_yw)?],
    ])?;
    let ccl = AffineMatrixFunction::block(&[&[&c_z.add(&d_zu.mul(&dc)?.mul(&c_y)?)?, &d_zu.mul(&cc)?]])?;
    let dcl = d_zw.add(&d_zu.mul(&dc)?.mul(&d_yw)?)?;
    let (nw, nz) = (dcl.shape().1, dcl.shape().0);
    let lpv = AffineLpvStateSpace::new(
        acl,
        bcl,
        ccl,
        dcl,
        polytope,
        ChannelPartition::single("w", nw),
        ChannelPartition::single("z", nz),
    )?;
    let cl = ClosedLoopLpv {
        n_plant: plant.n_x(),
        n_controller: ctrl.n_x(),
        provenance: format!(
            "plant: {} states, inputs {:?}, outputs {:?}; controller: {} states",
            plant.n_x(),
            plant.inputs.channels().iter().map(|c| &c.name).collect::<Vec<_>>(),
            plant.outputs.channels().iter().map(|c| &c.name).collect::<Vec<_>>(),
            ctrl.n_x()
        ),
        lpv,
    };
    probe_closed_loop(plant, ctrl, &cl)?;
    Ok(cl)
}

/// Frozen-ρ interconnection compared with the affine closed loop.
fn probe_closed_loop(plant: &AffineLpvStateSpace, ctrl: &DifferentialController, cl: &ClosedLoopLpv) -> Result<()> {
    let poly = &cl.lpv.polytope;
    let mut points = poly.vertices().to_vec();
    points.push(poly.centroid());
    let pr = |rho: &[f64]| -> Vec<f64> { rho[..plant.n_rho().min(rho.len())].to_vec() };
    for rho in points {
        let p = if plant.is_constant() {
            plant.at(&vec![0.0; plant.n_rho()])?
        } else {
            plant.at(&pr(&rho))?
        };
        let c = if ctrl.lpv.is_constant() {
            ctrl.lpv.at(&vec![0.0; ctrl.lpv.n_rho()])?
        } else {
            ctrl.lpv.at(&rho)?
        };
        let (wr, ur) = (plant.inputs.range("w")?, plant.inputs.range("u")?);
        let (zr, yr) = (plant.outputs.range("z")?, plant.outputs.range("y")?);
        let cols = |m: &Mat, r: &std::ops::Range<usize>| m.columns(r.start, r.len()).into_owned();
        let rows = |m: &Mat, r: &std::ops::Range<usize>| m.rows(r.start, r.len()).into_owned();
        let (b_w, b_u) = (cols(&p.b, &wr), cols(&p.b, &ur));
        let (c_z, c_y) = (rows(&p.c, &zr), rows(&p.c, &yr));
        let d_yu = cols(&rows(&p.d, &yr), &ur);
        let d_yw = cols(&rows(&p.d, &yr), &wr);
        let d_zu = cols(&rows(&p.d, &zr), &ur);
        let d_zw = cols(&rows(&p.d, &zr), &wr);
        let expect_a = block(&[
            &[&(&p.a + &b_u * &c.d * &c_y), &(&b_u * &c.c)],
            &[&(&c.b * &c_y), &(&c.a + &c.b * &d_yu * &c.c)],
        ]);
        let expect_b = block(&[&[&(&b_w + &b_u * &c.d * &d_yw)], &[&(&c.b * &d_yw)]]);
        let expect_c = block(&[&[&(&c_z + &d_zu * &c.d * &c_y), &(&d_zu * &c.c)]]);
        let expect_d = &d_zw + &d_zu * &c.d * &d_yw;
        let got = cl.lpv.at(&rho)?;
        let err = max_abs_diff(&got.a, &expect_a)
            .max(max_abs_diff(&got.b, &expect_b))
            .max(max_abs_diff(&got.c, &expect_c))
            .max(max_abs_diff(&got.d, &expect_d));
        let scale = 1.0 + max_abs(&expect_a).max(max_abs(&expect_b)).max(max_abs(&expect_c));
        if !(err <= 1e-9 * scale) {
            return Err(Error::NonAffineTemplate { residual: err });
        }
    }
    Ok(())
}

/// A constant storage matrix certifying a gain bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainCertificate {
    pub gamma: f64,
    #[serde(with = "serde_mat")]
    pub p: Mat,
    pub margins: Vec<ConstraintMargin>,
    pub diagnostics: SolverDiagnostics,
    /// Solved in rebalanced coordinates after a stalled first attempt.
    pub balanced: bool,
}

impl GainCertificate {
    pub fn worst_margin(&self) -> f64 {
        self.margins.iter().map(|m| m.min_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    pub fn report(&self) -> String {
        let mut s = format!("gamma: {:.6}\n", self.gamma);
        s.push_str(&format!("P min eigenvalue: {:.3e}\n", min_eigenvalue(&symmetrize(&self.p))));
        s.push_str("constraint margins:\n");
        for m in &self.margins {
            s.push_str(&format!("  {:<12} {:.3e}\n", m.label, m.min_eigenvalue));
        }
        s.push_str(&format!(
            "solver: {} in {} iterations\n",
            self.diagnostics.backend_status, self.diagnostics.iterations
        ));
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GainBound {
    Certified(GainCertificate),
    /// The LMI was infeasible; the gain may still be below `γ`.
    Refused { gamma: f64, diagnostics: SolverDiagnostics },
}

impl GainBound {
    pub fn certificate(&self) -> Option<&GainCertificate> {
        match self {
            GainBound::Certified(c) => Some(c),
            GainBound::Refused { .. } => None,
        }
    }
}

/// The analysis block matrix at one frozen `ρ`, for given `P` and `γ`.
pub fn analysis_matrix(sys: &AffineLpvStateSpace, p: &Mat, gamma: f64, rho: &[f64]) -> Result<Mat> {
    let ss = sys.at(rho)?;
    let (n, nw, nz) = (sys.n_x(), sys.n_in(), sys.n_out());
    let z = |r, c| Mat::zeros(r, c);
    let ap = &ss.a * p;
    let pct = p * ss.c.transpose();
    let gw = Mat::identity(nw, nw) * gamma;
    let gz = Mat::identity(nz, nz) * gamma;
    Ok(block(&[
        &[p, &ap, &ss.b, &z(n, nz)],
        &[&ap.transpose(), p, &z(n, nw), &pct],
        &[&ss.b.transpose(), &z(nw, n), &gw, &ss.d.transpose()],
        &[&z(nz, n), &pct.transpose(), &ss.d, &gz],
    ]))
}

/// `γ·I_m` for a scalar expression.
fn scaled_identity(gamma: &MatExpr, m: usize) -> MatExpr {
    let mut out = MatExpr::zeros(m, m);
    for i in 0..m {
        let mut e = Mat::zeros(m, 1);
        e[(i, 0)] = 1.0;
        out = out.add(&gamma.lmul(&e).rmul(&e.transpose()));
    }
    out
}

fn analysis_lmi(sys: &AffineLpvStateSpace, gamma: Option<f64>) -> Result<(LmiSystem, crate::sdp::VarId, Option<crate::sdp::VarId>)> {
    let (n, nw, nz) = (sys.n_x(), sys.n_in(), sys.n_out());
    let mut lmi = LmiSystem::new(DEFAULT_MARGIN);
    let p_id = lmi.symmetric("P", n);
    let (g, g_id) = match gamma {
        Some(g) => (MatExpr::constant(Mat::from_element(1, 1, g)), None),
        None => {
            let id = lmi.scalar("gamma");
            (lmi.var(id), Some(id))
        }
    };
    let p = lmi.var(p_id);
    let zero = |r: usize, c: usize| MatExpr::zeros(r, c);
    let template = |rho: &[f64]| -> Result<MatExpr> {
        let ss = sys.at(rho)?;
        let ap = p.lmul(&ss.a);
        let pct = p.rmul(&ss.c.transpose());
        let b: MatExpr = ss.b.clone().into();
        let d: MatExpr = ss.d.clone().into();
        Ok(MatExpr::block(&[
            &[&p, &ap, &b, &zero(n, nz)],
            &[&ap.transpose(), &p, &zero(n, nw), &pct],
            &[&b.transpose(), &zero(nw, n), &scaled_identity(&g, nw), &d.transpose()],
            &[&zero(nz, n), &pct.transpose(), &d, &scaled_identity(&g, nz)],
        ]))
    };
    for (i, m) in enforce_on_vertices(template, &sys.polytope)?.into_iter().enumerate() {
        lmi.require_positive(format!("vertex {i}"), m)?;
    }
    lmi.require_positive("P", p.clone())?;
    if let Some(id) = g_id {
        lmi.minimize(lmi.var(id))?;
    }
    Ok((lmi, p_id, g_id))
}

/// `(T⁻¹A T, T⁻¹B, C T, D)`.
fn similarity(sys: &AffineLpvStateSpace, t: &Mat, t_inv: &Mat) -> Result<AffineLpvStateSpace> {
    AffineLpvStateSpace::new(
        sys.a.map(|m| t_inv * m * t)?,
        sys.b.map(|m| t_inv * m)?,
        sys.c.map(|m| m * t)?,
        sys.d.clone(),
        sys.polytope.clone(),
        sys.inputs.clone(),
        sys.outputs.clone(),
    )
}

/// `T` with `T Tᵀ = P` (eigenvalues floored), and its inverse.
fn balancing_factor(p: &Mat) -> Option<(Mat, Mat)> {
    let eig = symmetrize(p).symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    let roots = eig.eigenvalues.map(|l| l.max(1e-12 * top).sqrt());
    let t = &eig.eigenvectors * Mat::from_diagonal(&roots);
    let t_inv = Mat::from_diagonal(&roots.map(|r| 1.0 / r)) * eig.eigenvectors.transpose();
    Some((t, t_inv))
}

fn certificate(sys: &AffineLpvStateSpace, p: Mat, gamma: f64, diagnostics: SolverDiagnostics, balanced: bool) -> Result<GainCertificate> {
    let mut margins = Vec::with_capacity(sys.polytope.len() + 1);
    for (i, v) in sys.polytope.vertices().iter().enumerate() {
        margins.push(ConstraintMargin {
            label: format!("vertex {i}"),
            min_eigenvalue: min_eigenvalue(&symmetrize(&analysis_matrix(sys, &p, gamma, v)?)),
        });
    }
    margins.push(ConstraintMargin {
        label: "P".into(),
        min_eigenvalue: min_eigenvalue(&symmetrize(&p)),
    });
    Ok(GainCertificate {
        gamma,
        p,
        margins,
        diagnostics,
        balanced,
    })
}

enum Outcome {
    Certified(GainCertificate),
    Refused(SolverDiagnostics),
}

/// Solves the analysis LMI. If the solver stalls, the problem is solved
/// again in coordinates balanced by the stalled storage matrix (a
/// congruence, so the certificate maps back exactly).
fn solve_analysis(sys: &AffineLpvStateSpace, gamma: Option<f64>, opts: &SdpOptions) -> Result<Outcome> {
    let (lmi, p, g) = analysis_lmi(sys, gamma)?;
    let sol = lmi.solve_with(opts)?;
    let value = |sol: &crate::sdp::SdpSolution| gamma.unwrap_or_else(|| sol.scalar(g.expect("gamma is a variable")));
    match sol.status {
        SdpStatus::Optimal => {
            let gm = value(&sol);
            return Ok(Outcome::Certified(certificate(sys, sol.value(p), gm, sol.diagnostics, false)?));
        }
        SdpStatus::Infeasible => return Ok(Outcome::Refused(sol.diagnostics)),
        SdpStatus::NumericalFailure => {}
    }
    let Some((t, t_inv)) = balancing_factor(&sol.value(p)) else {
        sol.ensure_optimal()?;
        unreachable!("non-optimal status is an error");
    };
    let balanced = similarity(sys, &t, &t_inv)?;
    let (lmi2, p2, g2) = analysis_lmi(&balanced, gamma)?;
    let sol2 = lmi2.solve_with(opts)?;
    match sol2.status {
        SdpStatus::Optimal => {
            let gm = gamma.unwrap_or_else(|| sol2.scalar(g2.expect("gamma is a variable")));
            let p_orig = symmetrize(&(&t * sol2.value(p2) * t.transpose()));
            Ok(Outcome::Certified(certificate(sys, p_orig, gm, sol2.diagnostics, true)?))
        }
        SdpStatus::Infeasible => Ok(Outcome::Refused(sol2.diagnostics)),
        SdpStatus::NumericalFailure => {
            sol2.ensure_optimal()?;
            unreachable!("non-optimal status is an error")
        }
    }
}

/// Solver settings for analysis: the strictness margin alone, no extra
/// guard. Near-marginal weight poles make the gain very sensitive to any
/// additional margin.
pub fn analysis_options() -> SdpOptions {
    SdpOptions {
        guard: 0.0,
        ..SdpOptions::default()
    }
}

/// Feasibility of the analysis LMI for a fixed `γ`.
pub fn li2_gain_bound(sys: &AffineLpvStateSpace, gamma: f64) -> Result<GainBound> {
    li2_gain_bound_with(sys, gamma, &analysis_options())
}

pub fn li2_gain_bound_with(sys: &AffineLpvStateSpace, gamma: f64, opts: &SdpOptions) -> Result<GainBound> {
    if !(gamma > 0.0) {
        return Err(Error::Unsupported("gain bound must be positive".into()));
    }
    Ok(match solve_analysis(sys, Some(gamma), opts)? {
        Outcome::Certified(c) => GainBound::Certified(c),
        Outcome::Refused(diagnostics) => GainBound::Refused { gamma, diagnostics },
    })
}

/// Smallest `γ` for which the analysis LMI is feasible.
pub fn min_li2_gain(sys: &AffineLpvStateSpace) -> Result<GainCertificate> {
    min_li2_gain_with(sys, &analysis_options())
}

pub fn min_li2_gain_with(sys: &AffineLpvStateSpace, opts: &SdpOptions) -> Result<GainCertificate> {
    match solve_analysis(sys, None, opts)? {
        Outcome::Certified(c) => Ok(c),
        Outcome::Refused(d) => Err(Error::Infeasible(format!(
            "no constant storage certifies a finite gain (backend status {})",
            d.backend_status
        ))),
    }
}

/// Smallest eigenvalue of the analysis matrix over `points` random
/// interior scheduling values.
pub fn spot_check(sys: &AffineLpvStateSpace, cert: &GainCertificate, points: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..points {
        let rho = sys.polytope.combine(&sys.polytope.random_weights(&mut rng));
        let m = analysis_matrix(sys, &cert.p, cert.gamma, &rho)?;
        worst = worst.min(min_eigenvalue(&symmetrize(&m)));
    }
    Ok(worst)
}

/// Settings of [`incremental_divergence_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub trials: usize,
    pub horizon: usize,
    /// Sampling box for the compared state coordinates; the remaining
    /// coordinates start at zero.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub window: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            trials: 20,
            horizon: 400,
            lo: vec![-1.0; 2],
            hi: vec![1.0; 2],
            window: 20,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub x0_a: Vec<f64>,
    pub x0_b: Vec<f64>,
    /// Largest distance over the trailing window.
    pub trailing_distance: f64,
    pub contracted: bool,
    /// The sliding-window maximum never increased (up to 1e-12).
    pub window_monotone: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub pairs: Vec<ProbePair>,
    pub max_trailing_distance: f64,
    pub all_contracted: bool,
    /// Distance traces, one per pair.
    pub distances: Vec<Vec<f64>>,
}

impl ProbeReport {
    /// Columns `k, d1, d2, ...`; shorter (diverged) traces leave blanks.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.distances.len()).map(|i| format!("d{i}")));
        wtr.write_record(&header)?;
        let len = self.distances.iter().map(Vec::len).max().unwrap_or(0);
        for k in 0..len {
            let mut row = vec![k.to_string()];
            row.extend(
                self.distances
                    .iter()
                    .map(|d| d.get(k).map_or(String::new(), |v| format!("{v:.16e}"))),
            );
            wtr.write_record(&row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
    }
}

fn sliding_max_monotone(d: &[f64], window: usize) -> bool {
    if window == 0 || d.len() < window {
        return true;
    }
    let maxima: Vec<f64> = d
        .windows(window)
        .map(|w| w.iter().copied().fold(0.0, f64::max))
        .collect();
    maxima.windows(2).all(|p| p[1] <= p[0] + 1e-12)
}

/// Runs `cfg.trials` pairs of closed-loop simulations with the same
/// exogenous input and different initial states, and reports whether the
/// first `cfg.lo.len()` state coordinates of each pair converge to each
/// other. Pairs run concurrently; initial states are drawn up front from a
/// seeded stream.
pub fn incremental_divergence_probe(
    plant: &dyn NonlinearPlant,
    w: &[Vec<f64>],
    factory: &(dyn Fn() -> Result<Box<dyn ControllerRuntime>> + Sync),
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    use rand::Rng;
    let m = cfg.lo.len();
    if cfg.hi.len() != m || m > plant.n_x() {
        return Err(Error::dims("probe sampling box", format!("≤ {}", plant.n_x()), format!("{} / {}", m, cfg.hi.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut x = vec![0.0; plant.n_x()];
        for i in 0..m {
            x[i] = rng.gen_range(cfg.lo[i]..=cfg.hi[i]);
        }
        x
    };
    let starts: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.trials).map(|_| (draw(&mut rng), draw(&mut rng))).collect();
    let run = |x0: &[f64]| -> Result<(Vec<Vec<f64>>, bool)> {
        let mut ctrl = factory()?;
        let trace = simulate(plant, ctrl.as_mut(), w, x0, cfg.horizon)?;
        let mut xs: Vec<Vec<f64>> = trace.steps.into_iter().map(|s| s.x[..m].to_vec()).collect();
        xs.push(trace.final_state[..m].to_vec());
        Ok((xs, trace.meta.diverged))
    };
    let results: Vec<Result<(ProbePair, Vec<f64>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = starts
            .iter()
            .map(|(a, b)| {
                s.spawn(move || -> Result<(ProbePair, Vec<f64>)> {
                    let (xa, da) = run(a)?;
                    let (xb, db) = run(b)?;
                    let d: Vec<f64> = xa
                        .iter()
                        .zip(&xb)
                        .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
                        .collect();
                    let tail = &d[d.len().saturating_sub(cfg.window)..];
                    let trailing = tail.iter().copied().fold(0.0, f64::max);
                    let diverged = da || db || d.iter().any(|v| !v.is_finite());
                    Ok((
                        ProbePair {
                            x0_a: a.clone(),
                            x0_b: b.clone(),
                            trailing_distance: trailing,
                            contracted: !diverged && trailing < cfg.tol,
                            window_monotone: sliding_max_monotone(&d, cfg.window),
                            diverged,
                        },
                        d,
                    ))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("probe worker panicked")).collect()
    });
    let mut pairs = Vec::with_capacity(results.len());
    let mut distances = Vec::with_capacity(results.len());
    for r in results {
        let (p, d) = r?;
        pairs.push(p);
        distances.push(d);
    }
    let max_trailing_distance = pairs
        .iter()
        .map(|p| if p.diverged { f64::INFINITY } else { p.trailing_distance })
        .fold(0.0, f64::max);
    Ok(ProbeReport {
        all_contracted: pairs.iter().all(|p| p.contracted),
        max_trailing_distance,
        pairs,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::StateSpace;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> AffineLpvStateSpace {
        let ss = StateSpace::new(
            Mat::from_element(1, 1, a),
            Mat::from_element(1, 1, b),
            Mat::from_element(1, 1, c),
            Mat::from_element(1, 1, d),
        )
        .unwrap();
        AffineLpvStateSpace::from_lti(&ss, ChannelPartition::single("w", 1), ChannelPartition::single("z", 1)).unwrap()
    }

    #[test]
    fn first_order_lag_gain_two() {
        let sys = scalar(0.5, 1.0, 1.0, 0.0);
        let cert = min_li2_gain(&sys).unwrap();
        assert!((cert.gamma - 2.0).abs() < 1e-4, "{}", cert.gamma);
        assert!(li2_gain_bound(&sys, 2.1).unwrap().certificate().is_some());
        assert!(li2_gain_bound(&sys, 1.8).unwrap().certificate().is_none());
        assert!(spot_check(&sys, &cert, 5, 0).unwrap() >= -1e-9);
    }

    #[test]
    fn memoryless_identity() {
        let sys = AffineLpvStateSpace::from_lti(
            &StateSpace::gain(Mat::identity(1, 1)),
            ChannelPartition::single("w", 1),
            ChannelPartition::single("z", 1),
        )
        .unwrap();
        assert!(li2_gain_bound(&sys, 1.05).unwrap().certificate().is_some());
        assert!(li2_gain_bound(&sys, 0.95).unwrap().certificate().is_none());
    }

    #[test]
    fn unstable_system_is_infeasible() {
        let sys = scalar(1.2, 1.0, 1.0, 0.0);
        assert!(matches!(min_li2_gain(&sys), Err(Error::Infeasible(_)) | Err(Error::NumericalFailure(_))));
    }

    fn lti_plant() -> AffineLpvStateSpace {
        // x⁺ = 0.9x + w + u, z = x, y = x.
        let ss = StateSpace::new(
            Mat::from_element(1, 1, 0.9),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::from_row_slice(2, 1, &[1.0, 1.0]),
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

    fn lti_controller(a: f64, b: f64, c: f64, d: f64) -> DifferentialController {
        let k = |v: f64| AffineMatrixFunction::constant(Mat::from_element(1, 1, v), 1);
        DifferentialController::new(k(a), k(b), k(c), k(d), SchedulingPolytope::point(vec![0.0]).unwrap()).unwrap()
    }

    #[test]
    fn zero_controller_leaves_open_loop() {
        let cl = close_loop(&lti_plant(), &lti_controller(0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(cl.lpv.n_x(), 2);
        let ss = cl.lpv.at(&[0.0]).unwrap();
        assert_eq!(ss.a[(0, 0)], 0.9);
        assert_eq!(ss.a[(0, 1)], 0.0);
        assert_eq!(ss.b[(0, 0)], 1.0);
    }

    #[test]
    fn static_gain_closes_lti_loop() {
        // u = −0.5y gives x⁺ = 0.4x + w.
        let cl = close_loop(&lti_plant(), &lti_controller(0.0, 0.0, 0.0, -0.5)).unwrap();
        let ss = cl.lpv.at(&[0.0]).unwrap();
        assert!((ss.a[(0, 0)] - 0.4).abs() < 1e-15);
        let g = min_li2_gain(&cl.lpv).unwrap().gamma;
        assert!((g - 1.0 / 0.6).abs() < 1e-3, "{g}");
    }

    #[test]
    fn algebraic_loop_rejected() {
        let ss = StateSpace::new(
            Mat::from_element(1, 1, 0.9),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.3]),
        )
        .unwrap();
        let p = AffineLpvStateSpace::from_lti(
            &ss,
            ChannelPartition::new(&[("w", 1), ("u", 1)]).unwrap(),
            ChannelPartition::new(&[("z", 1), ("y", 1)]).unwrap(),
        )
        .unwrap();
        assert!(matches!(close_loop(&p, &lti_controller(0.0, 0.0, 0.0, 1.0)), Err(Error::AlgebraicLoop)));
        assert!(close_loop(&p, &lti_controller(0.5, 1.0, 1.0, 0.0)).is_ok());
    }

    #[test]
    fn sliding_window_monotonicity() {
        assert!(sliding_max_monotone(&[4.0, 3.0, 3.5, 1.0, 0.5, 0.1], 2));
        assert!(!sliding_max_monotone(&[1.0, 0.5, 0.2, 2.0], 2));
    }
}
