//! Differential forms of nonlinear plants and validation of LPV embeddings.
//!
//! A plant `x⁺ = f(x, v)`, `o = h(x, v)` has the differential form
//! `δx⁺ = A_δ δx + B_δ δv`, `δo = C_δ δx + D_δ δv` with the Jacobians
//! evaluated along the trajectory. An embedding proposes affine matrices
//! `A(ρ)`, … and a scheduling map `ρ = ψ(x)` with `A(ψ(x)) = A_δ(x)`; this
//! module checks such proposals by deterministic sampling.
//!
//! Inputs are stacked as `v = (w, u)` and outputs as `o = (z, y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_abs_diff, Mat};
use crate::lpv_model::AffineLpvStateSpace;
use crate::lti::StateSpace;
use crate::polytope::SchedulingPolytope;

/// Default number of low-discrepancy samples used by validators.
pub const DEFAULT_SAMPLES: usize = 10_000;
/// Finite-difference step for Jacobian checks.
pub const FD_STEP: f64 = 1e-6;
/// Relative tolerance for Jacobian checks.
pub const FD_TOL: f64 = 1e-5;
/// Embedding validation tolerance.
pub const EMBEDDING_TOL: f64 = 1e-8;

/// State region of a plant or scheduling map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// All of ℝⁿ; checks sample the declared bounded box instead.
    Unbounded { sample_lo: Vec<f64>, sample_hi: Vec<f64> },
}

impl Region {
    /// Unbounded region sampled on `[-half, half]ⁿ`.
    pub fn unbounded(n: usize, half: f64) -> Self {
        Region::Unbounded {
            sample_lo: vec![-half; n],
            sample_hi: vec![half; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.sampling_box().0.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Box { lo, hi } => {
                x.len() == lo.len()
                    && x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
            }
            Region::Unbounded { sample_lo, .. } => {
                x.len() == sample_lo.len() && x.iter().all(|v| v.is_finite())
            }
        }
    }

    pub fn sampling_box(&self) -> (&[f64], &[f64]) {
        match self {
            Region::Box { lo, hi } => (lo, hi),
            Region::Unbounded { sample_lo, sample_hi } => (sample_lo, sample_hi),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Region::Box { .. })
    }
}

/// Jacobians `(A_δ, B_δ, C_δ, D_δ)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialForm {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

/// Discrete-time nonlinear plant with user-supplied Jacobians.
///
/// Implementations must be free of side effects: every method may be
/// called any number of times, from any thread.
pub trait NonlinearPlant: Send + Sync {
    fn n_x(&self) -> usize;
    /// Exogenous inputs.
    fn n_w(&self) -> usize;
    /// Control inputs.
    fn n_u(&self) -> usize;
    /// Performance outputs.
    fn n_z(&self) -> usize;
    /// Measured outputs.
    fn n_y(&self) -> usize;

    fn step(&self, x: &[f64], v: &[f64]) -> Vec<f64>;
    fn output(&self, x: &[f64], v: &[f64]) -> Vec<f64>;
    fn jacobians(&self, x: &[f64], v: &[f64]) -> DifferentialForm;
    fn region(&self) -> &Region;

    fn n_in(&self) -> usize {
        self.n_w() + self.n_u()
    }

    fn n_out(&self) -> usize {
        self.n_z() + self.n_y()
    }

    /// Box sampled for inputs during validation.
    fn input_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0; self.n_in()], vec![1.0; self.n_in()])
    }
}

type StepFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type JacFn = Box<dyn Fn(&[f64], &[f64]) -> DifferentialForm + Send + Sync>;

/// Plant assembled from closures.
pub struct FnPlant {
    dims: [usize; 5],
    f: StepFn,
    h: StepFn,
    jac: JacFn,
    region: Region,
}

impl FnPlant {
    /// `dims` is `[n_x, n_w, n_u, n_z, n_y]`.
    pub fn new(
        dims: [usize; 5],
        f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        h: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        jac: impl Fn(&[f64], &[f64]) -> DifferentialForm + Send + Sync + 'static,
        region: Region,
    ) -> Result<Self> {
        if region.dim() != dims[0] {
            return Err(Error::dims("plant region", dims[0], region.dim()));
        }
        Ok(FnPlant {
            dims,
            f: Box::new(f),
            h: Box::new(h),
            jac: Box::new(jac),
            region,
        })
    }
}

impl NonlinearPlant for FnPlant {
    fn n_x(&self) -> usize {
        self.dims[0]
    }
    fn n_w(&self) -> usize {
        self.dims[1]
    }
    fn n_u(&self) -> usize {
        self.dims[2]
    }
    fn n_z(&self) -> usize {
        self.dims[3]
    }
    fn n_y(&self) -> usize {
        self.dims[4]
    }
    fn step(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        (self.f)(x, v)
    }
    fn output(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        (self.h)(x, v)
    }
    fn jacobians(&self, x: &[f64], v: &[f64]) -> DifferentialForm {
        (self.jac)(x, v)
    }
    fn region(&self) -> &Region {
        &self.region
    }
}

/// An LTI system viewed as a (trivially) nonlinear plant.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    pub ss: StateSpace,
    n_w: usize,
    n_z: usize,
    region: Region,
}

impl LtiPlant {
    pub fn new(ss: StateSpace, n_w: usize, n_z: usize) -> Result<Self> {
        if n_w > ss.n_inputs() || n_z > ss.n_outputs() {
            return Err(Error::dims(
                "LTI plant channels",
                format!("<= {}x{}", ss.n_outputs(), ss.n_inputs()),
                format!("{n_z}x{n_w}"),
            ));
        }
        let region = Region::unbounded(ss.n_states(), 10.0);
        Ok(LtiPlant { ss, n_w, n_z, region })
    }
}

fn mat_vec(m: &Mat, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

impl NonlinearPlant for LtiPlant {
    fn n_x(&self) -> usize {
        self.ss.n_states()
    }
    fn n_w(&self) -> usize {
        self.n_w
    }
    fn n_u(&self) -> usize {
        self.ss.n_inputs() - self.n_w
    }
    fn n_z(&self) -> usize {
        self.n_z
    }
    fn n_y(&self) -> usize {
        self.ss.n_outputs() - self.n_z
    }
    fn step(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let ax = mat_vec(&self.ss.a, x);
        let bv = mat_vec(&self.ss.b, v);
        ax.iter().zip(&bv).map(|(p, q)| p + q).collect()
    }
    fn output(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let cx = mat_vec(&self.ss.c, x);
        let dv = mat_vec(&self.ss.d, v);
        cx.iter().zip(&dv).map(|(p, q)| p + q).collect()
    }
    fn jacobians(&self, _x: &[f64], _v: &[f64]) -> DifferentialForm {
        DifferentialForm {
            a: self.ss.a.clone(),
            b: self.ss.b.clone(),
            c: self.ss.c.clone(),
            d: self.ss.d.clone(),
        }
    }
    fn region(&self) -> &Region {
        &self.region
    }
}

/// `ρ = ψ(x)` with its target polytope and embedding region.
pub trait SchedulingMap: Send + Sync {
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    fn polytope(&self) -> &SchedulingPolytope;
    fn region(&self) -> &Region;

    fn dim(&self) -> usize {
        self.polytope().dim()
    }

    /// Closed form of `∫₀¹ ψ(a + λ(b − a)) dλ`, when one is known.
    fn segment_average(&self, _a: &[f64], _b: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// `ρ = cos(x_i)` over `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct CosineMap {
    index: usize,
    polytope: SchedulingPolytope,
    region: Region,
}

impl CosineMap {
    pub fn new(n_x: usize, index: usize) -> Result<Self> {
        if index >= n_x {
            return Err(Error::dims("cosine map index", format!("< {n_x}"), index));
        }
        Ok(CosineMap {
            index,
            polytope: SchedulingPolytope::interval(-1.0, 1.0)?,
            region: Region::unbounded(n_x, 2.0 * std::f64::consts::PI),
        })
    }
}

impl SchedulingMap for CosineMap {
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![x[self.index].cos()]
    }
    fn polytope(&self) -> &SchedulingPolytope {
        &self.polytope
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn segment_average(&self, a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
        Some(vec![cos_segment_average(a[self.index], b[self.index])])
    }
}

/// `∫₀¹ cos(a + λ(b − a)) dλ = (sin b − sin a)/(b − a)`, written as
/// `cos((a+b)/2)·sinc((b−a)/2)` to stay accurate for short segments.
pub fn cos_segment_average(a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    mid.cos() * sinc(half)
}

/// Unnormalized `sin(a)/a` with `sinc(0) = 1`.
pub fn sinc(a: f64) -> f64 {
    if a.abs() < 1e-4 {
        let a2 = a * a;
        1.0 - a2 / 6.0 + a2 * a2 / 120.0
    } else {
        a.sin() / a
    }
}

/// Minimum of `sinc` over ℝ, attained at the first root of `tan a = a`.
pub const SINC_MIN: f64 = -0.217_233_628_211_221_7;

/// `ρ = sinc(x_i)` over `[-0.22, 1]`.
#[derive(Debug, Clone)]
pub struct SincMap {
    index: usize,
    polytope: SchedulingPolytope,
    region: Region,
}

impl SincMap {
    pub fn new(n_x: usize, index: usize) -> Result<Self> {
        Self::with_bounds(n_x, index, -0.22, 1.0)
    }

    pub fn with_bounds(n_x: usize, index: usize, lo: f64, hi: f64) -> Result<Self> {
        if index >= n_x {
            return Err(Error::dims("sinc map index", format!("< {n_x}"), index));
        }
        Ok(SincMap {
            index,
            polytope: SchedulingPolytope::interval(lo, hi)?,
            region: Region::unbounded(n_x, 4.0 * std::f64::consts::PI),
        })
    }
}

impl SchedulingMap for SincMap {
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![sinc(x[self.index])]
    }
    fn polytope(&self) -> &SchedulingPolytope {
        &self.polytope
    }
    fn region(&self) -> &Region {
        &self.region
    }
}

/// Constant scheduling `ρ = 0` over the single-point polytope, for LTI
/// embeddings.
#[derive(Debug, Clone)]
pub struct ConstantMap {
    polytope: SchedulingPolytope,
    region: Region,
}

impl ConstantMap {
    pub fn new(n_x: usize) -> Result<Self> {
        Ok(ConstantMap {
            polytope: SchedulingPolytope::point(vec![0.0])?,
            region: Region::unbounded(n_x, 10.0),
        })
    }
}

impl SchedulingMap for ConstantMap {
    fn eval(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn polytope(&self) -> &SchedulingPolytope {
        &self.polytope
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn segment_average(&self, _a: &[f64], _b: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0])
    }
}

fn check_point(plant: &dyn NonlinearPlant, x: &[f64], v: &[f64]) -> Result<()> {
    if x.len() != plant.n_x() {
        return Err(Error::dims("state", plant.n_x(), x.len()));
    }
    if v.len() != plant.n_in() {
        return Err(Error::dims("input", plant.n_in(), v.len()));
    }
    if !plant.region().contains(x) {
        return Err(Error::OutsideRegion { point: x.to_vec() });
    }
    Ok(())
}

/// The Jacobians of the plant at `(x, v)`.
pub fn differential_form_at(
    plant: &dyn NonlinearPlant,
    x: &[f64],
    v: &[f64],
) -> Result<DifferentialForm> {
    check_point(plant, x, v)?;
    let j = plant.jacobians(x, v);
    let (nx, ni, no) = (plant.n_x(), plant.n_in(), plant.n_out());
    let expect = [(&j.a, (nx, nx), "A_δ"), (&j.b, (nx, ni), "B_δ"), (&j.c, (no, nx), "C_δ"), (&j.d, (no, ni), "D_δ")];
    for (m, shape, name) in expect {
        if m.shape() != shape {
            return Err(Error::dims(name, format!("{shape:?}"), format!("{:?}", m.shape())));
        }
    }
    Ok(j)
}

/// Central-difference Jacobians of `f` and `h` with step `step`.
pub fn finite_difference_form(
    plant: &dyn NonlinearPlant,
    x: &[f64],
    v: &[f64],
    step: f64,
) -> DifferentialForm {
    let (nx, ni, no) = (plant.n_x(), plant.n_in(), plant.n_out());
    let mut a = Mat::zeros(nx, nx);
    let mut b = Mat::zeros(nx, ni);
    let mut c = Mat::zeros(no, nx);
    let mut d = Mat::zeros(no, ni);
    let mut xp = x.to_vec();
    for j in 0..nx {
        xp[j] = x[j] + step;
        let (fp, hp) = (plant.step(&xp, v), plant.output(&xp, v));
        xp[j] = x[j] - step;
        let (fm, hm) = (plant.step(&xp, v), plant.output(&xp, v));
        xp[j] = x[j];
        for i in 0..nx {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
        for i in 0..no {
            c[(i, j)] = (hp[i] - hm[i]) / (2.0 * step);
        }
    }
    let mut vp = v.to_vec();
    for j in 0..ni {
        vp[j] = v[j] + step;
        let (fp, hp) = (plant.step(x, &vp), plant.output(x, &vp));
        vp[j] = v[j] - step;
        let (fm, hm) = (plant.step(x, &vp), plant.output(x, &vp));
        vp[j] = v[j];
        for i in 0..nx {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
        for i in 0..no {
            d[(i, j)] = (hp[i] - hm[i]) / (2.0 * step);
        }
    }
    DifferentialForm { a, b, c, d }
}

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Deterministic Halton points in the box `[lo, hi]`, starting at index 1.
pub fn halton_points(lo: &[f64], hi: &[f64], count: usize) -> Vec<Vec<f64>> {
    assert!(lo.len() <= PRIMES.len(), "Halton sampling supports at most 24 dimensions");
    (1..=count)
        .map(|k| {
            lo.iter()
                .zip(hi)
                .zip(PRIMES)
                .map(|((l, h), p)| l + (h - l) * halton::number(p as u8, k))
                .collect()
        })
        .collect()
}

/// Samples `(x, v)` jointly over the plant's sampling box and input box.
fn plant_samples(plant: &dyn NonlinearPlant, region: &Region, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (xl, xh) = region.sampling_box();
    let (vl, vh) = plant.input_box();
    let lo: Vec<f64> = xl.iter().chain(&vl).copied().collect();
    let hi: Vec<f64> = xh.iter().chain(&vh).copied().collect();
    halton_points(&lo, &hi, count)
        .into_iter()
        .map(|p| {
            let (x, v) = p.split_at(xl.len());
            (x.to_vec(), v.to_vec())
        })
        .collect()
}

fn rel_err(j: &Mat, fd: &Mat) -> f64 {
    if j.is_empty() {
        return 0.0;
    }
    max_abs_diff(j, fd) / max_abs(j).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub samples: usize,
    pub max_relative_error: f64,
    pub worst_point: Option<Vec<f64>>,
    /// `f` or `h` returned a non-finite value somewhere.
    pub non_finite: bool,
    pub pass: bool,
}

/// Compares the supplied Jacobians with central differences on Halton
/// samples of the plant region.
pub fn check_jacobians(plant: &dyn NonlinearPlant, samples: usize) -> JacobianReport {
    let mut worst = 0.0_f64;
    let mut worst_point = None;
    let mut non_finite = false;
    for (x, v) in plant_samples(plant, plant.region(), samples) {
        let fx = plant.step(&x, &v);
        let hx = plant.output(&x, &v);
        if fx.iter().chain(&hx).any(|s| !s.is_finite()) {
            non_finite = true;
            continue;
        }
        let j = plant.jacobians(&x, &v);
        let fd = finite_difference_form(plant, &x, &v, FD_STEP);
        let e = rel_err(&j.a, &fd.a)
            .max(rel_err(&j.b, &fd.b))
            .max(rel_err(&j.c, &fd.c))
            .max(rel_err(&j.d, &fd.d));
        if e > worst {
            worst = e;
            worst_point = Some(x.iter().chain(&v).copied().collect());
        }
    }
    JacobianReport {
        samples,
        max_relative_error: worst,
        worst_point,
        non_finite,
        pass: worst <= FD_TOL && !non_finite,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub samples: usize,
    pub a_error: f64,
    pub b_error: f64,
    pub c_error: f64,
    pub d_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// All sampled `ψ(x)` lie in the polytope.
    pub in_polytope: bool,
    /// Smallest membership margin seen; negative means outside.
    pub min_membership_margin: f64,
    /// The region is unbounded, so only a sampling box was checked.
    pub sampling_only: bool,
}

/// Checks `candidate(ψ(x)) = differential form at x` over Halton samples
/// of the map's embedding region. Failures are reported, never raised.
pub fn validate_embedding(
    plant: &dyn NonlinearPlant,
    map: &dyn SchedulingMap,
    candidate: &AffineLpvStateSpace,
    samples: usize,
) -> Result<EmbeddingReport> {
    if candidate.n_x() != plant.n_x()
        || candidate.n_in() != plant.n_in()
        || candidate.n_out() != plant.n_out()
    {
        return Err(Error::dims(
            "embedding candidate",
            format!("{}/{}/{}", plant.n_x(), plant.n_in(), plant.n_out()),
            format!("{}/{}/{}", candidate.n_x(), candidate.n_in(), candidate.n_out()),
        ));
    }
    if map.dim() != candidate.n_rho() || map.region().dim() != plant.n_x() {
        return Err(Error::dims("scheduling map", candidate.n_rho(), map.dim()));
    }
    let mut report = EmbeddingReport {
        samples,
        a_error: 0.0,
        b_error: 0.0,
        c_error: 0.0,
        d_error: 0.0,
        tolerance: EMBEDDING_TOL,
        pass: false,
        in_polytope: true,
        min_membership_margin: f64::INFINITY,
        sampling_only: !map.region().is_bounded(),
    };
    for (x, v) in plant_samples(plant, map.region(), samples) {
        let rho = map.eval(&x);
        let margin = candidate.polytope.membership_margin(&rho)?;
        report.min_membership_margin = report.min_membership_margin.min(margin);
        if margin < -1e-12 {
            report.in_polytope = false;
        }
        let j = plant.jacobians(&x, &v);
        let m = candidate.at(&rho)?;
        report.a_error = report.a_error.max(max_abs_diff(&m.a, &j.a));
        report.b_error = report.b_error.max(max_abs_diff(&m.b, &j.b));
        report.c_error = report.c_error.max(max_abs_diff(&m.c, &j.c));
        report.d_error = report.d_error.max(max_abs_diff(&m.d, &j.d));
    }
    report.pass = [report.a_error, report.b_error, report.c_error, report.d_error]
        .iter()
        .all(|e| *e <= EMBEDDING_TOL);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalEmbeddingReport {
    pub samples: usize,
    /// Max of `|A(ψ(x))x + B(ψ(x))v − f(x, v)|` over samples.
    pub state_error: f64,
    /// Max of `|C(ψ(x))x + D(ψ(x))v − h(x, v)|` over samples.
    pub output_error: f64,
    pub in_polytope: bool,
    pub pass: bool,
}

/// Checks a primal (non-differential) embedding `f(x, v) = A(ψ(x))x + B(ψ(x))v`
/// on Halton samples. Errors are measured relative to `max(1, |f|)`.
pub fn validate_primal_embedding(
    plant: &dyn NonlinearPlant,
    map: &dyn SchedulingMap,
    candidate: &AffineLpvStateSpace,
    samples: usize,
) -> Result<PrimalEmbeddingReport> {
    if candidate.n_x() != plant.n_x() || candidate.n_in() != plant.n_in() {
        return Err(Error::dims("primal embedding", plant.n_x(), candidate.n_x()));
    }
    let mut rep = PrimalEmbeddingReport {
        samples,
        state_error: 0.0,
        output_error: 0.0,
        in_polytope: true,
        pass: false,
    };
    for (x, v) in plant_samples(plant, map.region(), samples) {
        let rho = map.eval(&x);
        if candidate.polytope.membership_margin(&rho)? < -1e-12 {
            rep.in_polytope = false;
        }
        let m = candidate.at(&rho)?;
        let f = plant.step(&x, &v);
        let h = plant.output(&x, &v);
        let ax = mat_vec(&m.a, &x);
        let bv = mat_vec(&m.b, &v);
        let cx = mat_vec(&m.c, &x);
        let dv = mat_vec(&m.d, &v);
        for i in 0..f.len() {
            rep.state_error = rep.state_error.max((ax[i] + bv[i] - f[i]).abs() / f[i].abs().max(1.0));
        }
        for i in 0..h.len() {
            rep.output_error = rep.output_error.max((cx[i] + dv[i] - h[i]).abs() / h[i].abs().max(1.0));
        }
    }
    rep.pass = rep.in_polytope && rep.state_error <= EMBEDDING_TOL && rep.output_error <= EMBEDDING_TOL;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpv_model::{AffineMatrixFunction, ChannelPartition};

    fn pendulum_like() -> FnPlant {
        FnPlant::new(
            [2, 0, 1, 0, 1],
            |x, v| vec![0.1 * x[0] - x[1], 0.9 * x[0].sin() + x[1] + v[0]],
            |x, _| vec![x[0]],
            |x, _| DifferentialForm {
                a: Mat::from_row_slice(2, 2, &[0.1, -1.0, 0.9 * x[0].cos(), 1.0]),
                b: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
                c: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
                d: Mat::zeros(1, 1),
            },
            Region::unbounded(2, 2.0 * std::f64::consts::PI),
        )
        .unwrap()
    }

    fn embedding(coef: f64) -> AffineLpvStateSpace {
        let p = SchedulingPolytope::interval(-1.0, 1.0).unwrap();
        let a = AffineMatrixFunction::new(
            Mat::from_row_slice(2, 2, &[0.1, -1.0, 0.0, 1.0]),
            vec![Mat::from_row_slice(2, 2, &[0.0, 0.0, coef, 0.0])],
        )
        .unwrap();
        AffineLpvStateSpace::new(
            a,
            AffineMatrixFunction::constant(Mat::from_row_slice(2, 1, &[0.0, 1.0]), 1),
            AffineMatrixFunction::constant(Mat::from_row_slice(1, 2, &[1.0, 0.0]), 1),
            AffineMatrixFunction::zeros(1, 1, 1),
            p,
            ChannelPartition::single("u", 1),
            ChannelPartition::single("y", 1),
        )
        .unwrap()
    }

    #[test]
    fn jacobians_agree_with_differences() {
        let r = check_jacobians(&pendulum_like(), 500);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn wrong_jacobian_detected() {
        let p = FnPlant::new(
            [1, 0, 1, 0, 1],
            |x, v| vec![x[0] * x[0] + v[0]],
            |x, _| vec![x[0]],
            |_, _| DifferentialForm {
                a: Mat::from_element(1, 1, 1.0),
                b: Mat::from_element(1, 1, 1.0),
                c: Mat::from_element(1, 1, 1.0),
                d: Mat::zeros(1, 1),
            },
            Region::Box { lo: vec![-1.0], hi: vec![1.0] },
        )
        .unwrap();
        assert!(!check_jacobians(&p, 50).pass);
    }

    #[test]
    fn cosine_embedding_exact_and_perturbed() {
        let plant = pendulum_like();
        let map = CosineMap::new(2, 0).unwrap();
        let ok = validate_embedding(&plant, &map, &embedding(0.9), 2000).unwrap();
        assert!(ok.pass && ok.a_error == 0.0 && ok.in_polytope && ok.sampling_only);
        let bad = validate_embedding(&plant, &map, &embedding(0.8), 2000).unwrap();
        assert!(!bad.pass);
        assert!((bad.a_error - 0.1).abs() < 1e-4, "{}", bad.a_error);
    }

    #[test]
    fn outside_box_rejected() {
        let ss = StateSpace::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::zeros(1, 1),
        )
        .unwrap();
        let p = LtiPlant::new(ss, 1, 0).unwrap();
        let err = differential_form_at(&p, &[100.0], &[0.0]);
        assert!(err.is_ok(), "unbounded region accepts any finite point");
        let boxed = FnPlant::new(
            [1, 0, 1, 0, 1],
            |x, v| vec![x[0] + v[0]],
            |x, _| vec![x[0]],
            |_, _| DifferentialForm {
                a: Mat::identity(1, 1),
                b: Mat::identity(1, 1),
                c: Mat::identity(1, 1),
                d: Mat::zeros(1, 1),
            },
            Region::Box { lo: vec![0.0], hi: vec![1.0] },
        )
        .unwrap();
        assert!(matches!(
            differential_form_at(&boxed, &[2.0], &[0.0]),
            Err(Error::OutsideRegion { .. })
        ));
    }

    #[test]
    fn cosine_average_matches_difference_quotient() {
        let (a, b) = (0.3_f64, 1.7_f64);
        let exact = (b.sin() - a.sin()) / (b - a);
        assert!((cos_segment_average(a, b) - exact).abs() < 1e-15);
        assert_eq!(cos_segment_average(0.4, 0.4), 0.4_f64.cos());
    }

    #[test]
    fn sinc_minimum_constant() {
        let scan = (1..200_000)
            .map(|i| sinc(i as f64 * 1e-4))
            .fold(f64::INFINITY, f64::min);
        assert!((scan - SINC_MIN).abs() < 1e-8);
        assert_eq!(sinc(0.0), 1.0);
    }

    #[test]
    fn halton_prefix_is_stable() {
        let a = halton_points(&[0.0, -1.0], &[1.0, 1.0], 10);
        let b = halton_points(&[0.0, -1.0], &[1.0, 1.0], 20);
        assert_eq!(a[..], b[..10]);
        assert_eq!(a[0], vec![0.5, -1.0 + 2.0 / 3.0]);
    }
}
