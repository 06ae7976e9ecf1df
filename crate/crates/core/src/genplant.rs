//! Generalized plants for mixed-sensitivity tracking design.
//!
//! Given a plant `x_p⁺ = f_p(x_p) + B_p u`, `y = C_p x_p` and SISO weights,
//! the generalized plant has exogenous input `w = r`, control input `u`,
//! performance outputs `z = (W_e·M (r − y), W_u u)` and measured output
//! `y_meas = r − y`. Its state is `(x_p, x_e, x_u)` where `x_e` realizes the
//! error weight cascade and `x_u` the control weight. Weights act
//! channel-wise (one copy per output or input channel).
//!
//! Only `f` is nonlinear; `B_w`, `B_u`, `C_z`, `D_zw`, `D_zu`, `C_y` and
//! `D_yw` are constant matrices.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::differential::{
    halton_points, validate_embedding, DifferentialForm, EmbeddingReport, NonlinearPlant, Region,
    SchedulingMap, DEFAULT_SAMPLES,
};
use crate::error::{Error, Result};
use crate::linalg::{block, max_abs, max_abs_diff, Mat, Vector};
use crate::lpv_model::{AffineLpvStateSpace, AffineMatrixFunction, ChannelPartition};
use crate::lti::{StateSpace, TransferFunction};
use crate::polytope::SchedulingPolytope;

/// Default radial perturbation of unit-circle weight poles.
pub const DEFAULT_EPS: f64 = 1e-4;

/// Short description of the interconnection, carried in every report.
pub const TOPOLOGY: &str = "two-block mixed sensitivity: z1 = We*M (r - y), z2 = Wu u, y_meas = r - y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingScheme {
    pub error_weight: TransferFunction,
    pub reference_model: TransferFunction,
    pub control_weight: TransferFunction,
    /// Unit-circle poles are moved to radius `1 - eps`; 0 disables.
    pub eps: f64,
}

impl WeightingScheme {
    /// `W_e = M = W_u = 1`.
    pub fn unit() -> Self {
        WeightingScheme {
            error_weight: TransferFunction::static_gain(1.0),
            reference_model: TransferFunction::static_gain(1.0),
            control_weight: TransferFunction::static_gain(1.0),
            eps: DEFAULT_EPS,
        }
    }

    /// `W_e·M` after exact cancellation and pole perturbation, with the
    /// unit-circle poles that were moved.
    pub fn error_cascade(&self) -> (TransferFunction, Vec<Complex64>) {
        self.error_weight
            .series(&self.reference_model)
            .cancel()
            .pull_inside_unit_circle(self.eps)
    }

    pub fn control_filter(&self) -> (TransferFunction, Vec<Complex64>) {
        self.control_weight.cancel().pull_inside_unit_circle(self.eps)
    }
}

/// A user-proposed embedding of the plant's differential form.
#[derive(Clone)]
pub struct PlantEmbedding {
    /// Inputs `u`, outputs `y`.
    pub lpv: AffineLpvStateSpace,
    pub map: Arc<dyn SchedulingMap>,
}

/// Scheduling map acting on the leading plant coordinates of a longer
/// state vector.
#[derive(Clone)]
pub struct LiftedMap {
    inner: Arc<dyn SchedulingMap>,
    n_inner: usize,
    region: Region,
}

impl LiftedMap {
    /// Extra coordinates are sampled on `[-extra_half, extra_half]`.
    pub fn new(inner: Arc<dyn SchedulingMap>, n_total: usize, extra_half: f64) -> Self {
        let n_inner = inner.region().dim();
        let region = extend_region(inner.region(), n_total, extra_half);
        LiftedMap {
            inner,
            n_inner,
            region,
        }
    }
}

/// Append coordinates on `[-half, half]` to a region.
fn extend_region(region: &Region, n_total: usize, half: f64) -> Region {
    let extra = n_total - region.dim();
    let (lo, hi) = region.sampling_box();
    let lo: Vec<f64> = lo.iter().copied().chain(std::iter::repeat_n(-half, extra)).collect();
    let hi: Vec<f64> = hi.iter().copied().chain(std::iter::repeat_n(half, extra)).collect();
    if region.is_bounded() {
        Region::Box { lo, hi }
    } else {
        Region::Unbounded {
            sample_lo: lo,
            sample_hi: hi,
        }
    }
}

impl SchedulingMap for LiftedMap {
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.inner.eval(&x[..self.n_inner])
    }
    fn polytope(&self) -> &SchedulingPolytope {
        self.inner.polytope()
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn segment_average(&self, a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
        self.inner
            .segment_average(&a[..self.n_inner], &b[..self.n_inner])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantMetadata {
    pub topology: String,
    pub eps: f64,
    /// Unit-circle poles moved inward, as `[re, im]`.
    pub moved_poles: Vec<[f64; 2]>,
    pub warnings: Vec<String>,
    pub embedding: EmbeddingReport,
}

/// The structured generalized plant and its differential embedding.
pub struct GeneralizedPlant {
    plant: Arc<dyn NonlinearPlant>,
    map: Arc<dyn SchedulingMap>,
    b_p: Mat,
    c_p: Mat,
    filter_e: StateSpace,
    filter_u: StateSpace,
    pub b_w: Mat,
    pub b_u: Mat,
    pub c_z: Mat,
    pub d_zw: Mat,
    pub d_zu: Mat,
    pub c_y: Mat,
    pub d_yw: Mat,
    lpv: AffineLpvStateSpace,
    region: Region,
    pub meta: PlantMetadata,
}

impl std::fmt::Debug for GeneralizedPlant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralizedPlant")
            .field("n_x", &self.n_x())
            .field("n_w", &self.n_w())
            .field("n_u", &self.n_u())
            .field("meta", &self.meta)
            .finish_non_exhaustive()
    }
}

fn channelwise(tf: &TransferFunction, copies: usize) -> StateSpace {
    let siso = tf.realize();
    let mut out = StateSpace::gain(Mat::zeros(0, 0));
    for _ in 0..copies {
        out = out.append(&siso);
    }
    out
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Checks that `f_p(x, u) = f_p(x, 0) + B_p u` and `y = C_p x` on samples,
/// returning `(B_p, C_p)`.
fn plant_structure(plant: &dyn NonlinearPlant, samples: usize) -> Result<(Mat, Mat)> {
    if plant.n_w() != 0 || plant.n_z() != 0 {
        return Err(Error::PlantStructure(
            "plant must expose only control inputs and measured outputs".into(),
        ));
    }
    let (nx, nu) = (plant.n_x(), plant.n_u());
    let (xl, xh) = plant.region().sampling_box();
    let (ul, uh) = plant.input_box();
    let lo: Vec<f64> = xl.iter().chain(&ul).copied().collect();
    let hi: Vec<f64> = xh.iter().chain(&uh).copied().collect();
    let points = halton_points(&lo, &hi, samples);
    let first = &points[0];
    let j0 = plant.jacobians(&first[..nx], &first[nx..]);
    let (b_p, c_p) = (j0.b.clone(), j0.c.clone());
    let zero_u = vec![0.0; nu];
    for p in &points {
        let (x, u) = p.split_at(nx);
        let j = plant.jacobians(x, u);
        let scale = max_abs(&b_p).max(max_abs(&c_p)).max(1.0);
        if max_abs_diff(&j.b, &b_p) > 1e-12 * scale {
            return Err(Error::PlantStructure("input matrix depends on the state".into()));
        }
        if max_abs_diff(&j.c, &c_p) > 1e-12 * scale || max_abs(&j.d) > 0.0 {
            return Err(Error::PlantStructure("nonlinear output map".into()));
        }
        let f1 = Vector::from_vec(plant.step(x, u));
        let f0 = Vector::from_vec(plant.step(x, &zero_u));
        let bu = &b_p * Vector::from_column_slice(u);
        if (f1 - f0 - &bu).amax() > 1e-9 * (1.0 + bu.amax()) {
            return Err(Error::PlantStructure("control enters nonlinearly".into()));
        }
        let y = Vector::from_vec(plant.output(x, u));
        let cx = &c_p * Vector::from_column_slice(x);
        if (y - &cx).amax() > 1e-9 * (1.0 + cx.amax()) {
            return Err(Error::PlantStructure("nonlinear output map".into()));
        }
    }
    Ok((b_p, c_p))
}

/// The weighted interconnection of an affine LPV plant model (inputs `u`,
/// outputs `y`, constant `B`, `C`, zero `D`), without reference to a
/// nonlinear plant. This is also how a primal (standard) LPV embedding is
/// turned into a synthesis model.
#[derive(Debug, Clone)]
pub struct WeightedInterconnection {
    pub lpv: AffineLpvStateSpace,
    pub filter_e: StateSpace,
    pub filter_u: StateSpace,
    pub b_w: Mat,
    pub b_u: Mat,
    pub c_z: Mat,
    pub d_zw: Mat,
    pub d_zu: Mat,
    pub c_y: Mat,
    pub d_yw: Mat,
    pub moved_poles: Vec<[f64; 2]>,
    pub warnings: Vec<String>,
}

pub fn weighted_interconnection(
    plant_lpv: &AffineLpvStateSpace,
    weights: &WeightingScheme,
) -> Result<WeightedInterconnection> {
    if !(weights.eps >= 0.0 && weights.eps < 1.0) {
        return Err(Error::Unsupported(format!("pole perturbation eps = {}", weights.eps)));
    }
    let emb = plant_lpv;
    if !emb.b.is_constant() || !emb.c.is_constant() || !emb.d.is_constant() {
        return Err(Error::PlantStructure("embedding schedules B, C or D".into()));
    }
    if max_abs(emb.d.constant_term()) != 0.0 {
        return Err(Error::PlantStructure("plant has direct feedthrough".into()));
    }
    let b_p = emb.b.constant_term().clone();
    let c_p = emb.c.constant_term().clone();
    let (nxp, nu, ny) = (emb.n_x(), emb.n_in(), emb.n_out());

    let mut warnings = Vec::new();
    let (cascade, moved_e) = weights.error_cascade();
    let (wu, moved_u) = weights.control_filter();
    for (name, tf) in [("We*M", &cascade), ("Wu", &wu)] {
        if !tf.unit_circle_poles().is_empty() {
            warnings.push(format!(
                "{name} keeps {} pole(s) on the unit circle; strict LMIs may be infeasible",
                tf.unit_circle_poles().len()
            ));
        }
    }
    let moved_poles: Vec<[f64; 2]> = moved_e.iter().chain(&moved_u).map(|p| [p.re, p.im]).collect();
    let filter_e = channelwise(&cascade, ny);
    let filter_u = channelwise(&wu, nu);
    let (ne, nwu) = (filter_e.n_states(), filter_u.n_states());
    let (nz1, nz2) = (filter_e.n_outputs(), filter_u.n_outputs());

    let z = |r: usize, c: usize| Mat::zeros(r, c);
    let b_w = block(&[&[&z(nxp, ny)], &[&filter_e.b], &[&z(nwu, ny)]]);
    let b_u = block(&[&[&b_p], &[&z(ne, nu)], &[&filter_u.b]]);
    let c_z = block(&[
        &[&(-&filter_e.d * &c_p), &filter_e.c, &z(nz1, nwu)],
        &[&z(nz2, nxp), &z(nz2, ne), &filter_u.c],
    ]);
    let d_zw = block(&[&[&filter_e.d], &[&z(nz2, ny)]]);
    let d_zu = block(&[&[&z(nz1, nu)], &[&filter_u.d]]);
    let c_y = block(&[&[&(-&c_p), &z(ny, ne), &z(ny, nwu)]]);
    let d_yw = Mat::identity(ny, ny);

    // A(ρ): plant block scheduled, weight blocks constant
    let k = emb.n_rho();
    let lift_a = |m: &Mat| {
        block(&[
            &[m, &z(nxp, ne), &z(nxp, nwu)],
            &[&z(ne, nxp), &z(ne, ne), &z(ne, nwu)],
            &[&z(nwu, nxp), &z(nwu, ne), &z(nwu, nwu)],
        ])
    };
    let a_const = block(&[
        &[emb.a.constant_term(), &z(nxp, ne), &z(nxp, nwu)],
        &[&(-&filter_e.b * &c_p), &filter_e.a, &z(ne, nwu)],
        &[&z(nwu, nxp), &z(nwu, ne), &filter_u.a],
    ]);
    let a = AffineMatrixFunction::new(a_const, emb.a.coefficients().iter().map(lift_a).collect())?;
    let c = block(&[&[&c_z], &[&c_y]]);
    let d = block(&[&[&d_zw, &d_zu], &[&d_yw, &z(ny, nu)]]);
    let lpv = AffineLpvStateSpace::new(
        a,
        AffineMatrixFunction::constant(block(&[&[&b_w, &b_u]]), k),
        AffineMatrixFunction::constant(c, k),
        AffineMatrixFunction::constant(d, k),
        emb.polytope.clone(),
        ChannelPartition::new(&[("w", ny), ("u", nu)])?,
        ChannelPartition::new(&[("z", nz1 + nz2), ("y", ny)])?,
    )?;
    Ok(WeightedInterconnection {
        lpv,
        filter_e,
        filter_u,
        b_w,
        b_u,
        c_z,
        d_zw,
        d_zu,
        c_y,
        d_yw,
        moved_poles,
        warnings,
    })
}

/// Interconnect a plant with the weights and embed its differential form.
pub fn build_generalized_plant(
    plant: Arc<dyn NonlinearPlant>,
    embedding: &PlantEmbedding,
    weights: &WeightingScheme,
) -> Result<GeneralizedPlant> {
    build_generalized_plant_with(plant, embedding, weights, DEFAULT_SAMPLES)
}

/// As [`build_generalized_plant`], with an explicit validation sample count.
pub fn build_generalized_plant_with(
    plant: Arc<dyn NonlinearPlant>,
    embedding: &PlantEmbedding,
    weights: &WeightingScheme,
    samples: usize,
) -> Result<GeneralizedPlant> {
    let (b_p, c_p) = plant_structure(plant.as_ref(), 200)?;
    let (nxp, nu, ny) = (plant.n_x(), plant.n_u(), plant.n_y());
    let emb = &embedding.lpv;
    if emb.n_x() != nxp || emb.n_in() != nu || emb.n_out() != ny {
        return Err(Error::dims(
            "plant embedding",
            format!("{nxp}/{nu}/{ny}"),
            format!("{}/{}/{}", emb.n_x(), emb.n_in(), emb.n_out()),
        ));
    }
    let wi = weighted_interconnection(emb, weights)?;
    let nx = wi.lpv.n_x();
    let map: Arc<dyn SchedulingMap> = Arc::new(LiftedMap::new(embedding.map.clone(), nx, 10.0));
    let region = extend_region(plant.region(), nx, 10.0);
    let mut gp = GeneralizedPlant {
        plant,
        map,
        b_p,
        c_p,
        filter_e: wi.filter_e,
        filter_u: wi.filter_u,
        b_w: wi.b_w,
        b_u: wi.b_u,
        c_z: wi.c_z,
        d_zw: wi.d_zw,
        d_zu: wi.d_zu,
        c_y: wi.c_y,
        d_yw: wi.d_yw,
        lpv: wi.lpv,
        region,
        meta: PlantMetadata {
            topology: TOPOLOGY.to_string(),
            eps: weights.eps,
            moved_poles: wi.moved_poles,
            warnings: wi.warnings,
            embedding: EmbeddingReport {
                samples: 0,
                a_error: 0.0,
                b_error: 0.0,
                c_error: 0.0,
                d_error: 0.0,
                tolerance: 0.0,
                pass: false,
                in_polytope: false,
                min_membership_margin: 0.0,
                sampling_only: true,
            },
        },
    };
    let report = validate_embedding(&gp, gp.map.as_ref(), &gp.lpv, samples)?;
    if !report.pass || !report.in_polytope {
        return Err(Error::PlantStructure(format!(
            "embedding does not match the differential form (A error {:.3e}, B error {:.3e}, C error {:.3e}, in polytope: {})",
            report.a_error, report.b_error, report.c_error, report.in_polytope
        )));
    }
    gp.meta.embedding = report;
    Ok(gp)
}

impl GeneralizedPlant {
    pub fn plant(&self) -> &Arc<dyn NonlinearPlant> {
        &self.plant
    }

    /// Scheduling map on the full generalized state.
    pub fn map(&self) -> &Arc<dyn SchedulingMap> {
        &self.map
    }

    pub fn n_plant_states(&self) -> usize {
        self.plant.n_x()
    }

    /// `B_p` of the bare plant.
    pub fn plant_input_matrix(&self) -> &Mat {
        &self.b_p
    }

    /// `C_p` of the bare plant.
    pub fn plant_output_matrix(&self) -> &Mat {
        &self.c_p
    }

    pub fn error_filter(&self) -> &StateSpace {
        &self.filter_e
    }

    pub fn control_filter(&self) -> &StateSpace {
        &self.filter_u
    }

    /// The autonomous part `f(x)`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let np = self.plant.n_x();
        let ne = self.filter_e.n_states();
        let zero_u = vec![0.0; self.plant.n_u()];
        let mut out = self.plant.step(&x[..np], &zero_u);
        let xp = Vector::from_column_slice(&x[..np]);
        let xe = Vector::from_column_slice(&x[np..np + ne]);
        let xu = Vector::from_column_slice(&x[np + ne..]);
        out.extend(to_vec(&(&self.filter_e.a * xe - &self.filter_e.b * (&self.c_p * &xp))));
        out.extend(to_vec(&(&self.filter_u.a * xu)));
        out
    }

    /// Plant output `y = C_p x_p`.
    pub fn plant_output(&self, x: &[f64]) -> Vec<f64> {
        to_vec(&(&self.c_p * Vector::from_column_slice(&x[..self.plant.n_x()])))
    }

    /// Weight-filter states along a plant trajectory, started at rest:
    /// returns the generalized states `(x_p, x_e, x_u)` for each step.
    pub fn lift_trajectory(&self, xp: &[Vec<f64>], w: &[Vec<f64>], u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let ne = self.filter_e.n_states();
        let nwu = self.filter_u.n_states();
        let mut xe = Vector::zeros(ne);
        let mut xu = Vector::zeros(nwu);
        let mut out = Vec::with_capacity(xp.len());
        for k in 0..xp.len() {
            let mut row = xp[k].clone();
            row.extend(xe.iter());
            row.extend(xu.iter());
            out.push(row);
            if k < w.len() && k < u.len() {
                let e = Vector::from_column_slice(&w[k]) - &self.c_p * Vector::from_column_slice(&xp[k]);
                xe = &self.filter_e.a * xe + &self.filter_e.b * e;
                xu = &self.filter_u.a * xu + &self.filter_u.b * Vector::from_column_slice(&u[k]);
            }
        }
        out
    }
}

impl NonlinearPlant for GeneralizedPlant {
    fn n_x(&self) -> usize {
        self.b_w.nrows()
    }
    fn n_w(&self) -> usize {
        self.b_w.ncols()
    }
    fn n_u(&self) -> usize {
        self.b_u.ncols()
    }
    fn n_z(&self) -> usize {
        self.c_z.nrows()
    }
    fn n_y(&self) -> usize {
        self.c_y.nrows()
    }

    fn step(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let nw = self.n_w();
        let f = Vector::from_vec(self.drift(x));
        let w = Vector::from_column_slice(&v[..nw]);
        let u = Vector::from_column_slice(&v[nw..]);
        to_vec(&(f + &self.b_w * w + &self.b_u * u))
    }

    fn output(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let nw = self.n_w();
        let xv = Vector::from_column_slice(x);
        let w = Vector::from_column_slice(&v[..nw]);
        let u = Vector::from_column_slice(&v[nw..]);
        let z = &self.c_z * &xv + &self.d_zw * &w + &self.d_zu * u;
        let y = &self.c_y * xv + &self.d_yw * w;
        z.iter().chain(y.iter()).copied().collect()
    }

    fn jacobians(&self, x: &[f64], _v: &[f64]) -> DifferentialForm {
        let np = self.plant.n_x();
        let zero_u = vec![0.0; self.plant.n_u()];
        let jp = self.plant.jacobians(&x[..np], &zero_u);
        let mut a = self.lpv.a.constant_term().clone();
        a.view_mut((0, 0), (np, np)).copy_from(&jp.a);
        DifferentialForm {
            a,
            b: block(&[&[&self.b_w, &self.b_u]]),
            c: block(&[&[&self.c_z], &[&self.c_y]]),
            d: self.lpv.d.constant_term().clone(),
        }
    }

    fn region(&self) -> &Region {
        &self.region
    }
}

/// The affine LPV model of the generalized plant's differential form, with
/// input channels `(w, u)` and output channels `(z, y)`.
pub fn differential_generalized_plant(gp: &GeneralizedPlant) -> AffineLpvStateSpace {
    gp.lpv.clone()
}
