//! Primal realization of a differential controller.
//!
//! The runnable controller works in increments around a feasible
//! steady-state trajectory `(x*, w*, u*, y*)`:
//!
//! ```text
//! Δx_c⁺ = A_c,k Δx_c + B_c,k (u_c − u*_c)
//! y_c   = y*_c + C_c,k Δx_c + D_c,k (u_c − u*_c)
//! ```
//!
//! where `u*_c = y*` and `y*_c = u*`, and each `(·)_c,k` is the average of
//! the differential controller's matrix over the straight segment from
//! `x*_k` to `x_k`. Because the controller is affine in `ρ`, that average
//! equals the controller evaluated at the segment average of `ψ`.

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::differential::{NonlinearPlant, SchedulingMap};
use crate::error::{Error, Result};
use crate::example::ExamplePlant;
use crate::genplant::GeneralizedPlant;
use crate::linalg::{Mat, Vector};
use crate::synthesis::DifferentialController;

pub const DEFAULT_QUADRATURE_ORDER: usize = 16;
/// Step-wise tolerance on the plant equations along a steady-state trajectory.
pub const FEASIBILITY_TOL: f64 = 1e-10;
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 100;

/// A Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SegmentQuadrature {
    order: usize,
    nodes: Vec<(f64, f64)>,
}

impl SegmentQuadrature {
    pub fn new(order: usize) -> Result<Self> {
        let n = NonZeroUsize::new(order)
            .ok_or_else(|| Error::Unsupported("quadrature order must be positive".into()))?;
        let rule = GaussLegendre::new(n);
        let nodes = rule
            .iter()
            .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        Ok(SegmentQuadrature { order, nodes })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `(λ_i, w_i)` with `Σ w_i = 1`.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    /// `∫₀¹ ψ(a + λ(b − a)) dλ` by quadrature only.
    pub fn average(&self, map: &dyn SchedulingMap, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; map.dim()];
        for &(lam, w) in &self.nodes {
            let p = segment_point(a, b, lam);
            for (s, v) in acc.iter_mut().zip(map.eval(&p)) {
                *s += w * v;
            }
        }
        acc
    }
}

impl Default for SegmentQuadrature {
    fn default() -> Self {
        SegmentQuadrature::new(DEFAULT_QUADRATURE_ORDER).expect("positive order")
    }
}

fn segment_point(a: &[f64], b: &[f64], lam: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + lam * (q - p)).collect()
}

/// `∫₀¹ ψ(x* + λ(x − x*)) dλ`, in closed form when the map provides one.
pub fn segment_average(
    map: &dyn SchedulingMap,
    x_star: &[f64],
    x: &[f64],
    quad: &SegmentQuadrature,
) -> Vec<f64> {
    map.segment_average(x_star, x)
        .unwrap_or_else(|| quad.average(map, x_star, x))
}

/// Controller matrices averaged along one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAveraged {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub rho_bar: Vec<f64>,
    /// An endpoint lies outside the map's region.
    pub left_region: bool,
}

fn check_segment(map: &dyn SchedulingMap, x: &[f64], x_star: &[f64]) -> Result<bool> {
    let n = map.region().dim();
    if x.len() != n || x_star.len() != n {
        return Err(Error::dims("segment endpoints", n, format!("{} and {}", x.len(), x_star.len())));
    }
    // The region is a box, so the segment stays inside iff both ends do.
    Ok(!(map.region().contains(x) && map.region().contains(x_star)))
}

fn controller_at(ctrl: &DifferentialController, rho: &[f64]) -> Result<[Mat; 4]> {
    if ctrl.lpv.is_constant() {
        return Ok([
            ctrl.a().constant_term().clone(),
            ctrl.b().constant_term().clone(),
            ctrl.c().constant_term().clone(),
            ctrl.d().constant_term().clone(),
        ]);
    }
    let ss = ctrl.lpv.at(rho)?;
    Ok([ss.a, ss.b, ss.c, ss.d])
}

/// `A_c,k = ∫₀¹ A_δc(ψ(x* + λ(x − x*))) dλ` and likewise for `B`, `C`, `D`.
///
/// Only the scheduling average is integrated; the controller is then
/// evaluated once at that average.
pub fn path_averaged_matrices(
    ctrl: &DifferentialController,
    map: &dyn SchedulingMap,
    x: &[f64],
    x_star: &[f64],
    quad: &SegmentQuadrature,
) -> Result<PathAveraged> {
    let left_region = check_segment(map, x, x_star)?;
    let rho_bar = segment_average(map, x_star, x, quad);
    let [a, b, c, d] = controller_at(ctrl, &rho_bar)?;
    Ok(PathAveraged {
        a,
        b,
        c,
        d,
        rho_bar,
        left_region,
    })
}

/// Matrix-valued quadrature of the controller along the segment, without
/// using affinity. Reference implementation for checks.
pub fn path_averaged_matrices_direct(
    ctrl: &DifferentialController,
    map: &dyn SchedulingMap,
    x: &[f64],
    x_star: &[f64],
    quad: &SegmentQuadrature,
) -> Result<PathAveraged> {
    let left_region = check_segment(map, x, x_star)?;
    let (nx, nu, ny) = (ctrl.n_x(), ctrl.n_in(), ctrl.n_out());
    let mut acc = [
        Mat::zeros(nx, nx),
        Mat::zeros(nx, nu),
        Mat::zeros(ny, nx),
        Mat::zeros(ny, nu),
    ];
    let mut rho_bar = vec![0.0; map.dim()];
    for &(lam, w) in quad.nodes() {
        let rho = map.eval(&segment_point(x_star, x, lam));
        for (s, v) in rho_bar.iter_mut().zip(&rho) {
            *s += w * v;
        }
        for (sum, m) in acc.iter_mut().zip(controller_at(ctrl, &rho)?) {
            *sum += m * w;
        }
    }
    let [a, b, c, d] = acc;
    Ok(PathAveraged {
        a,
        b,
        c,
        d,
        rho_bar,
        left_region,
    })
}

/// A feasible trajectory `(x*, w*, u*, y*)` of a plant with inputs `(w, u)`
/// and measured outputs `y`. `x` holds one more entry than the others (the
/// state after the last step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateTrajectory {
    pub x: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl SteadyStateTrajectory {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn n_x(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn n_w(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn n_u(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn n_y(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    fn check_shape(&self) -> Result<()> {
        let h = self.horizon();
        if self.x.len() != h + 1 || self.w.len() != h || self.y.len() != h {
            return Err(Error::dims(
                "steady-state trajectory lengths",
                format!("x: {}, w/u/y: {h}", h + 1),
                format!("x: {}, w: {}, y: {}", self.x.len(), self.w.len(), self.y.len()),
            ));
        }
        let (nx, nw, nu, ny) = (self.n_x(), self.n_w(), self.n_u(), self.n_y());
        let uniform = self.x.iter().all(|v| v.len() == nx)
            && self.w.iter().all(|v| v.len() == nw)
            && self.u.iter().all(|v| v.len() == nu)
            && self.y.iter().all(|v| v.len() == ny);
        if !uniform {
            return Err(Error::dims("steady-state trajectory", "uniform widths", "ragged rows"));
        }
        Ok(())
    }

    /// Largest step-wise violation of the plant equations, with its step.
    pub fn residual(&self, plant: &dyn NonlinearPlant) -> Result<(usize, f64)> {
        self.check_shape()?;
        if self.horizon() > 0
            && (self.n_x() != plant.n_x()
                || self.n_w() != plant.n_w()
                || self.n_u() != plant.n_u()
                || self.n_y() != plant.n_y())
        {
            return Err(Error::dims(
                "trajectory vs plant",
                format!("({}, {}, {}, {})", plant.n_x(), plant.n_w(), plant.n_u(), plant.n_y()),
                format!("({}, {}, {}, {})", self.n_x(), self.n_w(), self.n_u(), self.n_y()),
            ));
        }
        let nz = plant.n_z();
        let mut worst = (0, 0.0_f64);
        for k in 0..self.horizon() {
            let v: Vec<f64> = self.w[k].iter().chain(&self.u[k]).copied().collect();
            let next = plant.step(&self.x[k], &v);
            let out = plant.output(&self.x[k], &v);
            let r = next
                .iter()
                .zip(&self.x[k + 1])
                .map(|(a, b)| (a - b).abs())
                .chain(out[nz..].iter().zip(&self.y[k]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if !(r <= worst.1) {
                worst = (k, r);
            }
        }
        Ok(worst)
    }

    /// Errors unless [`residual`](Self::residual) is within [`FEASIBILITY_TOL`].
    pub fn ensure_feasible(&self, plant: &dyn NonlinearPlant) -> Result<f64> {
        let (step, residual) = self.residual(plant)?;
        if residual.is_finite() && residual <= FEASIBILITY_TOL {
            Ok(residual)
        } else {
            Err(Error::InfeasibleTrajectory { step, residual })
        }
    }

    /// CSV with columns `k, x1.., w1.., u1.., y1..`. The final row carries
    /// only the terminal state.
    pub fn to_csv(&self) -> Result<String> {
        self.check_shape()?;
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string()];
        for (p, n) in [("x", self.n_x()), ("w", self.n_w()), ("u", self.n_u()), ("y", self.n_y())] {
            header.extend((1..=n).map(|i| format!("{p}{i}")));
        }
        wtr.write_record(&header)?;
        let tail = self.n_w() + self.n_u() + self.n_y();
        for (k, x) in self.x.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| format!("{v:.16e}")));
            if k < self.horizon() {
                for part in [&self.w[k], &self.u[k], &self.y[k]] {
                    row.extend(part.iter().map(|v| format!("{v:.16e}")));
                }
            } else {
                row.extend(std::iter::repeat_n(String::new(), tail));
            }
            wtr.write_record(&row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("k") {
            return Err(Error::Csv("first column must be `k`".into()));
        }
        let mut groups: [Vec<usize>; 4] = Default::default();
        for (i, name) in header.iter().enumerate().skip(1) {
            let g = match name.chars().next() {
                Some('x') => 0,
                Some('w') => 1,
                Some('u') => 2,
                Some('y') => 3,
                _ => return Err(Error::Csv(format!("unknown column `{name}`"))),
            };
            groups[g].push(i);
        }
        let mut traj = SteadyStateTrajectory {
            x: vec![],
            w: vec![],
            u: vec![],
            y: vec![],
        };
        let parse = |rec: &csv::StringRecord, cols: &[usize]| -> Result<Option<Vec<f64>>> {
            if cols.iter().all(|&c| rec.get(c).is_some_and(str::is_empty)) && !cols.is_empty() {
                return Ok(None);
            }
            cols.iter()
                .map(|&c| {
                    let s = rec.get(c).unwrap_or("");
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Csv(format!("bad number `{s}`")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        let mut rows = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.get(0).and_then(|s| s.trim().parse::<usize>().ok()) != Some(row) {
                return Err(Error::Csv(format!("row {row} has the wrong step index")));
            }
            let x = parse(&rec, &groups[0])?.ok_or_else(|| Error::Csv("missing state".into()))?;
            let parts: Vec<Option<Vec<f64>>> = groups[1..]
                .iter()
                .map(|g| parse(&rec, g))
                .collect::<Result<_>>()?;
            rows.push((x, parts));
        }
        // The last row holds only the terminal state.
        let (x_last, last) = rows.pop().ok_or_else(|| Error::Csv("no rows".into()))?;
        if last.iter().zip(&groups[1..]).any(|(p, g)| p.is_some() && !g.is_empty()) {
            return Err(Error::Csv("missing terminal state row".into()));
        }
        for (x, parts) in rows {
            traj.x.push(x);
            let mut it = parts.into_iter();
            let mut next = || it.next().flatten().ok_or_else(|| Error::Csv("incomplete row".into()));
            traj.w.push(next()?);
            traj.u.push(next()?);
            traj.y.push(next()?);
        }
        traj.x.push(x_last);
        traj.check_shape()?;
        Ok(traj)
    }
}

fn max_abs_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Equilibrium `(x*, u*)` with `y(x*) = r`, by damped Newton from `guess`.
/// The plant must have no exogenous channels and as many inputs as outputs.
pub fn solve_equilibrium(
    plant: &dyn NonlinearPlant,
    r: &[f64],
    guess: Option<(&[f64], &[f64])>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nx, nu, ny) = (plant.n_x(), plant.n_u(), plant.n_y());
    if plant.n_w() != 0 || plant.n_z() != 0 || nu != ny {
        return Err(Error::Unsupported(
            "equilibrium solve needs a square plant without exogenous channels".into(),
        ));
    }
    if r.len() != ny {
        return Err(Error::dims("reference", ny, r.len()));
    }
    let mut x = guess.map_or(vec![0.0; nx], |g| g.0.to_vec());
    let mut u = guess.map_or(vec![0.0; nu], |g| g.1.to_vec());
    if x.len() != nx || u.len() != nu {
        return Err(Error::dims("Newton initial guess", format!("{nx}+{nu}"), format!("{}+{}", x.len(), u.len())));
    }
    let residual = |x: &[f64], u: &[f64]| -> Vec<f64> {
        let mut f: Vec<f64> = plant.step(x, u).iter().zip(x).map(|(a, b)| a - b).collect();
        f.extend(plant.output(x, u).iter().zip(r).map(|(a, b)| a - b));
        f
    };
    let mut f = residual(&x, &u);
    let mut norm = max_abs_slice(&f);
    for iter in 0..NEWTON_MAX_ITER {
        if norm <= NEWTON_TOL {
            return Ok((x, u));
        }
        let j = plant.jacobians(&x, &u);
        let mut jac = Mat::zeros(nx + ny, nx + nu);
        jac.view_mut((0, 0), (nx, nx)).copy_from(&(j.a - Mat::identity(nx, nx)));
        jac.view_mut((0, nx), (nx, nu)).copy_from(&j.b);
        jac.view_mut((nx, 0), (ny, nx)).copy_from(&j.c);
        jac.view_mut((nx, nx), (ny, nu)).copy_from(&j.d);
        let step = jac
            .full_piv_lu()
            .solve(&DVector::from_vec(f.clone()))
            .ok_or(Error::NewtonDivergence {
                iterations: iter,
                residual: norm,
            })?;
        let mut alpha = 1.0;
        loop {
            let xt: Vec<f64> = x.iter().enumerate().map(|(i, v)| v - alpha * step[i]).collect();
            let ut: Vec<f64> = u.iter().enumerate().map(|(i, v)| v - alpha * step[nx + i]).collect();
            let ft = residual(&xt, &ut);
            let nt = max_abs_slice(&ft);
            if nt < norm || alpha < 1e-10 {
                x = xt;
                u = ut;
                f = ft;
                norm = nt;
                break;
            }
            alpha *= 0.5;
        }
        if !norm.is_finite() {
            break;
        }
    }
    if norm <= NEWTON_TOL {
        return Ok((x, u));
    }
    Err(Error::NewtonDivergence {
        iterations: NEWTON_MAX_ITER,
        residual: norm,
    })
}

/// Constant steady-state trajectory for a constant reference on a plant
/// without exogenous channels, via [`solve_equilibrium`].
pub fn steady_state_for_constant_reference(
    plant: &dyn NonlinearPlant,
    r: &[f64],
    horizon: usize,
    guess: Option<(&[f64], &[f64])>,
) -> Result<SteadyStateTrajectory> {
    let (x, u) = solve_equilibrium(plant, r, guess)?;
    let traj = SteadyStateTrajectory {
        x: vec![x; horizon + 1],
        w: vec![vec![]; horizon],
        u: vec![u; horizon],
        y: vec![r.to_vec(); horizon],
    };
    traj.ensure_feasible(plant)?;
    Ok(traj)
}

/// Exact inversion of the example plant along a reference known two steps
/// ahead: `x*_1,k = r_k`, `x*_2,k = 0.1 r_k − r_k+1`,
/// `u*_k = x*_2,k+1 − x*_2,k − 0.9 sin r_k`.
pub fn steady_state_for_reference_sequence(
    plant: &ExamplePlant,
    r: &[f64],
    horizon: usize,
) -> Result<SteadyStateTrajectory> {
    let needed = horizon + 2;
    if r.len() < needed {
        return Err(Error::HorizonTooShort {
            needed,
            got: r.len(),
        });
    }
    let x: Vec<Vec<f64>> = (0..=horizon)
        .map(|k| vec![r[k], 0.1 * r[k] - r[k + 1]])
        .collect();
    let u = (0..horizon)
        .map(|k| vec![x[k + 1][1] - x[k][1] - 0.9 * r[k].sin()])
        .collect();
    let traj = SteadyStateTrajectory {
        x,
        w: vec![vec![]; horizon],
        u,
        y: (0..horizon).map(|k| vec![r[k]]).collect(),
    };
    traj.ensure_feasible(plant)?;
    Ok(traj)
}

/// Restates a trajectory of the bare plant in generalized-plant
/// coordinates: the reference is the plant output, weight filters start at
/// rest, and the measured tracking error is zero throughout.
pub fn lift_to_generalized(gp: &GeneralizedPlant, traj: &SteadyStateTrajectory) -> Result<SteadyStateTrajectory> {
    traj.residual(gp.plant().as_ref())?;
    let w = traj.y.clone();
    let x = gp.lift_trajectory(&traj.x, &w, &traj.u);
    let nz = gp.n_z();
    let y = (0..traj.horizon())
        .map(|k| {
            let v: Vec<f64> = w[k].iter().chain(&traj.u[k]).copied().collect();
            gp.output(&x[k], &v)[nz..].to_vec()
        })
        .collect();
    let lifted = SteadyStateTrajectory {
        x,
        w,
        u: traj.u.clone(),
        y,
    };
    lifted.ensure_feasible(gp)?;
    Ok(lifted)
}

/// Counters a runtime accumulates while stepping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeDiagnostics {
    /// Steps whose scheduling segment left the embedding region.
    pub region_exits: usize,
    /// Steps whose scheduling value had to be clamped into the polytope.
    pub clamped: usize,
}

/// A controller that can be stepped in closed loop.
pub trait ControllerRuntime: Send {
    fn kind(&self) -> &'static str;
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;
    fn state(&self) -> Vec<f64>;
    /// Back to the initial state with cleared diagnostics.
    fn reset(&mut self);
    /// Control output at step `k` for measurement `u_c`, scheduled on the
    /// plant state `x`.
    fn step(&mut self, k: usize, u_c: &[f64], x: &[f64]) -> Result<Vec<f64>>;
    fn diagnostics(&self) -> RuntimeDiagnostics;
}

/// The incremental controller: a differential controller realized around a
/// steady-state trajectory.
pub struct IncrementalControllerRuntime {
    ctrl: Arc<DifferentialController>,
    map: Arc<dyn SchedulingMap>,
    traj: Arc<SteadyStateTrajectory>,
    quad: SegmentQuadrature,
    dx: Vector,
    dx0: Vector,
    diag: RuntimeDiagnostics,
}

impl IncrementalControllerRuntime {
    pub fn new(
        ctrl: Arc<DifferentialController>,
        map: Arc<dyn SchedulingMap>,
        traj: Arc<SteadyStateTrajectory>,
        quadrature_order: usize,
    ) -> Result<Self> {
        if !ctrl.lpv.is_constant() && map.dim() != ctrl.lpv.n_rho() {
            return Err(Error::dims("scheduling map vs controller", ctrl.lpv.n_rho(), map.dim()));
        }
        if traj.horizon() > 0 {
            if traj.n_x() != map.region().dim() {
                return Err(Error::dims("trajectory state vs scheduling map", map.region().dim(), traj.n_x()));
            }
            if traj.n_u() != ctrl.n_out() || traj.n_y() != ctrl.n_in() {
                return Err(Error::dims(
                    "trajectory (u*, y*) vs controller (y_c, u_c)",
                    format!("({}, {})", ctrl.n_out(), ctrl.n_in()),
                    format!("({}, {})", traj.n_u(), traj.n_y()),
                ));
            }
        }
        let n = ctrl.n_x();
        Ok(IncrementalControllerRuntime {
            ctrl,
            map,
            traj,
            quad: SegmentQuadrature::new(quadrature_order)?,
            dx: Vector::zeros(n),
            dx0: Vector::zeros(n),
            diag: RuntimeDiagnostics::default(),
        })
    }

    /// Start from `Δx_c,0 = dx0` instead of zero.
    pub fn with_initial_increment(mut self, dx0: &[f64]) -> Result<Self> {
        if dx0.len() != self.ctrl.n_x() {
            return Err(Error::dims("initial controller increment", self.ctrl.n_x(), dx0.len()));
        }
        self.dx0 = Vector::from_column_slice(dx0);
        self.dx = self.dx0.clone();
        Ok(self)
    }

    pub fn trajectory(&self) -> &SteadyStateTrajectory {
        &self.traj
    }

    pub fn increment(&self) -> &Vector {
        &self.dx
    }

    /// One step of the realized controller.
    pub fn controller_step(&mut self, k: usize, u_c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let horizon = self.traj.horizon();
        if k >= horizon {
            return Err(Error::HorizonExhausted { step: k, horizon });
        }
        if u_c.len() != self.ctrl.n_in() {
            return Err(Error::dims("controller input", self.ctrl.n_in(), u_c.len()));
        }
        let pa = path_averaged_matrices(&self.ctrl, self.map.as_ref(), x, &self.traj.x[k], &self.quad)?;
        if pa.left_region {
            self.diag.region_exits += 1;
        }
        let du = Vector::from_column_slice(u_c) - Vector::from_column_slice(&self.traj.y[k]);
        let y = Vector::from_column_slice(&self.traj.u[k]) + &pa.c * &self.dx + &pa.d * &du;
        self.dx = &pa.a * &self.dx + &pa.b * du;
        Ok(y.iter().copied().collect())
    }
}

impl ControllerRuntime for IncrementalControllerRuntime {
    fn kind(&self) -> &'static str {
        "incremental"
    }
    fn n_in(&self) -> usize {
        self.ctrl.n_in()
    }
    fn n_out(&self) -> usize {
        self.ctrl.n_out()
    }
    fn state(&self) -> Vec<f64> {
        self.dx.iter().copied().collect()
    }
    fn reset(&mut self) {
        self.dx = self.dx0.clone();
        self.diag = RuntimeDiagnostics::default();
    }
    fn step(&mut self, k: usize, u_c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.controller_step(k, u_c, x)
    }
    fn diagnostics(&self) -> RuntimeDiagnostics {
        self.diag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::differential::{cos_segment_average, ConstantMap, CosineMap};
    use crate::example::constant_steady_state;
    use crate::lpv_model::AffineMatrixFunction;
    use crate::polytope::SchedulingPolytope;

    fn scheduled_controller() -> DifferentialController {
        let f = |c: f64, k: f64, r: usize, cl: usize| {
            AffineMatrixFunction::new(Mat::from_element(r, cl, c), vec![Mat::from_element(r, cl, k)]).unwrap()
        };
        DifferentialController::new(
            f(0.3, 0.1, 2, 2),
            f(1.0, -0.5, 2, 1),
            f(0.2, 0.7, 1, 2),
            f(-0.4, 0.25, 1, 1),
            SchedulingPolytope::interval(-1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_average_matches_trapezoid() {
        let n = 10_000;
        for (a, b) in [(0.0, 1.0), (-2.0, 3.5), (1.2, 1.2 + 1e-9), (4.0, -4.0)] {
            let h = 1.0 / n as f64;
            let f = |l: f64| (a + l * (b - a)).cos();
            let trap: f64 = h * (0.5 * f(0.0) + (1..n).map(|i| f(i as f64 * h)).sum::<f64>() + 0.5 * f(1.0));
            // Composite trapezoid error is O(h²|b − a|²).
            assert!((cos_segment_average(a, b) - trap).abs() < 1e-7 * (1.0 + (b - a) * (b - a)));
        }
    }

    #[test]
    fn zero_length_segment_evaluates_at_point() {
        let ctrl = scheduled_controller();
        let map = CosineMap::new(2, 0).unwrap();
        let x = [0.8, -0.1];
        let pa = path_averaged_matrices(&ctrl, &map, &x, &x, &SegmentQuadrature::default()).unwrap();
        let at = ctrl.lpv.at(&[0.8f64.cos()]).unwrap();
        assert!((pa.a - at.a).amax() < 1e-15 && (pa.d - at.d).amax() < 1e-15);
    }

    #[test]
    fn affine_shortcut_matches_direct_quadrature() {
        let ctrl = scheduled_controller();
        let map = CosineMap::new(2, 0).unwrap();
        let q64 = SegmentQuadrature::new(64).unwrap();
        let pa = path_averaged_matrices(&ctrl, &map, &[2.5, 0.0], &[-1.0, 3.0], &SegmentQuadrature::default()).unwrap();
        let direct = path_averaged_matrices_direct(&ctrl, &map, &[2.5, 0.0], &[-1.0, 3.0], &q64).unwrap();
        for (p, q) in [(&pa.a, &direct.a), (&pa.b, &direct.b), (&pa.c, &direct.c), (&pa.d, &direct.d)] {
            assert!((p - q).amax() < 1e-12);
        }
    }

    #[test]
    fn constant_controller_ignores_segment() {
        let ctrl = DifferentialController::new(
            AffineMatrixFunction::constant(Mat::from_element(1, 1, 0.5), 1),
            AffineMatrixFunction::constant(Mat::from_element(1, 1, 1.0), 1),
            AffineMatrixFunction::constant(Mat::from_element(1, 1, 2.0), 1),
            AffineMatrixFunction::constant(Mat::from_element(1, 1, 0.1), 1),
            SchedulingPolytope::point(vec![0.0]).unwrap(),
        )
        .unwrap();
        let map = CosineMap::new(2, 0).unwrap();
        let q = SegmentQuadrature::default();
        let p1 = path_averaged_matrices(&ctrl, &map, &[0.0, 0.0], &[1.0, 2.0], &q).unwrap();
        let p2 = path_averaged_matrices(&ctrl, &map, &[5.0, 1.0], &[-3.0, 2.0], &q).unwrap();
        assert_eq!((p1.a, p1.b, p1.c, p1.d), (p2.a, p2.b, p2.c, p2.d));
    }

    #[test]
    fn equilibrium_by_newton_matches_algebra() {
        let p = ExamplePlant::default();
        for r in [0.0, 1.0, 2.0] {
            let t = steady_state_for_constant_reference(&p, &[r], 10, None).unwrap();
            let (xs, us) = constant_steady_state(r);
            assert!((t.x[3][0] - xs[0]).abs() < 1e-12 && (t.x[3][1] - xs[1]).abs() < 1e-12);
            assert!((t.u[0][0] - us).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_inversion_is_feasible_and_consistent() {
        let p = ExamplePlant::default();
        let r: Vec<f64> = (0..50).map(|k| (std::f64::consts::PI * k as f64 / 8.0).sin() + 2.5).collect();
        let t = steady_state_for_reference_sequence(&p, &r, 48).unwrap();
        assert!(t.ensure_feasible(&p).unwrap() <= FEASIBILITY_TOL);
        assert!(matches!(
            steady_state_for_reference_sequence(&p, &r, 49),
            Err(Error::HorizonTooShort { needed: 51, got: 50 })
        ));
        let c = steady_state_for_reference_sequence(&p, &[1.5; 12], 10).unwrap();
        let n = steady_state_for_constant_reference(&p, &[1.5], 10, None).unwrap();
        for k in 0..10 {
            assert!((c.u[k][0] - n.u[k][0]).abs() < 1e-12 && (c.x[k][1] - n.x[k][1]).abs() < 1e-12);
        }
        let z = steady_state_for_reference_sequence(&p, &[0.0; 7], 5).unwrap();
        assert!(z.x.iter().chain(&z.u).flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let p = ExamplePlant::default();
        let r: Vec<f64> = (0..9).map(|k| 0.3 * k as f64).collect();
        let t = steady_state_for_reference_sequence(&p, &r, 7).unwrap();
        let back = SteadyStateTrajectory::from_csv(&t.to_csv().unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(SteadyStateTrajectory::from_csv("k,q1\n0,1\n").is_err());
    }

    #[test]
    fn feedforward_only_when_tracking() {
        let ctrl = Arc::new(scheduled_controller());
        let p = ExamplePlant::default();
        let t = Arc::new(steady_state_for_constant_reference(&p, &[1.0], 5, None).unwrap());
        let map: Arc<dyn SchedulingMap> = Arc::new(CosineMap::new(2, 0).unwrap());
        let mut rt = IncrementalControllerRuntime::new(ctrl, map, t.clone(), 16).unwrap();
        for k in 0..5 {
            let y = rt.step(k, &t.y[k], &t.x[k]).unwrap();
            assert_eq!(y, t.u[k]);
        }
        assert!(matches!(rt.step(5, &[1.0], &[1.0, 0.0]), Err(Error::HorizonExhausted { .. })));
    }

    #[test]
    fn lti_degenerates_to_plain_step() {
        let ctrl = Arc::new(
            DifferentialController::new(
                AffineMatrixFunction::constant(Mat::from_element(1, 1, 0.5), 1),
                AffineMatrixFunction::constant(Mat::from_element(1, 1, 1.0), 1),
                AffineMatrixFunction::constant(Mat::from_element(1, 1, 2.0), 1),
                AffineMatrixFunction::constant(Mat::from_element(1, 1, 0.1), 1),
                SchedulingPolytope::point(vec![0.0]).unwrap(),
            )
            .unwrap(),
        );
        let traj = Arc::new(SteadyStateTrajectory {
            x: vec![vec![0.0]; 4],
            w: vec![vec![]; 3],
            u: vec![vec![0.0]; 3],
            y: vec![vec![0.0]; 3],
        });
        let map: Arc<dyn SchedulingMap> = Arc::new(ConstantMap::new(1).unwrap());
        let mut rt = IncrementalControllerRuntime::new(ctrl, map, traj, 4).unwrap();
        let mut xc = 0.0;
        for (k, e) in [1.0, -0.5, 0.25].into_iter().enumerate() {
            let expect = 2.0 * xc + 0.1 * e;
            xc = 0.5 * xc + e;
            assert!((rt.step(k, &[e], &[0.0]).unwrap()[0] - expect).abs() < 1e-15);
        }
    }
}
