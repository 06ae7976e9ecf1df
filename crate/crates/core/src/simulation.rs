//! Closed-loop simulation of a plant against a controller runtime.
//!
//! The plant exposes inputs `(w, u)` and outputs `(z, y)`; the loop is
//! `u_c = y`, `u = y_c`. For the tracking configuration `w` is the
//! reference and `y` the tracking error `r − y_p`.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::differential::{NonlinearPlant, SchedulingMap};
use crate::error::{Error, Result};
use crate::linalg::Vector;
pub use crate::realization::{ControllerRuntime, RuntimeDiagnostics};
use crate::realization::SteadyStateTrajectory;
use crate::synthesis::DifferentialController;

pub const DEFAULT_CONSTANT_HORIZON: usize = 400;
pub const DEFAULT_SINUSOID_HORIZON: usize = 800;
/// States beyond this magnitude count as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e12;

pub const CONVERGENCE_WINDOW: usize = 50;
pub const CONVERGENCE_TOL: f64 = 1e-3;
pub const SINUSOID_TRACKING_TOL: f64 = 1e-2;
/// Fraction of the horizon inspected by the limit-cycle detector.
pub const LIMIT_CYCLE_TAIL: f64 = 0.25;
pub const LIMIT_CYCLE_OSCILLATION: f64 = 0.05;
pub const LIMIT_CYCLE_MEAN_ERROR: f64 = 0.01;

/// Scalar reference signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceGenerator {
    Constant {
        level: f64,
    },
    /// `amplitude·sin(frequency·k + phase) + offset`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        offset: f64,
        #[serde(default)]
        phase: f64,
    },
    Sequence {
        values: Vec<f64>,
    },
}

impl ReferenceGenerator {
    /// `r_k = sin(πk/8) + 2.5`.
    pub fn benchmark_sinusoid() -> Self {
        ReferenceGenerator::Sinusoid {
            amplitude: 1.0,
            frequency: std::f64::consts::PI / 8.0,
            offset: 2.5,
            phase: 0.0,
        }
    }

    pub fn default_horizon(&self) -> usize {
        match self {
            ReferenceGenerator::Constant { .. } => DEFAULT_CONSTANT_HORIZON,
            ReferenceGenerator::Sinusoid { .. } => DEFAULT_SINUSOID_HORIZON,
            ReferenceGenerator::Sequence { values } => values.len().saturating_sub(2),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ReferenceGenerator::Constant { .. })
    }

    /// `r_0 .. r_{len−1}`.
    pub fn generate(&self, len: usize) -> Result<Vec<f64>> {
        match self {
            ReferenceGenerator::Constant { level } => Ok(vec![*level; len]),
            ReferenceGenerator::Sinusoid {
                amplitude,
                frequency,
                offset,
                phase,
            } => Ok((0..len)
                .map(|k| amplitude * (frequency * k as f64 + phase).sin() + offset)
                .collect()),
            ReferenceGenerator::Sequence { values } => {
                if values.len() < len {
                    return Err(Error::HorizonTooShort {
                        needed: len,
                        got: values.len(),
                    });
                }
                Ok(values[..len].to_vec())
            }
        }
    }

    /// The reference as a one-channel exogenous input.
    pub fn exogenous(&self, len: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.generate(len)?.into_iter().map(|r| vec![r]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub k: usize,
    pub x: Vec<f64>,
    pub xc: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub controller: String,
    pub gamma: Option<f64>,
    pub topology_hash: Option<String>,
    pub seed: Option<u64>,
    pub horizon: usize,
    pub diverged: bool,
    pub diagnostics: RuntimeDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub steps: Vec<SimStep>,
    /// State after the last recorded step.
    pub final_state: Vec<f64>,
    pub meta: SimMetadata,
}

/// Stable hash of a topology description.
pub fn topology_hash(topology: &str) -> String {
    let mut h = DefaultHasher::new();
    topology.hash(&mut h);
    format!("{:016x}", h.finish())
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Steps the loop `u_c = y`, `u = y_c` for `horizon` steps from `x0` with
/// exogenous input `w`. A divergent loop truncates the trace and sets
/// `meta.diverged`.
pub fn simulate(
    plant: &dyn NonlinearPlant,
    ctrl: &mut dyn ControllerRuntime,
    w: &[Vec<f64>],
    x0: &[f64],
    horizon: usize,
) -> Result<SimTrace> {
    let (nw, nu, nz, ny) = (plant.n_w(), plant.n_u(), plant.n_z(), plant.n_y());
    if horizon == 0 {
        return Err(Error::Unsupported("horizon must be at least 1".into()));
    }
    if x0.len() != plant.n_x() {
        return Err(Error::dims("initial state", plant.n_x(), x0.len()));
    }
    if ctrl.n_in() != ny || ctrl.n_out() != nu {
        return Err(Error::dims(
            "controller (inputs, outputs)",
            format!("({ny}, {nu})"),
            format!("({}, {})", ctrl.n_in(), ctrl.n_out()),
        ));
    }
    if w.len() < horizon {
        return Err(Error::HorizonTooShort {
            needed: horizon,
            got: w.len(),
        });
    }
    if let Some(bad) = w.iter().find(|v| v.len() != nw) {
        return Err(Error::dims("exogenous input", nw, bad.len()));
    }
    let zero_u = vec![0.0; nu];
    let mut x = x0.to_vec();
    let mut steps = Vec::with_capacity(horizon);
    let mut diverged = false;
    for (k, wk) in w.iter().enumerate().take(horizon) {
        let y = plant.output(&x, &concat(wk, &zero_u))[nz..].to_vec();
        let xc = ctrl.state();
        let u = ctrl.step(k, &y, &x)?;
        let v = concat(wk, &u);
        let out = plant.output(&x, &v);
        if out[nz..].iter().zip(&y).any(|(a, b)| a != b) {
            return Err(Error::AlgebraicLoop);
        }
        let next = plant.step(&x, &v);
        steps.push(SimStep {
            k,
            x: std::mem::replace(&mut x, next),
            xc,
            w: wk.clone(),
            u,
            y,
            z: out[..nz].to_vec(),
        });
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            diverged = true;
            break;
        }
    }
    Ok(SimTrace {
        meta: SimMetadata {
            controller: ctrl.kind().to_string(),
            gamma: None,
            topology_hash: None,
            seed: None,
            horizon,
            diverged,
            diagnostics: ctrl.diagnostics(),
        },
        steps,
        final_state: x,
    })
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// First measured channel. In the tracking configuration this is the
    /// tracking error `r − y_p`.
    pub fn tracking_error(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.y.first().copied().unwrap_or(0.0)).collect()
    }

    /// Largest violation of the plant equations when the trace is replayed.
    pub fn replay_residual(&self, plant: &dyn NonlinearPlant) -> f64 {
        let nz = plant.n_z();
        let mut worst = 0.0_f64;
        for (i, s) in self.steps.iter().enumerate() {
            let v = concat(&s.w, &s.u);
            let next = plant.step(&s.x, &v);
            let target = self.steps.get(i + 1).map_or(&self.final_state, |n| &n.x);
            let out = plant.output(&s.x, &v);
            let r = next
                .iter()
                .zip(target)
                .chain(out[..nz].iter().zip(&s.z))
                .chain(out[nz..].iter().zip(&s.y))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(r);
        }
        worst
    }

    /// CSV with header `k, w.., x.., xc.., u.., y.., z..`, values in
    /// 17 significant digits.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let first = self.steps.first();
        let width = |f: fn(&SimStep) -> &Vec<f64>| first.map_or(0, |s| f(s).len());
        let groups: [(&str, fn(&SimStep) -> &Vec<f64>); 6] = [
            ("w", |s| &s.w),
            ("x", |s| &s.x),
            ("xc", |s| &s.xc),
            ("u", |s| &s.u),
            ("y", |s| &s.y),
            ("z", |s| &s.z),
        ];
        let mut header = vec!["k".to_string()];
        for (name, f) in groups {
            header.extend((1..=width(f)).map(|i| format!("{name}{i}")));
        }
        wtr.write_record(&header)?;
        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            for (_, f) in groups {
                row.extend(f(s).iter().map(|v| format!("{v:.16e}")));
            }
            wtr.write_record(&row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn metadata_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }

    /// Trailing `window` steps all have tracking error within `tol`.
    pub fn converged(&self, window: usize, tol: f64) -> bool {
        let e = self.tracking_error();
        !self.meta.diverged
            && e.len() >= window
            && e[e.len() - window..].iter().all(|v| v.abs() <= tol)
    }

    pub fn limit_cycle(&self) -> LimitCycleReport {
        let e = self.tracking_error();
        let tail = ((e.len() as f64) * LIMIT_CYCLE_TAIL).ceil() as usize;
        let tail = &e[e.len() - tail.min(e.len())..];
        if tail.is_empty() {
            return LimitCycleReport::default();
        }
        let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let oscillation = max - min;
        let mean_error = tail.iter().map(|v| v.abs()).sum::<f64>() / tail.len() as f64;
        LimitCycleReport {
            oscillation,
            mean_error,
            detected: oscillation > LIMIT_CYCLE_OSCILLATION && mean_error > LIMIT_CYCLE_MEAN_ERROR,
        }
    }

    pub fn summary(&self) -> TraceSummary {
        let e = self.tracking_error();
        let window = CONVERGENCE_WINDOW.min(e.len());
        TraceSummary {
            controller: self.meta.controller.clone(),
            steps: self.len(),
            diverged: self.meta.diverged,
            converged: self.converged(CONVERGENCE_WINDOW, CONVERGENCE_TOL),
            trailing_error: e[e.len() - window..].iter().fold(0.0, |m, v| m.max(v.abs())),
            limit_cycle: self.limit_cycle(),
        }
    }
}

/// Oscillation and mean error of the tracking error over the trailing
/// quarter of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub oscillation: f64,
    pub mean_error: f64,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub controller: String,
    pub steps: usize,
    pub diverged: bool,
    pub converged: bool,
    /// Largest `|e|` over the trailing convergence window.
    pub trailing_error: f64,
    pub limit_cycle: LimitCycleReport,
}

/// A conventional LPV controller scheduled on `ρ_s = ψ_s(x_k)`, optionally
/// with an additive feedforward `u*_k`.
pub struct StandardLpvRuntime {
    ctrl: Arc<DifferentialController>,
    map: Arc<dyn SchedulingMap>,
    feedforward: Option<Arc<SteadyStateTrajectory>>,
    xc: Vector,
    diag: RuntimeDiagnostics,
}

/// Builds the runtime of a standard LPV controller.
pub fn standard_lpv_runtime(
    ctrl: Arc<DifferentialController>,
    map: Arc<dyn SchedulingMap>,
    feedforward: Option<Arc<SteadyStateTrajectory>>,
) -> Result<StandardLpvRuntime> {
    if !ctrl.lpv.is_constant() && map.dim() != ctrl.lpv.n_rho() {
        return Err(Error::dims("scheduling map vs controller", ctrl.lpv.n_rho(), map.dim()));
    }
    if let Some(ff) = &feedforward {
        if ff.horizon() > 0 && ff.n_u() != ctrl.n_out() {
            return Err(Error::dims("feedforward width", ctrl.n_out(), ff.n_u()));
        }
    }
    let n = ctrl.n_x();
    Ok(StandardLpvRuntime {
        ctrl,
        map,
        feedforward,
        xc: Vector::zeros(n),
        diag: RuntimeDiagnostics::default(),
    })
}

impl StandardLpvRuntime {
    /// `ψ_s(x)`, clamped into the controller's polytope.
    pub fn scheduling(&mut self, x: &[f64]) -> Vec<f64> {
        let rho = self.map.eval(x);
        let polytope = &self.ctrl.lpv.polytope;
        match polytope.contains(&rho, 0.0) {
            Ok(true) => rho,
            _ => {
                self.diag.clamped += 1;
                polytope.clamp(&rho).unwrap_or_else(|| polytope.centroid())
            }
        }
    }
}

impl ControllerRuntime for StandardLpvRuntime {
    fn kind(&self) -> &'static str {
        if self.feedforward.is_some() {
            "standard+feedforward"
        } else {
            "standard"
        }
    }
    fn n_in(&self) -> usize {
        self.ctrl.n_in()
    }
    fn n_out(&self) -> usize {
        self.ctrl.n_out()
    }
    fn state(&self) -> Vec<f64> {
        self.xc.iter().copied().collect()
    }
    fn reset(&mut self) {
        self.xc = Vector::zeros(self.ctrl.n_x());
        self.diag = RuntimeDiagnostics::default();
    }
    fn step(&mut self, k: usize, u_c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if u_c.len() != self.ctrl.n_in() {
            return Err(Error::dims("controller input", self.ctrl.n_in(), u_c.len()));
        }
        let ff = match &self.feedforward {
            Some(t) if k >= t.horizon() => {
                return Err(Error::HorizonExhausted {
                    step: k,
                    horizon: t.horizon(),
                })
            }
            Some(t) => Vector::from_column_slice(&t.u[k]),
            None => Vector::zeros(self.ctrl.n_out()),
        };
        let rho = self.scheduling(x);
        let ss = if self.ctrl.lpv.is_constant() {
            self.ctrl.lpv.at(&vec![0.0; self.ctrl.lpv.n_rho()])?
        } else {
            self.ctrl.lpv.at(&rho)?
        };
        let e = Vector::from_column_slice(u_c);
        let u = &ss.c * &self.xc + &ss.d * &e + ff;
        self.xc = &ss.a * &self.xc + &ss.b * e;
        Ok(u.iter().copied().collect())
    }
    fn diagnostics(&self) -> RuntimeDiagnostics {
        self.diag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::differential::{sinc, SincMap, SINC_MIN};
    use crate::lpv_model::AffineMatrixFunction;
    use crate::polytope::SchedulingPolytope;
    use crate::linalg::Mat;

    #[test]
    fn sinusoid_matches_definition() {
        let r = ReferenceGenerator::benchmark_sinusoid().generate(17).unwrap();
        for (k, v) in r.iter().enumerate() {
            assert_eq!(*v, (std::f64::consts::PI / 8.0 * k as f64).sin() + 2.5);
        }
        assert!((r[4] - 3.5).abs() < 1e-15);
        let short = ReferenceGenerator::Sequence { values: vec![1.0; 3] };
        assert!(short.generate(4).is_err());
    }

    #[test]
    fn sinc_scheduling_values() {
        let m = SincMap::new(2, 0).unwrap();
        assert_eq!(m.eval(&[0.0, 0.0]), vec![1.0]);
        assert!(m.eval(&[std::f64::consts::PI, 0.0])[0].abs() < 1e-16);
        let scan = (1..200_000).map(|i| sinc(i as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
        assert!((scan - SINC_MIN).abs() < 1e-9 && scan > -0.22);
    }

    #[test]
    fn clamps_out_of_polytope_scheduling() {
        let ctrl = DifferentialController::new(
            AffineMatrixFunction::zeros(1, 1, 1),
            AffineMatrixFunction::zeros(1, 1, 1),
            AffineMatrixFunction::zeros(1, 1, 1),
            AffineMatrixFunction::new(Mat::zeros(1, 1), vec![Mat::from_element(1, 1, 1.0)]).unwrap(),
            SchedulingPolytope::interval(0.0, 0.5).unwrap(),
        )
        .unwrap();
        let map: Arc<dyn SchedulingMap> = Arc::new(SincMap::new(1, 0).unwrap());
        let mut rt = standard_lpv_runtime(Arc::new(ctrl), map, None).unwrap();
        // sinc(0) = 1 is clamped to 0.5.
        assert_eq!(rt.step(0, &[2.0], &[0.0]).unwrap(), vec![1.0]);
        assert_eq!(rt.diagnostics().clamped, 1);
    }
}
