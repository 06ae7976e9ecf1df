//! The reproduction harness: runs the whole pipeline on the built-in example
//! and grades the outcome against the acceptance suite.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{close_loop, incremental_divergence_probe, min_li2_gain, spot_check, ProbeConfig};
use crate::benchmark::{benchmark_scenarios, Benchmark, BenchmarkOptions, ControllerKind, Design, Scenario};
use crate::differential::{check_jacobians, validate_embedding, CosineMap, NonlinearPlant, SchedulingMap};
use crate::error::{Error, Result};
use crate::example::{differential_embedding, ExamplePlant};
use crate::genplant::TOPOLOGY;
use crate::linalg::{spectral_radius, Mat};
use crate::lpv_model::{AffineLpvStateSpace, AffineMatrixFunction, ChannelPartition};
use crate::lti::StateSpace;
use crate::realization::{path_averaged_matrices, ControllerRuntime, SegmentQuadrature};
use crate::simulation::{
    simulate, ReferenceGenerator, TraceSummary, CONVERGENCE_TOL, CONVERGENCE_WINDOW, SINUSOID_TRACKING_TOL,
};
use crate::synthesis::{reconstruct_theta, DifferentialController};

/// Gains reported for the example.
pub const REPORTED_INCREMENTAL_GAMMA: f64 = 1.1;
pub const REPORTED_STANDARD_GAMMA: f64 = 0.80;
pub const INCREMENTAL_GAMMA_BAND: (f64, f64) = (0.8, 1.5);
pub const STANDARD_GAMMA_BAND: (f64, f64) = (0.6, 1.1);
pub const SYNTHESIS_BUDGET_SECONDS: f64 = 30.0;
pub const SIMULATION_BUDGET_SECONDS: f64 = 10.0;

const GAIN_TRANSFER_TOL: f64 = 1e-3;
const SPOT_POINTS: usize = 50;
const SPOT_TOL: f64 = -1e-9;
const RECONSTRUCTION_TOL: f64 = 1e-8;
const INTERIOR_POINTS: usize = 10;
const SEGMENTS: usize = 100;
const SEGMENT_TOL: f64 = 1e-10;
const JACOBIAN_SAMPLES: usize = 1000;
const FEEDFORWARD_TOL: f64 = 1e-9;
const LTI_SYSTEMS: usize = 5;
const LTI_REL_TOL: f64 = 0.01;
const SWEEP_POINTS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub controller: ControllerKind,
    pub summary: TraceSummary,
}

/// A pipeline stage that raised an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

/// Wall-clock times; kept out of the text and JSON forms so that repeated
/// runs produce identical reports.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub incremental_synthesis: f64,
    pub standard_synthesis: f64,
    pub simulations: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub gamma: f64,
    pub gamma_opt: f64,
    pub reported: f64,
    pub band: (f64, f64),
    pub worst_margin: f64,
    pub cond_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub topology: String,
    pub eps: f64,
    pub seed: u64,
    pub quadrature_order: usize,
    pub incremental: Option<DesignSummary>,
    pub standard: Option<DesignSummary>,
    pub scenarios: Vec<ScenarioResult>,
    pub criteria: Vec<CriterionResult>,
    pub failures: Vec<StageFailure>,
    #[serde(skip)]
    pub timings: Timings,
}

impl ReproReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty() && self.criteria.iter().all(|c| c.pass)
    }

    pub fn criterion(&self, id: usize) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "incremental LPV reproduction report");
        let _ = writeln!(out, "topology: {}", self.topology);
        let _ = writeln!(out, "eps {:e}  seed {}  quadrature order {}", self.eps, self.seed, self.quadrature_order);
        let _ = writeln!(out, "\n[gains]");
        for (name, d) in [("incremental", &self.incremental), ("standard", &self.standard)] {
            match d {
                Some(d) => {
                    let _ = writeln!(
                        out,
                        "{name:<12} gamma {:.6}  (gamma_opt {:.6}, reported {:.2}, band [{}, {}], ratio {:.3})",
                        d.gamma,
                        d.gamma_opt,
                        d.reported,
                        d.band.0,
                        d.band.1,
                        d.gamma / d.reported
                    );
                }
                None => {
                    let _ = writeln!(out, "{name:<12} not available");
                }
            }
        }
        let _ = writeln!(out, "\n[scenarios]");
        for s in &self.scenarios {
            let m = &s.summary;
            let _ = writeln!(
                out,
                "{:<9} {:<12} steps {:>4}  converged {:<5}  trailing |e| {:.3e}  limit cycle {:<5} (osc {:.3e}, mean |e| {:.3e}){}",
                s.scenario,
                m.controller,
                m.steps,
                m.converged,
                m.trailing_error,
                m.limit_cycle.detected,
                m.limit_cycle.oscillation,
                m.limit_cycle.mean_error,
                if m.diverged { "  DIVERGED" } else { "" }
            );
        }
        let _ = writeln!(out, "\n[criteria]");
        for c in &self.criteria {
            let _ = writeln!(
                out,
                "criterion {:>2} {} {}: {}",
                c.id,
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\n[stage failures]");
            for f in &self.failures {
                let _ = writeln!(out, "{}: {}", f.stage, f.error);
            }
        }
        let passed = self.criteria.iter().filter(|c| c.pass).count();
        let _ = writeln!(out, "\n{passed}/{} criteria passed", self.criteria.len());
        out
    }
}

const NAMES: [&str; 10] = [
    "incremental synthesis gain",
    "comparator synthesis gain",
    "tracking behaviour",
    "certificate transfer",
    "reconstruction identity",
    "path average",
    "differential form",
    "feedforward feasibility",
    "incremental stability and determinism",
    "LTI gain",
];

fn verdict(id: usize, outcome: Result<(bool, String)>) -> CriterionResult {
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        name: NAMES[id - 1].into(),
        pass,
        detail,
    }
}

fn skipped(id: usize, why: &str) -> CriterionResult {
    verdict(id, Ok((false, format!("not evaluated ({why})"))))
}

fn design_summary(d: &Design, reported: f64, band: (f64, f64)) -> DesignSummary {
    DesignSummary {
        gamma: d.cert.gamma,
        gamma_opt: d.cert.gamma_opt,
        reported,
        band,
        worst_margin: d.cert.worst_margin(),
        cond_r: d.cert.cond_r,
    }
}

fn gain_criterion(d: &Design, band: (f64, f64)) -> (bool, String) {
    let g = d.cert.gamma;
    let in_band = g >= band.0 && g <= band.1;
    let fast = d.seconds < SYNTHESIS_BUDGET_SECONDS;
    (
        in_band && fast,
        format!(
            "gamma {g:.6} {} [{}, {}]; synthesis {} the {SYNTHESIS_BUDGET_SECONDS} s budget",
            if in_band { "in" } else { "outside" },
            band.0,
            band.1,
            if fast { "within" } else { "over" }
        ),
    )
}

fn find<'a>(runs: &'a [ScenarioResult], name: &str, kind: ControllerKind) -> Result<&'a TraceSummary> {
    runs.iter()
        .find(|r| r.scenario == name && r.controller == kind)
        .map(|r| &r.summary)
        .ok_or_else(|| Error::Unsupported(format!("scenario {name} missing")))
}

fn tracking_criterion(runs: &[ScenarioResult], seconds: f64) -> Result<(bool, String)> {
    use ControllerKind::*;
    let inc_r1 = find(runs, "r1", Incremental)?;
    let inc_r2 = find(runs, "r2", Incremental)?;
    let inc_sin = find(runs, "sinusoid", Incremental)?;
    let std_r1 = find(runs, "r1", Standard)?;
    let std_r2 = find(runs, "r2", Standard)?;
    let std_sin = find(runs, "sinusoid", Standard)?;
    let checks = [
        ("incremental r1 converges", inc_r1.converged),
        ("incremental r2 converges", inc_r2.converged),
        ("incremental sinusoid tracked", inc_sin.converged),
        ("standard r1 converges", std_r1.converged),
        ("standard r2 limit cycle", std_r2.limit_cycle.detected),
        ("standard sinusoid fails", !std_sin.converged),
        ("runtime", seconds < SIMULATION_BUDGET_SECONDS),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = if failed.is_empty() {
        "all six behaviours reproduced within the time budget".to_string()
    } else {
        format!("failed: {}", failed.join(", "))
    };
    Ok((failed.is_empty(), detail))
}

fn transfer_criterion(b: &Benchmark, seed: u64) -> Result<(bool, String)> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, d) in [("incremental", &b.incremental), ("standard", &b.standard)] {
        let cl = close_loop(&d.model, &d.ctrl)?;
        let cert = min_li2_gain(&cl.lpv)?;
        let spot = spot_check(&cl.lpv, &cert, SPOT_POINTS, seed)?;
        let ok = cert.gamma <= d.cert.gamma + GAIN_TRANSFER_TOL && spot >= SPOT_TOL;
        pass &= ok;
        parts.push(format!(
            "{name}: closed-loop gain {:.6} vs synthesis {:.6}, spot-check min eigenvalue {spot:.2e}",
            cert.gamma, d.cert.gamma
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn reconstruction_criterion(b: &Benchmark, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for d in [&b.incremental, &b.standard] {
        let p = &d.cert.plant.polytope;
        let mut points: Vec<Vec<f64>> = p.vertices().to_vec();
        points.extend((0..INTERIOR_POINTS).map(|_| p.combine(&p.random_weights(&mut rng))));
        for rho in &points {
            worst = worst.max(reconstruct_theta(&d.cert, &d.ctrl, rho)?);
        }
    }
    Ok((worst <= RECONSTRUCTION_TOL, format!("max residual {worst:.2e} over vertices and {INTERIOR_POINTS} interior points per design")))
}

fn path_criterion(b: &Benchmark, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = CosineMap::new(2, 0)?;
    let quad = SegmentQuadrature::new(64)?;
    let mut worst = 0.0_f64;
    let lim = 2.0 * std::f64::consts::PI;
    for _ in 0..SEGMENTS {
        let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-lim..lim)).collect();
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-lim..lim)).collect();
        let closed = map
            .segment_average(&a, &x)
            .ok_or_else(|| Error::Unsupported("cosine map lacks a closed form".into()))?;
        let num = quad.average(&map, &a, &x);
        worst = worst.max((closed[0] - num[0]).abs());
    }

    // An LTI controller: the incremental design frozen at its centroid.
    let ctrl = &b.incremental.ctrl;
    let ss = ctrl.lpv.at(&ctrl.lpv.polytope.centroid())?;
    let k = ctrl.lpv.n_rho();
    let lti = DifferentialController::new(
        AffineMatrixFunction::constant(ss.a.clone(), k),
        AffineMatrixFunction::constant(ss.b.clone(), k),
        AffineMatrixFunction::constant(ss.c.clone(), k),
        AffineMatrixFunction::constant(ss.d.clone(), k),
        ctrl.lpv.polytope.clone(),
    )?;
    let n = b.gp.n_x();
    let quad = SegmentQuadrature::new(b.options.quadrature_order)?;
    let mut constant = true;
    for _ in 0..SEGMENTS {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = path_averaged_matrices(&lti, b.incremental.map.as_ref(), &x, &a, &quad)?;
        constant &= m.a == ss.a && m.b == ss.b && m.c == ss.c && m.d == ss.d;
    }
    Ok((
        worst <= SEGMENT_TOL && constant,
        format!(
            "closed form vs order-64 quadrature max error {worst:.2e} on {SEGMENTS} segments; LTI controller average {}",
            if constant { "constant" } else { "varies" }
        ),
    ))
}

fn differential_criterion(samples: usize) -> Result<(bool, String)> {
    let plant = ExamplePlant::default();
    let jac = check_jacobians(&plant, JACOBIAN_SAMPLES);
    let emb = differential_embedding()?;
    let rep = validate_embedding(&plant, emb.map.as_ref(), &emb.lpv, samples)?;
    let err = rep.a_error.max(rep.b_error).max(rep.c_error).max(rep.d_error);
    Ok((
        jac.pass && err == 0.0 && rep.in_polytope,
        format!(
            "Jacobian relative error {:.2e} on {JACOBIAN_SAMPLES} samples; embedding error {err:.1e} on {samples} samples",
            jac.max_relative_error
        ),
    ))
}

fn feedforward_criterion(b: &Benchmark) -> Result<(bool, String)> {
    let mut refs = vec![ReferenceGenerator::Constant { level: 0.0 }];
    refs.extend(benchmark_scenarios().into_iter().map(|s| s.reference));
    let mut feas = 0.0_f64;
    let mut replay = 0.0_f64;
    for r in &refs {
        let horizon = r.default_horizon();
        let bare = b.plant_steady_state(r, horizon)?;
        feas = feas.max(bare.ensure_feasible(b.plant.as_ref())?);
        let traj = Arc::new(b.steady_state(r, horizon)?);
        feas = feas.max(traj.ensure_feasible(b.gp.as_ref())?);
        let mut rt = b.incremental_runtime(b.incremental.ctrl.clone(), traj.clone())?;
        let trace = simulate(b.gp.as_ref(), &mut rt, &traj.w, &traj.x[0], horizon)?;
        for (step, xs) in trace.steps.iter().zip(&traj.x) {
            for (p, q) in step.x.iter().zip(xs) {
                replay = replay.max((p - q).abs());
            }
        }
        for (p, q) in trace.final_state.iter().zip(&traj.x[horizon]) {
            replay = replay.max((p - q).abs());
        }
    }
    Ok((
        replay <= FEEDFORWARD_TOL,
        format!("step residual {feas:.2e} (limit 1e-10); replay from x*_0 deviates {replay:.2e} for r = 0, 1, 2 and the sinusoid"),
    ))
}

fn stability_criterion(b: &Benchmark, seed: u64) -> Result<(bool, String)> {
    let scenario = Scenario::new("r2", ReferenceGenerator::Constant { level: 2.0 });
    let horizon = ProbeConfig::default().horizon;
    let traj = Arc::new(b.steady_state(&scenario.reference, horizon)?);
    let w = scenario.reference.exogenous(horizon)?;
    let factory = || -> Result<Box<dyn ControllerRuntime>> { Ok(Box::new(b.incremental_runtime(b.incremental.ctrl.clone(), traj.clone())?)) };
    let cfg = ProbeConfig {
        seed,
        ..ProbeConfig::default()
    };
    let probe = incremental_divergence_probe(b.gp.as_ref(), &w, &factory, &cfg)?;
    let first = b.run(ControllerKind::Incremental, &scenario)?.to_csv()?;
    let second = b.run(ControllerKind::Incremental, &scenario)?.to_csv()?;
    let identical = first == second;
    Ok((
        probe.all_contracted && identical,
        format!(
            "{} of {} pairs contracted (max trailing distance {:.2e}); repeated traces {}",
            probe.pairs.iter().filter(|p| p.contracted).count(),
            probe.pairs.len(),
            probe.max_trailing_distance,
            if identical { "byte-identical" } else { "differ" }
        ),
    ))
}

/// A stable system with `n` states, `m` inputs and `p` outputs whose state
/// matrix has spectral radius drawn from `[0.3, 0.9]`.
pub fn random_stable_system<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, p: usize) -> Result<StateSpace> {
    let mut draw = |r, c| Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let mut a = draw(n, n);
    let b = draw(n, m);
    let c = draw(p, n);
    let d = draw(p, m);
    let rho = spectral_radius(&a);
    let target = rng.gen_range(0.3..0.9);
    if rho > 0.0 {
        a *= target / rho;
    }
    StateSpace::new(a, b, c, d)
}

fn lti_criterion(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..LTI_SYSTEMS {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=2);
        let p = rng.gen_range(1..=2);
        let ss = random_stable_system(&mut rng, n, m, p)?;
        let sys = AffineLpvStateSpace::from_lti(&ss, ChannelPartition::single("w", m), ChannelPartition::single("z", p))?;
        let gamma = min_li2_gain(&sys)?.gamma;
        let hinf = ss.peak_gain(SWEEP_POINTS)?;
        worst = worst.max((gamma - hinf).abs() / hinf);
    }
    Ok((
        worst <= LTI_REL_TOL,
        format!("max relative gap to the frequency-sweep norm {worst:.2e} on {LTI_SYSTEMS} systems"),
    ))
}

fn run_scenarios(b: &Benchmark) -> (Vec<ScenarioResult>, Vec<StageFailure>) {
    let jobs: Vec<(Scenario, ControllerKind)> = benchmark_scenarios()
        .into_iter()
        .flat_map(|s| [(s.clone(), ControllerKind::Incremental), (s, ControllerKind::Standard)])
        .collect();
    let outcomes: Vec<Result<TraceSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(s, k)| {
                scope.spawn(move || {
                    let tol = if s.reference.is_constant() { CONVERGENCE_TOL } else { SINUSOID_TRACKING_TOL };
                    b.run(*k, s).map(|t| {
                        let mut m = t.summary();
                        m.converged = t.converged(CONVERGENCE_WINDOW, tol);
                        m
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Unsupported("simulation thread panicked".into()))))
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for ((s, k), out) in jobs.into_iter().zip(outcomes) {
        match out {
            Ok(summary) => runs.push(ScenarioResult {
                scenario: s.name,
                controller: k,
                summary,
            }),
            Err(e) => failures.push(StageFailure {
                stage: format!("simulation {} ({k:?})", s.name),
                error: e.to_string(),
            }),
        }
    }
    (runs, failures)
}

/// Runs synthesis, simulation and every acceptance check. A failing stage
/// is recorded and the dependent criteria are marked as not evaluated.
pub fn run_repro(options: &BenchmarkOptions, seed: u64) -> ReproReport {
    let start = Instant::now();
    let mut report = ReproReport {
        topology: TOPOLOGY.into(),
        eps: options.weights.eps,
        seed,
        quadrature_order: options.quadrature_order,
        incremental: None,
        standard: None,
        scenarios: Vec::new(),
        criteria: Vec::new(),
        failures: Vec::new(),
        timings: Timings::default(),
    };
    let bench = match Benchmark::build(options.clone()) {
        Ok(b) => b,
        Err(e) => {
            report.failures.push(StageFailure {
                stage: "synthesis".into(),
                error: e.to_string(),
            });
            for id in 1..=6 {
                report.criteria.push(skipped(id, "synthesis failed"));
            }
            report.criteria.push(verdict(7, differential_criterion(options.embedding_samples)));
            report.criteria.push(skipped(8, "synthesis failed"));
            report.criteria.push(skipped(9, "synthesis failed"));
            report.criteria.push(verdict(10, lti_criterion(seed)));
            report.timings.total = start.elapsed().as_secs_f64();
            return report;
        }
    };
    report.timings.incremental_synthesis = bench.incremental.seconds;
    report.timings.standard_synthesis = bench.standard.seconds;
    report.incremental = Some(design_summary(&bench.incremental, REPORTED_INCREMENTAL_GAMMA, INCREMENTAL_GAMMA_BAND));
    report.standard = Some(design_summary(&bench.standard, REPORTED_STANDARD_GAMMA, STANDARD_GAMMA_BAND));

    let sim_start = Instant::now();
    let (runs, failures) = run_scenarios(&bench);
    report.timings.simulations = sim_start.elapsed().as_secs_f64();
    report.scenarios = runs;
    report.failures.extend(failures);

    report.criteria.push(verdict(1, Ok(gain_criterion(&bench.incremental, INCREMENTAL_GAMMA_BAND))));
    report.criteria.push(verdict(2, Ok(gain_criterion(&bench.standard, STANDARD_GAMMA_BAND))));
    report.criteria.push(verdict(3, tracking_criterion(&report.scenarios, report.timings.simulations)));
    report.criteria.push(verdict(4, transfer_criterion(&bench, seed)));
    report.criteria.push(verdict(5, reconstruction_criterion(&bench, seed)));
    report.criteria.push(verdict(6, path_criterion(&bench, seed)));
    report.criteria.push(verdict(7, differential_criterion(options.embedding_samples)));
    report.criteria.push(verdict(8, feedforward_criterion(&bench)));
    report.criteria.push(verdict(9, stability_criterion(&bench, seed)));
    report.criteria.push(verdict(10, lti_criterion(seed)));
    report.timings.total = start.elapsed().as_secs_f64();
    report
}
