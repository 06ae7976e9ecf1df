//! End-to-end pipeline on the built-in example: both designs, the tracking
//! scenarios and their closed-loop runs.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::differential::{NonlinearPlant, SchedulingMap, SincMap};
use crate::error::{Error, Result};
use crate::example::{default_weights, incremental_generalized_plant, standard_synthesis_model, ExamplePlant};
use crate::genplant::{differential_generalized_plant, GeneralizedPlant, LiftedMap, WeightingScheme};
use crate::lpv_model::AffineLpvStateSpace;
use crate::realization::{
    lift_to_generalized, steady_state_for_constant_reference, steady_state_for_reference_sequence,
    IncrementalControllerRuntime, SteadyStateTrajectory, DEFAULT_QUADRATURE_ORDER,
};
use crate::simulation::{
    simulate, standard_lpv_runtime, topology_hash, ControllerRuntime, ReferenceGenerator, SimTrace, StandardLpvRuntime,
};
use crate::synthesis::{synthesize, DifferentialController, SynthesisCertificate, SynthesisOptions};

/// Samples used to validate the embedding of the generalized plant.
pub const EMBEDDING_SAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkOptions {
    pub weights: WeightingScheme,
    pub synthesis: SynthesisOptions,
    pub quadrature_order: usize,
    pub embedding_samples: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            weights: default_weights(),
            synthesis: SynthesisOptions::default(),
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            embedding_samples: EMBEDDING_SAMPLES,
        }
    }
}

/// A synthesized controller with its scheduling map on the generalized
/// state.
#[derive(Clone)]
pub struct Design {
    pub model: AffineLpvStateSpace,
    pub cert: SynthesisCertificate,
    pub ctrl: Arc<DifferentialController>,
    pub map: Arc<dyn SchedulingMap>,
    /// Wall-clock synthesis time in seconds.
    pub seconds: f64,
}

fn design(model: AffineLpvStateSpace, map: Arc<dyn SchedulingMap>, opts: &SynthesisOptions) -> Result<Design> {
    let start = Instant::now();
    let (cert, ctrl) = synthesize(&model, opts)?;
    Ok(Design {
        model,
        cert,
        ctrl: Arc::new(ctrl),
        map,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Incremental,
    Standard,
}

/// One tracking experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub reference: ReferenceGenerator,
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Initial plant state; weight filters start at rest.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Add `u*` to the standard controller's output. Defaults to on for
    /// non-constant references.
    #[serde(default)]
    pub standard_feedforward: Option<bool>,
}

impl Scenario {
    pub fn new(name: &str, reference: ReferenceGenerator) -> Self {
        Scenario {
            name: name.into(),
            reference,
            horizon: None,
            x0: None,
            standard_feedforward: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| self.reference.default_horizon())
    }

    pub fn feedforward(&self) -> bool {
        self.standard_feedforward
            .unwrap_or(!self.reference.is_constant())
    }
}

/// `r = 1`, `r = 2` and the sinusoid.
pub fn benchmark_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::new("r1", ReferenceGenerator::Constant { level: 1.0 }),
        Scenario::new("r2", ReferenceGenerator::Constant { level: 2.0 }),
        Scenario::new("sinusoid", ReferenceGenerator::benchmark_sinusoid()),
    ]
}

/// The example plant, its generalized plant and the standard scheduling
/// map: everything needed to run a controller without synthesizing one.
pub struct Testbed {
    pub options: BenchmarkOptions,
    pub plant: Arc<ExamplePlant>,
    pub gp: Arc<GeneralizedPlant>,
    pub standard_map: Arc<dyn SchedulingMap>,
}

impl Testbed {
    pub fn new(options: BenchmarkOptions) -> Result<Self> {
        let gp = Arc::new(incremental_generalized_plant(&options.weights, options.embedding_samples)?);
        let sinc: Arc<dyn SchedulingMap> = Arc::new(SincMap::new(gp.n_plant_states(), 0)?);
        let standard_map: Arc<dyn SchedulingMap> = Arc::new(LiftedMap::new(sinc, gp.n_x(), 10.0));
        Ok(Testbed {
            options,
            plant: Arc::new(ExamplePlant::default()),
            gp,
            standard_map,
        })
    }

    /// Synthesis model for a controller kind.
    pub fn synthesis_model(&self, kind: ControllerKind) -> Result<AffineLpvStateSpace> {
        match kind {
            ControllerKind::Incremental => Ok(differential_generalized_plant(&self.gp)),
            ControllerKind::Standard => standard_synthesis_model(&self.options.weights),
        }
    }

    pub fn map(&self, kind: ControllerKind) -> Arc<dyn SchedulingMap> {
        match kind {
            ControllerKind::Incremental => self.gp.map().clone(),
            ControllerKind::Standard => self.standard_map.clone(),
        }
    }

    pub fn design(&self, kind: ControllerKind) -> Result<Design> {
        design(self.synthesis_model(kind)?, self.map(kind), &self.options.synthesis)
    }

    /// Steady-state trajectory of the bare plant for a reference.
    pub fn plant_steady_state(&self, reference: &ReferenceGenerator, horizon: usize) -> Result<SteadyStateTrajectory> {
        match reference {
            ReferenceGenerator::Constant { level } => {
                steady_state_for_constant_reference(self.plant.as_ref(), &[*level], horizon, None)
            }
            _ => steady_state_for_reference_sequence(&self.plant, &reference.generate(horizon + 2)?, horizon),
        }
    }

    /// The same trajectory in generalized-plant coordinates.
    pub fn steady_state(&self, reference: &ReferenceGenerator, horizon: usize) -> Result<SteadyStateTrajectory> {
        lift_to_generalized(&self.gp, &self.plant_steady_state(reference, horizon)?)
    }

    pub fn incremental_runtime(
        &self,
        ctrl: Arc<DifferentialController>,
        traj: Arc<SteadyStateTrajectory>,
    ) -> Result<IncrementalControllerRuntime> {
        IncrementalControllerRuntime::new(ctrl, self.gp.map().clone(), traj, self.options.quadrature_order)
    }

    pub fn standard_runtime(
        &self,
        ctrl: Arc<DifferentialController>,
        feedforward: Option<Arc<SteadyStateTrajectory>>,
    ) -> Result<StandardLpvRuntime> {
        standard_lpv_runtime(ctrl, self.standard_map.clone(), feedforward)
    }

    /// Runtime of `ctrl` for a scenario whose lifted steady state is `traj`.
    pub fn runtime(
        &self,
        kind: ControllerKind,
        ctrl: Arc<DifferentialController>,
        scenario: &Scenario,
        traj: Arc<SteadyStateTrajectory>,
    ) -> Result<Box<dyn ControllerRuntime>> {
        Ok(match kind {
            ControllerKind::Incremental => Box::new(self.incremental_runtime(ctrl, traj)?),
            ControllerKind::Standard => {
                Box::new(self.standard_runtime(ctrl, scenario.feedforward().then_some(traj))?)
            }
        })
    }

    /// Generalized initial state from a plant state.
    pub fn initial_state(&self, x0: Option<&[f64]>) -> Result<Vec<f64>> {
        let np = self.gp.n_plant_states();
        let mut x = vec![0.0; self.gp.n_x()];
        if let Some(x0) = x0 {
            if x0.len() != np {
                return Err(Error::dims("initial plant state", np, x0.len()));
            }
            x[..np].copy_from_slice(x0);
        }
        Ok(x)
    }

    pub fn run(&self, kind: ControllerKind, ctrl: Arc<DifferentialController>, scenario: &Scenario) -> Result<SimTrace> {
        let horizon = scenario.horizon();
        let traj = Arc::new(self.steady_state(&scenario.reference, horizon)?);
        let w = scenario.reference.exogenous(horizon)?;
        let x0 = self.initial_state(scenario.x0.as_deref())?;
        let mut rt = self.runtime(kind, ctrl, scenario, traj)?;
        let mut trace = simulate(self.gp.as_ref(), rt.as_mut(), &w, &x0, horizon)?;
        trace.meta.topology_hash = Some(topology_hash(&self.gp.meta.topology));
        Ok(trace)
    }
}

/// A testbed together with both synthesized designs.
pub struct Benchmark {
    pub testbed: Testbed,
    pub incremental: Design,
    pub standard: Design,
}

impl std::ops::Deref for Benchmark {
    type Target = Testbed;
    fn deref(&self) -> &Testbed {
        &self.testbed
    }
}

impl Benchmark {
    pub fn build(options: BenchmarkOptions) -> Result<Self> {
        let testbed = Testbed::new(options)?;
        let incremental = testbed.design(ControllerKind::Incremental)?;
        let standard = testbed.design(ControllerKind::Standard)?;
        Ok(Benchmark {
            testbed,
            incremental,
            standard,
        })
    }

    pub fn design(&self, kind: ControllerKind) -> &Design {
        match kind {
            ControllerKind::Incremental => &self.incremental,
            ControllerKind::Standard => &self.standard,
        }
    }

    pub fn run(&self, kind: ControllerKind, scenario: &Scenario) -> Result<SimTrace> {
        let d = self.design(kind);
        let mut trace = self.testbed.run(kind, d.ctrl.clone(), scenario)?;
        trace.meta.gamma = Some(d.cert.gamma);
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{CONVERGENCE_TOL, CONVERGENCE_WINDOW, SINUSOID_TRACKING_TOL};

    #[test]
    fn tracking_behaviour() {
        let b = Benchmark::build(BenchmarkOptions::default()).unwrap();
        for s in benchmark_scenarios() {
            let inc = b.run(ControllerKind::Incremental, &s).unwrap();
            let std = b.run(ControllerKind::Standard, &s).unwrap();
            let tol = if s.reference.is_constant() { CONVERGENCE_TOL } else { SINUSOID_TRACKING_TOL };
            println!(
                "{} inc {:?} | std {:?}",
                s.name,
                inc.summary(),
                std.summary()
            );
            assert!(inc.converged(CONVERGENCE_WINDOW, tol), "{}", s.name);
        }
    }
}
