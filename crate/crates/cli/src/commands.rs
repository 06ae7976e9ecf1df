//! The pipeline commands. Each returns the text it wants printed and the
//! files it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use incremental_lpv::analysis::{close_loop, incremental_divergence_probe, min_li2_gain, spot_check, ProbeReport};
use incremental_lpv::benchmark::{ControllerKind, Scenario, Testbed};
use incremental_lpv::differential::{ConstantMap, LtiPlant};
use incremental_lpv::error::Error;
use incremental_lpv::lpv_model::AffineLpvStateSpace;
use incremental_lpv::realization::ControllerRuntime;
use incremental_lpv::repro::{run_repro, ReproReport};
use incremental_lpv::simulation::{
    simulate as run_loop, standard_lpv_runtime, ReferenceGenerator, SimMetadata, SimTrace, TraceSummary,
    CONVERGENCE_TOL, CONVERGENCE_WINDOW, SINUSOID_TRACKING_TOL,
};
use incremental_lpv::synthesis::{synthesize, DifferentialController, SynthesisCertificate};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PlantConfig};
use crate::output::OutDir;
use crate::CliError;

/// Number of interior scheduling points in the analysis spot check.
const SPOT_POINTS: usize = 50;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quadrature_order: Option<usize>,
    pub eps_pole: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.probe.seed = seed;
        }
        if let Some(q) = self.quadrature_order {
            cfg.quadrature_order = q;
        }
        if let Some(eps) = self.eps_pole {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(CliError::Schema(format!("--eps-pole must lie in (0, 1), got {eps}")));
            }
            cfg.weights.eps = eps;
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Incremental,
    Standard,
    /// Controller for an inline plant.
    Custom,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Incremental => "incremental",
            Role::Standard => "standard",
            Role::Custom => "custom",
        }
    }

    fn kind(self) -> Option<ControllerKind> {
        match self {
            Role::Incremental => Some(ControllerKind::Incremental),
            Role::Standard => Some(ControllerKind::Standard),
            Role::Custom => None,
        }
    }

    fn roles_for(cfg: &ExperimentConfig) -> Vec<Role> {
        match cfg.plant {
            PlantConfig::Example {} => vec![Role::Incremental, Role::Standard],
            _ => vec![Role::Custom],
        }
    }
}

/// What `synth` writes and `analyze`/`simulate` read.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub role: Role,
    pub gamma: f64,
    pub gamma_opt: f64,
    pub controller: DifferentialController,
}

impl ControllerFile {
    pub fn file_name(role: Role) -> String {
        format!("{}.controller.json", role.name())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommandOutput {
    pub text: String,
    pub files: Vec<PathBuf>,
}

fn testbed(cfg: &ExperimentConfig) -> Result<Testbed, CliError> {
    Ok(Testbed::new(cfg.benchmark_options()?)?)
}

/// Synthesis model of a role.
fn model_for(cfg: &ExperimentConfig, bed: Option<&Testbed>, role: Role) -> Result<AffineLpvStateSpace, CliError> {
    match (role.kind(), bed) {
        (Some(kind), Some(bed)) => {
            let mut model = bed.synthesis_model(kind)?;
            if let (ControllerKind::Incremental, Some(p)) = (kind, &cfg.polytope) {
                model.polytope = p.clone();
            }
            Ok(model)
        }
        (None, _) => cfg.custom_model(),
        (Some(_), None) => Err(CliError::Schema("the example controllers need the example plant".into())),
    }
}

fn controller_paths(cfg: &ExperimentConfig, given: &[PathBuf]) -> Vec<PathBuf> {
    if !given.is_empty() {
        return given.to_vec();
    }
    Role::roles_for(cfg)
        .into_iter()
        .map(|r| cfg.output_dir.join(ControllerFile::file_name(r)))
        .collect()
}

fn load_controllers(cfg: &ExperimentConfig, given: &[PathBuf]) -> Result<Vec<ControllerFile>, CliError> {
    let files = controller_paths(cfg, given)
        .iter()
        .map(|p| ControllerFile::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let expected = Role::roles_for(cfg);
    if let Some(bad) = files.iter().find(|f| !expected.contains(&f.role)) {
        return Err(CliError::Schema(format!(
            "a {} controller does not fit the configured plant",
            bad.role.name()
        )));
    }
    Ok(files)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_certificate(out: &OutDir, role: Role, cert: &SynthesisCertificate, ctrl: &DifferentialController, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let name = role.name();
    files.push(out.write(&format!("{name}.certificate.txt"), &cert.report())?);
    let json = serde_json::to_string_pretty(cert).map_err(Error::from)?;
    files.push(out.write(&format!("{name}.certificate.json"), &json)?);
    let file = ControllerFile {
        role,
        gamma: cert.gamma,
        gamma_opt: cert.gamma_opt,
        controller: ctrl.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(Error::from)?;
    files.push(out.write(&ControllerFile::file_name(role), &json)?);
    Ok(())
}

/// Synthesizes every controller of the configured plant and writes its
/// certificate report, certificate data and controller file.
pub fn synth(cfg: &ExperimentConfig) -> Result<CommandOutput, CliError> {
    let out = OutDir::create(&cfg.output_dir)?;
    let bed = match cfg.plant {
        PlantConfig::Example {} => Some(testbed(cfg)?),
        _ => None,
    };
    let roles = Role::roles_for(cfg);
    let models = roles
        .iter()
        .map(|r| model_for(cfg, bed.as_ref(), *r))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = models
            .iter()
            .map(|m| s.spawn(move || synthesize(m, &cfg.synthesis)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("synthesis thread")).collect()
    });
    let mut output = CommandOutput::default();
    for (role, result) in roles.into_iter().zip(results) {
        let (cert, ctrl) = result?;
        write_certificate(&out, role, &cert, &ctrl, &mut output.files)?;
        let _ = writeln!(
            output.text,
            "{:<12} gamma {:.6}  gamma_opt {:.6}  worst margin {:.3e}  cond(R) {:.3e}",
            role.name(),
            cert.gamma,
            cert.gamma_opt,
            cert.worst_margin(),
            cert.cond_r
        );
    }
    output.files.push(out.write("synth-summary.txt", &output.text)?);
    Ok(output)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub reference: ReferenceGenerator,
    pub pairs: usize,
    pub contracted: usize,
    pub all_contracted: bool,
    pub max_trailing_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub role: Role,
    pub synthesis_gamma: f64,
    /// `None` when no constant storage certifies a finite gain.
    pub closed_loop_gamma: Option<f64>,
    pub worst_margin: Option<f64>,
    pub spot_check_min_eigenvalue: Option<f64>,
    pub probe: Option<ProbeSummary>,
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "controller {}", self.role.name());
        let _ = writeln!(out, "synthesis gamma {:.6}", self.synthesis_gamma);
        match self.closed_loop_gamma {
            Some(g) => {
                let _ = writeln!(out, "closed-loop gain bound {g:.6}");
            }
            None => {
                let _ = writeln!(out, "closed-loop gain bound: none (analysis LMI infeasible)");
            }
        }
        if let Some(m) = self.worst_margin {
            let _ = writeln!(out, "worst vertex margin {m:.3e}");
        }
        if let Some(m) = self.spot_check_min_eigenvalue {
            let _ = writeln!(out, "spot check ({SPOT_POINTS} interior points) min eigenvalue {m:.3e}");
        }
        match &self.probe {
            Some(p) => {
                let _ = writeln!(
                    out,
                    "divergence probe: {}/{} pairs contracted, max trailing distance {:.3e}",
                    p.contracted, p.pairs, p.max_trailing_distance
                );
            }
            None => {
                let _ = writeln!(out, "divergence probe: not applicable to this plant");
            }
        }
        out
    }
}

fn probe_scenario(cfg: &ExperimentConfig) -> Scenario {
    cfg.scenarios
        .iter()
        .rev()
        .find(|s| s.reference.is_constant())
        .cloned()
        .unwrap_or_else(|| Scenario::new("r2", ReferenceGenerator::Constant { level: 2.0 }))
}

fn run_probe(cfg: &ExperimentConfig, bed: &Testbed, kind: ControllerKind, ctrl: Arc<DifferentialController>) -> Result<(ProbeSummary, ProbeReport), CliError> {
    let scenario = probe_scenario(cfg);
    let traj = Arc::new(bed.steady_state(&scenario.reference, cfg.probe.horizon)?);
    let w = scenario.reference.exogenous(cfg.probe.horizon)?;
    let factory = || -> incremental_lpv::error::Result<Box<dyn ControllerRuntime>> {
        bed.runtime(kind, ctrl.clone(), &scenario, traj.clone())
    };
    let report = incremental_divergence_probe(bed.gp.as_ref(), &w, &factory, &cfg.probe)?;
    let summary = ProbeSummary {
        reference: scenario.reference.clone(),
        pairs: report.pairs.len(),
        contracted: report.pairs.iter().filter(|p| p.contracted).count(),
        all_contracted: report.all_contracted,
        max_trailing_distance: report.max_trailing_distance,
    };
    Ok((summary, report))
}

/// Closed-loop gain bound, interior spot check and (for the example) the
/// incremental divergence probe of each controller file.
pub fn analyze(cfg: &ExperimentConfig, controllers: &[PathBuf]) -> Result<CommandOutput, CliError> {
    let files = load_controllers(cfg, controllers)?;
    let out = OutDir::create(&cfg.output_dir)?;
    let bed = match cfg.plant {
        PlantConfig::Example {} => Some(testbed(cfg)?),
        _ => None,
    };
    let mut output = CommandOutput::default();
    for f in files {
        let model = model_for(cfg, bed.as_ref(), f.role)?;
        let cl = close_loop(&model, &f.controller)?;
        let (gamma, margin, spot) = match min_li2_gain(&cl.lpv) {
            Ok(cert) => {
                let spot = spot_check(&cl.lpv, &cert, SPOT_POINTS, cfg.seed)?;
                (Some(cert.gamma), Some(cert.worst_margin()), Some(spot))
            }
            Err(Error::Infeasible(_)) => (None, None, None),
            Err(e) => return Err(e.into()),
        };
        let name = f.role.name();
        let probe = match (&bed, f.role.kind()) {
            (Some(bed), Some(kind)) => {
                let (summary, report) = run_probe(cfg, bed, kind, Arc::new(f.controller.clone()))?;
                output.files.push(out.write(&format!("{name}.probe.csv"), &report.to_csv()?)?);
                Some(summary)
            }
            _ => None,
        };
        let report = AnalysisReport {
            role: f.role,
            synthesis_gamma: f.gamma,
            closed_loop_gamma: gamma,
            worst_margin: margin,
            spot_check_min_eigenvalue: spot,
            probe,
        };
        let text = report.to_text();
        output.files.push(out.write(&format!("{name}.analysis.txt"), &text)?);
        let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        output.files.push(out.write(&format!("{name}.analysis.json"), &json)?);
        output.text.push_str(&text);
        output.text.push('\n');
    }
    Ok(output)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub scenario: String,
    pub role: Role,
    pub file: String,
    pub summary: TraceSummary,
    pub meta: SimMetadata,
}

fn tolerance(s: &Scenario) -> f64 {
    if s.reference.is_constant() {
        CONVERGENCE_TOL
    } else {
        SINUSOID_TRACKING_TOL
    }
}

fn run_lti(cfg: &ExperimentConfig, f: &ControllerFile, s: &Scenario) -> Result<SimTrace, CliError> {
    let (n_w, n_z) = match cfg.plant {
        PlantConfig::Lti { n_w, n_z, .. } => (n_w, n_z),
        _ => return Err(CliError::Schema("simulation needs the example or an LTI plant".into())),
    };
    let ss = cfg.lti_system()?;
    let n = ss.n_states();
    let plant = LtiPlant::new(ss, n_w, n_z)?;
    let map = Arc::new(ConstantMap::new(n)?);
    let mut rt = standard_lpv_runtime(Arc::new(f.controller.clone()), map, None)?;
    let horizon = s.horizon();
    let w = s.reference.exogenous(horizon)?;
    let x0 = s.x0.clone().unwrap_or_else(|| vec![0.0; n]);
    Ok(run_loop(&plant, &mut rt, &w, &x0, horizon)?)
}

/// Runs every configured scenario with every controller file and writes
/// one trace CSV per run plus a summary.
pub fn simulate(cfg: &ExperimentConfig, controllers: &[PathBuf]) -> Result<CommandOutput, CliError> {
    if let PlantConfig::AffineLpv { .. } = cfg.plant {
        return Err(CliError::Schema("simulation needs the example or an LTI plant".into()));
    }
    let files = load_controllers(cfg, controllers)?;
    let out = OutDir::create(&cfg.output_dir)?;
    let bed = match cfg.plant {
        PlantConfig::Example {} => Some(testbed(cfg)?),
        _ => None,
    };
    let jobs: Vec<(&Scenario, &ControllerFile)> = cfg
        .scenarios
        .iter()
        .flat_map(|s| files.iter().map(move |f| (s, f)))
        .collect();
    let traces: Vec<Result<SimTrace, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(s, f)| {
                let bed = bed.as_ref();
                scope.spawn(move || -> Result<SimTrace, CliError> {
                    let mut trace = match (bed, f.role.kind()) {
                        (Some(bed), Some(kind)) => bed.run(kind, Arc::new(f.controller.clone()), s)?,
                        _ => run_lti(cfg, f, s)?,
                    };
                    trace.meta.gamma = Some(f.gamma);
                    trace.meta.seed = Some(cfg.seed);
                    Ok(trace)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread")).collect()
    });
    let mut output = CommandOutput::default();
    let mut records = Vec::new();
    for ((s, f), trace) in jobs.into_iter().zip(traces) {
        let trace = trace?;
        let file = format!("{}-{}.csv", file_stem(&s.name), f.role.name());
        output.files.push(out.write(&file, &trace.to_csv()?)?);
        let mut summary = trace.summary();
        summary.converged = trace.converged(CONVERGENCE_WINDOW, tolerance(s));
        let _ = writeln!(
            output.text,
            "{:<10} {:<22} converged {:<5} limit cycle {:<5} diverged {:<5} trailing |e| {:.3e}",
            s.name,
            summary.controller,
            summary.converged,
            summary.limit_cycle.detected,
            summary.diverged,
            summary.trailing_error
        );
        records.push(SimulationRecord {
            scenario: s.name.clone(),
            role: f.role,
            file,
            summary,
            meta: trace.meta,
        });
    }
    let json = serde_json::to_string_pretty(&records).map_err(Error::from)?;
    output.files.push(out.write("simulation-summary.json", &json)?);
    output.files.push(out.write("simulation-summary.txt", &output.text)?);
    Ok(output)
}

/// The full reproduction on the built-in example. Weights, synthesis
/// options, quadrature order and seed come from the config.
pub fn repro(cfg: &ExperimentConfig) -> Result<(ReproReport, CommandOutput), CliError> {
    if cfg.plant != (PlantConfig::Example {}) {
        return Err(CliError::Schema("repro runs on the built-in example only".into()));
    }
    let out = OutDir::create(&cfg.output_dir)?;
    let report = run_repro(&cfg.benchmark_options()?, cfg.seed);
    let text = report.to_text();
    let mut output = CommandOutput::default();
    output.files.push(out.write("repro-report.txt", &text)?);
    output.files.push(out.write("repro-report.json", &report.to_json()?)?);
    output.text = text;
    Ok((report, output))
}
