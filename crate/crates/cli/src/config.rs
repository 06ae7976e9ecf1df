//! Experiment configuration files.

use std::path::{Path, PathBuf};

use incremental_lpv::analysis::ProbeConfig;
use incremental_lpv::benchmark::{benchmark_scenarios, BenchmarkOptions, Scenario, EMBEDDING_SAMPLES};
use incremental_lpv::example::ALPHA;
use incremental_lpv::genplant::{WeightingScheme, DEFAULT_EPS};
use incremental_lpv::linalg::{from_rows, Mat};
use incremental_lpv::lpv_model::{AffineLpvStateSpace, AffineMatrixFunction, ChannelPartition};
use incremental_lpv::lti::{StateSpace, TransferFunction};
use incremental_lpv::polytope::SchedulingPolytope;
use incremental_lpv::realization::DEFAULT_QUADRATURE_ORDER;
use incremental_lpv::synthesis::SynthesisOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

/// An affine matrix function written as a constant term plus one
/// coefficient per scheduling coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineRows {
    pub constant: Rows,
    #[serde(default)]
    pub coeffs: Vec<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantConfig {
    /// The built-in second-order example with its tracking weights.
    #[serde(rename = "paper-example")]
    Example {},
    /// A generalized plant given as affine matrices with inputs `(w, u)`
    /// and outputs `(z, y)`; the scheduling polytope is the top-level
    /// `polytope`.
    AffineLpv {
        a: AffineRows,
        b: AffineRows,
        c: AffineRows,
        d: AffineRows,
        n_w: usize,
        n_z: usize,
    },
    /// A constant generalized plant with inputs `(w, u)` and outputs `(z, y)`.
    Lti {
        a: Rows,
        b: Rows,
        c: Rows,
        d: Rows,
        n_w: usize,
        n_z: usize,
    },
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig::Example {}
    }
}

/// Tracking weights `W_e = k_e (z − z_e)/(z + α)`, `M = (z + α)/(z − 1)`,
/// `W_u = k_u`, with unit-circle poles moved to `1 − eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightParams {
    pub alpha: f64,
    pub error_gain: f64,
    pub error_zero: f64,
    pub control_gain: f64,
    pub eps: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            alpha: ALPHA,
            error_gain: 0.2,
            error_zero: 0.5,
            control_gain: 0.2,
            eps: DEFAULT_EPS,
        }
    }
}

impl WeightParams {
    pub fn scheme(&self) -> Result<WeightingScheme, CliError> {
        Ok(WeightingScheme {
            error_weight: TransferFunction::real(self.error_gain, &[self.error_zero], &[-self.alpha])?,
            reference_model: TransferFunction::real(1.0, &[-self.alpha], &[1.0])?,
            control_weight: TransferFunction::static_gain(self.control_gain),
            eps: self.eps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub weights: WeightParams,
    /// Scheduling polytope: overrides the incremental design's interval for
    /// the example, required for an inline affine plant.
    pub polytope: Option<SchedulingPolytope>,
    pub synthesis: SynthesisOptions,
    pub scenarios: Vec<Scenario>,
    pub probe: ProbeConfig,
    pub quadrature_order: usize,
    pub embedding_samples: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            plant: PlantConfig::Example {},
            weights: WeightParams::default(),
            polytope: None,
            synthesis: SynthesisOptions::default(),
            scenarios: benchmark_scenarios(),
            probe: ProbeConfig::default(),
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            embedding_samples: EMBEDDING_SAMPLES,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn matrix(name: &str, rows: &Rows, shape: (usize, usize)) -> Result<Mat, CliError> {
    from_rows(rows, shape.1)
        .filter(|m| m.shape() == shape)
        .ok_or_else(|| CliError::Schema(format!("{name} must be {}x{}", shape.0, shape.1)))
}

fn affine(name: &str, f: &AffineRows, shape: (usize, usize), n_rho: usize) -> Result<AffineMatrixFunction, CliError> {
    if f.coeffs.len() > n_rho {
        return Err(CliError::Schema(format!(
            "{name} has {} coefficients but the polytope has dimension {n_rho}",
            f.coeffs.len()
        )));
    }
    let constant = matrix(name, &f.constant, shape)?;
    let coeffs = f
        .coeffs
        .iter()
        .map(|c| matrix(name, c, shape))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AffineMatrixFunction::new(constant, coeffs)?.with_n_rho(n_rho)?)
}

fn channels(n_w: usize, n_in: usize, n_z: usize, n_out: usize) -> Result<(ChannelPartition, ChannelPartition), CliError> {
    if n_w > n_in || n_z > n_out {
        return Err(CliError::Schema(format!(
            "n_w = {n_w}, n_z = {n_z} exceed the {n_in} inputs / {n_out} outputs"
        )));
    }
    Ok((
        ChannelPartition::new(&[("w", n_w), ("u", n_in - n_w)])?,
        ChannelPartition::new(&[("z", n_z), ("y", n_out - n_z)])?,
    ))
}

fn row_count(name: &str, rows: &Rows) -> Result<usize, CliError> {
    let n = rows.len();
    if n == 0 {
        return Err(CliError::Schema(format!("{name} needs at least one row")));
    }
    Ok(n)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks beyond the schema: dimensions of inline models and required
    /// fields per plant kind.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.quadrature_order == 0 {
            return Err(CliError::Schema("quadrature_order must be positive".into()));
        }
        match &self.plant {
            PlantConfig::Example {} => {
                if let Some(p) = &self.polytope {
                    if p.dim() != 1 {
                        return Err(CliError::Schema("the example schedules on one variable".into()));
                    }
                }
                self.weights.scheme()?;
            }
            _ => {
                self.custom_model()?;
            }
        }
        Ok(())
    }

    pub fn benchmark_options(&self) -> Result<BenchmarkOptions, CliError> {
        Ok(BenchmarkOptions {
            weights: self.weights.scheme()?,
            synthesis: self.synthesis,
            quadrature_order: self.quadrature_order,
            embedding_samples: self.embedding_samples,
        })
    }

    /// Inline generalized plant as a synthesis model (not for the example).
    pub fn custom_model(&self) -> Result<AffineLpvStateSpace, CliError> {
        match &self.plant {
            PlantConfig::Example {} => Err(CliError::Schema("the example has no inline model".into())),
            PlantConfig::Lti { n_w, n_z, .. } => {
                let ss = self.lti_system()?;
                let (inputs, outputs) = channels(*n_w, ss.n_inputs(), *n_z, ss.n_outputs())?;
                Ok(match &self.polytope {
                    Some(p) => AffineLpvStateSpace::lti_over(&ss, p.clone(), inputs, outputs)?,
                    None => AffineLpvStateSpace::from_lti(&ss, inputs, outputs)?,
                })
            }
            PlantConfig::AffineLpv { a, b, c, d, n_w, n_z } => {
                let polytope = self
                    .polytope
                    .clone()
                    .ok_or_else(|| CliError::Schema("an affine-lpv plant needs a polytope".into()))?;
                let k = polytope.dim();
                let n = row_count("a", &a.constant)?;
                let m = b.constant.first().map_or(0, Vec::len);
                let p = c.constant.len();
                let (inputs, outputs) = channels(*n_w, m, *n_z, p)?;
                Ok(AffineLpvStateSpace::new(
                    affine("a", a, (n, n), k)?,
                    affine("b", b, (n, m), k)?,
                    affine("c", c, (p, n), k)?,
                    affine("d", d, (p, m), k)?,
                    polytope,
                    inputs,
                    outputs,
                )?)
            }
        }
    }

    /// The inline LTI plant.
    pub fn lti_system(&self) -> Result<StateSpace, CliError> {
        match &self.plant {
            PlantConfig::Lti { a, b, c, d, .. } => {
                let n = a.len();
                let m = b.first().map_or(0, Vec::len);
                let p = c.len();
                if n == 0 {
                    return Err(CliError::Schema("a needs at least one row".into()));
                }
                Ok(StateSpace::new(
                    matrix("a", a, (n, n))?,
                    matrix("b", b, (n, m))?,
                    matrix("c", c, (p, n))?,
                    matrix("d", d, (p, m))?,
                )?)
            }
            _ => Err(CliError::Schema("not an LTI plant".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use incremental_lpv::example::default_weights;

    #[test]
    fn default_weights_match_library() {
        assert_eq!(WeightParams::default().scheme().unwrap(), default_weights());
    }

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(ExperimentConfig::parse("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn lti_model_shapes() {
        let cfg = ExperimentConfig::parse(
            r#"{"plant": {"kind": "lti", "a": [[0.5]], "b": [[1, 1]], "c": [[1], [1]], "d": [[0, 0], [1, 0]], "n_w": 1, "n_z": 1}}"#,
        )
        .unwrap();
        let m = cfg.custom_model().unwrap();
        assert_eq!((m.n_x(), m.n_in(), m.n_out()), (1, 2, 2));
        assert!(ExperimentConfig::parse(
            r#"{"plant": {"kind": "lti", "a": [[0.5]], "b": [[1, 1]], "c": [[1], [1]], "d": [[0], [1]], "n_w": 1, "n_z": 1}}"#,
        )
        .is_err());
    }

    #[test]
    fn affine_needs_polytope() {
        let plant = r#""plant": {"kind": "affine-lpv", "a": {"constant": [[0.5]], "coeffs": [[[0.1]]]}, "b": {"constant": [[1, 1]]}, "c": {"constant": [[1], [1]]}, "d": {"constant": [[0, 0], [1, 0]]}, "n_w": 1, "n_z": 1}"#;
        assert!(ExperimentConfig::parse(&format!("{{{plant}}}")).is_err());
        let cfg = ExperimentConfig::parse(&format!(r#"{{{plant}, "polytope": {{"vertices": [[-1], [1]]}}}}"#)).unwrap();
        assert_eq!(cfg.custom_model().unwrap().n_rho(), 1);
    }
}
