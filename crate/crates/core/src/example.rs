//! The built-in benchmark plant
//!
//! ```text
//! x1⁺ = 0.1 x1 − x2
//! x2⁺ = 0.9 sin(x1) + x2 + u
//! y   = x1
//! ```
//!
//! with its differential embedding (`ρ = cos x1 ∈ [−1, 1]`), its primal
//! embedding (`ρ_s = sinc x1 ∈ [−0.22, 1]`), and the tracking weights
//! `W_e = 0.2(q − 0.5)/(q + α)`, `M = (q + α)/(q − 1)`, `W_u = 0.2` with
//! `α = 1/π`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::differential::{
    CosineMap, DifferentialForm, NonlinearPlant, Region, SchedulingMap, SincMap,
};
use crate::error::Result;
use crate::genplant::{
    build_generalized_plant_with, weighted_interconnection, GeneralizedPlant, PlantEmbedding,
    WeightingScheme, DEFAULT_EPS,
};
use crate::linalg::Mat;
use crate::lpv_model::{AffineLpvStateSpace, AffineMatrixFunction, ChannelPartition};
use crate::lti::TransferFunction;
use crate::polytope::SchedulingPolytope;

pub const ALPHA: f64 = 1.0 / PI;

/// Reported bounds for the two designs.
pub const REPORTED_INCREMENTAL_GAMMA: f64 = 1.1;
pub const REPORTED_STANDARD_GAMMA: f64 = 0.80;

#[derive(Debug, Clone)]
pub struct ExamplePlant {
    region: Region,
}

impl Default for ExamplePlant {
    fn default() -> Self {
        ExamplePlant {
            region: Region::unbounded(2, 2.0 * PI),
        }
    }
}

impl NonlinearPlant for ExamplePlant {
    fn n_x(&self) -> usize {
        2
    }
    fn n_w(&self) -> usize {
        0
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_z(&self) -> usize {
        0
    }
    fn n_y(&self) -> usize {
        1
    }
    fn step(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        vec![0.1 * x[0] - x[1], 0.9 * x[0].sin() + x[1] + v[0]]
    }
    fn output(&self, x: &[f64], _v: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }
    fn jacobians(&self, x: &[f64], _v: &[f64]) -> DifferentialForm {
        DifferentialForm {
            a: Mat::from_row_slice(2, 2, &[0.1, -1.0, 0.9 * x[0].cos(), 1.0]),
            b: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            c: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            d: Mat::zeros(1, 1),
        }
    }
    fn region(&self) -> &Region {
        &self.region
    }
}

/// `A(ρ) = [[0.1, −1], [0.9ρ, 1]]`, `B = (0, 1)ᵀ`, `C = (1, 0)` over `polytope`.
fn plant_lpv(polytope: SchedulingPolytope) -> Result<AffineLpvStateSpace> {
    let a = AffineMatrixFunction::new(
        Mat::from_row_slice(2, 2, &[0.1, -1.0, 0.0, 1.0]),
        vec![Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.9, 0.0])],
    )?;
    AffineLpvStateSpace::new(
        a,
        AffineMatrixFunction::constant(Mat::from_row_slice(2, 1, &[0.0, 1.0]), 1),
        AffineMatrixFunction::constant(Mat::from_row_slice(1, 2, &[1.0, 0.0]), 1),
        AffineMatrixFunction::zeros(1, 1, 1),
        polytope,
        ChannelPartition::single("u", 1),
        ChannelPartition::single("y", 1),
    )
}

/// Embedding of the differential form, `ρ = cos x1 ∈ [−1, 1]`.
pub fn differential_embedding() -> Result<PlantEmbedding> {
    let map: Arc<dyn SchedulingMap> = Arc::new(CosineMap::new(2, 0)?);
    Ok(PlantEmbedding {
        lpv: plant_lpv(map.polytope().clone())?,
        map,
    })
}

/// Embedding over a custom scheduling interval (for sensitivity studies).
pub fn differential_embedding_over(lo: f64, hi: f64) -> Result<AffineLpvStateSpace> {
    plant_lpv(SchedulingPolytope::interval(lo, hi)?)
}

/// Primal embedding `f(x, u) = A(ρ_s)x + Bu` with `ρ_s = sinc x1 ∈ [−0.22, 1]`.
pub fn standard_embedding() -> Result<PlantEmbedding> {
    let map: Arc<dyn SchedulingMap> = Arc::new(SincMap::new(2, 0)?);
    Ok(PlantEmbedding {
        lpv: plant_lpv(map.polytope().clone())?,
        map,
    })
}

/// The tracking weights with pole perturbation `eps`.
pub fn example_weights(eps: f64) -> WeightingScheme {
    WeightingScheme {
        error_weight: TransferFunction::real(0.2, &[0.5], &[-ALPHA]).expect("proper weight"),
        reference_model: TransferFunction::real(1.0, &[-ALPHA], &[1.0]).expect("proper model"),
        control_weight: TransferFunction::static_gain(0.2),
        eps,
    }
}

pub fn default_weights() -> WeightingScheme {
    example_weights(DEFAULT_EPS)
}

/// Generalized plant for the incremental design.
pub fn incremental_generalized_plant(weights: &WeightingScheme, samples: usize) -> Result<GeneralizedPlant> {
    build_generalized_plant_with(
        Arc::new(ExamplePlant::default()),
        &differential_embedding()?,
        weights,
        samples,
    )
}

/// Synthesis model of the standard (primal) LPV design.
pub fn standard_synthesis_model(weights: &WeightingScheme) -> Result<AffineLpvStateSpace> {
    Ok(weighted_interconnection(&standard_embedding()?.lpv, weights)?.lpv)
}

/// Steady state for a constant reference `r`: `x* = (r, −0.9r)`,
/// `u* = −0.9 sin r`.
pub fn constant_steady_state(r: f64) -> ([f64; 2], f64) {
    ([r, -0.9 * r], -0.9 * r.sin())
}
