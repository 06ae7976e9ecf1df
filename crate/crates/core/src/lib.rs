pub mod analysis;
pub mod benchmark;
pub mod differential;
pub mod error;
pub mod example;
pub mod genplant;
pub mod linalg;
pub mod lpv_model;
pub mod lti;
pub mod polytope;
pub mod realization;
pub mod repro;
pub mod sdp;
pub mod simulation;
pub mod synthesis;

pub use error::{Error, Result};
