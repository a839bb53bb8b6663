//! Lifting 2D mask tokens onto 3D point clouds, aggregating them per 3D
//! proposal, and scoring open-vocabulary instance predictions.

pub mod aggregation;
pub mod binio;
pub mod cli;
pub mod dataio;
pub mod evaluation;
pub mod geometry;
pub mod lifting;
pub mod mask;
pub mod synth;
pub mod tokens;
