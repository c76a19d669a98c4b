//! Region-based drag editing of images by latent region optimization.
//!
//! The pipeline encodes an image, inverts it along a deterministic DDIM
//! trajectory, and while denoising back optimizes the latent so that features
//! inside progressively dragged target regions match the warped features of
//! the user's handle regions. Denoisers, feature extractors and codecs are
//! pluggable; the shipped ones are small linear stand-ins with exact adjoints.

pub mod baseline;
pub mod bench;
pub mod diffusion;
pub mod features;
pub mod geometry;
pub mod grid;
pub mod instruction;
pub mod lro;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod scalar;

pub use scalar::Scalar;

pub type Grid64 = grid::Grid<f64>;
pub type LatentCode64 = diffusion::LatentCode<f64>;
pub type NoiseSchedule64 = diffusion::NoiseSchedule<f64>;
pub type FeatureMap64 = features::FeatureMap<f64>;
pub type PyramidExtractor64 = features::PyramidExtractor<f64>;
pub type Pipeline64 = pipeline::Pipeline<f64>;
pub type RunResult64 = lro::RunResult<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type Pipeline32 = pipeline::Pipeline<f32>;
