//! Optical-flow estimation with a recurrent all-pairs correlation core and an
//! implicit, coordinate-conditioned upsampler that decodes flow at arbitrary
//! output resolutions.
//!
//! The model ingests an RGB frame pair, builds a 4-level correlation pyramid
//! over 1/8-resolution features, and refines a coarse flow field with a conv
//! GRU. Three lookup strategies are available: a fixed square grid, a
//! per-pixel learned radius (grid spacing scales with the radius), and a
//! region-encoded variant that summarizes a 3x3 auxiliary patch around every
//! sample point. The final (and every intermediate) coarse field is decoded
//! to any target resolution by a small coordinate network that predicts
//! convex combination weights over the 3x3 coarse neighborhood.

pub mod cli;
pub mod color;
pub mod config;
pub mod flo;
pub mod flow;
pub mod gradreg;
pub mod metrics;
pub mod model;
pub mod resize;
pub mod synth;
pub mod train;

pub use config::{LookupMode, ModelConfig, TrainConfig};
pub use flow::FlowField;
pub use model::Model;
