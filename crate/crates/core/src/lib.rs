pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod feature_flow;
pub mod image_io;
pub mod injection;
pub mod layers;
pub mod losses;
pub mod networks;
pub mod odometry;
pub mod positional;
pub mod synth;
pub mod training;

pub use error::{PipelineError, Result};
