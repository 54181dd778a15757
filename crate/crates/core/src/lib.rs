//! Joint video deblurring, interpolation and extrapolation from pairs of
//! motion-blurred frames.

pub mod config;
pub mod error;
pub mod eval;
pub mod indexing;
pub mod io;
pub mod metrics;
pub mod model;
pub mod order;
pub mod synth;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use indexing::FrameIndexing;
