//! Raw slice kernels behind the graph ops. They do no shape validation of
//! their own; [`crate::Graph`] checks operands before calling in.

pub mod conv;
pub mod correlation;
pub mod resize;
pub mod sample;
