//! Differentiable weightless neural networks (DWNs) for human activity
//! recognition on raw inertial-sensor windows.
//!
//! The pipeline is: [`datahar`] loads UCI-HAR style windows, [`augment`]
//! perturbs them during training, [`encoding`] turns real values into
//! thermometer bits, [`model`] holds the trainable LUT layers with their
//! finite-difference backward pass, [`train`] runs the optimizer, [`infer`]
//! freezes a model into packed truth tables, and [`rtlgen`] lowers a frozen
//! model to a netlist and SystemVerilog.

pub mod augment;
pub mod bits;
mod bytes;
pub mod datahar;
pub mod encoding;
pub mod energy;
pub mod infer;
pub mod model;
pub mod rtlgen;
pub mod synth;
pub mod train;
pub mod window;

pub use bits::BitVector;
pub use bytes::FormatError;
pub use encoding::{ThermometerEncoder, WindowEncoding};
pub use infer::FrozenModel;
pub use model::DwnModel;
pub use window::Window;
