//! End-to-end FMCW radar interference mitigation toolkit: chirp-level
//! simulator, sliding-window preprocessing, the RIMformer encoder-decoder
//! network over a tape-based autodiff core, hybrid time-frequency training,
//! and frequency-domain evaluation (SINR, range-Doppler maps, CA-CFAR).

pub mod error;
pub mod fft;
pub mod graph;
pub mod model;
pub mod radar;
pub mod signal;
pub mod tensor;
pub mod training;
pub mod windowing;

pub use error::{Error, Result};
pub use signal::ComplexSignal;
pub use tensor::Tensor;
