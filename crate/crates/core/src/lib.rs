//! Soft-input soft-output MIMO detection by single tree search.
//!
//! The crate provides
//!
//! * [`stsd`]: the SISO single tree search sphere decoder with extrinsic LLR
//!   clipping built into the search,
//! * [`oracle`]: exhaustive max-log references and a list sphere decoder
//!   baseline,
//! * [`coding`]: the K = 7 rate-1/2 convolutional code with a max-log BCJR,
//! * [`harness`]: the iterative receiver loop and Monte-Carlo sweeps,
//! * [`numerics`], [`modem`], [`channel`]: preprocessing, constellations and
//!   channel models,
//! * [`check`] and [`cli`]: conformance batteries and the command-line tool.

pub mod channel;
pub mod check;
pub mod cli;
pub mod coding;
pub mod harness;
pub mod modem;
pub mod numerics;
pub mod oracle;
pub mod stsd;

pub use modem::{Bit, Constellation, ConstellationKind, LlrMatrix, PriorLlrs};
pub use numerics::{ComplexMatrix, ComplexVector};
pub use stsd::{detect, DetectionResult};
