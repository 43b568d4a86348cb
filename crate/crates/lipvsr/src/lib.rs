//! Desk-scale hybrid CTC/attention visual speech recognition.
//!
//! The crate is a self-contained lipreading pipeline sized to run on a
//! laptop CPU in minutes: a 64-bit tensor library with reverse-mode
//! autodiff, a 3D-conv + 2D-conv visual front-end, a Conformer encoder
//! with intermediate-CTC residual conditioning, a bi-directional
//! transformer decoder, an LSTM language model, joint CTC/attention
//! one-pass beam decoding with shallow fusion, and a three-stage
//! curriculum trainer with checkpoint averaging. Training data is a
//! synthetic "rendered token video" corpus whose difficulty (pixel noise,
//! visually ambiguous character pairs) is fully controllable, so every
//! component can be validated against brute-force oracles.
//!
//! Start with the runnable programs in `examples/`, or the `lipvsr`
//! binary (`synth`, `train`, `decode`, `eval`, `gradcheck`).

pub mod ctc;
pub mod data;
pub mod decode;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod lm;
pub mod model;
pub mod nn;
pub mod objective;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vocab;

pub mod cli;

pub use error::{Error, Result};
pub use tensor::Tensor;
