//! Bird-vocalization event detection on spectrograms.
//!
//! The crate covers spectrogram extraction ([`dsp`]), classical blob
//! segmentation ([`blobseg`]), a small CPU neural-network engine with U-net
//! and classifier topologies ([`nnet`]), attention maps ([`attention`]),
//! evaluation metrics ([`metrics`]) and a synthetic labelled corpus
//! ([`synth`]).
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod blobseg;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod nnet;
pub mod synth;

pub use error::{Error, Result};
