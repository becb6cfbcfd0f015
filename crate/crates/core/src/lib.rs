//! Allocation-only core of the stressnet pipeline.
//!
//! Everything in this crate is a pure function of its inputs: preprocessing of
//! heart-rate / skin-conductance recordings, 16-dimensional window features,
//! the hard-parameter-sharing network and its trainer, the reference
//! classifiers, the evaluation protocol, and the synthetic data generator.
//! File formats, checkpoints and the command line live in the `stressnet`
//! crate.
//!
//! The crate builds without `std` (it needs `alloc`); all transcendental math
//! goes through `libm` so results do not depend on the platform's libm.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod baselines;
pub mod eval;
pub mod features;
pub mod math;
pub mod model;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod synth;

pub use features::{FeatureVector, WindowedDataset, N_FEATURES};
pub use signal::{Label, LabelSpan, SubjectRecording};
