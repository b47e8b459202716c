//! Tool-wear diagnosis and prognosis with gated recurrent networks.
//!
//! Two independently trained recurrent models form a state-space pair: an
//! observation model maps per-cut vibration RMS to flank wear, and a
//! transition model maps wear history to next-cut wear. Feeding the
//! transition model its own output gives arbitrary-horizon forecasts and a
//! remaining-useful-life estimate against a wear threshold.
//!
//! Everything is built from scratch in `f64`: Elman, LSTM and GRU cells
//! ([`cells`]), full-sequence backpropagation through time with Adam and
//! gradient clipping ([`training`]), and the inference procedures
//! ([`statespace`]).

pub mod cells;
pub mod data;
pub mod error;
pub mod numerics;
pub mod statespace;
pub mod training;

pub use cells::{gate_activations, step, zero_state, CellKind, CellParams, Gradients, HiddenState};
pub use data::{
    load_csv, parse_csv, save_csv, split, synth_generate, DatasetSplit, Normalizer, PairedSequence,
    SynthConfig,
};
pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
pub use statespace::{fit, FittedModel, PrognosisResult, Recurrent, Rul, StateSpaceModel};
pub use training::{train, AdamState, Sample, TrainConfig, TrainHistory, UpdateMode};
