//! Multi-modal attention networks for utterance-level emotion recognition.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`tape`], [`params`], [`gradcheck`]: dense `f64` math with
//!   reverse-mode gradients and a finite-difference checker.
//! * [`attention`]: modality standardization and the tri-modal directional
//!   attention block.
//! * [`recurrent`]: LSTM cells and the contextual LSTM block.
//! * [`models`]: the uni-modal, early-fusion, late-fusion, attention and
//!   hybrid architectures, and parameter counting.
//! * [`training`]: optimizers and the two-stage training protocol.
//! * [`data`]: conversations, the dataset file format, the synthetic
//!   generator and the speaker-disjoint split.
//! * [`metrics`], [`experiment`], [`checkpoint`]: evaluation, experiment
//!   orchestration and model serialization.

// `!(x > 0.0)` style checks are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod params;
pub mod recurrent;
pub mod tape;
pub mod tensor;
pub mod training;

pub use data::{Conversation, Modality, Split, SyntheticSpec, Utterance};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use models::{Architecture, Model, ModelConfig};
pub use params::ParameterStore;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use training::{TrainConfig, TrainReport};
