//! Cross-modal metric learning: twin encoders mapping two modalities into a
//! shared latent space, trained with instance and semantic triplet losses,
//! adaptive gradient aggregation, and a retrieval evaluation protocol.
//!
//! The main entry points are [`generate_synthetic`] for data, [`train`] for
//! fitting a [`TrainConfig`] scenario, and [`subset_protocol`] for MedR and
//! recall@K reports.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod math;
pub mod mining;
pub mod optim;
pub mod sampling;

pub use checkpoint::Checkpoint;
pub use data::{generate_synthetic, Dataset, PairedSample, Splits, SyntheticSpec};
pub use encoder::{encode, init_params, Activation, EncoderParams, EncoderSpec, Side};
pub use error::{Error, Result};
pub use eval::{medr, rank_of_match, recall_at_k, subset_protocol, RetrievalReport};
pub use experiment::{compare_scenarios, sweep_lambda, EvalSettings};
pub use loss::LossConfig;
pub use math::{Matrix, RngSeed};
pub use mining::{Direction, Strategy, TripletKind};
pub use optim::{train, EpochRecord, FreezeBranch, Scenario, TrainConfig, TrainHistory, TrainOutcome};
