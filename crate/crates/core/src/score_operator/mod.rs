//! Score operator `s(u, x, t)`: a NOMAD network conditioned on a distribution
//! embedding `u`, trained by denoising score matching over many distributions
//! at once, plus the conditional-table baseline that learns one free
//! embedding row per training distribution.

mod net;
mod operator;
mod sample;
mod train;

pub use net::{Nomad, NomadSpec, NomadTape, ScoreNet};
pub(crate) use net::check_batch;
pub use operator::{draw_dsm_batch, draw_full, dsm_loss, dsm_objective, DsmBatch, DsmOutput, OperatorTape, ScoreOperator};
pub use sample::{sample_from_family, Sampler};
pub use train::{
    finetune_conditional, select_families, train, ConditionalTable, Conditioning, Control, EpochRecord, LrSchedule,
    TrainConfig, TrainReport,
};
