//! A small encoder trained with SGD on synthetic identities, with gradients
//! derived by hand for every objective in [`crate::losszoo`].

mod encoder;
mod objective;
mod replay;
mod synth;
mod train;

pub use encoder::{EncoderParams, ForwardCache, Layer};
pub use objective::{hardest_negatives, step_loss, StepBatch, StepContext, StepOutcome};
pub use replay::{manifest_identities, replay_manifest};
pub use synth::{
    augment_rows, augment_view, augment_view_with, build_pairs, derive_seed, synth_dataset,
    AugmentConfig, PairDataset, PairMode, SynthConfig, SynthData, ViewPair,
};
pub use train::{embed, init_params, train, TrainConfig, TrainReport};
