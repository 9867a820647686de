//! Joint text and mask objective, learning-rate schedule and training loop.

pub mod loss;
pub mod schedule;
pub mod trainer;

pub use loss::{bce_loss, dice_loss, text_ce_loss, total_loss, LossWeights, BCE_CLAMP};
pub use schedule::poly_lr;
pub use trainer::{
    corpus_tokenizer, fit, load_triplet_samples, teacher_forced_dsc, train_loop, trainable_vars, StepRecord,
    TrainConfig, TrainReport, TrainSample, CHECKPOINT_FILE, LOSS_CURVE_FILE, VOCAB_FILE,
};
