//! The grounded joint embedding model: X and Y text encoders sharing a
//! feed-forward trunk (Y words pass through a linear AdaptLayer first), a
//! linear head for precomputed clip features, in-batch NCE training and
//! word translation through the joint space.

mod backprop;
mod dataset;
mod inference;
mod loss;
mod model;
mod train;

pub use backprop::{batch_nce, gradients, joint_loss, Gradients, JointLoss};
pub use dataset::{check_unpaired, read_clip_records, write_clip_records, ClipDataset, ClipRecord, NarratedClip};
pub use inference::{encode_vocabulary, translate_word, two_stage_translate, TranslationIndex, TwoStageResult};
pub use loss::{nce_loss, nce_loss_from_scores, ortho_penalty, ortho_penalty_grad};
pub use model::{encode_features, encode_text_x, encode_text_y, AdaptInit, GroundingModel, Language, ModelDims};
pub use train::{train, Adam, GroundTrainConfig, TrainOutput, ValidationPoint};

#[cfg(test)]
mod tests;
