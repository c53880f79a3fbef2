//! End-to-end training of a filter bank with a per-pixel segmentation head.

mod head;
mod loss;
mod optim;
mod trainer;

pub use head::{HeadKind, SegHead};
pub use loss::{class_weights_inverse_frequency, seg_loss, total_loss, SegLoss, DICE_SMOOTH};
pub use optim::{adam_step, AdamHyper, AdamState};
pub use trainer::{
    predict, predict_features, train, train_head, CentroidRecord, ClassWeights, EpochRecord,
    HeadReport, TrainConfig, TrainReport, WeightScheme,
};
