//! Anchor-based BEV detection on top of the backbone: rotated IoU, box
//! codec, anchor assignment, the composite loss, NMS, evaluation and a
//! synthetic-scene training loop.

mod anchors;
mod codec;
mod eval;
mod geometry;
mod loss;
mod model;
mod nms;
mod train;

pub use anchors::{
    build_targets, direction_bin, fold_half_turn, match_anchors, resolve_direction, AnchorConfig,
    AnchorLabel, AnchorSet, DetectionTargets, Matching,
};
pub use codec::{decode_boxes, encode_boxes, CODE_SIZE};
pub use eval::{evaluate, Detection, EvalResult};
pub use geometry::{bev_intersection, clip_polygon, iou_bev, polygon_area};
pub use loss::{
    bce_with_logits, sigmoid_focal_loss, smooth_l1_loss, total_loss, HeadOutputs, LossConfig,
    LossParts,
};
pub use model::{Detector, DetectorConfig, CLS_PRIOR};
pub use nms::{nms, nms_reference, NmsConfig};
pub use train::{
    eval_seed, evaluate_detector, point_labels, scene_seed, train_toy, MetricsRecord, ToyConfig,
    TrainConfig, TrainOutcome,
};

#[cfg(test)]
mod tests;
