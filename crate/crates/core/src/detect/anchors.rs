use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::codec::{encode_boxes, CODE_SIZE};
use super::geometry::iou_bev;
use super::LossConfig;
use crate::error::Result;
use crate::pcio::{wrap_angle, Box3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    /// `(l, w, h)` of every anchor.
    pub dims: [f64; 3],
    pub z_center: f64,
    pub yaws: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            dims: [3.9, 1.6, 1.56],
            z_center: -1.0,
            yaws: vec![0.0, FRAC_PI_2],
        }
    }
}

impl AnchorConfig {
    /// Anchors sized to the synthetic scene generator's default boxes.
    pub fn toy() -> Self {
        Self {
            dims: [3.9, 1.65, 1.55],
            z_center: -1.6 + 1.55 / 2.0,
            yaws: vec![0.0, FRAC_PI_2],
        }
    }

    pub fn per_cell(&self) -> usize {
        self.yaws.len()
    }
}

/// Anchors at every BEV cell center, cell-major then yaw:
/// index `(r · width + c) · yaws + a`.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub boxes: Vec<Box3D>,
    pub per_cell: usize,
}

impl AnchorSet {
    pub fn generate(
        height: usize,
        width: usize,
        cell_size: f64,
        origin: [f64; 2],
        cfg: &AnchorConfig,
    ) -> Result<Self> {
        let mut boxes = Vec::with_capacity(height * width * cfg.per_cell());
        for r in 0..height {
            for c in 0..width {
                let x = origin[0] + (r as f64 + 0.5) * cell_size;
                let y = origin[1] + (c as f64 + 0.5) * cell_size;
                for &yaw in &cfg.yaws {
                    boxes.push(Box3D::new([x, y, cfg.z_center], cfg.dims, yaw, 0)?);
                }
            }
        }
        Ok(Self {
            boxes,
            per_cell: cfg.per_cell(),
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub labels: Vec<AnchorLabel>,
    /// Ground truth assigned to each positive anchor.
    pub matched_gt: Vec<Option<usize>>,
    pub num_pos: usize,
}

/// IoU-threshold assignment: an anchor is positive when its best IoU with
/// any ground truth is at least `iou_match`, negative when it is below
/// `iou_unmatch`, otherwise ignored. For each ground truth, the lowest
/// indexed anchor of highest positive IoU is forced positive for it.
pub fn match_anchors(anchors: &[Box3D], gts: &[Box3D], cfg: &LossConfig) -> Matching {
    let n = anchors.len();
    let mut best = vec![(0.0f64, None::<usize>); n];
    let mut gt_best = vec![(0.0f64, None::<usize>); gts.len()];
    for (g, gt) in gts.iter().enumerate() {
        for (a, anchor) in anchors.iter().enumerate() {
            let iou = iou_bev(anchor, gt);
            if iou <= 0.0 {
                continue;
            }
            if iou > best[a].0 {
                best[a] = (iou, Some(g));
            }
            if iou > gt_best[g].0 {
                gt_best[g] = (iou, Some(a));
            }
        }
    }
    let mut labels = Vec::with_capacity(n);
    let mut matched_gt = vec![None; n];
    for (a, &(iou, g)) in best.iter().enumerate() {
        labels.push(if iou >= cfg.iou_match {
            matched_gt[a] = g;
            AnchorLabel::Positive
        } else if iou < cfg.iou_unmatch {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        });
    }
    for (g, &(_, a)) in gt_best.iter().enumerate() {
        if let Some(a) = a {
            labels[a] = AnchorLabel::Positive;
            matched_gt[a] = Some(g);
        }
    }
    let num_pos = labels
        .iter()
        .filter(|l| **l == AnchorLabel::Positive)
        .count();
    Matching {
        labels,
        matched_gt,
        num_pos,
    }
}

/// Yaw residual folded into `[-π/2, π/2)`; the direction classifier
/// resolves the remaining half turn.
pub fn fold_half_turn(a: f64) -> f64 {
    let r = (a + FRAC_PI_2).rem_euclid(std::f64::consts::PI) - FRAC_PI_2;
    if r >= FRAC_PI_2 {
        r - std::f64::consts::PI
    } else {
        r
    }
}

/// Direction bin of a yaw: 1 for `yaw > 0`.
pub fn direction_bin(yaw: f64) -> bool {
    wrap_angle(yaw) > 0.0
}

/// Restores a full yaw from any angle congruent to it modulo π and its
/// direction bin: bin 1 maps into `(0, π]`, bin 0 into `(-π, 0]`.
pub fn resolve_direction(yaw: f64, positive: bool) -> f64 {
    let pi = std::f64::consts::PI;
    let m = yaw.rem_euclid(pi);
    match (positive, m == 0.0) {
        (true, true) => pi,
        (true, false) => m,
        (false, true) => 0.0,
        (false, false) => m - pi,
    }
}

/// Per-anchor training targets.
#[derive(Clone, Debug, Default)]
pub struct DetectionTargets {
    /// 1 for positives, 0 otherwise.
    pub cls_target: Vec<f64>,
    /// 0 for ignored anchors, 1 otherwise.
    pub cls_weight: Vec<f64>,
    pub positives: Vec<usize>,
    /// `positives.len() × 7` residuals with the yaw folded by
    /// [`fold_half_turn`].
    pub reg_target: Vec<f64>,
    pub dir_target: Vec<f64>,
    pub num_pos: usize,
}

pub fn build_targets(
    anchors: &[Box3D],
    gts: &[Box3D],
    cfg: &LossConfig,
) -> Result<DetectionTargets> {
    let m = match_anchors(anchors, gts, cfg);
    let mut t = DetectionTargets {
        cls_target: vec![0.0; anchors.len()],
        cls_weight: vec![1.0; anchors.len()],
        num_pos: m.num_pos,
        ..Default::default()
    };
    for (a, label) in m.labels.iter().enumerate() {
        match label {
            AnchorLabel::Positive => {
                let gt = &gts[m.matched_gt[a].expect("positive anchors are matched")];
                let mut code = encode_boxes(gt, &anchors[a])?;
                code[CODE_SIZE - 1] = fold_half_turn(code[CODE_SIZE - 1]);
                t.cls_target[a] = 1.0;
                t.positives.push(a);
                t.reg_target.extend_from_slice(&code);
                t.dir_target
                    .push(if direction_bin(gt.yaw) { 1.0 } else { 0.0 });
            }
            AnchorLabel::Ignore => t.cls_weight[a] = 0.0,
            AnchorLabel::Negative => {}
        }
    }
    Ok(t)
}
