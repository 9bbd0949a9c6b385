use serde::{Deserialize, Serialize};

use super::geometry::iou_bev;
use crate::pcio::Box3D;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    /// Boxes scoring at or below this are dropped before suppression.
    pub score_threshold: f64,
    pub max_detections: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.1,
            score_threshold: 0.3,
            max_detections: 100,
        }
    }
}

/// Stable order by descending score, ties by ascending index.
fn ranked(scores: &[f64], score_thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] > score_thr)
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy suppression: visit boxes by descending score and keep a box
/// unless it overlaps an already kept one by more than `iou_thr`.
pub fn nms(boxes: &[Box3D], scores: &[f64], iou_thr: f64, score_thr: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut kept: Vec<usize> = Vec::new();
    for i in ranked(scores, score_thr) {
        if kept
            .iter()
            .all(|&k| iou_bev(&boxes[k], &boxes[i]) <= iou_thr)
        {
            kept.push(i);
        }
    }
    kept
}

/// Reference formulation over the full pairwise IoU matrix: repeatedly
/// take the best remaining box and strike everything it suppresses.
pub fn nms_reference(boxes: &[Box3D], scores: &[f64], iou_thr: f64, score_thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let iou: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| iou_bev(&boxes[i], &boxes[j])).collect())
        .collect();
    let mut alive: Vec<bool> = scores.iter().map(|s| *s > score_thr).collect();
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if alive[i] && best.map_or(true, |b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        for j in 0..n {
            if iou[b][j] > iou_thr {
                alive[j] = false;
            }
        }
        alive[b] = false;
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x: f64, y: f64) -> Box3D {
        Box3D::new([x, y, 0.0], [4.0, 2.0, 1.5], 0.0, 0).unwrap()
    }

    #[test]
    fn single_and_duplicate() {
        assert_eq!(nms(&[bx(0.0, 0.0)], &[0.9], 0.1, 0.3), vec![0]);
        assert_eq!(
            nms(&[bx(0.0, 0.0), bx(0.0, 0.0)], &[0.9, 0.8], 0.1, 0.3),
            vec![0]
        );
        assert!(nms(&[bx(0.0, 0.0)], &[0.2], 0.1, 0.3).is_empty());
    }

    #[test]
    fn equal_scores_prefer_lower_index() {
        assert_eq!(
            nms(&[bx(0.0, 0.0), bx(0.1, 0.0)], &[0.5, 0.5], 0.1, 0.3),
            vec![0]
        );
    }

    #[test]
    fn matches_reference_and_keeps_an_antichain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let boxes: Vec<Box3D> = (0..50)
                .map(|_| {
                    Box3D::new(
                        [rng.gen_range(0.0..15.0), rng.gen_range(0.0..15.0), 0.0],
                        [rng.gen_range(1.0..5.0), rng.gen_range(1.0..3.0), 1.0],
                        rng.gen_range(-3.0..3.0),
                        0,
                    )
                    .unwrap()
                })
                .collect();
            let scores: Vec<f64> = (0..50)
                .map(|_| (rng.gen_range(0..20) as f64) / 20.0)
                .collect();
            let kept = nms(&boxes, &scores, 0.1, 0.3);
            assert_eq!(kept, nms_reference(&boxes, &scores, 0.1, 0.3));
            for (i, &a) in kept.iter().enumerate() {
                for &b in &kept[i + 1..] {
                    assert!(iou_bev(&boxes[a], &boxes[b]) <= 0.1);
                }
            }
        }
    }
}
