use super::geometry::iou_bev;
use crate::pcio::Box3D;

/// A scored detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalResult {
    /// Fraction of ground-truth boxes matched by some detection.
    pub recall: f64,
    /// 11-point interpolated average precision.
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
    pub true_positives: usize,
}

/// Recall and 11-point AP at the given BEV IoU over a set of scenes.
///
/// Detections from all scenes are ranked by score (ties by scene, then
/// position); each is matched to the unmatched ground truth of its scene
/// with the highest IoU, counting as a true positive when that IoU reaches
/// `iou_thr`.
pub fn evaluate(preds: &[Vec<Detection>], gts: &[Vec<Box3D>], iou_thr: f64) -> EvalResult {
    assert_eq!(preds.len(), gts.len(), "one prediction list per scene");
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    let mut ranked: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(s, d)| (0..d.len()).map(move |i| (s, i)))
        .collect();
    ranked.sort_by(|a, b| {
        preds[b.0][b.1]
            .score
            .total_cmp(&preds[a.0][a.1].score)
            .then(a.cmp(b))
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for &(s, i) in &ranked {
        let det = &preds[s][i].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts[s].iter().enumerate() {
            if taken[s][g] {
                continue;
            }
            let iou = iou_bev(det, gt);
            if iou >= iou_thr && best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[s][g] = true;
        }
        tp_flags.push(best.is_some());
    }

    let true_positives = tp_flags.iter().filter(|t| **t).count();
    let mut curve = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, hit) in tp_flags.iter().enumerate() {
        tp += *hit as usize;
        let recall = if num_gt == 0 {
            0.0
        } else {
            tp as f64 / num_gt as f64
        };
        curve.push((recall, tp as f64 / (k + 1) as f64));
    }
    let ap = if num_gt == 0 {
        0.0
    } else {
        (0..=10)
            .map(|r| {
                let r = r as f64 / 10.0;
                curve
                    .iter()
                    .filter(|(rec, _)| *rec >= r - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 11.0
    };
    EvalResult {
        recall: if num_gt == 0 {
            0.0
        } else {
            true_positives as f64 / num_gt as f64
        },
        ap,
        num_gt,
        num_det: ranked.len(),
        true_positives,
    }
}
