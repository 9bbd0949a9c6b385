//! Differentiable loss terms and their composition.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::anchors::DetectionTargets;
use super::codec::CODE_SIZE;
use crate::diffcore::{DiffArray, Real};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub iou_match: f64,
    pub iou_unmatch: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_beta: f64,
    pub dir_bins: usize,
    pub w_cls: f64,
    pub w_reg: f64,
    pub w_dir: f64,
    pub w_seg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            iou_match: 0.6,
            iou_unmatch: 0.45,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            smooth_l1_beta: 1.0 / 9.0,
            dir_bins: 2,
            w_cls: 1.0,
            w_reg: 2.0,
            w_dir: 0.2,
            w_seg: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.iou_unmatch && self.iou_unmatch < self.iou_match && self.iou_match <= 1.0)
        {
            return Err(Error::Config(format!(
                "need 0 <= iou_unmatch < iou_match <= 1, got {} and {}",
                self.iou_unmatch, self.iou_match
            )));
        }
        if self.dir_bins != 2 {
            return Err(Error::Config(
                "only two direction bins are supported".into(),
            ));
        }
        if !(self.smooth_l1_beta > 0.0)
            || !(0.0..=1.0).contains(&self.focal_alpha)
            || self.focal_gamma < 0.0
        {
            return Err(Error::Config(
                "invalid focal or smooth-L1 parameters".into(),
            ));
        }
        Ok(())
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_len<T: Real>(x: &DiffArray<'_, T>, len: usize, op: &'static str) -> Result<()> {
    if x.numel() != len {
        return Err(Error::shape(op, &x.shape(), &[len]));
    }
    Ok(())
}

/// Focal loss of one logit against a binary target, and its derivative.
fn focal(x: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if positive {
        // -α (1-p)^γ log p
        let log_p = -softplus(-x);
        let q = 1.0 - p;
        let loss = -alpha * q.powf(gamma) * log_p;
        let grad = alpha * q.powf(gamma) * (gamma * p * log_p - q);
        (loss, grad)
    } else {
        // -(1-α) p^γ log(1-p)
        let log_q = -softplus(x);
        let loss = -(1.0 - alpha) * p.powf(gamma) * log_q;
        let grad = (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * log_q);
        (loss, grad)
    }
}

/// `Σ_i weight_i · FL(x_i, target_i)` with targets in `{0, 1}`.
pub fn sigmoid_focal_loss<'t, T: Real>(
    logits: DiffArray<'t, T>,
    targets: &[f64],
    weights: &[f64],
    alpha: f64,
    gamma: f64,
) -> Result<DiffArray<'t, T>> {
    check_len(&logits, targets.len(), "focal_loss")?;
    check_len(&logits, weights.len(), "focal_loss")?;
    let x = logits.value();
    let mut total = 0.0;
    let mut grad = vec![T::zero(); x.len()];
    for (i, xi) in x.iter().enumerate() {
        if weights[i] == 0.0 {
            continue;
        }
        let (l, g) = focal(xi.f64(), targets[i] > 0.5, alpha, gamma);
        total += weights[i] * l;
        grad[i] = T::of(weights[i] * g);
    }
    if !total.is_finite() {
        return Err(Error::NaN("focal_loss"));
    }
    Ok(logits
        .tape()
        .record(vec![1], vec![T::of(total)], &[logits], move |g, _| {
            vec![Some(grad.iter().map(|d| *d * g[0]).collect())]
        }))
}

/// `Σ_i weight_i · BCE(σ(x_i), target_i)`.
pub fn bce_with_logits<'t, T: Real>(
    logits: DiffArray<'t, T>,
    targets: &[f64],
    weights: &[f64],
) -> Result<DiffArray<'t, T>> {
    check_len(&logits, targets.len(), "bce_with_logits")?;
    check_len(&logits, weights.len(), "bce_with_logits")?;
    let x = logits.value();
    let mut total = 0.0;
    let mut grad = vec![T::zero(); x.len()];
    for (i, xi) in x.iter().enumerate() {
        let (xi, t) = (xi.f64(), targets[i]);
        total += weights[i] * (softplus(xi) - t * xi);
        grad[i] = T::of(weights[i] * (sigmoid(xi) - t));
    }
    if !total.is_finite() {
        return Err(Error::NaN("bce_with_logits"));
    }
    Ok(logits
        .tape()
        .record(vec![1], vec![T::of(total)], &[logits], move |g, _| {
            vec![Some(grad.iter().map(|d| *d * g[0]).collect())]
        }))
}

/// `Σ smooth_l1(pred − target)` with `0.5 r²/β` below `β`, `|r| − β/2`
/// above.
pub fn smooth_l1_loss<'t, T: Real>(
    pred: DiffArray<'t, T>,
    target: &[f64],
    beta: f64,
) -> Result<DiffArray<'t, T>> {
    check_len(&pred, target.len(), "smooth_l1")?;
    let p = pred.value();
    let mut total = 0.0;
    let mut grad = vec![T::zero(); p.len()];
    for (i, pi) in p.iter().enumerate() {
        let r = pi.f64() - target[i];
        if r.abs() < beta {
            total += 0.5 * r * r / beta;
            grad[i] = T::of(r / beta);
        } else {
            total += r.abs() - 0.5 * beta;
            grad[i] = T::of(r.signum());
        }
    }
    if !total.is_finite() {
        return Err(Error::NaN("smooth_l1"));
    }
    Ok(pred
        .tape()
        .record(vec![1], vec![T::of(total)], &[pred], move |g, _| {
            vec![Some(grad.iter().map(|d| *d * g[0]).collect())]
        }))
}

/// Raw head outputs for one scene, anchor-major.
#[derive(Clone, Copy)]
pub struct HeadOutputs<'t, T: Real> {
    /// `A × 1` classification logits.
    pub cls: DiffArray<'t, T>,
    /// `A × 7` box residuals.
    pub reg: DiffArray<'t, T>,
    /// `A × 1` direction logits.
    pub dir: DiffArray<'t, T>,
    /// `n × 1` point foreground logits.
    pub seg: DiffArray<'t, T>,
}

#[derive(Clone, Copy)]
pub struct LossParts<'t, T: Real> {
    pub total: DiffArray<'t, T>,
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
    pub seg: f64,
    pub num_pos: usize,
}

/// `w_seg·L_seg + (w_cls·L_cls + w_reg·L_reg) / max(N_p, 1) + w_dir·L_dir`.
///
/// `L_cls` sums focal loss over non-ignored anchors, `L_reg` sums
/// smooth-L1 over the positives' residuals, `L_dir` is the mean direction
/// cross-entropy over positives (0 without positives) and `L_seg` the mean
/// point-wise focal loss with `seg_labels` as foreground targets.
pub fn total_loss<'t, T: Real>(
    out: &HeadOutputs<'t, T>,
    targets: &DetectionTargets,
    seg_labels: &[bool],
    cfg: &LossConfig,
) -> Result<LossParts<'t, T>> {
    let tape = out.cls.tape();
    let (alpha, gamma) = (cfg.focal_alpha, cfg.focal_gamma);
    let cls = sigmoid_focal_loss(
        out.cls,
        &targets.cls_target,
        &targets.cls_weight,
        alpha,
        gamma,
    )?;

    let np = targets.positives.len();
    let pos_idx = Arc::new(
        targets
            .positives
            .iter()
            .map(|&a| Some(a))
            .collect::<Vec<_>>(),
    );
    let (reg, dir) = if np == 0 {
        let zero = tape.constant(crate::Tensor::scalar(T::zero()));
        (zero, zero)
    } else {
        let reg_pred = out.reg.gather_rows(Arc::clone(&pos_idx))?;
        if reg_pred.shape() != [np, CODE_SIZE] {
            return Err(Error::shape(
                "total_loss",
                &reg_pred.shape(),
                &[np, CODE_SIZE],
            ));
        }
        let reg = smooth_l1_loss(reg_pred, &targets.reg_target, cfg.smooth_l1_beta)?;
        let dir_pred = out.dir.gather_rows(pos_idx)?;
        let dir =
            bce_with_logits(dir_pred, &targets.dir_target, &vec![1.0; np])?.scale(1.0 / np as f64);
        (reg, dir)
    };

    let n = seg_labels.len();
    let seg_t: Vec<f64> = seg_labels
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    let seg = sigmoid_focal_loss(out.seg, &seg_t, &vec![1.0; n], alpha, gamma)?
        .scale(1.0 / n.max(1) as f64);

    let norm = 1.0 / targets.num_pos.max(1) as f64;
    let total = seg
        .scale(cfg.w_seg)
        .add(cls.scale(cfg.w_cls * norm))?
        .add(reg.scale(cfg.w_reg * norm))?
        .add(dir.scale(cfg.w_dir))?;
    Ok(LossParts {
        total,
        cls: cls.item().f64(),
        reg: reg.item().f64(),
        dir: dir.item().f64(),
        seg: seg.item().f64(),
        num_pos: targets.num_pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, grad_check_many, GradCheckConfig, Tape, Tensor};

    #[test]
    fn smooth_l1_at_transition_is_half_beta() {
        let beta = 1.0 / 9.0;
        let tape = Tape::<f64>::new();
        let mut pred = vec![0.0; 7];
        pred[2] = beta;
        let p = tape.constant(Tensor::new(vec![1, 7], pred).unwrap());
        let l = smooth_l1_loss(p, &[0.0; 7], beta).unwrap().item();
        assert!((l - beta / 2.0).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_have_tiny_loss() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![4], vec![30.0, -30.0, 25.0, -25.0]).unwrap());
        let l = sigmoid_focal_loss(x, &[1.0, 0.0, 1.0, 0.0], &[1.0; 4], 0.25, 2.0)
            .unwrap()
            .item();
        assert!((0.0..1e-6).contains(&l), "{l}");
    }

    #[test]
    fn focal_matches_closed_form() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let l = sigmoid_focal_loss(x, &[1.0, 0.0], &[1.0, 1.0], 0.25, 2.0)
            .unwrap()
            .item();
        let expect = 0.25 * 0.25 * 2f64.ln() + 0.75 * 0.25 * 2f64.ln();
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn primitive_gradients() {
        let x = Tensor::new(vec![6], vec![-3.0, -0.5, 0.0, 0.2, 1.5, 4.0]).unwrap();
        let t = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let w = [1.0, 1.0, 0.0, 2.0, 1.0, 0.5];
        assert!(grad_check(|x| sigmoid_focal_loss(x, &t, &w, 0.25, 2.0), &x, 1e-6).unwrap() < 1e-5);
        assert!(grad_check(|x| bce_with_logits(x, &t, &w), &x, 1e-6).unwrap() < 1e-5);
        let target = [0.0, 0.1, -0.3, 0.5, 1.0, -2.0];
        assert!(grad_check(|x| smooth_l1_loss(x, &target, 1.0 / 9.0), &x, 1e-6).unwrap() < 1e-5);
    }

    fn toy_targets() -> DetectionTargets {
        DetectionTargets {
            cls_target: vec![1.0, 0.0, 0.0, 1.0, 0.0],
            cls_weight: vec![1.0, 1.0, 0.0, 1.0, 1.0],
            positives: vec![0, 3],
            reg_target: (0..14).map(|i| (i as f64 * 0.37).sin() * 0.5).collect(),
            dir_target: vec![1.0, 0.0],
            num_pos: 2,
        }
    }

    #[test]
    fn composed_loss_gradient_and_signs() {
        let t = toy_targets();
        let labels = [true, false, true];
        let cfg = LossConfig::default();
        let inputs = vec![
            Tensor::from_fn(&[5, 1], |i| i as f64 * 0.3 - 0.6),
            Tensor::from_fn(&[5, 7], |i| (i as f64 * 0.77).cos() * 0.4),
            Tensor::from_fn(&[5, 1], |i| 0.5 - i as f64 * 0.2),
            Tensor::from_fn(&[3, 1], |i| i as f64 - 1.0),
        ];
        let r = grad_check_many(
            |xs| {
                let out = HeadOutputs {
                    cls: xs[0],
                    reg: xs[1],
                    dir: xs[2],
                    seg: xs[3],
                };
                let parts = total_loss(&out, &t, &labels, &cfg)?;
                assert!(
                    parts.cls >= 0.0 && parts.reg >= 0.0 && parts.dir >= 0.0 && parts.seg >= 0.0
                );
                assert!(parts.total.item() >= 0.0);
                Ok(parts.total)
            },
            &inputs,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(1e-4), "{r:?}");
    }

    #[test]
    fn perfect_predictions() {
        let t = toy_targets();
        let tape = Tape::<f64>::new();
        let cls = Tensor::new(
            vec![5, 1],
            t.cls_target
                .iter()
                .map(|v| if *v > 0.5 { 40.0 } else { -40.0 })
                .collect(),
        )
        .unwrap();
        let mut reg = Tensor::zeros(&[5, 7]);
        for (k, &a) in t.positives.iter().enumerate() {
            reg.data_mut()[a * 7..(a + 1) * 7].copy_from_slice(&t.reg_target[k * 7..(k + 1) * 7]);
        }
        let out = HeadOutputs {
            cls: tape.constant(cls),
            reg: tape.constant(reg),
            dir: tape.constant(Tensor::zeros(&[5, 1])),
            seg: tape.constant(Tensor::zeros(&[3, 1])),
        };
        let parts = total_loss(&out, &t, &[true, false, true], &LossConfig::default()).unwrap();
        assert_eq!(parts.reg, 0.0);
        assert!(parts.cls < 1e-6);
    }

    #[test]
    fn no_positives_clamps_normaliser() {
        let t = DetectionTargets {
            cls_target: vec![0.0; 3],
            cls_weight: vec![1.0; 3],
            ..Default::default()
        };
        let tape = Tape::<f64>::new();
        let out = HeadOutputs {
            cls: tape.constant(Tensor::full(&[3, 1], -1.0)),
            reg: tape.constant(Tensor::zeros(&[3, 7])),
            dir: tape.constant(Tensor::zeros(&[3, 1])),
            seg: tape.constant(Tensor::zeros(&[2, 1])),
        };
        let parts = total_loss(&out, &t, &[false, false], &LossConfig::default()).unwrap();
        assert!(parts.total.item().is_finite());
        assert_eq!((parts.reg, parts.dir), (0.0, 0.0));
    }

    #[test]
    fn threshold_order_is_validated() {
        let cfg = LossConfig {
            iou_unmatch: 0.7,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        LossConfig::default().validate().unwrap();
    }
}
