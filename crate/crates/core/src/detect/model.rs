use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{
    build_targets, direction_bin, fold_half_turn, resolve_direction, AnchorConfig, AnchorSet,
    DetectionTargets,
};
use super::codec::{decode_boxes, encode_boxes, CODE_SIZE};
use super::eval::Detection;
use super::loss::{HeadOutputs, LossConfig};
use super::nms::{nms, NmsConfig};
use crate::backbone::{bev_softpool, Backbone, BackboneConfig, BevCnn, StageLayout};
use crate::diffcore::{Real, Tape};
use crate::error::{Error, Result};
use crate::nn::{Binder, Linear, ParamStore};
use crate::pcio::{crop_range, Box3D, PointCloud};

/// Prior foreground probability used to initialise the classifier bias.
pub const CLS_PRIOR: f64 = 0.01;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub backbone: BackboneConfig,
    pub anchors: AnchorConfig,
    pub loss: LossConfig,
    pub nms: NmsConfig,
}

impl DetectorConfig {
    pub fn toy() -> Self {
        Self {
            backbone: BackboneConfig::toy(),
            anchors: AnchorConfig::toy(),
            loss: LossConfig {
                focal_alpha: 0.75,
                ..Default::default()
            },
            nms: NmsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.loss.validate()?;
        if self.anchors.yaws.is_empty() || self.anchors.dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config(
                "anchors need positive dims and at least one yaw".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.nms.iou_threshold)
            || !(0.0..=1.0).contains(&self.nms.score_threshold)
        {
            return Err(Error::Config("NMS thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Backbone, BEV network and the anchor heads.
#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub backbone: Backbone,
    pub cnn: BevCnn,
    pub cls_head: Linear,
    pub reg_head: Linear,
    pub dir_head: Linear,
    pub seg_head: Linear,
    pub anchors: AnchorSet,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let b = &cfg.backbone;
        let c = b.bev_channels();
        let a = cfg.anchors.per_cell();
        let (h, w) = b.bev_dims();
        let anchors = AnchorSet::generate(
            h + h % 2,
            w + w % 2,
            b.pillar_size,
            [b.grid.origin[0], b.grid.origin[1]],
            &cfg.anchors,
        )?;
        Ok(Self {
            backbone: Backbone::new(b.clone())?,
            cnn: BevCnn::new("bev", b.out_dim(), b.bev_widths),
            cls_head: Linear::new("head.cls", c, a, true),
            reg_head: Linear::new("head.reg", c, a * CODE_SIZE, true),
            dir_head: Linear::new("head.dir", c, a, true),
            seg_head: Linear::new("head.seg", b.out_dim(), 1, true),
            anchors,
            cfg,
        })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<()> {
        self.backbone.init(store, rng)?;
        self.cnn.init(store, rng);
        for head in [
            &self.cls_head,
            &self.reg_head,
            &self.dir_head,
            &self.seg_head,
        ] {
            head.init(store, rng);
        }
        let prior = T::of(-((1.0 - CLS_PRIOR) / CLS_PRIOR).ln());
        for name in ["head.cls.bias", "head.seg.bias"] {
            store.get_mut(name)?.data_mut().fill(prior);
        }
        Ok(())
    }

    /// A freshly initialised store, used as the schema for checkpoints.
    pub fn fresh_store<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        use rand::SeedableRng;
        let mut store = ParamStore::new();
        self.init(
            &mut store,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        )?;
        Ok(store)
    }

    /// Every name and shape in `store` must match the architecture.
    pub fn check_schema<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        let expect = self.fresh_store::<T>(0)?;
        for (name, e) in expect.iter() {
            let got = store
                .get(name)
                .map_err(|_| Error::Schema(format!("checkpoint lacks {name}")))?;
            if got.shape() != e.tensor.shape() {
                return Err(Error::Schema(format!(
                    "{name}: checkpoint shape {:?}, model expects {:?}",
                    got.shape(),
                    e.tensor.shape()
                )));
            }
        }
        if store.len() != expect.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} tensors, model expects {}",
                store.len(),
                expect.len()
            )));
        }
        Ok(())
    }

    /// Head outputs for a cloud already cropped to the grid.
    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        pc: &PointCloud,
    ) -> Result<HeadOutputs<'t, T>> {
        let layout = StageLayout::build(pc, &self.backbone.cfg)?;
        let feats = self.backbone.forward_with(b, pc, &layout)?;
        let seg = self.seg_head.forward(b, feats)?;
        let bev = bev_softpool(feats, pc, &self.backbone.cfg)?;
        let bev = self.cnn.forward(b, &bev)?;
        let cells = bev.height * bev.width;
        let a = self.cfg.anchors.per_cell();
        if cells * a != self.anchors.len() {
            return Err(Error::shape("detector", &[cells, a], &[self.anchors.len()]));
        }
        let total = cells * a;
        Ok(HeadOutputs {
            cls: self.cls_head.forward(b, bev.data)?.reshape(&[total, 1])?,
            reg: self
                .reg_head
                .forward(b, bev.data)?
                .reshape(&[total, CODE_SIZE])?,
            dir: self.dir_head.forward(b, bev.data)?.reshape(&[total, 1])?,
            seg,
        })
    }

    pub fn targets(&self, gts: &[Box3D]) -> Result<DetectionTargets> {
        build_targets(&self.anchors.boxes, gts, &self.cfg.loss)
    }

    /// Scored boxes after thresholding and NMS.
    pub fn postprocess(
        &self,
        scores: &[f64],
        codes: &[f64],
        dir_logits: &[f64],
    ) -> Result<Vec<Detection>> {
        let thr = self.cfg.nms.score_threshold;
        let mut boxes = Vec::new();
        let mut kept_scores = Vec::new();
        for (a, &s) in scores.iter().enumerate() {
            if s <= thr {
                continue;
            }
            let code: [f64; CODE_SIZE] = codes[a * CODE_SIZE..(a + 1) * CODE_SIZE]
                .try_into()
                .expect("code width");
            if code.iter().any(|v| !v.is_finite()) {
                return Err(Error::NaN("box residuals"));
            }
            let mut b = decode_boxes(&code, &self.anchors.boxes[a])?;
            b.yaw = resolve_direction(b.yaw, dir_logits[a] > 0.0);
            boxes.push(b);
            kept_scores.push(s);
        }
        let keep = nms(&boxes, &kept_scores, self.cfg.nms.iou_threshold, thr);
        Ok(keep
            .into_iter()
            .take(self.cfg.nms.max_detections)
            .map(|i| Detection {
                bbox: boxes[i],
                score: kept_scores[i],
            })
            .collect())
    }

    /// Inference on a raw cloud; points outside the grid are dropped.
    pub fn predict<T: Real>(
        &self,
        store: &ParamStore<T>,
        pc: &PointCloud,
    ) -> Result<Vec<Detection>> {
        let pc = crop_range(pc, &self.backbone.cfg.grid)?;
        let tape = Tape::new();
        let b = Binder::eval(&tape, store);
        let out = self.forward(&b, &pc)?;
        let scores: Vec<f64> = out
            .cls
            .value()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x.f64()).exp()))
            .collect();
        let codes: Vec<f64> = out.reg.value().iter().map(|v| v.f64()).collect();
        let dirs: Vec<f64> = out.dir.value().iter().map(|v| v.f64()).collect();
        self.postprocess(&scores, &codes, &dirs)
    }

    /// Head outputs that reproduce `gts` exactly: score 1 and the exact
    /// residuals on every positive anchor, score 0 elsewhere.
    pub fn cheat_outputs(&self, gts: &[Box3D]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let t = self.targets(gts)?;
        let n = self.anchors.len();
        let (mut scores, mut codes, mut dirs) =
            (vec![0.0; n], vec![0.0; n * CODE_SIZE], vec![0.0; n]);
        let m = super::anchors::match_anchors(&self.anchors.boxes, gts, &self.cfg.loss);
        for &a in &t.positives {
            let gt = &gts[m.matched_gt[a].expect("positive anchors are matched")];
            let mut code = encode_boxes(gt, &self.anchors.boxes[a])?;
            code[CODE_SIZE - 1] = fold_half_turn(code[CODE_SIZE - 1]);
            scores[a] = 1.0;
            codes[a * CODE_SIZE..(a + 1) * CODE_SIZE].copy_from_slice(&code);
            dirs[a] = if direction_bin(gt.yaw) { 1.0 } else { -1.0 };
        }
        Ok((scores, codes, dirs))
    }

    pub fn cheat_predict(&self, gts: &[Box3D]) -> Result<Vec<Detection>> {
        let (s, c, d) = self.cheat_outputs(gts)?;
        self.postprocess(&s, &c, &d)
    }
}
