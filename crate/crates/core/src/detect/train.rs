use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalResult};
use super::loss::total_loss;
use super::model::{Detector, DetectorConfig};
use crate::diffcore::{Real, Tape};
use crate::error::{Error, Result};
use crate::nn::{Binder, ParamStore};
use crate::optim::{clip_grad_norm, warmup_cosine, AdamW, AdamWConfig};
use crate::pcio::{crop_range, gen_synthetic_scene, Box3D, PointCloud, SceneSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub warmup_steps: usize,
    pub optimizer: AdamWConfig,
    pub grad_clip: f64,
    /// Held-out scenes scored after the last step.
    pub eval_scenes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            warmup_steps: 100,
            optimizer: AdamWConfig::default(),
            grad_clip: 10.0,
            eval_scenes: 50,
        }
    }
}

/// Everything a toy training run needs besides the seed. When read from
/// TOML, keys given at any depth override the toy preset; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct ToyConfig {
    pub model: DetectorConfig,
    pub scene: SceneSpec,
    pub train: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyFields {
    model: DetectorConfig,
    scene: SceneSpec,
    train: TrainConfig,
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl TryFrom<toml::Table> for ToyConfig {
    type Error = Error;

    fn try_from(overlay: toml::Table) -> Result<Self> {
        let mut table = toml::Table::try_from(ToyConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut table, overlay);
        let f: ToyFields = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(Self {
            model: f.model,
            scene: f.scene,
            train: f.train,
        })
    }
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            model: DetectorConfig::toy(),
            scene: SceneSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ToyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.scene.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `i`-th training scene.
pub fn scene_seed(seed: u64, i: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ i)
}

/// Seed of the `i`-th held-out scene, disjoint stream from training.
pub fn eval_seed(seed: u64, i: u64) -> u64 {
    splitmix64(splitmix64(seed ^ 0x5eed_0000_e7a1_0000) ^ !i)
}

/// Foreground flag per point: inside any ground-truth box.
pub fn point_labels(pc: &PointCloud, gts: &[Box3D]) -> Vec<bool> {
    pc.xyz
        .iter()
        .map(|p| gts.iter().any(|b| b.contains(p)))
        .collect()
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub loss: f64,
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
    pub seg: f64,
    pub num_pos: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub elapsed_s: f64,
    pub recall: Option<f64>,
    pub ap: Option<f64>,
}

impl MetricsRecord {
    pub const HEADER: &'static str =
        "step\tloss\tcls\treg\tdir\tseg\tnum_pos\tlr\tgrad_norm\telapsed_s\trecall\tap";
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.3e}\t{:.4}\t{:.1}\t{}\t{}",
            self.step,
            self.loss,
            self.cls,
            self.reg,
            self.dir,
            self.seg,
            self.num_pos,
            self.lr,
            self.grad_norm,
            self.elapsed_s,
            opt(self.recall),
            opt(self.ap)
        )
    }
}

pub struct TrainOutcome<T: Real> {
    pub detector: Detector,
    pub store: ParamStore<T>,
    pub history: Vec<MetricsRecord>,
    pub eval: Option<EvalResult>,
}

/// Scores `count` held-out scenes.
pub fn evaluate_detector<T: Real>(
    det: &Detector,
    store: &ParamStore<T>,
    scene: &SceneSpec,
    seed: u64,
    count: usize,
) -> Result<EvalResult> {
    let mut preds = Vec::with_capacity(count);
    let mut gts = Vec::with_capacity(count);
    for i in 0..count {
        let (pc, boxes) = gen_synthetic_scene(eval_seed(seed, i as u64), scene)?;
        preds.push(det.predict(store, &pc)?);
        gts.push(boxes);
    }
    Ok(evaluate(&preds, &gts, 0.5))
}

/// Trains on a fresh synthetic scene per step (batch size 1) and scores
/// held-out scenes at the end. `on_record` sees every step's record; the
/// last one carries the evaluation.
pub fn train_toy<T: Real>(
    cfg: &ToyConfig,
    seed: u64,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome<T>> {
    let det = Detector::new(cfg.model.clone())?;
    let mut store = ParamStore::<T>::new();
    det.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut opt = AdamW::new(cfg.train.optimizer.clone());
    let mut history = Vec::with_capacity(cfg.train.steps);
    let start = Instant::now();
    let tc = &cfg.train;

    for step in 0..tc.steps {
        let (raw, gts) = gen_synthetic_scene(scene_seed(seed, step as u64), &cfg.scene)?;
        let pc = crop_range(&raw, &det.backbone.cfg.grid)?;
        let targets = det.targets(&gts)?;
        let labels = point_labels(&pc, &gts);
        let lr = warmup_cosine(step, tc.steps, tc.warmup_steps, tc.optimizer.lr);

        let tape = Tape::<T>::new();
        let b = Binder::train(&tape, &store);
        let out = det.forward(&b, &pc)?;
        let parts = total_loss(&out, &targets, &labels, &det.cfg.loss)?;
        let loss = parts.total.item().f64();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "loss {loss} (cls {}, reg {}, dir {}, seg {})",
                    parts.cls, parts.reg, parts.dir, parts.seg
                ),
            });
        }
        tape.backward(parts.total)?;
        let mut grads = b.grads();
        let stats = b.finish();
        let grad_norm = clip_grad_norm(&mut grads, tc.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("gradient norm {grad_norm}"),
            });
        }
        opt.step(&mut store, &grads, lr)?;
        stats.commit(&mut store)?;

        let rec = MetricsRecord {
            step,
            loss,
            cls: parts.cls,
            reg: parts.reg,
            dir: parts.dir,
            seg: parts.seg,
            num_pos: parts.num_pos,
            lr,
            grad_norm,
            elapsed_s: start.elapsed().as_secs_f64(),
            recall: None,
            ap: None,
        };
        if step + 1 < tc.steps || tc.eval_scenes == 0 {
            on_record(&rec);
        }
        history.push(rec);
    }

    let eval = if tc.eval_scenes > 0 {
        let e = evaluate_detector(&det, &store, &cfg.scene, seed, tc.eval_scenes)?;
        if let Some(last) = history.last_mut() {
            last.recall = Some(e.recall);
            last.ap = Some(e.ap);
            last.elapsed_s = start.elapsed().as_secs_f64();
            on_record(last);
        }
        Some(e)
    } else {
        None
    };
    Ok(TrainOutcome {
        detector: det,
        store,
        history,
        eval,
    })
}
