use super::*;
use crate::diffcore::Tape;
use crate::nn::{Binder, ParamStore};
use crate::pcio::{crop_range, gen_synthetic_scene, wrap_angle, SceneSpec};

fn toy() -> Detector {
    Detector::new(DetectorConfig::toy()).unwrap()
}

#[test]
fn default_config_snapshot() {
    let cfg = DetectorConfig::default();
    assert_eq!(cfg.backbone.grid.voxel_size, [0.32, 0.32, 4.0]);
    assert_eq!(cfg.backbone.block_dims, vec![16, 32, 64, 128]);
    assert_eq!((cfg.nms.iou_threshold, cfg.nms.score_threshold), (0.1, 0.3));
    assert_eq!((cfg.loss.iou_match, cfg.loss.iou_unmatch), (0.6, 0.45));
    let text = cfg.to_toml().unwrap();
    assert_eq!(DetectorConfig::from_toml(&text).unwrap(), cfg);
    assert!(DetectorConfig::from_toml("bogus = 1\n").is_err());
}

#[test]
fn anchor_count_matches_grid() {
    let d = toy();
    assert_eq!(d.anchors.len(), 64 * 64 * 2);
}

#[test]
fn cheat_head_recovers_labels() {
    let d = toy();
    for seed in 0..5 {
        let (_, gts) = gen_synthetic_scene(seed, &SceneSpec::default()).unwrap();
        let dets = d.cheat_predict(&gts).unwrap();
        assert_eq!(dets.len(), gts.len());
        for gt in &gts {
            let hit = dets
                .iter()
                .find(|det| iou_bev(&det.bbox, gt) > 0.999)
                .expect("every label reproduced");
            for k in 0..3 {
                assert!((hit.bbox.center[k] - gt.center[k]).abs() < 1e-9);
                assert!((hit.bbox.dims[k] - gt.dims[k]).abs() < 1e-9);
            }
            assert!(wrap_angle(hit.bbox.yaw - gt.yaw).abs() < 1e-9);
        }
    }
}

#[test]
fn forward_shapes_and_untrained_predictions() {
    let d = toy();
    let store: ParamStore<f64> = d.fresh_store(0).unwrap();
    let (raw, _) = gen_synthetic_scene(3, &SceneSpec::default()).unwrap();
    let pc = crop_range(&raw, &d.backbone.cfg.grid).unwrap();
    let tape = Tape::new();
    let out = d.forward(&Binder::train(&tape, &store), &pc).unwrap();
    assert_eq!(out.cls.shape(), vec![8192, 1]);
    assert_eq!(out.reg.shape(), vec![8192, 7]);
    assert_eq!(out.seg.shape(), vec![pc.len(), 1]);
    // classifier prior keeps every score near 0.01, below the threshold
    assert!(d.predict(&store, &raw).unwrap().is_empty());
}

#[test]
fn schema_check_catches_mismatch() {
    let d = toy();
    let mut store: ParamStore<f64> = d.fresh_store(1).unwrap();
    d.check_schema(&store).unwrap();
    store.insert("head.cls.bias", crate::Tensor::zeros(&[3]));
    assert!(matches!(
        d.check_schema(&store),
        Err(crate::Error::Schema(_))
    ));
}

#[test]
fn short_run_lowers_the_loss() {
    let mut cfg = ToyConfig::default();
    cfg.train.steps = 40;
    cfg.train.warmup_steps = 5;
    cfg.train.eval_scenes = 0;
    let out = train_toy::<f64>(&cfg, 0, |_| {}).unwrap();
    let first: f64 = out.history[..5].iter().map(|r| r.loss).sum::<f64>() / 5.0;
    let last: f64 = out.history[35..].iter().map(|r| r.loss).sum::<f64>() / 5.0;
    assert!(last < first, "{first} -> {last}");
}
