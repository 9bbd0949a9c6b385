use proptest::prelude::*;
use voxset::checkpoint::{load_checkpoint, save_checkpoint, Dtype};
use voxset::detect::{train_toy, Detector, DetectorConfig, ToyConfig};
use voxset::pcio::{
    gen_synthetic_scene, read_kitti_bin, read_labels, write_kitti_bin, write_labels, PointCloud,
    SceneSpec,
};
use voxset::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kitti_bin_round_trips_f32_values(
        pts in prop::collection::vec((-80.0f32..80.0, -80.0f32..80.0, -5.0f32..5.0, 0.0f32..1.0), 1..200)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.bin");
        let pc = PointCloud::new(
            pts.iter().map(|p| [p.0 as f64, p.1 as f64, p.2 as f64]).collect(),
            pts.iter().map(|p| p.3 as f64).collect(),
        ).unwrap();
        write_kitti_bin(&path, &pc).unwrap();
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 * pts.len() as u64);
        prop_assert_eq!(read_kitti_bin(&path).unwrap(), pc);
    }
}

#[test]
fn truncated_bin_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, [0u8; 20]).unwrap();
    assert!(matches!(read_kitti_bin(&path), Err(Error::Format(_))));
    assert!(matches!(
        read_kitti_bin(dir.path().join("none.bin")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn labels_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, boxes) = gen_synthetic_scene(21, &SceneSpec::default()).unwrap();
    let path = dir.path().join("labels.txt");
    write_labels(&path, &boxes).unwrap();
    assert_eq!(read_labels(&path).unwrap(), boxes);
}

#[test]
fn checkpoint_preserves_predictions() {
    let mut cfg = ToyConfig::default();
    cfg.train.steps = 4;
    cfg.train.eval_scenes = 0;
    let out = train_toy::<f64>(&cfg, 9, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &out.store, &cfg.model.to_toml().unwrap(), Dtype::F64).unwrap();

    let (store, text) = load_checkpoint::<f64>(&path).unwrap();
    let det = Detector::new(DetectorConfig::from_toml(&text).unwrap()).unwrap();
    det.check_schema(&store).unwrap();
    let (pc, _) = gen_synthetic_scene(77, &cfg.scene).unwrap();
    assert_eq!(
        det.predict(&store, &pc).unwrap(),
        out.detector.predict(&out.store, &pc).unwrap()
    );

    let (store32, _) = load_checkpoint::<f32>(&path).unwrap();
    det.check_schema(&store32).unwrap();
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let mut cfg = ToyConfig::default();
    cfg.train.steps = 3;
    cfg.train.eval_scenes = 0;
    let a = train_toy::<f32>(&cfg, 4, |_| {}).unwrap();
    let b = train_toy::<f32>(&cfg, 4, |_| {}).unwrap();
    let losses = |h: &[voxset::detect::MetricsRecord]| h.iter().map(|r| r.loss).collect::<Vec<_>>();
    assert_eq!(losses(&a.history), losses(&b.history));
    assert_eq!(a.store, b.store);
}

#[test]
fn toy_config_toml_round_trip() {
    let cfg = ToyConfig::default();
    let text = cfg.to_toml().unwrap();
    assert_eq!(ToyConfig::from_toml(&text).unwrap(), cfg);
    assert!(ToyConfig::from_toml("[train]\nsteps = 1\nlr = 2\n").is_err());
    assert!(ToyConfig::from_toml("[model.backbone]\nlatent = 2\n").is_err());

    let partial =
        ToyConfig::from_toml("[model.loss]\nw_dir = 0.5\n[train.optimizer]\nlr = 0.001\n").unwrap();
    let mut want = ToyConfig::default();
    want.model.loss.w_dir = 0.5;
    want.train.optimizer.lr = 0.001;
    assert_eq!(partial, want);
}
