use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use voxset::checkpoint::{save_checkpoint, Dtype};
use voxset::detect::{Detector, DetectorConfig};
use voxset::pcio::read_labels;

fn voxset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxset"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn selftest_passes() {
    let out = voxset(&["selftest"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    for suite in [
        "gradcheck",
        "scatter_oracle",
        "vsa_oracle",
        "scatter_softmax",
    ] {
        assert!(text.contains(suite), "{text}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn sabotaged_vjp_fails_with_inputs_echoed() {
    let out = voxset(&["selftest", "--filter", "gradcheck", "--sabotage-vjp"]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("first failure: matmul"), "{text}");
    assert!(text.contains("input 0 shape"), "{text}");
}

#[test]
fn filter_runs_only_scatter_suites() {
    let out = voxset(&["selftest", "--filter", "scatter"]);
    assert_eq!(code(&out), 0);
    let lines: Vec<String> = stdout(&out)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(lines, ["scatter_oracle", "scatter_softmax"]);
    assert_eq!(code(&voxset(&["selftest", "--filter", "nothing"])), 2);
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(
            code(&voxset(&[
                "--seed",
                "7",
                "gen",
                "--count",
                "3",
                "--outdir",
                p(d)
            ])),
            0
        );
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap()
        );
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&voxset(&["gen", "--count", "1", "--outdir", p(dir.path())])),
        2
    );
    assert_eq!(code(&voxset(&["--bogus"])), 2);
    assert_eq!(
        code(&voxset(&[
            "--threads",
            "0",
            "selftest",
            "--filter",
            "scatter_oracle"
        ])),
        2
    );
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\nunknown_key = 2\n").unwrap();
    assert_eq!(
        code(&voxset(&[
            "--config",
            p(&cfg),
            "gen",
            "--count",
            "1",
            "--outdir",
            p(dir.path())
        ])),
        2
    );
}

#[test]
fn config_file_supplies_seed_and_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 4\n[scene]\nbox_count = [2, 2]\nclutter_points = 10\n",
    )
    .unwrap();
    let out_dir = dir.path().join("scenes");
    assert_eq!(
        code(&voxset(&[
            "--config",
            p(&cfg),
            "gen",
            "--count",
            "2",
            "--outdir",
            p(&out_dir)
        ])),
        0
    );
    assert_eq!(read_labels(out_dir.join("000001.txt")).unwrap().len(), 2);
}

#[test]
fn infer_with_cheat_head_returns_labels() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&voxset(&[
            "--seed",
            "11",
            "gen",
            "--count",
            "2",
            "--outdir",
            p(dir.path())
        ])),
        0
    );
    for i in 0..2 {
        let bin = dir.path().join(format!("{i:06}.bin"));
        let labels = dir.path().join(format!("{i:06}.txt"));
        let out = dir.path().join(format!("det{i}.txt"));
        let run = voxset(&[
            "infer",
            "--input",
            p(&bin),
            "--out",
            p(&out),
            "--cheat-labels",
            p(&labels),
        ]);
        assert_eq!(code(&run), 0);
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().next(), Some("x y z l w h yaw score"));
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
            .collect();
        let gts = read_labels(&labels).unwrap();
        assert_eq!(rows.len(), gts.len());
        for g in &gts {
            let want = [
                g.center[0],
                g.center[1],
                g.center[2],
                g.dims[0],
                g.dims[1],
                g.dims[2],
                g.yaw,
            ];
            assert!(
                rows.iter()
                    .any(|r| r[..7].iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9)),
                "{g:?} not in {rows:?}"
            );
        }
    }
}

#[test]
fn infer_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&voxset(&[
            "--seed",
            "1",
            "gen",
            "--count",
            "1",
            "--outdir",
            p(dir.path())
        ])),
        0
    );
    let bin = dir.path().join("000000.bin");
    let out = dir.path().join("out.txt");
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(
        code(&voxset(&[
            "infer",
            "--checkpoint",
            p(&missing),
            "--input",
            p(&bin),
            "--out",
            p(&out)
        ])),
        3
    );

    // weights of a narrower network under the toy configuration
    let mut narrow = DetectorConfig::toy();
    narrow.backbone.bev_widths = [8, 8];
    let store = Detector::new(narrow)
        .unwrap()
        .fresh_store::<f64>(0)
        .unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    save_checkpoint(
        &ckpt,
        &store,
        &DetectorConfig::toy().to_toml().unwrap(),
        Dtype::F64,
    )
    .unwrap();
    let run = voxset(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&bin),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&run), 1);
    assert!(String::from_utf8_lossy(&run.stderr).contains("schema"));
}

#[test]
fn train_toy_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let run = voxset(&[
        "--seed",
        "3",
        "--precision",
        "f32",
        "train-toy",
        "--out",
        p(&out_dir),
        "--steps",
        "3",
        "--eval-scenes",
        "2",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let metrics = fs::read_to_string(out_dir.join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("step\tloss"));
    assert!(!lines[3].ends_with("NA"));
    assert!(stdout(&run).contains("recall"));

    assert_eq!(
        code(&voxset(&[
            "--seed",
            "5",
            "gen",
            "--count",
            "1",
            "--outdir",
            p(dir.path())
        ])),
        0
    );
    let det = dir.path().join("det.txt");
    let ckpt = out_dir.join("model.ckpt");
    let bin = dir.path().join("000000.bin");
    for precision in ["f32", "f64"] {
        let run = voxset(&[
            "--precision",
            precision,
            "infer",
            "--checkpoint",
            p(&ckpt),
            "--input",
            p(&bin),
            "--out",
            p(&det),
        ]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
        assert!(fs::read_to_string(&det)
            .unwrap()
            .starts_with("x y z l w h yaw score"));
    }
}

#[test]
fn bench_prints_rows_and_warns_on_single_repeat() {
    let run = voxset(&[
        "bench",
        "--n-list",
        "500,1000",
        "--k",
        "2",
        "--d",
        "4",
        "--repeats",
        "1",
    ]);
    assert_eq!(code(&run), 0);
    assert!(String::from_utf8_lossy(&run.stderr).contains("noisy"));
    let text = stdout(&run);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "n\tmedian_ms\tratio_to_prev");
    assert!(rows[1].starts_with("500\t") && rows[1].ends_with("NA"));
    assert!(rows[2].starts_with("1000\t"));
    assert_eq!(code(&voxset(&["bench", "--n-list", "1000,500"])), 2);
}
