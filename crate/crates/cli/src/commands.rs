use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use voxset::bench::{bench_vsa, BenchRow};
use voxset::checkpoint::{load_checkpoint, save_checkpoint, Dtype};
use voxset::detect::{
    scene_seed, train_toy, Detection, Detector, DetectorConfig, MetricsRecord, ToyConfig,
};
use voxset::nn::ParamStore;
use voxset::pcio::{
    gen_synthetic_scene, read_kitti_bin, read_labels, write_kitti_bin, write_labels, SceneSpec,
};
use voxset::selftest::{run_selftest, SelftestOptions};
use voxset::{Error, Real};

use crate::config::{BenchSettings, Precision, RunConfig};
use crate::{Cli, Command};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_CHECK,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = u8> = Result<T, CliError>;

struct Settings {
    seed: Option<u64>,
    precision: Precision,
    cfg: RunConfig,
}

impl Settings {
    fn require_seed(&self, command: &str) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::usage(format!("{command} is stochastic and needs --seed")))
    }
}

pub fn run(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(cfg.threads).unwrap_or(1);
    if threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    if threads > 1 {
        eprintln!("warning: computation is single-threaded; --threads {threads} has no effect");
    }
    let s = Settings {
        seed: cli.seed.or(cfg.seed),
        precision: cli.precision.or(cfg.precision).unwrap_or_default(),
        cfg,
    };
    match cli.command {
        Command::Selftest {
            filter,
            sabotage_vjp,
        } => selftest(&s, filter, sabotage_vjp),
        Command::Bench {
            n_list,
            k,
            d,
            repeats,
        } => {
            let mut b = s.cfg.bench.clone().unwrap_or_default();
            b.n_list = n_list.unwrap_or(b.n_list);
            b.k = k.unwrap_or(b.k);
            b.d = d.unwrap_or(b.d);
            b.repeats = repeats.unwrap_or(b.repeats);
            match s.precision {
                Precision::F32 => bench::<f32>(&s, &b),
                Precision::F64 => bench::<f64>(&s, &b),
            }
        }
        Command::Gen {
            count,
            outdir,
            scene,
        } => {
            let spec = match scene {
                Some(path) => SceneSpec::load(path)?,
                None => s.cfg.scene.clone().unwrap_or_default(),
            };
            gen(&s, &spec, count, &outdir)
        }
        Command::TrainToy {
            out,
            steps,
            eval_scenes,
        } => {
            let mut toy = s.cfg.toy.clone().unwrap_or_default();
            toy.train.steps = steps.unwrap_or(toy.train.steps);
            toy.train.eval_scenes = eval_scenes.unwrap_or(toy.train.eval_scenes);
            match s.precision {
                Precision::F32 => train::<f32>(&s, &toy, &out),
                Precision::F64 => train::<f64>(&s, &toy, &out),
            }
        }
        Command::Infer {
            checkpoint,
            input,
            out,
            cheat_labels,
        } => match s.precision {
            Precision::F32 => {
                infer::<f32>(checkpoint.as_deref(), &input, &out, cheat_labels.as_deref())
            }
            Precision::F64 => {
                infer::<f64>(checkpoint.as_deref(), &input, &out, cheat_labels.as_deref())
            }
        },
    }
}

fn selftest(s: &Settings, filter: Option<String>, sabotage_vjp: bool) -> CliResult {
    let opts = SelftestOptions {
        filter,
        sabotage_vjp,
        seed: s.seed.unwrap_or(0),
        ..Default::default()
    };
    let reports = run_selftest(&opts);
    if reports.is_empty() {
        return Err(CliError::usage("--filter matches no suite"));
    }
    let mut code = EXIT_OK;
    for r in &reports {
        println!("{r}");
        if let Some(f) = &r.first_failure {
            println!("  first failure: {}: {}", f.case, f.detail);
            code = EXIT_CHECK;
        }
    }
    Ok(code)
}

fn bench<T: Real>(s: &Settings, b: &BenchSettings) -> CliResult {
    if b.repeats == 1 {
        eprintln!("warning: repeats = 1 gives a single, noisy timing per n");
    }
    let rows = bench_vsa::<T>(&b.n_list, b.k, b.d, b.repeats, s.seed.unwrap_or(0))?;
    println!("# k={} d={} repeats={}", b.k, b.d, b.repeats);
    println!("{}", BenchRow::HEADER);
    for r in rows {
        println!("{r}");
    }
    Ok(EXIT_OK)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn gen(s: &Settings, spec: &SceneSpec, count: usize, outdir: &Path) -> CliResult {
    let seed = s.require_seed("gen")?;
    create_dir(outdir)?;
    for i in 0..count {
        let (pc, boxes) = gen_synthetic_scene(scene_seed(seed, i as u64), spec)?;
        write_kitti_bin(outdir.join(format!("{i:06}.bin")), &pc)?;
        write_labels(outdir.join(format!("{i:06}.txt")), &boxes)?;
    }
    println!("wrote {count} scenes to {}", outdir.display());
    Ok(EXIT_OK)
}

fn train<T: Real>(s: &Settings, toy: &ToyConfig, out: &Path) -> CliResult {
    let seed = s.require_seed("train-toy")?;
    create_dir(out)?;
    let metrics_path = out.join("metrics.tsv");
    let mut metrics = fs::File::create(&metrics_path)
        .map_err(|e| CliError::io(format!("{}: {e}", metrics_path.display())))?;
    let mut write_err = None;
    let mut log = |r: &MetricsRecord| {
        if r.step == 0 {
            if let Err(e) = writeln!(metrics, "{}", MetricsRecord::HEADER) {
                write_err.get_or_insert(e);
            }
        }
        if let Err(e) = writeln!(metrics, "{r}") {
            write_err.get_or_insert(e);
        }
        if r.step % 100 == 0 || r.recall.is_some() {
            eprintln!(
                "step {:>5} loss {:.4} ({:.0} s)",
                r.step, r.loss, r.elapsed_s
            );
        }
    };
    let outcome = train_toy::<T>(toy, seed, &mut log)?;
    if let Some(e) = write_err {
        return Err(CliError::io(format!("{}: {e}", metrics_path.display())));
    }
    let ckpt = out.join("model.ckpt");
    save_checkpoint(
        &ckpt,
        &outcome.store,
        &toy.model.to_toml()?,
        Dtype::of::<T>(),
    )?;
    let first = outcome.history.first().map_or(f64::NAN, |r| r.loss);
    let last = outcome.history.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "steps {} loss {first:.4} -> {last:.4}",
        outcome.history.len()
    );
    if let Some(e) = outcome.eval {
        println!(
            "recall {:.4} ap {:.4} ({} of {} boxes, {} detections)",
            e.recall, e.ap, e.true_positives, e.num_gt, e.num_det
        );
    }
    println!("checkpoint {}", ckpt.display());
    Ok(EXIT_OK)
}

fn infer<T: Real>(
    checkpoint: Option<&Path>,
    input: &Path,
    out: &Path,
    cheat: Option<&Path>,
) -> CliResult {
    let loaded = checkpoint.map(load_checkpoint::<T>).transpose()?;
    let cfg = match &loaded {
        Some((_, text)) => DetectorConfig::from_toml(text)?,
        None => DetectorConfig::toy(),
    };
    let det = Detector::new(cfg)?;
    let pc = read_kitti_bin(input)?;
    let dets: Vec<Detection> = match (cheat, loaded) {
        (Some(labels), _) => det.cheat_predict(&read_labels(labels)?)?,
        (None, Some((store, _))) => predict(&det, &store, &pc)?,
        (None, None) => {
            return Err(CliError::usage(
                "infer needs --checkpoint or --cheat-labels",
            ))
        }
    };
    let mut text = String::from("x y z l w h yaw score\n");
    for d in &dets {
        let b = &d.bbox;
        writeln!(
            text,
            "{} {} {} {} {} {} {} {}",
            b.center[0], b.center[1], b.center[2], b.dims[0], b.dims[1], b.dims[2], b.yaw, d.score
        )
        .expect("write to string");
    }
    fs::write(out, text).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    println!("{} detections written to {}", dets.len(), out.display());
    Ok(EXIT_OK)
}

fn predict<T: Real>(
    det: &Detector,
    store: &ParamStore<T>,
    pc: &voxset::pcio::PointCloud,
) -> CliResult<Vec<Detection>> {
    det.check_schema(store)?;
    Ok(det.predict(store, pc)?)
}
