//! Built-in verification suites: gradient checks of every differentiable
//! primitive, scatter kernels against loop oracles, the vectorised VSA
//! attention against its per-voxel oracle, and scatter-softmax
//! normalisation.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{conv2d, upsample2x};
use crate::detect::{bce_with_logits, sigmoid_focal_loss, smooth_l1_loss};
use crate::diffcore::{grad_check_many, BnStats, DiffArray, GradCheckConfig, Mode, Tape, Tensor};
use crate::error::Result;
use crate::nn::{Binder, ParamStore};
use crate::scatter::{
    gather_segments, scatter_max, scatter_mean, scatter_outer_sum, scatter_softmax, scatter_sum,
    SegmentTable, VoxelCoord,
};
use crate::vsa::{
    naive_vsa_oracle, slot_logits, slot_mix, sparse_group_conv, NeighborTable, VsaBlock,
};

pub const SUITES: [&str; 4] = [
    "gradcheck",
    "scatter_oracle",
    "vsa_oracle",
    "scatter_softmax",
];

/// Tolerance on the relative error of single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-5;
/// Tolerance on the relative error of the composed block.
pub const BLOCK_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SelftestOptions {
    /// Run only suites whose name contains this string.
    pub filter: Option<String>,
    /// Negate one VJP so the gradient suite must fail.
    pub sabotage_vjp: bool,
    pub seed: u64,
    pub vsa_instances: usize,
    pub softmax_layouts: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            filter: None,
            sabotage_vjp: false,
            seed: 0,
            vsa_instances: 12,
            softmax_layouts: 2000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseFailure {
    pub case: String,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub passed: usize,
    pub failed: usize,
    /// Largest error seen, in the suite's own metric.
    pub max_error: f64,
    pub first_failure: Option<CaseFailure>,
}

impl SuiteReport {
    fn new(suite: &'static str) -> Self {
        Self {
            suite,
            passed: 0,
            failed: 0,
            max_error: 0.0,
            first_failure: None,
        }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    fn record(
        &mut self,
        case: impl Into<String>,
        error: f64,
        tol: f64,
        detail: impl FnOnce() -> String,
    ) {
        self.max_error = self
            .max_error
            .max(if error.is_nan() { f64::INFINITY } else { error });
        if error < tol {
            self.passed += 1;
        } else {
            self.fail(case, detail());
        }
    }

    fn fail(&mut self, case: impl Into<String>, detail: String) {
        self.failed += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(CaseFailure {
                case: case.into(),
                detail,
            });
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} {} passed {:>5} failed {:>3} max_error {:.3e}",
            self.suite,
            if self.ok() { "PASS" } else { "FAIL" },
            self.passed,
            self.failed,
            self.max_error
        )
    }
}

/// Identity forward pass whose VJP returns the negated cotangent.
pub fn negate_vjp<'t>(x: DiffArray<'t, f64>) -> DiffArray<'t, f64> {
    x.tape()
        .record(x.shape(), x.value().to_vec(), &[x], |g, _| {
            vec![Some(g.iter().map(|v| -v).collect())]
        })
}

pub fn run_selftest(opts: &SelftestOptions) -> Vec<SuiteReport> {
    let wanted = |s: &str| opts.filter.as_deref().map_or(true, |f| s.contains(f));
    let mut out = Vec::new();
    if wanted(SUITES[0]) {
        out.push(gradcheck_suite(opts.seed, opts.sabotage_vjp));
    }
    if wanted(SUITES[1]) {
        out.push(scatter_oracle_suite(opts.seed));
    }
    if wanted(SUITES[2]) {
        out.push(vsa_oracle_suite(opts.seed, opts.vsa_instances, 600));
    }
    if wanted(SUITES[3]) {
        out.push(scatter_softmax_suite(opts.seed, opts.softmax_layouts));
    }
    out
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, for inputs to kinked functions.
fn rand_away(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    })
}

fn rand_segments(n: usize, m: i64, rng: &mut ChaCha8Rng) -> SegmentTable {
    let coords: Vec<VoxelCoord> = (0..n).map(|_| [rng.gen_range(0..m), 0, 0]).collect();
    SegmentTable::build(&coords).expect("non-empty layout")
}

fn describe(inputs: &[Tensor<f64>]) -> String {
    inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let head: Vec<String> = t.data().iter().take(6).map(|v| format!("{v:.4}")).collect();
            let more = if t.numel() > 6 { ", ..." } else { "" };
            format!(
                "input {i} shape {:?} [{}{more}]",
                t.shape(),
                head.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn check<F>(
    report: &mut SuiteReport,
    name: &str,
    inputs: Vec<Tensor<f64>>,
    tol: f64,
    sabotage: bool,
    f: F,
) where
    F: for<'t> Fn(&[DiffArray<'t, f64>]) -> Result<DiffArray<'t, f64>>,
{
    let res = grad_check_many(
        |xs| {
            let y = f(xs)?;
            let y = if sabotage { negate_vjp(y) } else { y };
            let probe = Tensor::from_fn(&y.shape(), |i| (i as f64 * 0.618).sin() + 0.3);
            Ok(y.mul(xs[0].tape().constant(probe))?.sum())
        },
        &inputs,
        &GradCheckConfig::default(),
    );
    match res {
        Ok(r) => report.record(name, r.max_rel_error, tol, || {
            format!(
                "relative error {:.3e} at {:?} (analytic {:.6e}, numeric {:.6e}); {}",
                r.max_rel_error,
                r.worst,
                r.analytic,
                r.numeric,
                describe(&inputs)
            )
        }),
        Err(e) => report.fail(name, format!("{e}; {}", describe(&inputs))),
    }
}

/// Central-difference checks of every differentiable primitive, plus the
/// composed VSA block on a 30-point scene. With `sabotage` one VJP is
/// negated and the suite must fail.
pub fn gradcheck_suite(seed: u64, sabotage: bool) -> SuiteReport {
    let mut r = SuiteReport::new(SUITES[0]);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x6ad);
    let tol = PRIMITIVE_TOL;
    let sab = |name: &str| sabotage && name == "matmul";

    check(
        &mut r,
        "matmul",
        vec![rand_tensor(&[3, 4], rng), rand_tensor(&[4, 2], rng)],
        tol,
        sab("matmul"),
        |x| x[0].matmul(x[1]),
    );
    check(
        &mut r,
        "transpose",
        vec![rand_tensor(&[3, 4], rng)],
        tol,
        false,
        |x| x[0].transpose(),
    );
    check(
        &mut r,
        "add",
        vec![rand_tensor(&[2, 3], rng), rand_tensor(&[2, 3], rng)],
        tol,
        false,
        |x| x[0].add(x[1]),
    );
    check(
        &mut r,
        "sub",
        vec![rand_tensor(&[2, 3], rng), rand_tensor(&[2, 3], rng)],
        tol,
        false,
        |x| x[0].sub(x[1]),
    );
    check(
        &mut r,
        "mul",
        vec![rand_tensor(&[2, 3], rng), rand_tensor(&[2, 3], rng)],
        tol,
        false,
        |x| x[0].mul(x[1]),
    );
    check(
        &mut r,
        "add_row",
        vec![rand_tensor(&[4, 3], rng), rand_tensor(&[3], rng)],
        tol,
        false,
        |x| x[0].add_row(x[1]),
    );
    check(
        &mut r,
        "scale",
        vec![rand_tensor(&[5], rng)],
        tol,
        false,
        |x| Ok(x[0].scale(-1.7)),
    );
    check(
        &mut r,
        "relu",
        vec![rand_away(&[4, 3], rng)],
        tol,
        false,
        |x| Ok(x[0].relu()),
    );
    check(
        &mut r,
        "sum",
        vec![rand_tensor(&[4, 3], rng)],
        tol,
        false,
        |x| Ok(x[0].sum()),
    );
    check(
        &mut r,
        "mean",
        vec![rand_tensor(&[4, 3], rng)],
        tol,
        false,
        |x| Ok(x[0].mean()),
    );
    check(
        &mut r,
        "softmax_lastdim",
        vec![rand_tensor(&[3, 2, 4], rng)],
        tol,
        false,
        |x| x[0].softmax_lastdim(),
    );
    check(
        &mut r,
        "reshape",
        vec![rand_tensor(&[3, 4], rng)],
        tol,
        false,
        |x| x[0].reshape(&[2, 6]),
    );
    check(
        &mut r,
        "concat_cols",
        vec![rand_tensor(&[3, 2], rng), rand_tensor(&[3, 3], rng)],
        tol,
        false,
        |x| DiffArray::concat_cols(&[x[0], x[1]]),
    );
    let idx = Arc::new(vec![Some(2), None, Some(0), Some(2), Some(1)]);
    check(
        &mut r,
        "gather_rows",
        vec![rand_tensor(&[3, 2], rng)],
        tol,
        false,
        move |x| x[0].gather_rows(Arc::clone(&idx)),
    );
    check(
        &mut r,
        "batch_norm",
        vec![
            rand_tensor(&[6, 3], rng),
            rand_tensor(&[3], rng),
            rand_tensor(&[3], rng),
        ],
        tol,
        false,
        |x| {
            let stats = BnStats::new(3);
            Ok(x[0]
                .batch_norm(x[1], x[2], &stats, Mode::Train, Default::default())?
                .0)
        },
    );

    let seg = rand_segments(14, 4, rng);
    let s = seg.clone();
    check(
        &mut r,
        "scatter_sum",
        vec![rand_tensor(&[14, 3], rng)],
        tol,
        false,
        move |x| scatter_sum(x[0], &s),
    );
    let s = seg.clone();
    check(
        &mut r,
        "scatter_mean",
        vec![rand_tensor(&[14, 3], rng)],
        tol,
        false,
        move |x| scatter_mean(x[0], &s),
    );
    let s = seg.clone();
    check(
        &mut r,
        "scatter_max",
        vec![rand_tensor(&[14, 3], rng)],
        tol,
        false,
        move |x| scatter_max(x[0], &s),
    );
    let s = seg.clone();
    check(
        &mut r,
        "scatter_softmax",
        vec![rand_tensor(&[14, 3], rng)],
        tol,
        false,
        move |x| scatter_softmax(x[0], &s),
    );
    let s = seg.clone();
    check(
        &mut r,
        "scatter_outer_sum",
        vec![rand_tensor(&[14, 3], rng), rand_tensor(&[14, 2], rng)],
        tol,
        false,
        move |x| scatter_outer_sum(x[0], x[1], &s),
    );
    let s = seg.clone();
    let m = seg.m();
    check(
        &mut r,
        "gather_segments",
        vec![rand_tensor(&[m, 3], rng)],
        tol,
        false,
        move |x| gather_segments(x[0], &s),
    );
    let (k, d) = (3, 2);
    let s = seg.clone();
    check(
        &mut r,
        "slot_logits",
        vec![rand_tensor(&[m, k, d], rng), rand_tensor(&[14, d], rng)],
        tol,
        false,
        move |x| slot_logits(x[0], x[1], &s),
    );
    let s = seg.clone();
    check(
        &mut r,
        "slot_mix",
        vec![rand_tensor(&[14, k], rng), rand_tensor(&[m, k, d], rng)],
        tol,
        false,
        move |x| slot_mix(x[0], x[1], &s),
    );

    let coords: Vec<VoxelCoord> = vec![[0, 0, 0], [0, 1, 0], [1, 1, 0], [2, 0, 0], [5, 5, 0]];
    let nbr = Arc::new(NeighborTable::build(&coords).expect("distinct coords"));
    check(
        &mut r,
        "sparse_group_conv",
        vec![
            rand_tensor(&[5, 2, 2], rng),
            rand_tensor(&[2, 9, 2, 2], rng),
            rand_tensor(&[2, 2], rng),
        ],
        tol,
        false,
        move |x| sparse_group_conv(x[0], x[1], x[2], &nbr),
    );
    check(
        &mut r,
        "conv2d",
        vec![rand_tensor(&[15, 2], rng), rand_tensor(&[18, 3], rng)],
        tol,
        false,
        |x| Ok(conv2d(x[0], 3, 5, x[1], 2)?.0),
    );
    check(
        &mut r,
        "upsample2x",
        vec![rand_tensor(&[6, 2], rng)],
        tol,
        false,
        |x| upsample2x(x[0], 2, 3),
    );

    let targets: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
    let weights = vec![1.0, 0.5, 0.0, 1.0, 2.0, 1.0];
    let (t, w) = (targets.clone(), weights.clone());
    check(
        &mut r,
        "sigmoid_focal_loss",
        vec![rand_tensor(&[6, 1], rng)],
        tol,
        false,
        move |x| sigmoid_focal_loss(x[0], &t, &w, 0.25, 2.0),
    );
    check(
        &mut r,
        "bce_with_logits",
        vec![rand_tensor(&[6, 1], rng)],
        tol,
        false,
        move |x| bce_with_logits(x[0], &targets, &weights),
    );
    let target: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
    let pred = Tensor::from_fn(&[8], |i| target[i] + if i % 2 == 0 { 0.05 } else { -0.4 });
    check(&mut r, "smooth_l1_loss", vec![pred], tol, false, move |x| {
        smooth_l1_loss(x[0], &target, 1.0 / 9.0)
    });

    block_gradcheck(&mut r, seed, sabotage);
    r
}

fn block_gradcheck(r: &mut SuiteReport, seed: u64, sabotage: bool) {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed ^ 0xb10c);
    let (n, k, d_in, d) = (30, 2, 3, 4);
    let coords: Vec<VoxelCoord> = (0..n)
        .map(|_| [rng.gen_range(0..3), rng.gen_range(0..3), 0])
        .collect();
    let local: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let seg = SegmentTable::build(&coords).expect("non-empty");
    let block = VsaBlock::new("b", d_in, d, k, 4);
    let mut store = ParamStore::<f64>::new();
    if let Err(e) = block.init(&mut store, rng) {
        r.fail("vsa_block", e.to_string());
        return;
    }
    let names: Vec<String> = store
        .iter()
        .filter(|(_, e)| e.trainable)
        .map(|(k, _)| k.clone())
        .collect();
    let mut inputs: Vec<Tensor<f64>> = names
        .iter()
        .map(|n| store.get(n).expect("listed").clone())
        .collect();
    inputs.push(rand_tensor(&[n, d_in], rng));
    check(r, "vsa_block", inputs, BLOCK_TOL, sabotage, |xs| {
        let tape = xs[0].tape();
        let b = Binder::train(tape, &store);
        for (name, leaf) in names.iter().zip(xs) {
            b.bind_leaf(name, *leaf);
        }
        block.forward(&b, xs[names.len()], &local, &seg)
    });
}

fn members(seg: &SegmentTable, j: usize) -> Vec<usize> {
    (0..seg.n())
        .filter(|&i| seg.seg_of_point()[i] == j)
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn oracle_reduce(x: &Tensor<f64>, seg: &SegmentTable, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let c = x.shape()[1];
    let mut out = vec![0.0; seg.m() * c];
    for j in 0..seg.m() {
        let pts = members(seg, j);
        for col in 0..c {
            let vals: Vec<f64> = pts.iter().map(|&i| x.data()[i * c + col]).collect();
            out[j * c + col] = f(&vals);
        }
    }
    out
}

fn oracle_softmax(x: &Tensor<f64>, seg: &SegmentTable) -> Vec<f64> {
    let c = x.shape()[1];
    let mut out = vec![0.0; x.numel()];
    for j in 0..seg.m() {
        let pts = members(seg, j);
        for col in 0..c {
            let vals: Vec<f64> = pts.iter().map(|&i| x.data()[i * c + col]).collect();
            let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = vals.iter().map(|v| (v - mx).exp()).sum();
            for (&i, v) in pts.iter().zip(&vals) {
                out[i * c + col] = (v - mx).exp() / total;
            }
        }
    }
    out
}

/// Segment reductions against straightforward loops over random layouts.
pub fn scatter_oracle_suite(seed: u64) -> SuiteReport {
    let mut r = SuiteReport::new(SUITES[1]);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5ca7);
    for trial in 0..40 {
        let n = rng.gen_range(1..400);
        let m = rng.gen_range(1..60);
        let c = rng.gen_range(1..5);
        let seg = rand_segments(n, m, rng);
        let x = Tensor::from_fn(&[n, c], |_| rng.gen_range(-5.0..5.0));
        let tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let case = |op: &str| {
            format!(
                "{op} trial {trial} (n {n}, voxels {}, cols {c}, seed {seed})",
                seg.m()
            )
        };
        let results: [(&str, Result<Vec<f64>>, Vec<f64>); 4] = [
            (
                "scatter_sum",
                scatter_sum(xv, &seg).map(|y| y.value().to_vec()),
                oracle_reduce(&x, &seg, |v| v.iter().sum()),
            ),
            (
                "scatter_mean",
                scatter_mean(xv, &seg).map(|y| y.value().to_vec()),
                oracle_reduce(&x, &seg, |v| v.iter().sum::<f64>() / v.len() as f64),
            ),
            (
                "scatter_max",
                scatter_max(xv, &seg).map(|y| y.value().to_vec()),
                oracle_reduce(&x, &seg, |v| {
                    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                }),
            ),
            (
                "scatter_softmax",
                scatter_softmax(xv, &seg).map(|y| y.value().to_vec()),
                oracle_softmax(&x, &seg),
            ),
        ];
        for (op, got, want) in results {
            match got {
                Ok(got) => {
                    let err = max_diff(&got, &want);
                    r.record(case(op), err, ORACLE_TOL, || {
                        format!("max abs error {err:.3e}")
                    });
                }
                Err(e) => r.fail(case(op), e.to_string()),
            }
        }
    }
    r
}

/// Vectorised encode, ConvFFN and decode against the per-voxel loop oracle
/// on `instances` random scenes of up to `max_n` points, cycling
/// `k ∈ {1, 4, 8, 16}` and `d ∈ {4, 16}`.
pub fn vsa_oracle_suite(seed: u64, instances: usize, max_n: usize) -> SuiteReport {
    let mut r = SuiteReport::new(SUITES[2]);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x75a);
    for trial in 0..instances {
        let k = [1, 4, 8, 16][trial % 4];
        let d = [4, 16][(trial / 4) % 2];
        let n = rng.gen_range(2..=max_n.max(2));
        let d_in = rng.gen_range(2..=8);
        let grid = rng.gen_range(1..=((n as f64).sqrt() as i64).max(1) + 1);
        let case =
            format!("trial {trial}: n {n}, k {k}, d {d}, d_in {d_in}, grid {grid}, seed {seed}");
        match vsa_oracle_error(rng, n, k, d_in, d, grid) {
            Ok(err) => r.record(case, err, ORACLE_TOL, || format!("max abs error {err:.3e}")),
            Err(e) => r.fail(case, e.to_string()),
        }
    }
    r
}

fn vsa_oracle_error(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    d_in: usize,
    d: usize,
    grid: i64,
) -> Result<f64> {
    let coords: Vec<VoxelCoord> = (0..n)
        .map(|_| [rng.gen_range(0..grid), rng.gen_range(0..grid), 0])
        .collect();
    let local: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let x = rand_tensor(&[n, d_in], rng);
    let seg = SegmentTable::build(&coords)?;
    let block = VsaBlock::new("b", d_in, d, k, 4);
    let mut store = ParamStore::new();
    block.init(&mut store, rng)?;
    store
        .get_mut("b.latent")?
        .data_mut()
        .iter_mut()
        .for_each(|v| *v *= 25.0);
    let tape = Tape::new();
    let b = Binder::eval(&tape, &store);
    let got = block
        .attention(&b, tape.constant(x.clone()), &local, &seg)?
        .to_tensor();
    let want = naive_vsa_oracle(&x, &local, &seg, &block.load_params(&store)?);
    Ok(max_diff(got.data(), want.data()))
}

/// Per-segment, per-column sums of scatter softmax over `layouts` random
/// segment layouts, including extreme logits.
pub fn scatter_softmax_suite(seed: u64, layouts: usize) -> SuiteReport {
    let mut r = SuiteReport::new(SUITES[3]);
    let rng = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x50f7);
    for trial in 0..layouts {
        let n = rng.gen_range(1..64);
        let m = rng.gen_range(1..=n as i64);
        let c = rng.gen_range(1..4);
        let scale = [1.0, 30.0, 700.0][trial % 3];
        let seg = rand_segments(n, m, rng);
        let x = Tensor::from_fn(&[n, c], |_| rng.gen_range(-scale..scale));
        let case = format!(
            "layout {trial}: n {n}, voxels {}, cols {c}, logit scale {scale}, seed {seed}",
            seg.m()
        );
        let tape = Tape::<f64>::new();
        match scatter_softmax(tape.constant(x), &seg) {
            Ok(p) => {
                let p = p.value();
                let mut err: f64 = 0.0;
                for j in 0..seg.m() {
                    for col in 0..c {
                        let total: f64 = seg.members(j).iter().map(|&i| p[i * c + col]).sum();
                        err = err.max((total - 1.0).abs());
                    }
                }
                if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    err = f64::INFINITY;
                }
                r.record(case, err, ORACLE_TOL, || format!("max |Σ p - 1| {err:.3e}"));
            }
            Err(e) => r.fail(case, e.to_string()),
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for rep in run_selftest(&SelftestOptions::default()) {
            assert!(rep.ok(), "{rep} {:?}", rep.first_failure);
        }
    }

    #[test]
    fn sabotage_is_caught() {
        let rep = gradcheck_suite(0, true);
        assert!(!rep.ok());
        assert_eq!(rep.first_failure.unwrap().case, "matmul");
    }

    #[test]
    fn filter_selects_suites() {
        let opts = SelftestOptions {
            filter: Some("scatter".into()),
            softmax_layouts: 10,
            ..Default::default()
        };
        let names: Vec<_> = run_selftest(&opts).iter().map(|r| r.suite).collect();
        assert_eq!(names, ["scatter_oracle", "scatter_softmax"]);
    }
}
