//! Wall-clock timing of the VSA attention forward pass.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Binder, ParamStore};
use crate::scatter::{SegmentTable, VoxelCoord};
use crate::vsa::VsaBlock;

/// Average occupancy of the synthetic voxel layout.
pub const POINTS_PER_VOXEL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub median_ms: f64,
    /// `median_ms` over the previous row's, absent on the first row.
    pub ratio_to_prev: Option<f64>,
}

impl BenchRow {
    pub const HEADER: &'static str = "n\tmedian_ms\tratio_to_prev";
}

impl std::fmt::Display for BenchRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.ratio_to_prev {
            Some(r) => write!(f, "{}\t{:.3}\t{:.3}", self.n, self.median_ms, r),
            None => write!(f, "{}\t{:.3}\tNA", self.n, self.median_ms),
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Random points spread over about `n / POINTS_PER_VOXEL` voxels of a square
/// BEV patch, with a freshly initialised block.
struct Workload<T: Real> {
    block: VsaBlock,
    store: ParamStore<T>,
    x: Tensor<T>,
    local: Vec<[f64; 3]>,
    seg: SegmentTable,
}

impl<T: Real> Workload<T> {
    fn new(n: usize, k: usize, d: usize, seed: u64) -> Result<Self> {
        if n == 0 || k == 0 || d == 0 {
            return Err(Error::Config("bench needs positive n, k and d".into()));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let side = ((n / POINTS_PER_VOXEL).max(1) as f64).sqrt().ceil() as i64;
        let coords: Vec<VoxelCoord> = (0..n)
            .map(|_| [rng.gen_range(0..side), rng.gen_range(0..side), 0])
            .collect();
        let local: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let seg = SegmentTable::build(&coords)?;
        let x = Tensor::<T>::from_fn(&[n, d], |_| T::of(rng.gen_range(-1.0..1.0)));
        let block = VsaBlock::new("bench", d, d, k, 8);
        let mut store = ParamStore::<T>::new();
        block.init(&mut store, rng)?;
        Ok(Workload {
            block,
            store,
            x,
            local,
            seg,
        })
    }

    /// Milliseconds of one encode, ConvFFN and decode pass.
    fn run(&self) -> Result<f64> {
        let tape = Tape::new();
        let b = Binder::eval(&tape, &self.store);
        let xv = tape.constant(self.x.clone());
        let start = Instant::now();
        let out = self.block.attention(&b, xv, &self.local, &self.seg)?;
        std::hint::black_box(out.value());
        Ok(start.elapsed().as_secs_f64() * 1e3)
    }
}

/// Median milliseconds of encode, ConvFFN and decode over `repeats` runs
/// on `n` random points, after one untimed warm-up run.
pub fn time_vsa_forward<T: Real>(
    n: usize,
    k: usize,
    d: usize,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    Ok(bench_vsa::<T>(&[n], k, d, repeats, seed)?[0].median_ms)
}

/// One row per entry of `n_list`, which must be strictly ascending.
///
/// Repeats are interleaved across sizes so that slow drift in machine speed
/// affects every row alike.
pub fn bench_vsa<T: Real>(
    n_list: &[usize],
    k: usize,
    d: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "n_list must be non-empty and strictly ascending".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("bench needs positive repeats".into()));
    }
    let work = n_list
        .iter()
        .map(|&n| Workload::<T>::new(n, k, d, seed))
        .collect::<Result<Vec<_>>>()?;
    for w in &work {
        w.run()?;
    }
    let mut times = vec![Vec::with_capacity(repeats); work.len()];
    for _ in 0..repeats {
        for (w, t) in work.iter().zip(&mut times) {
            t.push(w.run()?);
        }
    }
    let mut rows: Vec<BenchRow> = Vec::with_capacity(n_list.len());
    for (&n, t) in n_list.iter().zip(times) {
        let median_ms = median(t);
        let ratio_to_prev = rows.last().map(|p| median_ms / p.median_ms);
        rows.push(BenchRow {
            n,
            median_ms,
            ratio_to_prev,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_validation() {
        let rows = bench_vsa::<f64>(&[200, 400], 2, 4, 1, 0).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].ratio_to_prev.is_none() && rows[1].ratio_to_prev.is_some());
        assert!(bench_vsa::<f64>(&[400, 200], 2, 4, 1, 0).is_err());
        assert!(bench_vsa::<f64>(&[100], 2, 4, 0, 0).is_err());
        assert_eq!(median(vec![3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
