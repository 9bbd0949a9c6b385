//! Segment reductions over voxel membership.
//!
//! A [`SegmentTable`] assigns every point to one of `m` dense segment ids.
//! Ids are given in order of first occurrence, so the table depends only on
//! the point order. Within a segment every reduction accumulates in
//! ascending point index.

use std::collections::HashMap;
use std::sync::Arc;

use crate::diffcore::{DiffArray, Real};
use crate::error::{Error, Result};

pub type VoxelCoord = [i64; 3];

#[derive(Debug)]
struct Inner {
    seg_of_point: Vec<usize>,
    voxel_coords: Vec<VoxelCoord>,
    counts: Vec<usize>,
    // points grouped by segment (CSR), ascending within each segment
    offsets: Vec<usize>,
    members: Vec<usize>,
}

/// Point-to-voxel assignment. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct SegmentTable(Arc<Inner>);

impl SegmentTable {
    /// Groups points by their voxel coordinate.
    pub fn build(coords: &[VoxelCoord]) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("build_segments"));
        }
        let mut ids: HashMap<VoxelCoord, usize> = HashMap::with_capacity(coords.len() / 4 + 1);
        let mut voxel_coords = Vec::new();
        let mut counts = Vec::new();
        let seg_of_point: Vec<usize> = coords
            .iter()
            .map(|c| {
                let next = voxel_coords.len();
                let id = *ids.entry(*c).or_insert(next);
                if id == next {
                    voxel_coords.push(*c);
                    counts.push(0);
                }
                counts[id] += 1;
                id
            })
            .collect();
        Ok(Self::from_assignment(seg_of_point, voxel_coords, counts))
    }

    fn from_assignment(
        seg_of_point: Vec<usize>,
        voxel_coords: Vec<VoxelCoord>,
        counts: Vec<usize>,
    ) -> Self {
        let m = counts.len();
        let mut offsets = Vec::with_capacity(m + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut cursor = offsets[..m].to_vec();
        let mut members = vec![0; seg_of_point.len()];
        for (i, &s) in seg_of_point.iter().enumerate() {
            members[cursor[s]] = i;
            cursor[s] += 1;
        }
        Self(Arc::new(Inner {
            seg_of_point,
            voxel_coords,
            counts,
            offsets,
            members,
        }))
    }

    /// Number of points.
    pub fn n(&self) -> usize {
        self.0.seg_of_point.len()
    }

    /// Number of non-empty voxels.
    pub fn m(&self) -> usize {
        self.0.counts.len()
    }

    pub fn seg_of_point(&self) -> &[usize] {
        &self.0.seg_of_point
    }

    pub fn voxel_coords(&self) -> &[VoxelCoord] {
        &self.0.voxel_coords
    }

    pub fn counts(&self) -> &[usize] {
        &self.0.counts
    }

    /// Points of segment `j` in ascending order.
    pub fn members(&self, j: usize) -> &[usize] {
        &self.0.members[self.0.offsets[j]..self.0.offsets[j + 1]]
    }

    fn check_rows<T: Real>(&self, x: &DiffArray<'_, T>, op: &'static str) -> Result<usize> {
        let (rows, cols) = x.rows_cols();
        if rows != self.n() {
            return Err(Error::shape(op, &x.shape(), &[self.n()]));
        }
        Ok(cols)
    }
}

/// `build_segments` under its operational name.
pub fn build_segments(coords: &[VoxelCoord]) -> Result<SegmentTable> {
    SegmentTable::build(coords)
}

fn reduced_shape(shape: &[usize], m: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[0] = m;
    s
}

/// `out[j] = Σ_{seg(i)=j} x[i]`.
pub fn scatter_sum<'t, T: Real>(
    x: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let c = seg.check_rows(&x, "scatter_sum")?;
    let v = x.value();
    let out = sum_rows(&v, seg, c);
    let seg = seg.clone();
    Ok(x.tape().record(
        reduced_shape(&x.shape(), seg.m()),
        out,
        &[x],
        move |g, _| vec![Some(gather_rows(g, &seg, c))],
    ))
}

/// Per-segment mean.
pub fn scatter_mean<'t, T: Real>(
    x: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let c = seg.check_rows(&x, "scatter_mean")?;
    let v = x.value();
    let mut out = sum_rows(&v, seg, c);
    for (row, &n) in out.chunks_exact_mut(c.max(1)).zip(seg.counts()) {
        let n = T::of(n as f64);
        row.iter_mut().for_each(|o| *o /= n);
    }
    let seg = seg.clone();
    Ok(x.tape().record(
        reduced_shape(&x.shape(), seg.m()),
        out,
        &[x],
        move |g, _| {
            let mut dx = gather_rows(g, &seg, c);
            for (row, &s) in dx.chunks_exact_mut(c.max(1)).zip(seg.seg_of_point()) {
                let n = T::of(seg.counts()[s] as f64);
                row.iter_mut().for_each(|d| *d /= n);
            }
            vec![Some(dx)]
        },
    ))
}

/// Per-segment elementwise max. Ties route the gradient to the lowest
/// point index.
pub fn scatter_max<'t, T: Real>(
    x: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let c = seg.check_rows(&x, "scatter_max")?;
    let v = x.value();
    let m = seg.m();
    let mut out = vec![T::neg_infinity(); m * c];
    let mut arg = vec![usize::MAX; m * c];
    for (i, (row, &s)) in v.chunks_exact(c.max(1)).zip(seg.seg_of_point()).enumerate() {
        for (col, &val) in row.iter().enumerate() {
            let k = s * c + col;
            if arg[k] == usize::MAX || val > out[k] {
                out[k] = val;
                arg[k] = i;
            }
        }
    }
    let n = seg.n();
    Ok(x.tape()
        .record(reduced_shape(&x.shape(), m), out, &[x], move |g, _| {
            let mut dx = vec![T::zero(); n * c];
            for (k, &i) in arg.iter().enumerate() {
                dx[i * c + k % c] += g[k];
            }
            vec![Some(dx)]
        }))
}

/// Softmax over the points of each segment, independently per column.
pub fn scatter_softmax<'t, T: Real>(
    logits: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let c = seg.check_rows(&logits, "scatter_softmax")?;
    let v = logits.value();
    let m = seg.m();
    let sp = seg.seg_of_point();
    let mut max = vec![T::neg_infinity(); m * c];
    for (row, &s) in v.chunks_exact(c.max(1)).zip(sp) {
        for (mx, val) in max[s * c..(s + 1) * c].iter_mut().zip(row) {
            *mx = mx.max(*val);
        }
    }
    let mut out = vec![T::zero(); v.len()];
    let mut total = vec![T::zero(); m * c];
    for ((row, o), &s) in v
        .chunks_exact(c.max(1))
        .zip(out.chunks_exact_mut(c.max(1)))
        .zip(sp)
    {
        for col in 0..c {
            let e = (row[col] - max[s * c + col]).exp();
            o[col] = e;
            total[s * c + col] += e;
        }
    }
    for (o, &s) in out.chunks_exact_mut(c.max(1)).zip(sp) {
        o.iter_mut()
            .zip(&total[s * c..(s + 1) * c])
            .for_each(|(o, t)| *o /= *t);
    }
    let y = Arc::new(out);
    let y_saved = Arc::clone(&y);
    let seg = seg.clone();
    Ok(logits
        .tape()
        .record_shared(logits.shape(), y, &[logits], move |g, _| {
            let sp = seg.seg_of_point();
            let mut dot = vec![T::zero(); seg.m() * c];
            for ((gr, yr), &s) in g
                .chunks_exact(c.max(1))
                .zip(y_saved.chunks_exact(c.max(1)))
                .zip(sp)
            {
                for col in 0..c {
                    dot[s * c + col] += gr[col] * yr[col];
                }
            }
            let mut dx = vec![T::zero(); g.len()];
            for (((d, gr), yr), &s) in dx
                .chunks_exact_mut(c.max(1))
                .zip(g.chunks_exact(c.max(1)))
                .zip(y_saved.chunks_exact(c.max(1)))
                .zip(sp)
            {
                for col in 0..c {
                    d[col] = yr[col] * (gr[col] - dot[s * c + col]);
                }
            }
            vec![Some(dx)]
        }))
}

/// `out[j, c, :] = Σ_{seg(i)=j} w[i, c] · v[i, :]` with `w: n×k`, `v: n×d`,
/// output `m×k×d`. Equivalent to forming the per-point outer products
/// `w[i]ᵀ ⊗ v[i]` and applying [`scatter_sum`], without materialising the
/// `n×k×d` intermediate.
pub fn scatter_outer_sum<'t, T: Real>(
    w: DiffArray<'t, T>,
    v: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let (_, k) = w.dims2("scatter_outer_sum")?;
    let (_, d) = v.dims2("scatter_outer_sum")?;
    seg.check_rows(&w, "scatter_outer_sum")?;
    seg.check_rows(&v, "scatter_outer_sum")?;
    let (wv, vv) = (w.value(), v.value());
    let m = seg.m();
    let mut out = vec![T::zero(); m * k * d];
    for (i, &s) in seg.seg_of_point().iter().enumerate() {
        let vr = &vv[i * d..(i + 1) * d];
        let block = &mut out[s * k * d..(s + 1) * k * d];
        for (slot, &wc) in block.chunks_exact_mut(d).zip(&wv[i * k..(i + 1) * k]) {
            for (o, &ve) in slot.iter_mut().zip(vr) {
                *o += wc * ve;
            }
        }
    }
    let seg = seg.clone();
    Ok(w.tape()
        .record(vec![m, k, d], out, &[w, v], move |g, needs| {
            let n = seg.n();
            let sp = seg.seg_of_point();
            let dw = needs[0].then(|| {
                let mut dw = vec![T::zero(); n * k];
                for (i, &s) in sp.iter().enumerate() {
                    let vr = &vv[i * d..(i + 1) * d];
                    for c in 0..k {
                        let gs = &g[(s * k + c) * d..(s * k + c + 1) * d];
                        dw[i * k + c] = gs.iter().zip(vr).fold(T::zero(), |a, (x, y)| a + *x * *y);
                    }
                }
                dw
            });
            let dv = needs[1].then(|| {
                let mut dv = vec![T::zero(); n * d];
                for (i, &s) in sp.iter().enumerate() {
                    let dr = &mut dv[i * d..(i + 1) * d];
                    for c in 0..k {
                        let wc = wv[i * k + c];
                        let gs = &g[(s * k + c) * d..(s * k + c + 1) * d];
                        dr.iter_mut().zip(gs).for_each(|(a, b)| *a += wc * *b);
                    }
                }
                dv
            });
            vec![dw, dv]
        }))
}

/// Broadcast voxel rows back to points: `out[i] = x[seg(i)]`.
pub fn gather_segments<'t, T: Real>(
    x: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let (rows, c) = x.rows_cols();
    if rows != seg.m() {
        return Err(Error::shape("gather_segments", &x.shape(), &[seg.m()]));
    }
    let out = gather_rows(&x.value(), seg, c);
    let seg = seg.clone();
    Ok(x.tape().record(
        reduced_shape(&x.shape(), seg.n()),
        out,
        &[x],
        move |g, _| vec![Some(sum_rows(g, &seg, c))],
    ))
}

fn sum_rows<T: Real>(v: &[T], seg: &SegmentTable, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); seg.m() * c];
    for (row, &s) in v.chunks_exact(c.max(1)).zip(seg.seg_of_point()) {
        out[s * c..(s + 1) * c]
            .iter_mut()
            .zip(row)
            .for_each(|(o, x)| *o += *x);
    }
    out
}

fn gather_rows<T: Real>(v: &[T], seg: &SegmentTable, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(seg.n() * c);
    for &s in seg.seg_of_point() {
        out.extend_from_slice(&v[s * c..(s + 1) * c]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check_many, GradCheckConfig, Tape, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn coords_1d(ids: &[i64]) -> Vec<VoxelCoord> {
        ids.iter().map(|&i| [i, 0, 0]).collect()
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random_layout(rng: &mut ChaCha8Rng, n: usize, voxels: i64) -> Vec<VoxelCoord> {
        (0..n)
            .map(|_| [rng.gen_range(0..voxels), rng.gen_range(0..2), 0])
            .collect()
    }

    // Per-segment loop oracles: members are found by scanning, independent
    // of the CSR layout used by the kernels.
    fn members(seg: &SegmentTable, j: usize) -> Vec<usize> {
        (0..seg.n())
            .filter(|&i| seg.seg_of_point()[i] == j)
            .collect()
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

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn build_examples() {
        let seg = build_segments(&[[0, 0, 0], [0, 0, 0], [1, 0, 0]]).unwrap();
        assert_eq!(seg.seg_of_point(), &[0, 0, 1]);
        assert_eq!(seg.m(), 2);
        assert_eq!(seg.counts(), &[2, 1]);

        let seg = build_segments(&[[3, 1, 2]; 17]).unwrap();
        assert_eq!((seg.m(), seg.counts()), (1, &[17][..]));
        assert!(build_segments(&[]).is_err());
    }

    #[test]
    fn build_matches_hash_set_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coords: Vec<VoxelCoord> = (0..10_000)
            .map(|_| {
                [
                    rng.gen_range(0..20),
                    rng.gen_range(0..20),
                    rng.gen_range(0..20),
                ]
            })
            .collect();
        let seg = build_segments(&coords).unwrap();
        let distinct: HashSet<_> = coords.iter().collect();
        assert_eq!(seg.m(), distinct.len());
        assert_eq!(seg.counts().iter().sum::<usize>(), coords.len());
        let unique: HashSet<_> = seg.voxel_coords().iter().collect();
        assert_eq!(unique.len(), seg.m());
        for (i, &s) in seg.seg_of_point().iter().enumerate() {
            assert_eq!(seg.voxel_coords()[s], coords[i]);
        }
    }

    #[test]
    fn small_examples() {
        let tape = Tape::<f64>::new();
        let seg = build_segments(&coords_1d(&[0, 0, 1])).unwrap();
        let x = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        assert_eq!(
            scatter_sum(x, &seg).unwrap().value().as_slice(),
            &[3.0, 3.0]
        );

        let x = tape.constant(t(&[3, 1], &[1.0, 5.0, 2.0]));
        assert_eq!(
            scatter_max(x, &seg).unwrap().value().as_slice(),
            &[5.0, 2.0]
        );
        assert_eq!(
            scatter_mean(x, &seg).unwrap().value().as_slice(),
            &[3.0, 2.0]
        );

        let l = tape.constant(t(&[3, 1], &[0.0, 0.0, 5.0]));
        assert_eq!(
            scatter_softmax(l, &seg).unwrap().value().as_slice(),
            &[0.5, 0.5, 1.0]
        );

        let bad = tape.constant(t(&[2, 1], &[0.0, 0.0]));
        assert!(scatter_sum(bad, &seg).is_err());
    }

    #[test]
    fn identity_partition_copies_input() {
        let tape = Tape::<f64>::new();
        let seg = build_segments(&coords_1d(&[4, 2, 9, 7])).unwrap();
        let x = Tensor::from_fn(&[4, 3], |i| i as f64 * 0.5 - 1.0);
        let out = scatter_sum(tape.constant(x.clone()), &seg).unwrap();
        assert_eq!(out.value().as_slice(), x.data());
        let sm = scatter_softmax(tape.constant(x), &seg).unwrap();
        assert!(sm.value().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn single_segment_is_global_reduction() {
        let tape = Tape::<f64>::new();
        let vals = [3.0, -1.0, 7.5, 2.0];
        let seg = build_segments(&coords_1d(&[0; 4])).unwrap();
        let x = tape.constant(t(&[4, 1], &vals));
        assert_eq!(scatter_max(x, &seg).unwrap().item(), 7.5);
        assert_eq!(scatter_mean(x, &seg).unwrap().item(), 11.5 / 4.0);
    }

    #[test]
    fn large_random_sum_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let seg = build_segments(&random_layout(&mut rng, 5000, 300)).unwrap();
        let x = Tensor::from_fn(&[5000, 16], |_| rng.gen_range(-1.0..1.0));
        let tape = Tape::<f64>::new();
        let got = scatter_sum(tape.constant(x.clone()), &seg).unwrap();
        let want = oracle_reduce(&x, &seg, |v| v.iter().sum());
        assert!(max_diff(&got.value(), &want) < 1e-12);
    }

    #[test]
    fn random_max_mean_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let seg = build_segments(&random_layout(&mut rng, 2000, 120)).unwrap();
        let x = Tensor::from_fn(&[2000, 8], |_| rng.gen_range(-1.0..1.0));
        let tape = Tape::<f64>::new();
        let mx = scatter_max(tape.constant(x.clone()), &seg).unwrap();
        let mean = scatter_mean(tape.constant(x.clone()), &seg).unwrap();
        let want_max = oracle_reduce(&x, &seg, |v| v.iter().cloned().fold(f64::MIN, f64::max));
        let want_mean = oracle_reduce(&x, &seg, |v| v.iter().sum::<f64>() / v.len() as f64);
        assert!(max_diff(&mx.value(), &want_max) < 1e-12);
        assert!(max_diff(&mean.value(), &want_mean) < 1e-12);
    }

    #[test]
    fn random_softmax_matches_oracle_and_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let seg = build_segments(&random_layout(&mut rng, 3000, 50)).unwrap();
        assert_eq!(seg.m(), 100);
        let x = Tensor::from_fn(&[3000, 8], |_| rng.gen_range(-3.0..3.0));
        let tape = Tape::<f64>::new();
        let got = scatter_softmax(tape.constant(x.clone()), &seg).unwrap();
        assert!(max_diff(&got.value(), &oracle_softmax(&x, &seg)) < 1e-12);

        let small = build_segments(&random_layout(&mut rng, 40, 4)).unwrap();
        let xs = Tensor::from_fn(&[40, 3], |_| rng.gen_range(-2.0..2.0));
        let w = Tensor::from_fn(&[40, 3], |_| rng.gen_range(-1.0..1.0));
        let rep = grad_check_many(
            |a| scatter_softmax(a[0], &small)?.mul(a[1]).map(|v| v.sum()),
            &[xs, w],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn max_ties_route_to_lowest_index() {
        let tape = Tape::<f64>::new();
        let seg = build_segments(&coords_1d(&[0, 0, 0])).unwrap();
        let x = tape.param(t(&[3, 1], &[2.0, 2.0, 1.0]));
        scatter_max(x, &seg).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_logits_weighted_sum_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let seg = build_segments(&random_layout(&mut rng, 500, 30)).unwrap();
        let vals = Tensor::from_fn(&[500, 1], |_| rng.gen_range(-1.0..1.0));
        let tape = Tape::<f64>::new();
        let w = scatter_softmax(tape.constant(Tensor::full(&[500, 1], 0.7)), &seg).unwrap();
        let v = tape.constant(vals);
        let attn = scatter_sum(w.mul(v).unwrap(), &seg).unwrap();
        let mean = scatter_mean(v, &seg).unwrap();
        assert!(max_diff(&attn.value(), &mean.value()) < 1e-12);
    }

    #[test]
    fn outer_sum_matches_explicit_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (n, k, d) = (60, 3, 4);
        let seg = build_segments(&random_layout(&mut rng, n, 5)).unwrap();
        let w = Tensor::from_fn(&[n, k], |_| rng.gen_range(-1.0..1.0));
        let v = Tensor::from_fn(&[n, d], |_| rng.gen_range(-1.0..1.0));
        let outer = Tensor::from_fn(&[n, k * d], |f| {
            let (i, r) = (f / (k * d), f % (k * d));
            w.data()[i * k + r / d] * v.data()[i * d + r % d]
        });
        let tape = Tape::<f64>::new();
        let fused =
            scatter_outer_sum(tape.constant(w.clone()), tape.constant(v.clone()), &seg).unwrap();
        let explicit = scatter_sum(tape.constant(outer), &seg).unwrap();
        assert_eq!(fused.shape(), vec![seg.m(), k, d]);
        assert!(max_diff(&fused.value(), &explicit.value()) < 1e-12);

        let probe = Tensor::from_fn(&[seg.m(), k, d], |_| rng.gen_range(-1.0..1.0));
        let rep = grad_check_many(
            |a| {
                scatter_outer_sum(a[0], a[1], &seg)?
                    .mul(a[2])
                    .map(|x| x.sum())
            },
            &[w, v, probe],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn reduction_vjps_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let seg = build_segments(&random_layout(&mut rng, 30, 4)).unwrap();
        let x = Tensor::from_fn(&[30, 2], |_| rng.gen_range(-1.0..1.0));
        let pm = Tensor::from_fn(&[seg.m(), 2], |_| rng.gen_range(-1.0..1.0));
        let pn = Tensor::from_fn(&[30, 2], |_| rng.gen_range(-1.0..1.0));
        let cfg = GradCheckConfig::default();
        for (name, err) in [
            (
                "sum",
                grad_check_many(
                    |a| scatter_sum(a[0], &seg)?.mul(a[1]).map(|v| v.sum()),
                    &[x.clone(), pm.clone()],
                    &cfg,
                ),
            ),
            (
                "mean",
                grad_check_many(
                    |a| scatter_mean(a[0], &seg)?.mul(a[1]).map(|v| v.sum()),
                    &[x.clone(), pm.clone()],
                    &cfg,
                ),
            ),
            (
                "max",
                grad_check_many(
                    |a| scatter_max(a[0], &seg)?.mul(a[1]).map(|v| v.sum()),
                    &[x.clone(), pm.clone()],
                    &cfg,
                ),
            ),
            (
                "gather",
                grad_check_many(
                    |a| gather_segments(a[0], &seg)?.mul(a[1]).map(|v| v.sum()),
                    &[pm.clone(), pn.clone()],
                    &cfg,
                ),
            ),
        ] {
            let rep = err.unwrap();
            assert!(rep.max_rel_error < 1e-5, "{name}: {rep:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sums_match_oracle_and_are_permutation_equivariant(
            seed in any::<u64>(),
            n in 1usize..400,
            voxels in 1i64..40,
            c in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coords = random_layout(&mut rng, n, voxels);
            let seg = build_segments(&coords).unwrap();
            let x = Tensor::from_fn(&[n, c], |_| rng.gen_range(-5.0..5.0));
            let tape = Tape::<f64>::new();
            let sum = scatter_sum(tape.constant(x.clone()), &seg).unwrap();
            prop_assert!(max_diff(&sum.value(), &oracle_reduce(&x, &seg, |v| v.iter().sum())) < 1e-12);
            let sm = scatter_softmax(tape.constant(x.clone()), &seg).unwrap();
            prop_assert!(max_diff(&sm.value(), &oracle_softmax(&x, &seg)) < 1e-12);

            // permute points; compare per voxel coordinate
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let pcoords: Vec<_> = perm.iter().map(|&i| coords[i]).collect();
            let px = Tensor::from_fn(&[n, c], |f| x.data()[perm[f / c] * c + f % c]);
            let pseg = build_segments(&pcoords).unwrap();
            let psum = scatter_sum(tape.constant(px.clone()), &pseg).unwrap().value();
            let pmax = scatter_max(tape.constant(px), &pseg).unwrap().value();
            let bmax = scatter_max(tape.constant(x), &seg).unwrap().value();
            for (j, vc) in seg.voxel_coords().iter().enumerate() {
                let pj = pseg.voxel_coords().iter().position(|p| p == vc).unwrap();
                for col in 0..c {
                    prop_assert!((sum.value()[j * c + col] - psum[pj * c + col]).abs() < 1e-9);
                    prop_assert_eq!(bmax[j * c + col], pmax[pj * c + col]);
                }
            }
        }
    }
}
