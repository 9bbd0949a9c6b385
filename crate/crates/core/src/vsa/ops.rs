//! Kernels specific to the set-attention block: the sparse grouped 3×3×1
//! convolution over active voxels and the two fused decoder contractions
//! that read per-voxel slot tensors through the point-to-voxel map.

use std::collections::HashMap;
use std::sync::Arc;

use crate::diffcore::{DiffArray, Real};
use crate::error::{Error, Result};
use crate::scatter::{SegmentTable, VoxelCoord};

pub const TAPS: usize = 9;
pub const CENTER_TAP: usize = 4;

/// Tap `t` covers offset `(t / 3 - 1, t % 3 - 1, 0)` in `(x, y, z)`.
pub fn tap_offset(t: usize) -> [i64; 3] {
    [(t / 3) as i64 - 1, (t % 3) as i64 - 1, 0]
}

/// For every active site and tap, the index of the active neighbour.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    m: usize,
    idx: Vec<Option<usize>>,
}

impl NeighborTable {
    pub fn build(coords: &[VoxelCoord]) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(coords.len());
        for (j, c) in coords.iter().enumerate() {
            if lookup.insert(*c, j).is_some() {
                return Err(Error::DuplicateCoords(*c));
            }
        }
        let mut idx = Vec::with_capacity(coords.len() * TAPS);
        for c in coords {
            for t in 0..TAPS {
                let o = tap_offset(t);
                idx.push(
                    lookup
                        .get(&[c[0] + o[0], c[1] + o[1], c[2] + o[2]])
                        .copied(),
                );
            }
        }
        Ok(Self {
            m: coords.len(),
            idx,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, site: usize, tap: usize) -> Option<usize> {
        self.idx[site * TAPS + tap]
    }
}

/// Grouped submanifold convolution.
///
/// `x: [m, k, d]`, `w: [k, 9, d, d]` indexed `(group, tap, in, out)`,
/// `b: [k, d]`. Outputs are computed only at the `m` active sites and
/// absent neighbours contribute zero.
pub fn sparse_group_conv<'t, T: Real>(
    x: DiffArray<'t, T>,
    w: DiffArray<'t, T>,
    b: DiffArray<'t, T>,
    nbr: &Arc<NeighborTable>,
) -> Result<DiffArray<'t, T>> {
    let xs = x.shape();
    let [m, k, d] = xs[..] else {
        return Err(Error::Rank {
            op: "sparse_group_conv",
            shape: xs,
        });
    };
    if m != nbr.m() {
        return Err(Error::shape("sparse_group_conv", &xs, &[nbr.m()]));
    }
    if w.shape() != [k, TAPS, d, d] {
        return Err(Error::shape("sparse_group_conv", &xs, &w.shape()));
    }
    if b.shape() != [k, d] {
        return Err(Error::shape("sparse_group_conv", &xs, &b.shape()));
    }
    let (xv, wv, bv) = (x.value(), w.value(), b.value());
    let mut out = vec![T::zero(); m * k * d];
    for j in 0..m {
        for c in 0..k {
            let o = &mut out[(j * k + c) * d..(j * k + c + 1) * d];
            o.copy_from_slice(&bv[c * d..(c + 1) * d]);
            for t in 0..TAPS {
                let Some(nb) = nbr.get(j, t) else { continue };
                let xin = &xv[(nb * k + c) * d..(nb * k + c + 1) * d];
                let wct = &wv[(c * TAPS + t) * d * d..(c * TAPS + t + 1) * d * d];
                for (e, &xe) in xin.iter().enumerate() {
                    if xe == T::zero() {
                        continue;
                    }
                    o.iter_mut()
                        .zip(&wct[e * d..(e + 1) * d])
                        .for_each(|(o, w)| *o += xe * *w);
                }
            }
        }
    }
    let nbr = Arc::clone(nbr);
    Ok(x.tape()
        .record(vec![m, k, d], out, &[x, w, b], move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); m * k * d];
                for j in 0..m {
                    for t in 0..TAPS {
                        let Some(nb) = nbr.get(j, t) else { continue };
                        for c in 0..k {
                            let gr = &g[(j * k + c) * d..(j * k + c + 1) * d];
                            let wct = &wv[(c * TAPS + t) * d * d..(c * TAPS + t + 1) * d * d];
                            let dr = &mut dx[(nb * k + c) * d..(nb * k + c + 1) * d];
                            for (e, de) in dr.iter_mut().enumerate() {
                                *de += dot(gr, &wct[e * d..(e + 1) * d]);
                            }
                        }
                    }
                }
                dx
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![T::zero(); k * TAPS * d * d];
                for j in 0..m {
                    for t in 0..TAPS {
                        let Some(nb) = nbr.get(j, t) else { continue };
                        for c in 0..k {
                            let gr = &g[(j * k + c) * d..(j * k + c + 1) * d];
                            let xin = &xv[(nb * k + c) * d..(nb * k + c + 1) * d];
                            let dwct = &mut dw[(c * TAPS + t) * d * d..(c * TAPS + t + 1) * d * d];
                            for (e, &xe) in xin.iter().enumerate() {
                                dwct[e * d..(e + 1) * d]
                                    .iter_mut()
                                    .zip(gr)
                                    .for_each(|(a, g)| *a += xe * *g);
                            }
                        }
                    }
                }
                dw
            });
            let db = needs[2].then(|| {
                let mut db = vec![T::zero(); k * d];
                for gj in g.chunks_exact(k * d) {
                    db.iter_mut().zip(gj).for_each(|(a, g)| *a += *g);
                }
                db
            });
            vec![dx, dw, db]
        }))
}

/// `out[i, c] = Σ_e slots[seg(i), c, e] · q[i, e]` for `slots: [m, k, d]`
/// and `q: n×d`, giving `n×k`.
pub fn slot_logits<'t, T: Real>(
    slots: DiffArray<'t, T>,
    q: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let (m, k, d) = slot_dims(&slots, seg, "slot_logits")?;
    let (n, dq) = q.dims2("slot_logits")?;
    if n != seg.n() || dq != d {
        return Err(Error::shape("slot_logits", &slots.shape(), &q.shape()));
    }
    let (sv, qv) = (slots.value(), q.value());
    let sp = seg.seg_of_point();
    let mut out = vec![T::zero(); n * k];
    for (i, &s) in sp.iter().enumerate() {
        let qi = &qv[i * d..(i + 1) * d];
        for c in 0..k {
            out[i * k + c] = dot(&sv[(s * k + c) * d..(s * k + c + 1) * d], qi);
        }
    }
    let seg = seg.clone();
    Ok(q.tape()
        .record(vec![n, k], out, &[slots, q], move |g, needs| {
            let sp = seg.seg_of_point();
            let ds = needs[0].then(|| {
                let mut ds = vec![T::zero(); m * k * d];
                for (i, &s) in sp.iter().enumerate() {
                    let qi = &qv[i * d..(i + 1) * d];
                    for c in 0..k {
                        let gc = g[i * k + c];
                        ds[(s * k + c) * d..(s * k + c + 1) * d]
                            .iter_mut()
                            .zip(qi)
                            .for_each(|(a, q)| *a += gc * *q);
                    }
                }
                ds
            });
            let dq = needs[1].then(|| {
                let mut dq = vec![T::zero(); n * d];
                for (i, &s) in sp.iter().enumerate() {
                    let dr = &mut dq[i * d..(i + 1) * d];
                    for c in 0..k {
                        let gc = g[i * k + c];
                        dr.iter_mut()
                            .zip(&sv[(s * k + c) * d..(s * k + c + 1) * d])
                            .for_each(|(a, s)| *a += gc * *s);
                    }
                }
                dq
            });
            vec![ds, dq]
        }))
}

/// `out[i, :] = Σ_c w[i, c] · slots[seg(i), c, :]` for `w: n×k`, giving `n×d`.
pub fn slot_mix<'t, T: Real>(
    w: DiffArray<'t, T>,
    slots: DiffArray<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let (m, k, d) = slot_dims(&slots, seg, "slot_mix")?;
    let (n, kw) = w.dims2("slot_mix")?;
    if n != seg.n() || kw != k {
        return Err(Error::shape("slot_mix", &w.shape(), &slots.shape()));
    }
    let (wv, sv) = (w.value(), slots.value());
    let sp = seg.seg_of_point();
    let mut out = vec![T::zero(); n * d];
    for (i, &s) in sp.iter().enumerate() {
        let o = &mut out[i * d..(i + 1) * d];
        for c in 0..k {
            let wc = wv[i * k + c];
            o.iter_mut()
                .zip(&sv[(s * k + c) * d..(s * k + c + 1) * d])
                .for_each(|(o, s)| *o += wc * *s);
        }
    }
    let seg = seg.clone();
    Ok(w.tape()
        .record(vec![n, d], out, &[w, slots], move |g, needs| {
            let sp = seg.seg_of_point();
            let dw = needs[0].then(|| {
                let mut dw = vec![T::zero(); n * k];
                for (i, &s) in sp.iter().enumerate() {
                    let gi = &g[i * d..(i + 1) * d];
                    for c in 0..k {
                        dw[i * k + c] = dot(gi, &sv[(s * k + c) * d..(s * k + c + 1) * d]);
                    }
                }
                dw
            });
            let ds = needs[1].then(|| {
                let mut ds = vec![T::zero(); m * k * d];
                for (i, &s) in sp.iter().enumerate() {
                    let gi = &g[i * d..(i + 1) * d];
                    for c in 0..k {
                        let wc = wv[i * k + c];
                        ds[(s * k + c) * d..(s * k + c + 1) * d]
                            .iter_mut()
                            .zip(gi)
                            .for_each(|(a, g)| *a += wc * *g);
                    }
                }
                ds
            });
            vec![dw, ds]
        }))
}

fn slot_dims<T: Real>(
    slots: &DiffArray<'_, T>,
    seg: &SegmentTable,
    op: &'static str,
) -> Result<(usize, usize, usize)> {
    let shape = slots.shape();
    let [m, k, d] = shape[..] else {
        return Err(Error::Rank { op, shape });
    };
    if m != seg.m() {
        return Err(Error::shape(op, &shape, &[seg.m()]));
    }
    Ok((m, k, d))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}
