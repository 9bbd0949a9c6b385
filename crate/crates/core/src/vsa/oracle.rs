//! Plain-loop reference for the attention path of a block.

use std::f64::consts::PI;

use super::VsaParams;
use crate::diffcore::Tensor;
use crate::scatter::SegmentTable;

fn at(t: &Tensor<f64>, idx: &[usize]) -> f64 {
    let mut flat = 0;
    for (i, s) in idx.iter().zip(t.shape()) {
        debug_assert!(i < s);
        flat = flat * s + i;
    }
    t.data()[flat]
}

fn vec_mat(v: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    (0..cols)
        .map(|o| (0..rows).map(|e| v[e] * at(w, &[e, o])).sum())
        .collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Attention output (before the block's output projection) computed one
/// voxel at a time with explicit loops: PE injection, latent-to-point
/// attention, the two grouped convolutions by neighbour search, and
/// point-to-slot attention. Returns `n×d`.
pub fn naive_vsa_oracle(
    x: &Tensor<f64>,
    local: &[[f64; 3]],
    seg: &SegmentTable,
    params: &VsaParams<f64>,
) -> Tensor<f64> {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let (k, d) = (params.latent.shape()[0], params.latent.shape()[1]);
    let half = params.pe_weight.shape()[0] / 6;
    let coords = seg.voxel_coords();
    let m = coords.len();

    // x' = x + PE · W_pe + b_pe
    let xp: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut pe = Vec::with_capacity(6 * half);
            for axis in 0..3 {
                for j in 0..half {
                    let arg = 2f64.powi(j as i32) * PI * local[i][axis];
                    pe.push(arg.sin());
                    pe.push(arg.cos());
                }
            }
            let proj = vec_mat(&pe, &params.pe_weight);
            (0..d_in)
                .map(|e| at(x, &[i, e]) + proj[e] + params.pe_bias.data()[e])
                .collect()
        })
        .collect();

    // encoder: for each voxel, attention from each latent code over its points
    let mut hidden = vec![vec![vec![0.0; d]; k]; m];
    for (j, h) in hidden.iter_mut().enumerate() {
        let pts: Vec<usize> = (0..n).filter(|&i| seg.seg_of_point()[i] == j).collect();
        let keys: Vec<Vec<f64>> = pts
            .iter()
            .map(|&i| vec_mat(&xp[i], &params.w_key))
            .collect();
        let vals: Vec<Vec<f64>> = pts
            .iter()
            .map(|&i| vec_mat(&xp[i], &params.w_value))
            .collect();
        for (c, slot) in h.iter_mut().enumerate() {
            let logits: Vec<f64> = keys
                .iter()
                .map(|kv| (0..d).map(|e| kv[e] * at(&params.latent, &[c, e])).sum())
                .collect();
            let a = softmax(&logits);
            for (p, ap) in a.iter().enumerate() {
                for e in 0..d {
                    slot[e] += ap * vals[p][e];
                }
            }
        }
    }

    // grouped 3×3×1 convolutions, neighbours found by linear search
    let conv = |inp: &[Vec<Vec<f64>>], w: &Tensor<f64>, b: &Tensor<f64>| {
        let mut out = vec![vec![vec![0.0; d]; k]; m];
        for j in 0..m {
            for dx in -1..=1i64 {
                for dy in -1..=1i64 {
                    let target = [coords[j][0] + dx, coords[j][1] + dy, coords[j][2]];
                    let Some(nb) = coords.iter().position(|c| *c == target) else {
                        continue;
                    };
                    let t = ((dx + 1) * 3 + dy + 1) as usize;
                    for c in 0..k {
                        for o in 0..d {
                            for e in 0..d {
                                out[j][c][o] += inp[nb][c][e] * at(w, &[c, t, e, o]);
                            }
                        }
                    }
                }
            }
            for c in 0..k {
                for o in 0..d {
                    out[j][c][o] += at(b, &[c, o]);
                }
            }
        }
        out
    };
    let mut mid = conv(&hidden, &params.ffn_w1, &params.ffn_b1);
    mid.iter_mut()
        .flatten()
        .flatten()
        .for_each(|v| *v = v.max(0.0));
    let second = conv(&mid, &params.ffn_w2, &params.ffn_b2);
    for j in 0..m {
        for c in 0..k {
            for e in 0..d {
                hidden[j][c][e] += second[j][c][e];
            }
        }
    }

    // decoder: each point attends over its voxel's slots
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let h = &hidden[seg.seg_of_point()[i]];
        let q = vec_mat(&xp[i], &params.w_query);
        let keys: Vec<Vec<f64>> = h.iter().map(|s| vec_mat(s, &params.dec_key)).collect();
        let vals: Vec<Vec<f64>> = h.iter().map(|s| vec_mat(s, &params.dec_value)).collect();
        let logits: Vec<f64> = keys
            .iter()
            .map(|kc| (0..d).map(|e| kc[e] * q[e]).sum())
            .collect();
        let a = softmax(&logits);
        for e in 0..d {
            out.push((0..k).map(|c| a[c] * vals[c][e]).sum());
        }
    }
    Tensor::new(vec![n, d], out).expect("consistent oracle shape")
}
