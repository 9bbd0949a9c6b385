use std::sync::Arc;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{DiffArray, Real};
use crate::error::{Error, Result};

fn has_nan<T: Real>(v: &[T]) -> bool {
    v.iter().any(|x| x.is_nan())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    /// Weight given to the new batch statistic in the running average.
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<'t, T: Real> DiffArray<'t, T> {
    /// `[p×q] · [q×r] -> [p×r]`.
    pub fn matmul(self, b: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        let (p, q) = self.dims2("matmul")?;
        let (q2, r) = b.dims2("matmul")?;
        if q != q2 {
            return Err(Error::shape("matmul", &self.shape(), &b.shape()));
        }
        let (av, bv) = (self.value(), b.value());
        if has_nan(&av) || has_nan(&bv) {
            return Err(Error::NaN("matmul"));
        }
        let out = gemm_nn(&av, &bv, p, q, r);
        Ok(self
            .tape
            .record(vec![p, r], out, &[self, b], move |g, needs| {
                vec![
                    needs[0].then(|| gemm_nt(g, &bv, p, r, q)),
                    needs[1].then(|| gemm_tn(&av, g, p, q, r)),
                ]
            }))
    }

    pub fn transpose(self) -> Result<DiffArray<'t, T>> {
        let (r, c) = self.dims2("transpose")?;
        let v = self.value();
        let out = transpose(&v, r, c);
        Ok(self.tape.record(vec![c, r], out, &[self], move |g, _| {
            vec![Some(transpose(g, c, r))]
        }))
    }

    fn same_shape(self, b: DiffArray<'t, T>, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa != sb {
            return Err(Error::shape(op, &sa, &sb));
        }
        Ok(())
    }

    pub fn add(self, b: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.same_shape(b, "add")?;
        let out = self
            .value()
            .iter()
            .zip(b.value().iter())
            .map(|(x, y)| *x + *y)
            .collect();
        Ok(self.tape.record(self.shape(), out, &[self, b], |g, needs| {
            vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
        }))
    }

    pub fn sub(self, b: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.same_shape(b, "sub")?;
        let out = self
            .value()
            .iter()
            .zip(b.value().iter())
            .map(|(x, y)| *x - *y)
            .collect();
        Ok(self.tape.record(self.shape(), out, &[self, b], |g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|v| -*v).collect()),
            ]
        }))
    }

    /// Elementwise product.
    pub fn mul(self, b: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.same_shape(b, "mul")?;
        let (av, bv) = (self.value(), b.value());
        let out = av.iter().zip(bv.iter()).map(|(x, y)| *x * *y).collect();
        Ok(self
            .tape
            .record(self.shape(), out, &[self, b], move |g, needs| {
                vec![
                    needs[0].then(|| g.iter().zip(bv.iter()).map(|(g, y)| *g * *y).collect()),
                    needs[1].then(|| g.iter().zip(av.iter()).map(|(g, x)| *g * *x).collect()),
                ]
            }))
    }

    /// Adds a `[c]` bias to every row of an array with trailing width `c`.
    pub fn add_row(self, bias: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        let (_, c) = self.rows_cols();
        if bias.numel() != c {
            return Err(Error::shape("add_row", &self.shape(), &bias.shape()));
        }
        let bv = bias.value();
        let out = self
            .value()
            .chunks_exact(c.max(1))
            .flat_map(|row| row.iter().zip(bv.iter()).map(|(x, b)| *x + *b))
            .collect();
        Ok(self
            .tape
            .record(self.shape(), out, &[self, bias], move |g, needs| {
                let db = needs[1].then(|| {
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks_exact(c.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += *v);
                    }
                    db
                });
                vec![needs[0].then(|| g.to_vec()), db]
            }))
    }

    pub fn scale(self, s: f64) -> DiffArray<'t, T> {
        let s = T::of(s);
        let out = self.value().iter().map(|x| *x * s).collect();
        self.tape.record(self.shape(), out, &[self], move |g, _| {
            vec![Some(g.iter().map(|v| *v * s).collect())]
        })
    }

    /// Elementwise ReLU; the subgradient at 0 is 0.
    pub fn relu(self) -> DiffArray<'t, T> {
        let v = self.value();
        let out = v.iter().map(|x| x.max(T::zero())).collect();
        self.tape.record(self.shape(), out, &[self], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(v.iter())
                    .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                    .collect(),
            )]
        })
    }

    /// Sum of all elements as a `[1]` array.
    pub fn sum(self) -> DiffArray<'t, T> {
        let n = self.numel();
        let total = self.value().iter().fold(T::zero(), |a, b| a + *b);
        self.tape
            .record(vec![1], vec![total], &[self], move |g, _| {
                vec![Some(vec![g[0]; n])]
            })
    }

    pub fn mean(self) -> DiffArray<'t, T> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax_lastdim(self) -> Result<DiffArray<'t, T>> {
        let shape = self.shape();
        let k = *shape.last().ok_or(Error::Empty("softmax_lastdim"))?;
        if k == 0 {
            return Err(Error::Empty("softmax_lastdim"));
        }
        let v = self.value();
        if has_nan(&v) {
            return Err(Error::NaN("softmax_lastdim"));
        }
        let mut out = vec![T::zero(); v.len()];
        for (row, o) in v.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
            softmax_into(row, o);
        }
        let y = Arc::new(out);
        let y_saved = Arc::clone(&y);
        Ok(self.tape.record_shared(shape, y, &[self], move |g, _| {
            let mut dx = vec![T::zero(); g.len()];
            for ((gr, yr), dr) in g
                .chunks_exact(k)
                .zip(y_saved.chunks_exact(k))
                .zip(dx.chunks_exact_mut(k))
            {
                let dot = gr.iter().zip(yr).fold(T::zero(), |a, (g, y)| a + *g * *y);
                for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = *y * (*g - dot);
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Reinterprets the shape; shares storage with the input.
    pub fn reshape(self, shape: &[usize]) -> Result<DiffArray<'t, T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &self.shape(), shape));
        }
        Ok(self
            .tape
            .record_shared(shape.to_vec(), self.value(), &[self], |g, _| {
                vec![Some(g.to_vec())]
            }))
    }

    /// Concatenates arrays with equal row counts along the trailing axis.
    pub fn concat_cols(parts: &[DiffArray<'t, T>]) -> Result<DiffArray<'t, T>> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let tape = first.tape;
        let rows = first.rows_cols().0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.rows_cols();
            if r != rows {
                return Err(Error::shape("concat_cols", &first.shape(), &p.shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                out.extend_from_slice(&v[r * w..(r + 1) * w]);
            }
        }
        Ok(tape.record(vec![rows, total], out, parts, move |g, needs| {
            let mut offset = 0;
            widths
                .iter()
                .zip(needs)
                .map(|(&w, &need)| {
                    let part = need.then(|| {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        d
                    });
                    offset += w;
                    part
                })
                .collect()
        }))
    }

    /// Row gather: `out[r] = self[idx[r]]`, or zeros where `idx[r]` is `None`.
    /// The backward pass scatter-adds in ascending `r`.
    pub fn gather_rows(self, idx: Arc<Vec<Option<usize>>>) -> Result<DiffArray<'t, T>> {
        let shape = self.shape();
        let (rows, c) = self.rows_cols();
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", &shape, &[*bad]));
        }
        let v = self.value();
        let mut out = vec![T::zero(); idx.len() * c];
        for (o, i) in out.chunks_exact_mut(c.max(1)).zip(idx.iter()) {
            if let Some(i) = i {
                o.copy_from_slice(&v[i * c..(i + 1) * c]);
            }
        }
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        Ok(self.tape.record(out_shape, out, &[self], move |g, _| {
            let mut dx = vec![T::zero(); rows * c];
            for (gr, i) in g.chunks_exact(c.max(1)).zip(idx.iter()) {
                if let Some(i) = i {
                    dx[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(d, v)| *d += *v);
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Batch normalisation over rows of an `n×d` array.
    ///
    /// Train mode normalises with the biased batch variance and returns the
    /// updated running statistics (unbiased variance). Eval mode uses
    /// `stats` as is.
    pub fn batch_norm(
        self,
        gamma: DiffArray<'t, T>,
        beta: DiffArray<'t, T>,
        stats: &BnStats<T>,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<(DiffArray<'t, T>, Option<BnStats<T>>)> {
        let (n, d) = self.dims2("batch_norm")?;
        if gamma.numel() != d || beta.numel() != d || stats.mean.len() != d {
            return Err(Error::shape("batch_norm", &self.shape(), &gamma.shape()));
        }
        let x = self.value();
        let eps = T::of(cfg.eps);
        let (mean, var, updated) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(n));
                }
                let nf = T::of(n as f64);
                let mut mean = vec![T::zero(); d];
                for row in x.chunks_exact(d) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += *v);
                }
                mean.iter_mut().for_each(|m| *m /= nf);
                let mut var = vec![T::zero(); d];
                for row in x.chunks_exact(d) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let c = *v - *m;
                        *s += c * c;
                    }
                }
                let unbiased: Vec<T> = var.iter().map(|s| *s / T::of((n - 1) as f64)).collect();
                var.iter_mut().for_each(|s| *s /= nf);
                let mom = T::of(cfg.momentum);
                let keep = T::one() - mom;
                let updated = BnStats {
                    mean: stats
                        .mean
                        .iter()
                        .zip(&mean)
                        .map(|(r, b)| keep * *r + mom * *b)
                        .collect(),
                    var: stats
                        .var
                        .iter()
                        .zip(&unbiased)
                        .map(|(r, b)| keep * *r + mom * *b)
                        .collect(),
                };
                (mean, var, Some(updated))
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone(), None),
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let xhat: Vec<T> = x
            .chunks_exact(d)
            .flat_map(|row| {
                row.iter()
                    .zip(&mean)
                    .zip(&inv_std)
                    .map(|((v, m), s)| (*v - *m) * *s)
            })
            .collect();
        let (gv, bv) = (gamma.value(), beta.value());
        let out: Vec<T> = xhat
            .chunks_exact(d)
            .flat_map(|row| {
                row.iter()
                    .zip(gv.iter())
                    .zip(bv.iter())
                    .map(|((h, g), b)| *h * *g + *b)
            })
            .collect();
        let train = mode == Mode::Train;
        let node = self
            .tape
            .record(vec![n, d], out, &[self, gamma, beta], move |g, needs| {
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for c in 0..d {
                        dgamma[c] += gr[c] * hr[c];
                        dbeta[c] += gr[c];
                    }
                }
                let dx = needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * d];
                    if train {
                        // dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        let nf = T::of(n as f64);
                        let mut s1 = vec![T::zero(); d];
                        let mut s2 = vec![T::zero(); d];
                        for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for c in 0..d {
                                let dh = gr[c] * gv[c];
                                s1[c] += dh;
                                s2[c] += dh * hr[c];
                            }
                        }
                        for ((dr, gr), hr) in dx
                            .chunks_exact_mut(d)
                            .zip(g.chunks_exact(d))
                            .zip(xhat.chunks_exact(d))
                        {
                            for c in 0..d {
                                let dh = gr[c] * gv[c];
                                dr[c] = inv_std[c] / nf * (nf * dh - s1[c] - hr[c] * s2[c]);
                            }
                        }
                    } else {
                        for (dr, gr) in dx.chunks_exact_mut(d).zip(g.chunks_exact(d)) {
                            for c in 0..d {
                                dr[c] = gr[c] * gv[c] * inv_std[c];
                            }
                        }
                    }
                    dx
                });
                vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
            });
        Ok((node, updated))
    }
}

pub(crate) fn transpose<T: Real>(v: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = v[i * cols + j];
        }
    }
    out
}

/// Stable softmax of one slice.
pub(crate) fn softmax_into<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let mut total = T::zero();
    for (o, v) in out.iter_mut().zip(row) {
        *o = (*v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}
