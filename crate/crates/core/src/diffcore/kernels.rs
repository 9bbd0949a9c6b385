//! Dense matrix kernels. Every output element accumulates over the inner
//! index in ascending order, so results do not depend on call history.

use super::Real;

/// `c = a · b` with `a: p×q`, `b: q×r`.
pub fn gemm_nn<T: Real>(a: &[T], b: &[T], p: usize, q: usize, r: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), q * r);
    let mut c = vec![T::zero(); p * r];
    for (a_row, c_row) in a.chunks_exact(q.max(1)).zip(c.chunks_exact_mut(r.max(1))) {
        for (t, &a_it) in a_row.iter().enumerate() {
            // adding an exact zero product leaves c unchanged for finite inputs
            if a_it == T::zero() {
                continue;
            }
            let b_row = &b[t * r..(t + 1) * r];
            for (c_ij, &b_tj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_it * b_tj;
            }
        }
    }
    c
}

/// `c = a · bᵀ` with `a: p×q`, `b: r×q`.
pub fn gemm_nt<T: Real>(a: &[T], b: &[T], p: usize, q: usize, r: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), r * q);
    let mut c = vec![T::zero(); p * r];
    if q == 0 {
        return c;
    }
    for (a_row, c_row) in a.chunks_exact(q).zip(c.chunks_exact_mut(r.max(1))) {
        for (c_ij, b_row) in c_row.iter_mut().zip(b.chunks_exact(q)) {
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *c_ij = acc;
        }
    }
    c
}

/// `c = aᵀ · b` with `a: q×p`, `b: q×r`.
pub fn gemm_tn<T: Real>(a: &[T], b: &[T], q: usize, p: usize, r: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), q * p);
    debug_assert_eq!(b.len(), q * r);
    let mut c = vec![T::zero(); p * r];
    if r == 0 {
        return c;
    }
    for t in 0..q {
        let b_row = &b[t * r..(t + 1) * r];
        for (i, &a_ti) in a[t * p..(t + 1) * p].iter().enumerate() {
            if a_ti == T::zero() {
                continue;
            }
            for (c_ij, &b_tj) in c[i * r..(i + 1) * r].iter_mut().zip(b_row) {
                *c_ij += a_ti * b_tj;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
        let mut c = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..r {
                for t in 0..q {
                    c[i * r + j] += a[i * q + t] * b[t * r + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn three_layouts_agree_with_triple_loop() {
        let (p, q, r) = (4, 6, 5);
        let a: Vec<f64> = (0..p * q).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..q * r).map(|i| (i as f64 * 0.3).cos()).collect();
        let want = naive(&a, &b, p, q, r);
        let nn = gemm_nn(&a, &b, p, q, r);
        let nt = gemm_nt(&a, &transpose(&b, q, r), p, q, r);
        let tn = gemm_tn(&transpose(&a, p, q), &b, q, p, r);
        for k in 0..p * r {
            assert!((nn[k] - want[k]).abs() < 1e-12);
            assert!((nt[k] - want[k]).abs() < 1e-12);
            assert!((tn[k] - want[k]).abs() < 1e-12);
        }
    }
}
