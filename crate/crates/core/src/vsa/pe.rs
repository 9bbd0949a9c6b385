use std::f64::consts::PI;

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

/// Fourier features of in-voxel coordinates.
///
/// For each axis, `bandwidth / 2` frequencies `2^j` each emit
/// `sin(2^j π x), cos(2^j π x)`. Axes are concatenated, so the width is
/// `3 · bandwidth`.
pub fn fourier_pe<T: Real>(local: &[[f64; 3]], bandwidth: usize) -> Result<Tensor<T>> {
    if bandwidth < 2 || bandwidth % 2 != 0 {
        return Err(Error::Config(format!(
            "positional bandwidth must be even and >= 2, got {bandwidth}"
        )));
    }
    let half = bandwidth / 2;
    let width = 3 * bandwidth;
    let mut out = Vec::with_capacity(local.len() * width);
    for p in local {
        for &x in p {
            let mut f = 1.0;
            for _ in 0..half {
                let (s, c) = (f * PI * x).sin_cos();
                out.push(T::of(s));
                out.push(T::of(c));
                f *= 2.0;
            }
        }
    }
    Tensor::new(vec![local.len(), width], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_gives_zero_sines_unit_cosines() {
        let pe = fourier_pe::<f64>(&[[0.0; 3]], 8).unwrap();
        for (i, v) in pe.data().iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn unit_x_first_frequency() {
        let pe = fourier_pe::<f64>(&[[1.0, 0.0, 0.0]], 4).unwrap();
        assert!(pe.data()[0].abs() < 1e-12);
        assert!((pe.data()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_bandwidth_matches_scalar_formula() {
        let pts = [[0.13, 0.77, 0.5], [0.91, 0.02, 0.33]];
        let pe = fourier_pe::<f64>(&pts, 64).unwrap();
        assert_eq!(pe.shape(), &[2, 192]);
        for (i, p) in pts.iter().enumerate() {
            for axis in 0..3 {
                for j in 0..32 {
                    let arg = 2f64.powi(j as i32) * PI * p[axis];
                    let base = i * 192 + axis * 64 + 2 * j;
                    assert_eq!(pe.data()[base], arg.sin());
                    assert_eq!(pe.data()[base + 1], arg.cos());
                }
            }
        }
    }

    #[test]
    fn odd_bandwidth_rejected() {
        assert!(matches!(
            fourier_pe::<f64>(&[[0.0; 3]], 7),
            Err(Error::Config(_))
        ));
        assert!(fourier_pe::<f64>(&[[0.0; 3]], 0).is_err());
    }
}
