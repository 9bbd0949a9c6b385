//! Residual box encoding relative to an anchor.

use crate::error::{Error, Result};
use crate::pcio::{wrap_angle, Box3D};

pub const CODE_SIZE: usize = 7;

fn check(b: &Box3D, what: &str) -> Result<()> {
    if b.dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} dims must be positive: {:?}",
            b.dims
        )))
    }
}

/// `(Δx/d, Δy/d, Δz/h_a, ln l/l_a, ln w/w_a, ln h/h_a, Δyaw)` with
/// `d = √(l_a² + w_a²)` and `Δyaw` wrapped to `(-π, π]`.
pub fn encode_boxes(gt: &Box3D, anchor: &Box3D) -> Result<[f64; CODE_SIZE]> {
    check(gt, "box")?;
    check(anchor, "anchor")?;
    let d = anchor.dims[0].hypot(anchor.dims[1]);
    Ok([
        (gt.center[0] - anchor.center[0]) / d,
        (gt.center[1] - anchor.center[1]) / d,
        (gt.center[2] - anchor.center[2]) / anchor.dims[2],
        (gt.dims[0] / anchor.dims[0]).ln(),
        (gt.dims[1] / anchor.dims[1]).ln(),
        (gt.dims[2] / anchor.dims[2]).ln(),
        wrap_angle(gt.yaw - anchor.yaw),
    ])
}

/// Inverse of [`encode_boxes`]; the class id is taken from the anchor.
pub fn decode_boxes(code: &[f64; CODE_SIZE], anchor: &Box3D) -> Result<Box3D> {
    check(anchor, "anchor")?;
    let d = anchor.dims[0].hypot(anchor.dims[1]);
    Box3D::new(
        [
            anchor.center[0] + code[0] * d,
            anchor.center[1] + code[1] * d,
            anchor.center[2] + code[2] * anchor.dims[2],
        ],
        [
            anchor.dims[0] * code[3].exp(),
            anchor.dims[1] * code[4].exp(),
            anchor.dims[2] * code[5].exp(),
        ],
        anchor.yaw + code[6],
        anchor.class_id,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
        Box3D::new(
            [
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-3.0..1.0),
            ],
            [
                rng.gen_range(0.2..10.0),
                rng.gen_range(0.2..5.0),
                rng.gen_range(0.2..4.0),
            ],
            rng.gen_range(-PI..PI),
            0,
        )
        .unwrap()
    }

    #[test]
    fn self_encoding_is_zero() {
        let a = Box3D::new([1.0, 2.0, -1.0], [3.9, 1.6, 1.56], 0.4, 0).unwrap();
        assert_eq!(encode_boxes(&a, &a).unwrap(), [0.0; 7]);
    }

    #[test]
    fn doubled_dims_give_ln2() {
        let a = Box3D::new([1.0, 2.0, -1.0], [3.9, 1.6, 1.56], 0.4, 0).unwrap();
        let mut b = a;
        b.dims = a.dims.map(|d| 2.0 * d);
        let r = encode_boxes(&b, &a).unwrap();
        for v in &r[3..6] {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let (b, a) = (random_box(&mut rng), random_box(&mut rng));
            let back = decode_boxes(&encode_boxes(&b, &a).unwrap(), &a).unwrap();
            for k in 0..3 {
                assert!((back.center[k] - b.center[k]).abs() < 1e-12);
                assert!((back.dims[k] - b.dims[k]).abs() < 1e-12);
            }
            assert!(wrap_angle(back.yaw - b.yaw).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_flat_anchor() {
        let mut a = Box3D::new([0.0; 3], [1.0; 3], 0.0, 0).unwrap();
        a.dims[2] = 0.0;
        assert!(encode_boxes(&a, &a).is_err());
    }
}
