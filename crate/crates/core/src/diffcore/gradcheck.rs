//! Central-difference verification of recorded VJPs.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffArray, Real, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Check at most this many entries per input, chosen by `seed`.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Max of `|analytic - numeric| / max(1, |numeric|)` over checked entries.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Single-input convenience wrapper around [`grad_check_many`].
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Real,
    F: for<'t> Fn(DiffArray<'t, T>) -> Result<DiffArray<'t, T>>,
{
    let cfg = GradCheckConfig {
        eps,
        ..Default::default()
    };
    grad_check_many(|xs| f(xs[0]), std::slice::from_ref(x), &cfg).map(|r| r.max_rel_error)
}

pub fn grad_check_many<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Real,
    F: for<'t> Fn(&[DiffArray<'t, T>]) -> Result<DiffArray<'t, T>>,
{
    if !(1e-7..=1e-4).contains(&cfg.eps) {
        return Err(Error::Config(format!(
            "grad_check eps {} outside [1e-7, 1e-4]",
            cfg.eps
        )));
    }

    let tape = Tape::<T>::new();
    let leaves: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(Error::Rank {
            op: "grad_check",
            shape: loss.shape(),
        });
    }
    let base = loss.item();
    tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = leaves
        .iter()
        .zip(inputs)
        .map(|(l, x)| l.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::<T>::new();
        let leaves: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&leaves)?.item().f64())
    };

    let again = eval(inputs)?;
    if again.to_bits() != base.f64().to_bits() {
        return Err(Error::Inconsistent {
            first: base.f64(),
            second: again,
        });
    }

    // power-of-two step: x ± h is exact for moderate |x|
    let h = 2f64.powi(cfg.eps.log2().round() as i32);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let entries: Vec<usize> = match cfg.max_entries {
            Some(k) if k < numel => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (which as u64) << 32);
                let mut picked = sample(&mut rng, numel, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..numel).collect(),
        };
        for idx in entries {
            let orig = input.data()[idx];
            let up = T::of(orig.f64() + h);
            let down = T::of(orig.f64() - h);
            work[which].data_mut()[idx] = up;
            let plus = eval(&work)?;
            work[which].data_mut()[idx] = down;
            let minus = eval(&work)?;
            work[which].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (up.f64() - down.f64());
            let a = analytic[which].data()[idx].f64();
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((which, idx));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
