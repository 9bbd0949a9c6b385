//! Voxel set attention.
//!
//! Each voxel's points are compressed into `k` latent slots by a
//! cross-attention against learned latent codes (normalised within the
//! voxel), the slots are mixed spatially by a grouped sparse convolution,
//! and every point reads its voxel's slots back through a second
//! cross-attention.

mod ops;
mod oracle;
mod pe;

use std::sync::Arc;

use rand::Rng;

pub use ops::{
    slot_logits, slot_mix, sparse_group_conv, tap_offset, NeighborTable, CENTER_TAP, TAPS,
};
pub use oracle::naive_vsa_oracle;
pub use pe::fourier_pe;

use crate::diffcore::{DiffArray, Real, Tensor};
use crate::error::{Error, Result};
use crate::nn::{init_normal, init_uniform, BatchNorm, Binder, ParamStore};
use crate::scatter::{scatter_outer_sum, scatter_softmax, SegmentTable, VoxelCoord};

pub const LATENT_INIT_STD: f64 = 0.02;

/// Every tensor of one block. Layouts: projections are `in×out`; the
/// grouped kernels are `[k, 9, d, d]` indexed `(group, tap, in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VsaParams<T = f64> {
    pub latent: Tensor<T>,
    pub w_key: Tensor<T>,
    pub w_value: Tensor<T>,
    pub w_query: Tensor<T>,
    pub ffn_w1: Tensor<T>,
    pub ffn_b1: Tensor<T>,
    pub ffn_w2: Tensor<T>,
    pub ffn_b2: Tensor<T>,
    pub dec_key: Tensor<T>,
    pub dec_value: Tensor<T>,
    pub w_out: Tensor<T>,
    /// Residual projection, present when `d_in != d_out`.
    pub w_res: Option<Tensor<T>>,
    pub pe_weight: Tensor<T>,
    pub pe_bias: Tensor<T>,
    pub bn_gamma: Tensor<T>,
    pub bn_beta: Tensor<T>,
    pub bn_mean: Tensor<T>,
    pub bn_var: Tensor<T>,
}

/// Shape of one block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VsaBlock {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
    pub k: usize,
    pub pe_bandwidth: usize,
}

/// Block parameters bound onto a tape.
#[derive(Clone, Copy)]
pub struct VsaWeights<'t, T: Real> {
    pub latent: DiffArray<'t, T>,
    pub w_key: DiffArray<'t, T>,
    pub w_value: DiffArray<'t, T>,
    pub w_query: DiffArray<'t, T>,
    pub ffn_w1: DiffArray<'t, T>,
    pub ffn_b1: DiffArray<'t, T>,
    pub ffn_w2: DiffArray<'t, T>,
    pub ffn_b2: DiffArray<'t, T>,
    pub dec_key: DiffArray<'t, T>,
    pub dec_value: DiffArray<'t, T>,
}

/// Per-voxel slot features `[m, k, d]` with the voxel coordinates they
/// live at.
#[derive(Clone)]
pub struct HiddenFeatures<'t, T: Real> {
    pub per_voxel: DiffArray<'t, T>,
    pub coords: Arc<[VoxelCoord]>,
}

const NAMES: [&str; 10] = [
    "latent",
    "key",
    "value",
    "query",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
    "dec_key",
    "dec_value",
];

impl VsaBlock {
    pub fn new(
        prefix: impl Into<String>,
        d_in: usize,
        d_out: usize,
        k: usize,
        pe_bandwidth: usize,
    ) -> Self {
        Self {
            prefix: prefix.into(),
            d_in,
            d_out,
            k,
            pe_bandwidth,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Config(format!(
                "block {}: k, d_in and d_out must be positive",
                self.prefix
            )));
        }
        if self.pe_bandwidth < 2 || self.pe_bandwidth % 2 != 0 {
            return Err(Error::Config(format!(
                "block {}: positional bandwidth must be even and >= 2",
                self.prefix
            )));
        }
        Ok(())
    }

    pub fn init_params<T: Real>(&self, rng: &mut impl Rng) -> Result<VsaParams<T>> {
        self.validate()?;
        let (di, d, k) = (self.d_in, self.d_out, self.k);
        let pe_w = 3 * self.pe_bandwidth;
        Ok(VsaParams {
            latent: init_normal(&[k, d], LATENT_INIT_STD, rng),
            w_key: init_uniform(&[di, d], di, rng),
            w_value: init_uniform(&[di, d], di, rng),
            w_query: init_uniform(&[di, d], di, rng),
            ffn_w1: init_uniform(&[k, TAPS, d, d], TAPS * d, rng),
            ffn_b1: init_uniform(&[k, d], TAPS * d, rng),
            ffn_w2: init_uniform(&[k, TAPS, d, d], TAPS * d, rng),
            ffn_b2: init_uniform(&[k, d], TAPS * d, rng),
            dec_key: init_uniform(&[d, d], d, rng),
            dec_value: init_uniform(&[d, d], d, rng),
            w_out: init_uniform(&[d, d], d, rng),
            w_res: (di != d).then(|| init_uniform(&[di, d], di, rng)),
            pe_weight: init_uniform(&[pe_w, di], pe_w, rng),
            pe_bias: init_uniform(&[di], pe_w, rng),
            bn_gamma: Tensor::full(&[d], T::one()),
            bn_beta: Tensor::zeros(&[d]),
            bn_mean: Tensor::zeros(&[d]),
            bn_var: Tensor::full(&[d], T::one()),
        })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<()> {
        let p = self.init_params(rng)?;
        self.store_params(store, p);
        Ok(())
    }

    /// Writes `p` into `store` under this block's prefix.
    pub fn store_params<T: Real>(&self, store: &mut ParamStore<T>, p: VsaParams<T>) {
        let name = |s: &str| format!("{}.{s}", self.prefix);
        let tensors = [
            p.latent,
            p.w_key,
            p.w_value,
            p.w_query,
            p.ffn_w1,
            p.ffn_b1,
            p.ffn_w2,
            p.ffn_b2,
            p.dec_key,
            p.dec_value,
        ];
        for (n, t) in NAMES.iter().zip(tensors) {
            store.insert(name(n), t);
        }
        store.insert(name("out"), p.w_out);
        if let Some(r) = p.w_res {
            store.insert(name("res"), r);
        }
        store.insert(name("pe.weight"), p.pe_weight);
        store.insert(name("pe.bias"), p.pe_bias);
        store.insert(name("bn.gamma"), p.bn_gamma);
        store.insert(name("bn.beta"), p.bn_beta);
        store.insert_buffer(name("bn.running_mean"), p.bn_mean);
        store.insert_buffer(name("bn.running_var"), p.bn_var);
    }

    /// Reads this block's tensors back out of `store`.
    pub fn load_params<T: Real>(&self, store: &ParamStore<T>) -> Result<VsaParams<T>> {
        let get = |s: &str| store.get(&format!("{}.{s}", self.prefix)).cloned();
        let res = format!("{}.res", self.prefix);
        Ok(VsaParams {
            latent: get("latent")?,
            w_key: get("key")?,
            w_value: get("value")?,
            w_query: get("query")?,
            ffn_w1: get("ffn.w1")?,
            ffn_b1: get("ffn.b1")?,
            ffn_w2: get("ffn.w2")?,
            ffn_b2: get("ffn.b2")?,
            dec_key: get("dec_key")?,
            dec_value: get("dec_value")?,
            w_out: get("out")?,
            w_res: store.contains(&res).then(|| get("res")).transpose()?,
            pe_weight: get("pe.weight")?,
            pe_bias: get("pe.bias")?,
            bn_gamma: get("bn.gamma")?,
            bn_beta: get("bn.beta")?,
            bn_mean: get("bn.running_mean")?,
            bn_var: get("bn.running_var")?,
        })
    }

    pub fn bind<'t, T: Real>(&self, b: &Binder<'t, '_, T>) -> Result<VsaWeights<'t, T>> {
        let p = |s: &str| b.param(&format!("{}.{s}", self.prefix));
        Ok(VsaWeights {
            latent: p("latent")?,
            w_key: p("key")?,
            w_value: p("value")?,
            w_query: p("query")?,
            ffn_w1: p("ffn.w1")?,
            ffn_b1: p("ffn.b1")?,
            ffn_w2: p("ffn.w2")?,
            ffn_b2: p("ffn.b2")?,
            dec_key: p("dec_key")?,
            dec_value: p("dec_value")?,
        })
    }

    /// `x + PE(local) · W_pe + b_pe`.
    pub fn inject_pe<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        x: DiffArray<'t, T>,
        local: &[[f64; 3]],
    ) -> Result<DiffArray<'t, T>> {
        let pe = b.tape().constant(fourier_pe(local, self.pe_bandwidth)?);
        let proj = pe
            .matmul(b.param(&format!("{}.pe.weight", self.prefix))?)?
            .add_row(b.param(&format!("{}.pe.bias", self.prefix))?)?;
        x.add(proj)
    }

    /// Encoder, ConvFFN and decoder on the PE-injected input; `n×d_out`
    /// before the output projection.
    pub fn attention<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        x: DiffArray<'t, T>,
        local: &[[f64; 3]],
        seg: &SegmentTable,
    ) -> Result<DiffArray<'t, T>> {
        let w = self.bind(b)?;
        let xp = self.inject_pe(b, x, local)?;
        let h = vsa_encode(xp, &w, seg)?;
        let h_hat = conv_ffn(&h, &w)?;
        vsa_decode(xp, &h_hat, &w, seg)
    }

    /// `BN(x_proj + attention(x) · W_out)` where `x_proj` is `x` or its
    /// learned projection when the width changes.
    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        x: DiffArray<'t, T>,
        local: &[[f64; 3]],
        seg: &SegmentTable,
    ) -> Result<DiffArray<'t, T>> {
        let (n, d_in) = x.dims2("vsa_block")?;
        if d_in != self.d_in || local.len() != n {
            return Err(Error::shape(
                "vsa_block",
                &x.shape(),
                &[local.len(), self.d_in],
            ));
        }
        let o = self.attention(b, x, local, seg)?;
        let y = o.matmul(b.param(&format!("{}.out", self.prefix))?)?;
        let res = if self.d_in == self.d_out {
            x
        } else {
            x.matmul(b.param(&format!("{}.res", self.prefix))?)?
        };
        BatchNorm::new(format!("{}.bn", self.prefix), self.d_out).forward(b, res.add(y)?)
    }
}

/// Latent-to-point cross-attention normalised within each voxel.
///
/// `K = x·W_key`, `V = x·W_value`, logits `K·Lᵀ` (`n×k`), softmax over the
/// points of each voxel, then `H_r[j, c] = Σ_{i∈j} Ã[i, c] · V[i]`.
pub fn vsa_encode<'t, T: Real>(
    x: DiffArray<'t, T>,
    w: &VsaWeights<'t, T>,
    seg: &SegmentTable,
) -> Result<HiddenFeatures<'t, T>> {
    let keys = x.matmul(w.w_key)?;
    let values = x.matmul(w.w_value)?;
    let logits = keys.matmul(w.latent.transpose()?)?;
    let attn = scatter_softmax(logits, seg)?;
    Ok(HiddenFeatures {
        per_voxel: scatter_outer_sum(attn, values, seg)?,
        coords: seg.voxel_coords().into(),
    })
}

/// `h + conv2(relu(conv1(h)))` with grouped (one group per slot) 3×3×1
/// sparse convolutions over the active voxels.
pub fn conv_ffn<'t, T: Real>(
    h: &HiddenFeatures<'t, T>,
    w: &VsaWeights<'t, T>,
) -> Result<HiddenFeatures<'t, T>> {
    let nbr = Arc::new(NeighborTable::build(&h.coords)?);
    let y = sparse_group_conv(h.per_voxel, w.ffn_w1, w.ffn_b1, &nbr)?.relu();
    let y = sparse_group_conv(y, w.ffn_w2, w.ffn_b2, &nbr)?;
    Ok(HiddenFeatures {
        per_voxel: h.per_voxel.add(y)?,
        coords: Arc::clone(&h.coords),
    })
}

/// Point-to-slot cross-attention: each point attends over the `k` slots of
/// its own voxel. `Q = x·W_query`; slot keys and values are `Ĥ_r·W_dk` and
/// `Ĥ_r·W_dv`.
pub fn vsa_decode<'t, T: Real>(
    x: DiffArray<'t, T>,
    h_hat: &HiddenFeatures<'t, T>,
    w: &VsaWeights<'t, T>,
    seg: &SegmentTable,
) -> Result<DiffArray<'t, T>> {
    let shape = h_hat.per_voxel.shape();
    let [m, k, d] = shape[..] else {
        return Err(Error::Rank {
            op: "vsa_decode",
            shape,
        });
    };
    if m != seg.m() {
        return Err(Error::shape("vsa_decode", &shape, &[seg.m()]));
    }
    let flat = h_hat.per_voxel.reshape(&[m * k, d])?;
    let keys = flat.matmul(w.dec_key)?.reshape(&[m, k, d])?;
    let values = flat.matmul(w.dec_value)?.reshape(&[m, k, d])?;
    let q = x.matmul(w.w_query)?;
    let attn = slot_logits(keys, q, seg)?.softmax_lastdim()?;
    slot_mix(attn, values, seg)
}
