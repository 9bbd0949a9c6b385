use std::sync::Arc;

use rand::Rng;

use super::BackboneConfig;
use crate::diffcore::{DiffArray, Real};
use crate::error::{Error, Result};
use crate::nn::{init_uniform, BatchNorm, Binder, ParamStore};
use crate::pcio::{voxelize, PointCloud, VoxelGridSpec};
use crate::scatter::{scatter_softmax, scatter_sum, SegmentTable, VoxelCoord};

/// Dense bird's-eye-view feature map. Cell `(r, c)` covers
/// `x ∈ origin.x + [r, r+1)·cell`, `y ∈ origin.y + [c, c+1)·cell` and is
/// row `r · width + c` of `data`.
#[derive(Clone, Copy)]
pub struct BevGrid<'t, T: Real> {
    pub data: DiffArray<'t, T>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
    /// Rows and columns appended to reach even dimensions.
    pub pad: [usize; 2],
}

impl<'t, T: Real> BevGrid<'t, T> {
    pub fn new(
        data: DiffArray<'t, T>,
        height: usize,
        width: usize,
        cell_size: f64,
        origin: [f64; 2],
    ) -> Result<Self> {
        let (rows, channels) = data.dims2("bev_grid")?;
        if rows != height * width {
            return Err(Error::shape("bev_grid", &data.shape(), &[height, width]));
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
            cell_size,
            origin,
            pad: [0, 0],
        })
    }

    /// Center of cell `(r, c)` in meters.
    pub fn cell_center(&self, r: usize, c: usize) -> [f64; 2] {
        [
            self.origin[0] + (r as f64 + 0.5) * self.cell_size,
            self.origin[1] + (c as f64 + 0.5) * self.cell_size,
        ]
    }
}

fn pillar_grid(cfg: &BackboneConfig) -> VoxelGridSpec {
    cfg.grid
        .with_voxel_size([cfg.pillar_size, cfg.pillar_size, cfg.grid.extent[2]])
}

/// Pillar index `(row, col, 0)` of every point.
pub fn pillar_coords(pc: &PointCloud, cfg: &BackboneConfig) -> Result<Vec<VoxelCoord>> {
    voxelize(pc, &pillar_grid(cfg))
}

/// Channel-wise softmax-weighted sum of point features per pillar,
/// scattered into a dense grid with empty pillars at zero.
pub fn bev_softpool<'t, T: Real>(
    feats: DiffArray<'t, T>,
    pc: &PointCloud,
    cfg: &BackboneConfig,
) -> Result<BevGrid<'t, T>> {
    let (n, _) = feats.dims2("bev_softpool")?;
    if n != pc.len() {
        return Err(Error::shape("bev_softpool", &feats.shape(), &[pc.len()]));
    }
    let seg = SegmentTable::build(&pillar_coords(pc, cfg)?)?;
    let weights = scatter_softmax(feats, &seg)?;
    let pooled = scatter_sum(weights.mul(feats)?, &seg)?;
    let (h, w) = cfg.bev_dims();
    let mut idx = vec![None; h * w];
    for (j, c) in seg.voxel_coords().iter().enumerate() {
        idx[c[0] as usize * w + c[1] as usize] = Some(j);
    }
    let dense = pooled.gather_rows(Arc::new(idx))?;
    BevGrid::new(
        dense,
        h,
        w,
        cfg.pillar_size,
        [cfg.grid.origin[0], cfg.grid.origin[1]],
    )
}

/// 3×3 convolution with zero padding 1 over an `h·w × c_in` map, via an
/// im2col gather. `weight` is `9·c_in × c_out` with tap-major rows, tap
/// `t` reading offset `(t / 3 - 1, t % 3 - 1)`.
pub fn conv2d<'t, T: Real>(
    x: DiffArray<'t, T>,
    h: usize,
    w: usize,
    weight: DiffArray<'t, T>,
    stride: usize,
) -> Result<(DiffArray<'t, T>, usize, usize)> {
    let (rows, c_in) = x.dims2("conv2d")?;
    let (k_rows, _) = weight.dims2("conv2d")?;
    if rows != h * w || k_rows != 9 * c_in || stride == 0 {
        return Err(Error::shape("conv2d", &x.shape(), &weight.shape()));
    }
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut idx = Vec::with_capacity(ho * wo * 9);
    for oy in 0..ho {
        for ox in 0..wo {
            for t in 0..9 {
                let iy = (oy * stride + t / 3) as isize - 1;
                let ix = (ox * stride + t % 3) as isize - 1;
                let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                idx.push(inside.then(|| iy as usize * w + ix as usize));
            }
        }
    }
    let cols = x
        .gather_rows(Arc::new(idx))?
        .reshape(&[ho * wo, 9 * c_in])?;
    Ok((cols.matmul(weight)?, ho, wo))
}

/// Nearest-neighbour 2× upsampling of an `h·w × c` map.
pub fn upsample2x<'t, T: Real>(
    x: DiffArray<'t, T>,
    h: usize,
    w: usize,
) -> Result<DiffArray<'t, T>> {
    let idx = (0..2 * h)
        .flat_map(|r| (0..2 * w).map(move |c| Some(r / 2 * w + c / 2)))
        .collect();
    x.gather_rows(Arc::new(idx))
}

fn pad_even<'t, T: Real>(grid: &BevGrid<'t, T>) -> Result<BevGrid<'t, T>> {
    let (h, w) = (grid.height, grid.width);
    let (h2, w2) = (h + h % 2, w + w % 2);
    if (h2, w2) == (h, w) {
        return Ok(*grid);
    }
    let idx = (0..h2)
        .flat_map(|r| (0..w2).map(move |c| (r < h && c < w).then_some(r * w + c)))
        .collect();
    let mut out = BevGrid::new(
        grid.data.gather_rows(Arc::new(idx))?,
        h2,
        w2,
        grid.cell_size,
        grid.origin,
    )?;
    out.pad = [h2 - h, w2 - w];
    Ok(out)
}

/// Two-branch BEV network: three stride-1 convolutions, then three more
/// starting with a stride-2 one and upsampled back; the branch outputs are
/// concatenated. Every convolution is followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct BevCnn {
    pub prefix: String,
    pub c_in: usize,
    pub widths: [usize; 2],
}

impl BevCnn {
    pub const DEPTH: usize = 3;

    pub fn new(prefix: impl Into<String>, c_in: usize, widths: [usize; 2]) -> Self {
        Self {
            prefix: prefix.into(),
            c_in,
            widths,
        }
    }

    fn layers(&self) -> Vec<(String, usize, usize, usize)> {
        let [c1, c2] = self.widths;
        let mut out = Vec::new();
        for i in 0..Self::DEPTH {
            let cin = if i == 0 { self.c_in } else { c1 };
            out.push((format!("{}.b1.conv{i}", self.prefix), cin, c1, 1));
        }
        for i in 0..Self::DEPTH {
            let cin = if i == 0 { c1 } else { c2 };
            out.push((
                format!("{}.b2.conv{i}", self.prefix),
                cin,
                c2,
                if i == 0 { 2 } else { 1 },
            ));
        }
        out
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        for (name, cin, cout, _) in self.layers() {
            store.insert(
                format!("{name}.weight"),
                init_uniform(&[9 * cin, cout], 9 * cin, rng),
            );
            BatchNorm::new(format!("{name}.bn"), cout).init(store);
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        grid: &BevGrid<'t, T>,
    ) -> Result<BevGrid<'t, T>> {
        if grid.channels != self.c_in {
            return Err(Error::shape(
                "bev_cnn",
                &[grid.height, grid.width, grid.channels],
                &[self.c_in],
            ));
        }
        let g = pad_even(grid)?;
        let layers = self.layers();
        let run =
            |x: DiffArray<'t, T>, h, w, (name, _, cout, stride): &(String, usize, usize, usize)| {
                let (y, ho, wo) = conv2d(x, h, w, b.param(&format!("{name}.weight"))?, *stride)?;
                let y = BatchNorm::new(format!("{name}.bn"), *cout)
                    .forward(b, y)?
                    .relu();
                Ok::<_, Error>((y, ho, wo))
            };
        let (mut x1, mut h1, mut w1) = (g.data, g.height, g.width);
        for layer in &layers[..Self::DEPTH] {
            (x1, h1, w1) = run(x1, h1, w1, layer)?;
        }
        let (mut x2, mut h2, mut w2) = (x1, h1, w1);
        for layer in &layers[Self::DEPTH..] {
            (x2, h2, w2) = run(x2, h2, w2, layer)?;
        }
        let up = upsample2x(x2, h2, w2)?;
        let mut out = BevGrid::new(
            DiffArray::concat_cols(&[x1, up])?,
            g.height,
            g.width,
            g.cell_size,
            g.origin,
        )?;
        out.pad = g.pad;
        Ok(out)
    }
}

/// [`BevCnn::forward`] with the configured widths under prefix `bev`.
pub fn bev_cnn<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    grid: &BevGrid<'t, T>,
    cfg: &BackboneConfig,
) -> Result<BevGrid<'t, T>> {
    BevCnn::new("bev", cfg.out_dim(), cfg.bev_widths).forward(b, grid)
}
