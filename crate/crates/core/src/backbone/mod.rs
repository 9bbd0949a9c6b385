//! Point feature extractor: four MLP + set-attention stages at doubling
//! voxel sizes, followed by pillar soft-pooling and a shallow BEV CNN.

mod bev;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bev::{bev_cnn, bev_softpool, conv2d, pillar_coords, upsample2x, BevCnn, BevGrid};

use crate::diffcore::{DiffArray, Real, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Binder, Mlp, ParamStore};
use crate::pcio::{local_coords, voxelize, PointCloud, VoxelGridSpec};
use crate::scatter::SegmentTable;
use crate::vsa::VsaBlock;

/// Per-point input features: in-voxel xyz at the first stage, intensity.
pub const INPUT_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Point range and first-stage voxel size.
    pub grid: VoxelGridSpec,
    pub block_dims: Vec<usize>,
    pub latent_k: usize,
    pub pe_bandwidth: usize,
    pub pillar_size: f64,
    /// Widths of the stride-1 and stride-2 BEV branches.
    pub bev_widths: [usize; 2],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::kitti()
    }
}

impl BackboneConfig {
    pub fn kitti() -> Self {
        Self {
            grid: VoxelGridSpec::kitti(),
            block_dims: vec![16, 32, 64, 128],
            latent_k: 8,
            pe_bandwidth: 64,
            pillar_size: 0.36,
            bev_widths: [64, 64],
        }
    }

    pub fn waymo() -> Self {
        Self {
            grid: VoxelGridSpec::waymo(),
            ..Self::kitti()
        }
    }

    /// Narrow network over a 23.04 m square for single-core training on
    /// synthetic scenes; the BEV grid is 64 × 64 pillars.
    pub fn toy() -> Self {
        Self {
            grid: VoxelGridSpec {
                origin: [0.0, -11.52, -3.0],
                extent: [23.04, 23.04, 4.0],
                voxel_size: [0.32, 0.32, 4.0],
            },
            block_dims: vec![8, 16, 24, 32],
            latent_k: 4,
            pe_bandwidth: 8,
            pillar_size: 0.36,
            bev_widths: [16, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.block_dims.is_empty() || self.block_dims[0] == 0 {
            return Err(Error::Config(
                "block_dims must be non-empty and positive".into(),
            ));
        }
        if self.block_dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "block_dims must be strictly increasing: {:?}",
                self.block_dims
            )));
        }
        if self.latent_k == 0 {
            return Err(Error::Config("latent_k must be positive".into()));
        }
        if self.pe_bandwidth < 2 || self.pe_bandwidth % 2 != 0 {
            return Err(Error::Config(format!(
                "pe_bandwidth must be even and >= 2, got {}",
                self.pe_bandwidth
            )));
        }
        if !(self.pillar_size > 0.0) || self.bev_widths.contains(&0) {
            return Err(Error::Config(
                "pillar size and BEV widths must be positive".into(),
            ));
        }
        let last = self.stage_grid(self.block_dims.len() - 1);
        if (0..2).any(|a| last.voxel_size[a] > self.grid.extent[a]) {
            return Err(Error::Config(format!(
                "stage voxel {:?} exceeds the grid extent {:?}",
                last.voxel_size, self.grid.extent
            )));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.block_dims.len()
    }

    /// Voxel grid of stage `s`: X and Y sizes doubled `s` times, Z fixed.
    pub fn stage_grid(&self, s: usize) -> VoxelGridSpec {
        let f = (1u64 << s) as f64;
        let v = self.grid.voxel_size;
        self.grid.with_voxel_size([v[0] * f, v[1] * f, v[2]])
    }

    pub fn out_dim(&self) -> usize {
        *self.block_dims.last().expect("validated")
    }

    /// BEV grid size `(height, width)` = pillars along X and Y.
    pub fn bev_dims(&self) -> (usize, usize) {
        let h = (self.grid.extent[0] / self.pillar_size - 1e-9).ceil() as usize;
        let w = (self.grid.extent[1] / self.pillar_size - 1e-9).ceil() as usize;
        (h, w)
    }

    pub fn bev_channels(&self) -> usize {
        self.bev_widths[0] + self.bev_widths[1]
    }
}

/// Voxel assignment of a cloud at every stage.
#[derive(Clone, Debug)]
pub struct StageLayout {
    pub segs: Vec<SegmentTable>,
    pub local: Vec<Vec<[f64; 3]>>,
}

impl StageLayout {
    pub fn build(pc: &PointCloud, cfg: &BackboneConfig) -> Result<Self> {
        let mut segs = Vec::with_capacity(cfg.stages());
        let mut local = Vec::with_capacity(cfg.stages());
        for s in 0..cfg.stages() {
            let grid = cfg.stage_grid(s);
            segs.push(SegmentTable::build(&voxelize(pc, &grid)?)?);
            local.push(local_coords(pc, &grid)?);
        }
        Ok(Self { segs, local })
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub mlps: Vec<Mlp>,
    pub blocks: Vec<VsaBlock>,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut d_prev = INPUT_FEATURES;
        let mut mlps = Vec::new();
        let mut blocks = Vec::new();
        for (s, &d) in cfg.block_dims.iter().enumerate() {
            mlps.push(Mlp::new(&format!("backbone.mlp{s}"), d_prev, d));
            blocks.push(VsaBlock::new(
                format!("backbone.vsa{s}"),
                d,
                d,
                cfg.latent_k,
                cfg.pe_bandwidth,
            ));
            d_prev = d;
        }
        Ok(Self { cfg, mlps, blocks })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<()> {
        for (mlp, block) in self.mlps.iter().zip(&self.blocks) {
            mlp.init(store, rng);
            block.init(store, rng)?;
        }
        Ok(())
    }

    /// Per-point input features, `n × 4`.
    pub fn input_features<T: Real>(pc: &PointCloud, layout: &StageLayout) -> Tensor<T> {
        let mut data = Vec::with_capacity(pc.len() * INPUT_FEATURES);
        for (l, i) in layout.local[0].iter().zip(&pc.intensity) {
            data.extend([l[0], l[1], l[2], *i].map(T::of));
        }
        Tensor::new(vec![pc.len(), INPUT_FEATURES], data).expect("n×4 features")
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        pc: &PointCloud,
    ) -> Result<DiffArray<'t, T>> {
        let layout = StageLayout::build(pc, &self.cfg)?;
        self.forward_with(b, pc, &layout)
    }

    pub fn forward_with<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        pc: &PointCloud,
        layout: &StageLayout,
    ) -> Result<DiffArray<'t, T>> {
        let mut x = b.tape().constant(Self::input_features(pc, layout));
        for (s, (mlp, block)) in self.mlps.iter().zip(&self.blocks).enumerate() {
            x = mlp.forward(b, x)?;
            x = block.forward(b, x, &layout.local[s], &layout.segs[s])?;
        }
        Ok(x)
    }
}

/// Backbone forward pass: `n × block_dims.last()` features in input order.
pub fn voxset_backbone<'t, T: Real>(
    b: &Binder<'t, '_, T>,
    pc: &PointCloud,
    cfg: &BackboneConfig,
) -> Result<DiffArray<'t, T>> {
    Backbone::new(cfg.clone())?.forward(b, pc)
}
