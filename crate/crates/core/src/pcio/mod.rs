//! Point clouds, grid specs, boxes and the point-to-voxel mapping.

mod kitti;
mod scene;

pub use kitti::{read_kitti_bin, read_text, write_kitti_bin, write_text};
pub use scene::{gen_synthetic_scene, read_labels, write_labels, SceneSpec};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scatter::VoxelCoord;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub xyz: Vec<[f64; 3]>,
    pub intensity: Vec<f64>,
}

impl PointCloud {
    pub fn new(xyz: Vec<[f64; 3]>, intensity: Vec<f64>) -> Result<Self> {
        if xyz.len() != intensity.len() {
            return Err(Error::shape(
                "PointCloud::new",
                &[xyz.len(), 3],
                &[intensity.len()],
            ));
        }
        if let Some(i) = xyz.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Format(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { xyz, intensity })
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    /// Reorders points: `out[i] = self[order[i]]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            xyz: order.iter().map(|&i| self.xyz[i]).collect(),
            intensity: order.iter().map(|&i| self.intensity[i]).collect(),
        }
    }
}

/// Axis-aligned range and voxel size, all in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub voxel_size: [f64; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: [f64; 3], extent: [f64; 3], voxel_size: [f64; 3]) -> Result<Self> {
        let spec = Self {
            origin,
            extent,
            voxel_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.voxel_size.iter().any(|v| !(*v > 0.0)) || self.extent.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!(
                "voxel size and extent must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// KITTI front range: X [0, 70.4], Y [-40, 40], Z [-3, 1] with
    /// 0.32 × 0.32 × 4 m voxels.
    pub fn kitti() -> Self {
        Self {
            origin: [0.0, -40.0, -3.0],
            extent: [70.4, 80.0, 4.0],
            voxel_size: [0.32, 0.32, 4.0],
        }
    }

    /// Waymo range: X/Y [-75.2, 75], Z [-2, 4] with 0.32 × 0.32 × 6 m voxels.
    pub fn waymo() -> Self {
        Self {
            origin: [-75.2, -75.2, -2.0],
            extent: [150.2, 150.2, 6.0],
            voxel_size: [0.32, 0.32, 6.0],
        }
    }

    pub fn with_voxel_size(&self, voxel_size: [f64; 3]) -> Self {
        Self {
            voxel_size,
            ..*self
        }
    }

    /// Number of voxels per axis, `ceil(extent / voxel_size)`.
    pub fn grid_dims(&self) -> [i64; 3] {
        std::array::from_fn(|a| (self.extent[a] / self.voxel_size[a] - 1e-9).ceil() as i64)
    }

    /// Half-open range test.
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.extent[a])
    }

    fn scaled(&self, p: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.voxel_size[a])
    }
}

/// Keeps points inside the grid range, preserving order.
pub fn crop_range(pc: &PointCloud, spec: &VoxelGridSpec) -> Result<PointCloud> {
    let keep: Vec<usize> = (0..pc.len())
        .filter(|&i| spec.contains(&pc.xyz[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("crop_range"));
    }
    Ok(pc.permuted(&keep))
}

/// Voxel index per point: `floor((p - origin) / voxel_size)`.
pub fn voxelize(pc: &PointCloud, spec: &VoxelGridSpec) -> Result<Vec<VoxelCoord>> {
    let dims = spec.grid_dims();
    pc.xyz
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !spec.contains(p) {
                return Err(Error::OutOfRange {
                    index: i,
                    point: *p,
                });
            }
            let q = spec.scaled(p);
            // rounding right below the upper bound can land on `dims`
            Ok(std::array::from_fn(|a| {
                (q[a].floor() as i64).clamp(0, dims[a] - 1)
            }))
        })
        .collect()
}

/// Position of each point inside its voxel, in `[0, 1)` per axis.
pub fn local_coords(pc: &PointCloud, spec: &VoxelGridSpec) -> Result<Vec<[f64; 3]>> {
    let idx = voxelize(pc, spec)?;
    let below_one = 1.0 - f64::EPSILON;
    Ok(pc
        .xyz
        .iter()
        .zip(&idx)
        .map(|(p, v)| {
            let q = spec.scaled(p);
            std::array::from_fn(|a| (q[a] - v[a] as f64).clamp(0.0, below_one))
        })
        .collect())
}

/// 7-DoF box: center, (l, w, h) along the box's own x/y/z, yaw about z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
    pub class_id: u32,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64, class_id: u32) -> Result<Self> {
        if dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config(format!(
                "box dims must be positive: {dims:?}"
            )));
        }
        Ok(Self {
            center,
            dims,
            yaw: wrap_angle(yaw),
            class_id,
        })
    }

    /// Point expressed in the box frame (origin at the center).
    pub fn to_local(&self, p: &[f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    pub fn from_local(&self, q: &[f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * q[0] - s * q[1],
            self.center[1] + s * q[0] + c * q[1],
            self.center[2] + q[2],
        ]
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        let q = self.to_local(p);
        (0..3).all(|a| q[a].abs() <= self.dims[a] / 2.0)
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.dims[0] / 2.0, self.dims[1] / 2.0);
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|[x, y]| {
            let p = self.from_local(&[x, y, 0.0]);
            [p[0], p[1]]
        })
    }

    /// Radius of the BEV circumscribed circle.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.dims[0].hypot(self.dims[1])
    }
}
