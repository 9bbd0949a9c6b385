//! Synthetic labelled scenes: cuboid surface samples on a ground plane
//! plus clutter that stays clear of every box.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Box3D, PointCloud};
use crate::error::{Error, Result};

/// Scene generator settings, read from TOML. Ranges are inclusive
/// `[min, max]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub box_count: [usize; 2],
    pub points_per_box: [usize; 2],
    pub clutter_points: usize,
    pub dims_min: [f64; 3],
    pub dims_max: [f64; 3],
    pub yaw_range: [f64; 2],
    /// Clutter z spread below the ground plane.
    pub z_jitter: f64,
    /// Clutter z spread above the ground plane.
    pub clutter_height: f64,
    pub ground_z: f64,
    /// BEV area (x, y) boxes and clutter are placed in.
    pub area_min: [f64; 2],
    pub area_max: [f64; 2],
    /// Minimum BEV gap between the circumscribed circles of two boxes.
    pub box_gap: f64,
    pub retry_budget: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            box_count: [1, 3],
            points_per_box: [200, 400],
            clutter_points: 500,
            dims_min: [3.6, 1.5, 1.4],
            dims_max: [4.2, 1.8, 1.7],
            yaw_range: [-PI, PI],
            z_jitter: 0.05,
            clutter_height: 2.0,
            ground_z: -1.6,
            area_min: [0.0, -11.52],
            area_max: [23.04, 11.52],
            box_gap: 0.5,
            retry_budget: 200,
        }
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("scene spec: {msg}")));
        if self.box_count[0] > self.box_count[1] || self.points_per_box[0] > self.points_per_box[1]
        {
            return bad("inverted count range");
        }
        if self.points_per_box[0] == 0 && self.box_count[1] > 0 {
            return bad("points_per_box must be at least 1");
        }
        if (0..3).any(|a| !(self.dims_min[a] > 0.0) || self.dims_min[a] > self.dims_max[a]) {
            return bad("dims_min must be positive and not exceed dims_max");
        }
        if self.yaw_range[0] > self.yaw_range[1] {
            return bad("inverted yaw range");
        }
        if (0..2).any(|a| self.area_min[a] >= self.area_max[a]) {
            return bad("empty area");
        }
        if self.z_jitter < 0.0 || self.clutter_height < 0.0 || self.box_gap < 0.0 {
            return bad("negative spread");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generates a point cloud and its exact box labels. Deterministic in
/// `seed`.
pub fn gen_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<(PointCloud, Vec<Box3D>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(spec.box_count[0]..=spec.box_count[1]);

    let mut boxes: Vec<Box3D> = Vec::with_capacity(count);
    let mut attempts = 0;
    while boxes.len() < count {
        attempts += 1;
        if attempts > spec.retry_budget {
            return Err(Error::Generation(format!(
                "placed {} of {count} boxes within {} attempts",
                boxes.len(),
                spec.retry_budget
            )));
        }
        let dims: [f64; 3] =
            std::array::from_fn(|a| uniform(&mut rng, spec.dims_min[a], spec.dims_max[a]));
        let yaw = uniform(&mut rng, spec.yaw_range[0], spec.yaw_range[1]);
        let radius = 0.5 * dims[0].hypot(dims[1]);
        let lo = [spec.area_min[0] + radius, spec.area_min[1] + radius];
        let hi = [spec.area_max[0] - radius, spec.area_max[1] - radius];
        if lo[0] > hi[0] || lo[1] > hi[1] {
            return Err(Error::Generation("area too small for the box dims".into()));
        }
        let cx = uniform(&mut rng, lo[0], hi[0]);
        let cy = uniform(&mut rng, lo[1], hi[1]);
        let clear = boxes.iter().all(|b| {
            (b.center[0] - cx).hypot(b.center[1] - cy) > b.bev_radius() + radius + spec.box_gap
        });
        if clear {
            boxes.push(Box3D::new(
                [cx, cy, spec.ground_z + dims[2] / 2.0],
                dims,
                yaw,
                0,
            )?);
        }
    }

    let mut xyz = Vec::new();
    let mut intensity = Vec::new();
    for b in &boxes {
        let npts = rng.gen_range(spec.points_per_box[0]..=spec.points_per_box[1]);
        let [l, w, h] = b.dims;
        // faces: ±x, ±y, top; the bottom rests on the ground
        let areas = [w * h, w * h, l * h, l * h, l * w];
        let total: f64 = areas.iter().sum();
        // slightly inside the surface so containment is strict
        let half = [0.99 * l / 2.0, 0.99 * w / 2.0, 0.99 * h / 2.0];
        for _ in 0..npts {
            let mut pick = rng.gen_range(0.0..total);
            let mut face = 0;
            while face < 4 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let mut q = [
                uniform(&mut rng, -half[0], half[0]),
                uniform(&mut rng, -half[1], half[1]),
                uniform(&mut rng, -half[2], half[2]),
            ];
            match face {
                0 => q[0] = half[0],
                1 => q[0] = -half[0],
                2 => q[1] = half[1],
                3 => q[1] = -half[1],
                _ => q[2] = half[2],
            }
            xyz.push(b.from_local(&q));
            intensity.push(rng.gen_range(0.0..1.0));
        }
    }

    let margin = 0.1;
    let padded: Vec<Box3D> = boxes
        .iter()
        .map(|b| Box3D {
            dims: b.dims.map(|d| d + 2.0 * margin),
            ..*b
        })
        .collect();
    for _ in 0..spec.clutter_points {
        let mut placed = false;
        for _ in 0..spec.retry_budget.max(1) {
            let p = [
                uniform(&mut rng, spec.area_min[0], spec.area_max[0]),
                uniform(&mut rng, spec.area_min[1], spec.area_max[1]),
                spec.ground_z + uniform(&mut rng, -spec.z_jitter, spec.clutter_height),
            ];
            if padded.iter().all(|b| !b.contains(&p)) {
                xyz.push(p);
                intensity.push(rng.gen_range(0.0..1.0));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(
                "clutter point could not avoid the boxes".into(),
            ));
        }
    }

    if xyz.is_empty() {
        return Err(Error::Generation("scene has no points".into()));
    }
    let mut order: Vec<usize> = (0..xyz.len()).collect();
    order.shuffle(&mut rng);
    let pc = PointCloud::new(xyz, intensity)?.permuted(&order);
    Ok((pc, boxes))
}

/// One box per line: `x y z l w h yaw class_id`.
pub fn write_labels(path: impl AsRef<Path>, boxes: &[Box3D]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# x y z l w h yaw class_id\n");
    for b in boxes {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            b.center[0],
            b.center[1],
            b.center[2],
            b.dims[0],
            b.dims[1],
            b.dims[2],
            b.yaw,
            b.class_id
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Box3D>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if v.len() != 8 {
            return Err(Error::Format(format!(
                "{}:{}: expected 8 values, got {}",
                path.display(),
                lineno + 1,
                v.len()
            )));
        }
        boxes.push(Box3D::new(
            [v[0], v[1], v[2]],
            [v[3], v[4], v[5]],
            v[6],
            v[7] as u32,
        )?);
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_box_without_clutter_is_fully_contained() {
        let spec = SceneSpec {
            box_count: [1, 1],
            clutter_points: 0,
            ..Default::default()
        };
        for seed in 0..20 {
            let (pc, boxes) = gen_synthetic_scene(seed, &spec).unwrap();
            assert_eq!(boxes.len(), 1);
            assert!(pc.len() >= spec.points_per_box[0]);
            assert!(pc.xyz.iter().all(|p| boxes[0].contains(p)));
        }
    }

    #[test]
    fn axis_aligned_box_bounds() {
        let spec = SceneSpec {
            box_count: [1, 1],
            clutter_points: 0,
            dims_min: [4.0, 2.0, 1.5],
            dims_max: [4.0, 2.0, 1.5],
            yaw_range: [0.0, 0.0],
            ..Default::default()
        };
        let (pc, boxes) = gen_synthetic_scene(5, &spec).unwrap();
        let b = boxes[0];
        for p in &pc.xyz {
            assert!((p[0] - b.center[0]).abs() <= 2.0);
            assert!((p[1] - b.center[1]).abs() <= 1.0);
            assert!((p[2] - b.center[2]).abs() <= 0.75);
        }
    }

    #[test]
    fn deterministic_and_labels_exact() {
        let spec = SceneSpec::default();
        let a = gen_synthetic_scene(42, &spec).unwrap();
        let b = gen_synthetic_scene(42, &spec).unwrap();
        assert_eq!(a, b);
        let (pc, boxes) = a;
        let inside = pc
            .xyz
            .iter()
            .filter(|p| boxes.iter().any(|b| b.contains(p)))
            .count();
        assert!(inside >= boxes.len() * spec.points_per_box[0]);
        assert_eq!(pc.len() - inside, spec.clutter_points);
    }

    #[test]
    fn infeasible_spec_fails() {
        let spec = SceneSpec {
            box_count: [30, 30],
            area_min: [0.0, 0.0],
            area_max: [10.0, 10.0],
            ..Default::default()
        };
        assert!(matches!(
            gen_synthetic_scene(1, &spec),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let spec = SceneSpec {
            clutter_points: 123,
            ..Default::default()
        };
        assert_eq!(SceneSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert!(SceneSpec::from_toml("box_count = [1, 2]\nbogus = 3\n").is_err());
        let partial = SceneSpec::from_toml("clutter_points = 7\nseed = 9\n").unwrap();
        assert_eq!((partial.clutter_points, partial.seed), (7, 9));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        let boxes = vec![Box3D::new([1.0, -2.5, -0.8], [3.9, 1.6, 1.56], 0.3, 0).unwrap()];
        write_labels(&path, &boxes).unwrap();
        assert_eq!(read_labels(&path).unwrap(), boxes);
    }
}
