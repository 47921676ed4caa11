//! Synthetic benchmark scenes: one target object in front of a wall, partly
//! hidden by a box occluder, observed through the simulated sensor and forest.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::geometry::{exp_so3, CameraIntrinsics, Mat3, Pose, Vec3};
use crate::harness::metrics::occlusion_fraction;
use crate::observation::{synthesize_observation, NoiseParams};
use crate::render::{MeshBuilder, TriangleMesh};
use crate::seed::{substream, StreamRng};
use crate::harness::dataset::SceneRecord;

/// Names accepted by [`builtin_mesh`].
pub const BUILTIN_MESHES: [&str; 4] = ["ell", "step", "hook", "chair"];

/// Asymmetric block assemblies, about 250 mm across.
pub fn builtin_mesh(name: &str) -> Option<TriangleMesh> {
    let mut b = MeshBuilder::default();
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z) * 2.5;
    match name {
        "ell" => {
            b.add_cuboid(v(0.0, 0.0, 0.0), v(70.0, 20.0, 30.0))
                .add_cuboid(v(-25.0, 30.0, 0.0), v(20.0, 40.0, 30.0))
                .add_cuboid(v(30.0, -5.0, 22.0), v(10.0, 10.0, 14.0));
        }
        "step" => {
            b.add_cuboid(v(0.0, 0.0, 0.0), v(60.0, 40.0, 20.0))
                .add_cuboid(v(-15.0, 5.0, 20.0), v(30.0, 30.0, 20.0))
                .add_cuboid(v(-22.0, 12.0, 40.0), v(16.0, 16.0, 20.0));
        }
        "hook" => {
            b.add_cuboid(v(0.0, 0.0, 0.0), v(16.0, 80.0, 16.0))
                .add_cuboid(v(18.0, 32.0, 0.0), v(20.0, 16.0, 16.0))
                .add_cuboid(v(-14.0, -30.0, 6.0), v(12.0, 20.0, 28.0));
        }
        "chair" => {
            b.add_cuboid(v(0.0, 0.0, 0.0), v(50.0, 50.0, 10.0))
                .add_cuboid(v(0.0, 22.0, 30.0), v(50.0, 6.0, 50.0))
                .add_cuboid(v(-20.0, -20.0, -20.0), v(8.0, 8.0, 30.0))
                .add_cuboid(v(20.0, -20.0, -16.0), v(8.0, 8.0, 22.0));
        }
        _ => return None,
    }
    Some(b.build().expect("builtin meshes are valid"))
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub camera: CameraIntrinsics,
    pub meshes: Vec<(String, Arc<TriangleMesh>)>,
    /// Target depth range (mm).
    pub distance: (f64, f64),
    /// Accepted occlusion range, inclusive.
    pub occlusion: (f64, f64),
    pub noise: NoiseParams,
    /// Gap between the target center and the wall behind it (mm).
    pub wall_gap: f64,
    pub occluder_attempts: usize,
}

impl BenchmarkConfig {
    pub fn default_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(120.0, 120.0, 79.5, 59.5, 160, 120).expect("valid camera")
    }

    pub fn builtin_meshes() -> Vec<(String, Arc<TriangleMesh>)> {
        BUILTIN_MESHES
            .iter()
            .map(|n| (n.to_string(), Arc::new(builtin_mesh(n).unwrap())))
            .collect()
    }
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            camera: Self::default_camera(),
            meshes: Self::builtin_meshes(),
            distance: (1300.0, 1700.0),
            occlusion: (0.2, 0.6),
            noise: NoiseParams::default(),
            wall_gap: 400.0,
            occluder_attempts: 200,
        }
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut *rng));
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

fn random_target_pose<R: Rng + ?Sized>(cfg: &BenchmarkConfig, rng: &mut R) -> Pose {
    let k = &cfg.camera;
    let z = rng.gen_range(cfg.distance.0..=cfg.distance.1);
    let u = rng.gen_range(0.3..0.7) * k.width as f64;
    let v = rng.gen_range(0.3..0.7) * k.height as f64;
    let t = Vec3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
    Pose::new(random_rotation(rng), t)
}

fn random_occluder<R: Rng + ?Sized>(target: &Pose, diameter: f64, rng: &mut R) -> (TriangleMesh, Pose) {
    let size = Vec3::from_fn(|_, _| rng.gen_range(0.4..1.1) * diameter);
    let depth_ahead = rng.gen_range(1.2..2.5) * diameter;
    let scale = (target.translation[2] - depth_ahead) / target.translation[2];
    let lateral = Vec3::new(
        rng.gen_range(-1.0..1.0) * diameter,
        rng.gen_range(-1.0..1.0) * diameter,
        0.0,
    );
    let center = target.translation * scale + lateral;
    let tilt = Vec3::new(0.0, 0.0, rng.gen_range(-0.8..0.8));
    (TriangleMesh::cuboid(size), Pose::new(exp_so3(&tilt), center))
}

fn generate_with(cfg: &BenchmarkConfig, id: String, seed: u64, rng: &mut StreamRng) -> SceneRecord {
    let k = &cfg.camera;
    let wall = TriangleMesh::cuboid(Vec3::new(6000.0, 6000.0, 10.0));
    loop {
        let (name, mesh) = &cfg.meshes[rng.gen_range(0..cfg.meshes.len())];
        let gt = random_target_pose(cfg, rng);
        let wall_pose = Pose::from_translation(Vec3::new(0.0, 0.0, gt.translation[2] + cfg.wall_gap));
        for _ in 0..cfg.occluder_attempts {
            let (occluder, occluder_pose) = random_occluder(&gt, mesh.diameter(), rng);
            let scene = [(mesh.as_ref(), gt), (&occluder, occluder_pose), (&wall, wall_pose)];
            let Ok(occlusion) = occlusion_fraction(&scene, 0, k) else {
                break;
            };
            if occlusion < cfg.occlusion.0 || occlusion > cfg.occlusion.1 {
                continue;
            }
            let (observation, _) = synthesize_observation(&scene, 0, k, &cfg.noise, rng);
            return SceneRecord {
                id,
                mesh_name: name.clone(),
                mesh: mesh.clone(),
                gt_pose: gt,
                occlusion,
                observation,
                seed,
                noise: cfg.noise,
            };
        }
    }
}

/// Scene `index` of split `split`; independent of every other scene.
pub fn generate_scene(cfg: &BenchmarkConfig, seed: u64, split: &str, index: usize) -> SceneRecord {
    let mut rng = substream(seed, &format!("scene/{split}"), index as u64);
    generate_with(cfg, format!("{split}_{index:04}"), seed, &mut rng)
}

pub fn generate_split(cfg: &BenchmarkConfig, seed: u64, split: &str, count: usize) -> Vec<SceneRecord> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_scene(cfg, seed, split, i))
        .collect()
}
