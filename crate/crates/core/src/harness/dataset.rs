//! On-disk scenes.
//!
//! ```text
//! DIR/meshes/<name>.obj
//! DIR/<scene id>/manifest.txt
//! DIR/<scene id>/depth.pgf        1 channel, mm (0 = missing)
//! DIR/<scene id>/tree_<t>.pgf     4 channels: probability, x, y, z
//! ```
//!
//! Rasters are `PGF1` files: magic, then `u32` width, height and channel
//! count, then little-endian `f32` samples, row-major with channels
//! interleaved.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::IoError;
use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::harness::config::{noise_params, write_noise, KeyValues};
use crate::observation::{ForestPrediction, NoiseParams, ObservationSet};
use crate::render::TriangleMesh;
use crate::train::TrainingSample;

pub const RASTER_MAGIC: &[u8; 4] = b"PGF1";
const HEADER_LEN: usize = 16;
pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "scene 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == width * height * channels).then_some(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(RASTER_MAGIC);
        for d in [self.width, self.height, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err("truncated header".into());
        }
        if &bytes[..4] != RASTER_MAGIC {
            return Err("bad magic".into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (width, height, channels) = (word(1), word(2), word(3));
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or("dimensions overflow")?;
        if bytes.len() - HEADER_LEN != 4 * count {
            return Err(format!(
                "expected {} data bytes for {width}x{height}x{channels}, found {}",
                4 * count,
                bytes.len() - HEADER_LEN
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| IoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| IoError::CorruptRaster {
            path: path.into(),
            reason,
        })
    }
}

/// One labeled scene as generated or loaded.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: String,
    pub mesh_name: String,
    pub mesh: Arc<TriangleMesh>,
    pub gt_pose: Pose,
    pub occlusion: f64,
    pub observation: ObservationSet,
    pub seed: u64,
    pub noise: NoiseParams,
}

impl SceneRecord {
    pub fn training_sample(&self) -> TrainingSample {
        TrainingSample::new(self.observation.clone(), self.mesh.clone(), self.gt_pose)
            .expect("scene targets are in front of the camera")
    }
}

fn observation_rasters(obs: &ObservationSet) -> (Raster, Vec<Raster>) {
    let k = obs.intrinsics();
    let depth = Raster::new(
        k.width,
        k.height,
        1,
        obs.depth().iter().map(|&d| d as f32).collect(),
    )
    .unwrap();
    let pred = obs.prediction();
    let trees = pred
        .tree_probabilities()
        .iter()
        .zip(pred.tree_object_coords())
        .map(|(p, c)| {
            let data = p
                .iter()
                .zip(c)
                .flat_map(|(&p, c)| [p as f32, c[0] as f32, c[1] as f32, c[2] as f32])
                .collect();
            Raster::new(k.width, k.height, 4, data).unwrap()
        })
        .collect();
    (depth, trees)
}

fn observation_from_rasters(
    k: CameraIntrinsics,
    depth: &Raster,
    trees: &[Raster],
) -> Result<ObservationSet, String> {
    let shape = |r: &Raster, c: usize| r.width == k.width && r.height == k.height && r.channels == c;
    if !shape(depth, 1) || !trees.iter().all(|t| shape(t, 4)) {
        return Err("raster dimensions disagree with the manifest".into());
    }
    let probs = trees
        .iter()
        .map(|t| t.data.chunks_exact(4).map(|c| c[0] as f64).collect())
        .collect();
    let coords = trees
        .iter()
        .map(|t| {
            t.data
                .chunks_exact(4)
                .map(|c| Vec3::new(c[1] as f64, c[2] as f64, c[3] as f64))
                .collect()
        })
        .collect();
    let prediction = ForestPrediction::new(k.width, k.height, probs, coords).map_err(|e| e.to_string())?;
    ObservationSet::new(depth.data.iter().map(|&d| d as f64).collect(), prediction, k)
        .map_err(|e| e.to_string())
}

fn mesh_file(name: &str) -> String {
    format!("{name}.obj")
}

/// Writes `scene` under `dir/<id>`; the mesh goes to `dir/meshes` once.
pub fn save_scene(dir: &Path, scene: &SceneRecord) -> Result<(), IoError> {
    let mesh_dir = dir.join("meshes");
    std::fs::create_dir_all(&mesh_dir).map_err(|e| IoError::io(&mesh_dir, e))?;
    let mesh_path = mesh_dir.join(mesh_file(&scene.mesh_name));
    if !mesh_path.exists() {
        std::fs::write(&mesh_path, scene.mesh.to_obj_string()).map_err(|e| IoError::io(&mesh_path, e))?;
    }

    let scene_dir = dir.join(&scene.id);
    std::fs::create_dir_all(&scene_dir).map_err(|e| IoError::io(&scene_dir, e))?;
    let (depth, trees) = observation_rasters(&scene.observation);
    depth.save(&scene_dir.join("depth.pgf"))?;
    let k = scene.observation.intrinsics();

    let mut kv = KeyValues::new();
    kv.set("format", FORMAT);
    kv.set("scene_id", &scene.id);
    kv.set("width", k.width);
    kv.set("height", k.height);
    kv.set("fx", k.fx);
    kv.set("fy", k.fy);
    kv.set("cx", k.cx);
    kv.set("cy", k.cy);
    kv.set("depth", "depth.pgf");
    kv.set("trees", trees.len());
    for (t, raster) in trees.iter().enumerate() {
        let name = format!("tree_{t}.pgf");
        raster.save(&scene_dir.join(&name))?;
        kv.set(&format!("tree_{t}"), name);
    }
    kv.set_list("gt_pose", &scene.gt_pose.to_array());
    kv.set("mesh", format!("../meshes/{}", mesh_file(&scene.mesh_name)));
    kv.set("mesh_name", &scene.mesh_name);
    kv.set("occlusion", scene.occlusion);
    kv.set("seed", scene.seed);
    let mut noise = KeyValues::new();
    write_noise(&mut noise, &scene.noise);
    for key in noise.keys().map(str::to_string).collect::<Vec<_>>() {
        kv.set(&format!("noise.{key}"), noise.get_str(&key).unwrap());
    }
    let path = scene_dir.join(MANIFEST);
    std::fs::write(&path, kv.to_text()).map_err(|e| IoError::io(&path, e))
}

pub fn save_dataset(dir: &Path, scenes: &[SceneRecord]) -> Result<(), IoError> {
    scenes.iter().try_for_each(|s| save_scene(dir, s))
}

/// Caches meshes by path while loading many scenes.
#[derive(Default)]
pub struct MeshCache {
    meshes: BTreeMap<PathBuf, Arc<TriangleMesh>>,
}

impl MeshCache {
    pub fn get(&mut self, path: &Path) -> Result<Arc<TriangleMesh>, IoError> {
        if let Some(m) = self.meshes.get(path) {
            return Ok(m.clone());
        }
        let mesh = Arc::new(TriangleMesh::load_obj(path, 1.0)?);
        self.meshes.insert(path.to_path_buf(), mesh.clone());
        Ok(mesh)
    }
}

pub fn load_scene(scene_dir: &Path, meshes: &mut MeshCache) -> Result<SceneRecord, IoError> {
    let manifest = scene_dir.join(MANIFEST);
    let kv = KeyValues::load(&manifest)?;
    let bad = |reason: String| IoError::malformed("scene manifest", &manifest, reason);
    if kv.get_str("format") != Some(FORMAT) {
        return Err(bad("unsupported format".into()));
    }
    let k = CameraIntrinsics::new(
        kv.require("fx").map_err(|e| bad(e.to_string()))?,
        kv.require("fy").map_err(|e| bad(e.to_string()))?,
        kv.require("cx").map_err(|e| bad(e.to_string()))?,
        kv.require("cy").map_err(|e| bad(e.to_string()))?,
        kv.require("width").map_err(|e| bad(e.to_string()))?,
        kv.require("height").map_err(|e| bad(e.to_string()))?,
    )
    .map_err(|e| bad(e.to_string()))?;
    let file = |key: &str| -> Result<PathBuf, IoError> {
        kv.get_str(key)
            .map(|f| scene_dir.join(f))
            .ok_or_else(|| bad(format!("missing key {key}")))
    };
    let depth = Raster::load(&file("depth")?)?;
    let tree_count: usize = kv.require("trees").map_err(|e| bad(e.to_string()))?;
    let trees = (0..tree_count)
        .map(|t| Raster::load(&file(&format!("tree_{t}"))?))
        .collect::<Result<Vec<_>, _>>()?;
    let observation = observation_from_rasters(k, &depth, &trees).map_err(bad)?;

    let pose: Vec<f64> = kv
        .get_list("gt_pose")
        .map_err(|e| bad(e.to_string()))?
        .ok_or_else(|| bad("missing key gt_pose".into()))?;
    let pose: [f64; 12] = pose
        .try_into()
        .map_err(|_| bad("gt_pose needs 12 numbers".into()))?;
    let gt_pose = Pose::from_array(&pose);
    if !gt_pose.is_valid(1e-6) {
        return Err(bad("gt_pose rotation is not orthonormal".into()));
    }

    let mut noise_kv = KeyValues::new();
    for key in kv.keys() {
        if let Some(stripped) = key.strip_prefix("noise.") {
            noise_kv.set(stripped, kv.get_str(key).unwrap());
        }
    }
    let noise = noise_params(&noise_kv, NoiseParams::default()).map_err(|e| bad(e.to_string()))?;

    Ok(SceneRecord {
        id: kv
            .get_str("scene_id")
            .ok_or_else(|| bad("missing key scene_id".into()))?
            .to_string(),
        mesh_name: kv.get_str("mesh_name").unwrap_or_default().to_string(),
        mesh: meshes.get(&file("mesh")?)?,
        gt_pose,
        occlusion: kv.require("occlusion").map_err(|e| bad(e.to_string()))?,
        observation,
        seed: kv.require("seed").map_err(|e| bad(e.to_string()))?,
        noise,
    })
}

/// Every subdirectory holding a manifest, in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<SceneRecord>, IoError> {
    let entries = std::fs::read_dir(dir).map_err(|e| IoError::io(dir, e))?;
    let mut scene_dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| IoError::io(dir, e))?.path();
        if path.join(MANIFEST).is_file() {
            scene_dirs.push(path);
        }
    }
    scene_dirs.sort();
    let mut meshes = MeshCache::default();
    scene_dirs.iter().map(|d| load_scene(d, &mut meshes)).collect()
}
