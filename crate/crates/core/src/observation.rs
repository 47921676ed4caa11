//! Observed inputs (recorded depth plus per-tree forest predictions), the
//! six-channel network input and a synthetic generator that stands in for a
//! trained random forest.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::ContractError;
use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::render::{render_scene, RenderedImages, TriangleMesh, Window, MAX_RENDER_SIZE, MIN_WINDOW};

/// Per-pixel forest output over the full frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestPrediction {
    width: usize,
    height: usize,
    probability: Vec<f64>,
    tree_probabilities: Vec<Vec<f64>>,
    tree_object_coords: Vec<Vec<Vec3>>,
}

impl ForestPrediction {
    /// Combined probability is the per-pixel mean over trees.
    pub fn new(
        width: usize,
        height: usize,
        tree_probabilities: Vec<Vec<f64>>,
        tree_object_coords: Vec<Vec<Vec3>>,
    ) -> Result<Self, ContractError> {
        let n = width * height;
        let trees = tree_probabilities.len();
        if trees == 0 || tree_object_coords.len() != trees {
            return Err(ContractError::DimensionMismatch(format!(
                "{} probability maps vs {} coordinate maps",
                trees,
                tree_object_coords.len()
            )));
        }
        if tree_probabilities.iter().any(|m| m.len() != n)
            || tree_object_coords.iter().any(|m| m.len() != n)
        {
            return Err(ContractError::DimensionMismatch(format!(
                "tree maps must have {width}x{height} pixels"
            )));
        }
        if tree_probabilities
            .iter()
            .flatten()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(ContractError::DimensionMismatch(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        let mut probability = vec![0.0; n];
        for tree in &tree_probabilities {
            for (acc, p) in probability.iter_mut().zip(tree) {
                *acc += p;
            }
        }
        probability.iter_mut().for_each(|p| *p /= trees as f64);
        Ok(Self {
            width,
            height,
            probability,
            tree_probabilities,
            tree_object_coords,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tree_count(&self) -> usize {
        self.tree_probabilities.len()
    }

    pub fn probability(&self) -> &[f64] {
        &self.probability
    }

    pub fn tree_probabilities(&self) -> &[Vec<f64>] {
        &self.tree_probabilities
    }

    pub fn tree_object_coords(&self) -> &[Vec<Vec3>] {
        &self.tree_object_coords
    }

    /// Tree with the highest probability at pixel index `i`; ties go to the
    /// lowest index.
    pub fn argmax_tree(&self, i: usize) -> usize {
        let mut best = 0;
        for t in 1..self.tree_count() {
            if self.tree_probabilities[t][i] > self.tree_probabilities[best][i] {
                best = t;
            }
        }
        best
    }
}

/// Everything observed for one image: depth, its validity mask, forest
/// predictions and the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    depth: Vec<f64>,
    depth_valid: Vec<bool>,
    prediction: ForestPrediction,
    intrinsics: CameraIntrinsics,
    /// Object coordinate of the argmax tree per pixel.
    best_coords: Vec<Vec3>,
}

impl ObservationSet {
    /// `depth` uses 0 for missing measurements.
    pub fn new(
        depth: Vec<f64>,
        prediction: ForestPrediction,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, ContractError> {
        let n = intrinsics.pixel_count();
        if depth.len() != n || prediction.width != intrinsics.width || prediction.height != intrinsics.height {
            return Err(ContractError::DimensionMismatch(format!(
                "observation maps must be {}x{}",
                intrinsics.width, intrinsics.height
            )));
        }
        if depth.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(ContractError::DimensionMismatch(
                "depth must be finite and non-negative".into(),
            ));
        }
        let depth_valid = depth.iter().map(|&d| d > 0.0).collect();
        let best_coords = (0..n)
            .map(|i| prediction.tree_object_coords[prediction.argmax_tree(i)][i])
            .collect();
        Ok(Self {
            depth,
            depth_valid,
            prediction,
            intrinsics,
            best_coords,
        })
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn depth_valid(&self) -> &[bool] {
        &self.depth_valid
    }

    pub fn prediction(&self) -> &ForestPrediction {
        &self.prediction
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    /// Object coordinate predicted by the most confident tree at pixel index `i`.
    #[inline]
    pub fn predicted_coord(&self, i: usize) -> Vec3 {
        self.best_coords[i]
    }

    /// Pixel index for frame coordinates, `None` outside the image.
    #[inline]
    pub fn pixel_index(&self, x: i64, y: i64) -> Option<usize> {
        let (w, h) = (self.intrinsics.width as i64, self.intrinsics.height as i64);
        (x >= 0 && y >= 0 && x < w && y < h).then(|| (y * w + x) as usize)
    }
}

pub const CHANNELS: usize = 6;

/// Network input: six `size × size` channels, channel-major.
///
/// 0. observed depth − T_z (0 where unmeasured)
/// 1. rendered depth − T_z (0 off the object)
/// 2. rendered mask (±1)
/// 3. depth-measured mask (±1)
/// 4. combined probability rescaled to [−1, 1]
/// 5. object-coordinate disagreement / diameter (0 off the object)
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    size: usize,
    data: Vec<f64>,
}

impl ChannelStack {
    pub fn from_data(size: usize, data: Vec<f64>) -> Result<Self, ContractError> {
        if data.len() != CHANNELS * size * size {
            return Err(ContractError::DimensionMismatch(format!(
                "expected {} values for a {size}x{size} stack, got {}",
                CHANNELS * size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.size + y) * self.size + x]
    }
}

/// Builds the network input for `pose` from the observation and the rendering
/// of the window. Window pixels outside the frame read as unobserved.
pub fn assemble_channels(
    obs: &ObservationSet,
    rend: &RenderedImages,
    pose: &Pose,
    diameter: f64,
    window: &Window,
) -> Result<ChannelStack, ContractError> {
    let s = window.render_size();
    if rend.width != s || rend.height != s {
        return Err(ContractError::DimensionMismatch(format!(
            "rendering is {}x{}, window renders at {s}x{s}",
            rend.width, rend.height
        )));
    }
    if !(MIN_WINDOW..=MAX_RENDER_SIZE).contains(&s) {
        return Err(ContractError::WindowSize(s));
    }
    let tz = pose.translation[2];
    let n = s * s;
    let mut data = vec![0.0; CHANNELS * n];
    let cols = window.sample_columns();
    let rows = window.sample_rows();
    let prob = obs.prediction().probability();
    for (b, &y) in rows.iter().enumerate() {
        for (a, &x) in cols.iter().enumerate() {
            let i = b * s + a;
            let rendered = rend.mask[i];
            if rendered {
                data[n + i] = rend.depth[i] - tz;
                data[2 * n + i] = 1.0;
            } else {
                data[2 * n + i] = -1.0;
            }
            match obs.pixel_index(x, y) {
                Some(fi) => {
                    if obs.depth_valid[fi] {
                        data[i] = obs.depth[fi] - tz;
                        data[3 * n + i] = 1.0;
                    } else {
                        data[3 * n + i] = -1.0;
                    }
                    data[4 * n + i] = 2.0 * prob[fi] - 1.0;
                    if rendered {
                        data[5 * n + i] =
                            (rend.object_coords[i] - obs.predicted_coord(fi)).norm() / diameter;
                    }
                }
                None => {
                    data[3 * n + i] = -1.0;
                    data[4 * n + i] = -1.0;
                }
            }
        }
    }
    Ok(ChannelStack { size: s, data })
}

/// Corruption applied by the synthetic forest/sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Additive Gaussian depth noise (mm).
    pub depth_sigma: f64,
    /// Gaussian noise on inlier coordinate predictions (mm).
    pub coord_sigma: f64,
    /// Probability that a target pixel's coordinate prediction is an outlier.
    pub outlier_rate: f64,
    /// Probability that a pixel's object probability is forced to 0.
    pub flip_rate: f64,
    pub trees: usize,
    /// Box-blur radius (pixels) applied to the target mask.
    pub blur_radius: usize,
    /// Number of circular depth dropout patches.
    pub dropout_patches: usize,
    /// Dropout patch radius range (pixels).
    pub dropout_radius: (f64, f64),
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self {
            depth_sigma: 0.0,
            coord_sigma: 0.0,
            outlier_rate: 0.0,
            flip_rate: 0.0,
            trees: 1,
            blur_radius: 0,
            dropout_patches: 0,
            dropout_radius: (0.0, 0.0),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "zero" => Some(Self::zero()),
            "default" => Some(Self::default()),
            _ => None,
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            depth_sigma: 3.0,
            coord_sigma: 15.0,
            outlier_rate: 0.3,
            flip_rate: 0.1,
            trees: 3,
            blur_radius: 1,
            dropout_patches: 2,
            dropout_radius: (2.0, 6.0),
        }
    }
}

/// Renders a scene and corrupts it into an observation of object
/// `target_index`. Returns the observation and the target's true pose.
pub fn synthesize_observation<R: Rng + ?Sized>(
    scene: &[(&TriangleMesh, Pose)],
    target_index: usize,
    k: &CameraIntrinsics,
    noise: &NoiseParams,
    rng: &mut R,
) -> (ObservationSet, Pose) {
    let (target_mesh, gt) = scene[target_index];
    let composite = render_scene(scene, k);
    let n = k.pixel_count();
    let (w, h) = (k.width, k.height);

    let depth_noise = Normal::new(0.0, noise.depth_sigma.max(0.0)).expect("finite sigma");
    let mut depth: Vec<f64> = composite
        .depth
        .iter()
        .map(|&d| {
            if d > 0.0 {
                let e = if noise.depth_sigma > 0.0 {
                    depth_noise.sample(rng)
                } else {
                    0.0
                };
                (d + e).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    for _ in 0..noise.dropout_patches {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let (rlo, rhi) = noise.dropout_radius;
        let r = if rhi > rlo { rng.gen_range(rlo..rhi) } else { rlo };
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    depth[y * w + x] = 0.0;
                }
            }
        }
    }

    let target: Vec<bool> = composite
        .owner
        .iter()
        .map(|o| *o == Some(target_index))
        .collect();
    let blurred = box_blur(&target, w, h, noise.blur_radius);

    let (lo, hi) = target_mesh.bounding_box();
    let coord_noise = Normal::new(0.0, noise.coord_sigma.max(0.0)).expect("finite sigma");
    let trees = noise.trees.max(1);
    let mut tree_probabilities = Vec::with_capacity(trees);
    let mut tree_object_coords = Vec::with_capacity(trees);
    for _ in 0..trees {
        let mut coords = Vec::with_capacity(n);
        for i in 0..n {
            let inlier = target[i] && rng.gen::<f64>() >= noise.outlier_rate;
            let c = if inlier {
                let mut c = composite.object_coords[i];
                if noise.coord_sigma > 0.0 {
                    for j in 0..3 {
                        c[j] += coord_noise.sample(rng);
                    }
                }
                c
            } else {
                Vec3::from_fn(|j, _| rng.gen_range(lo[j]..=hi[j]))
            };
            coords.push(c);
        }
        let probs: Vec<f64> = blurred
            .iter()
            .map(|&p| {
                if noise.flip_rate > 0.0 && rng.gen::<f64>() < noise.flip_rate {
                    0.0
                } else {
                    p
                }
            })
            .collect();
        tree_probabilities.push(probs);
        tree_object_coords.push(coords);
    }

    let prediction = ForestPrediction::new(w, h, tree_probabilities, tree_object_coords)
        .expect("generator produces consistent maps");
    let obs = ObservationSet::new(depth, prediction, *k).expect("generator produces consistent maps");
    (obs, gt)
}

fn box_blur(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return mask.iter().map(|&m| m as u8 as f64).collect();
    }
    let r = radius as i64;
    let mut out = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut sum = 0usize;
            let mut count = 0usize;
            for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                    sum += mask[(yy as usize) * w + xx as usize] as usize;
                    count += 1;
                }
            }
            out[(y as usize) * w + x as usize] = sum as f64 / count as f64;
        }
    }
    out
}
