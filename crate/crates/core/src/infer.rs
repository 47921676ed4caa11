//! MAP inference: three-pixel hypothesis sampling, energy ranking, and
//! inlier-based refinement.

use rand::Rng;
use rayon::prelude::*;

use crate::error::InferError;
use crate::geometry::{backproject, rigid_from_correspondences, Pose, Vec3};
use crate::observation::ObservationSet;
use crate::posterior::PoseEnergy;
use crate::render::{compute_window, rasterize, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub hypothesis_count: usize,
    pub refine_top_k: usize,
    pub refine_rounds: usize,
    /// Object-coordinate distance (mm) below which a pixel is an inlier.
    pub inlier_threshold: f64,
    pub min_correspondences: usize,
    /// Triples drawn per hypothesis before giving up.
    pub max_sample_attempts: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            hypothesis_count: 210,
            refine_top_k: 25,
            refine_rounds: 8,
            inlier_threshold: 20.0,
            min_correspondences: 3,
            max_sample_attempts: 100,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hypothesis_count == 0
            || self.refine_top_k == 0
            || self.refine_rounds == 0
            || self.min_correspondences == 0
            || self.max_sample_attempts == 0
        {
            return Err("inference counts must be positive".into());
        }
        if !(self.inlier_threshold > 0.0) {
            return Err("inlier threshold must be positive".into());
        }
        if self.refine_top_k > self.hypothesis_count {
            return Err("refine_top_k exceeds hypothesis_count".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisOrigin {
    Sampled,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub pose: Pose,
    pub energy: f64,
    pub origin: HypothesisOrigin,
}

/// Draws pixels proportionally to the object probability on depth-valid pixels.
pub struct HypothesisSampler<'a> {
    observation: &'a ObservationSet,
    pixels: Vec<usize>,
    cumulative: Vec<f64>,
    max_attempts: usize,
}

impl<'a> HypothesisSampler<'a> {
    pub fn new(observation: &'a ObservationSet, max_attempts: usize) -> Result<Self, InferError> {
        let prob = observation.prediction().probability();
        let valid = observation.depth_valid();
        let mut pixels = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for (i, (&p, &v)) in prob.iter().zip(valid).enumerate() {
            if v && p > 0.0 {
                total += p;
                pixels.push(i);
                cumulative.push(total);
            }
        }
        if pixels.is_empty() {
            return Err(InferError::NoEvidence);
        }
        Ok(Self {
            observation,
            pixels,
            cumulative,
            max_attempts: max_attempts.max(1),
        })
    }

    fn draw_pixel<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.pixels[k.min(self.pixels.len() - 1)]
    }

    /// Three distinct pixels drawn without replacement.
    fn draw_triple<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<[usize; 3]> {
        if self.pixels.len() < 3 {
            return None;
        }
        let mut out = [usize::MAX; 3];
        let mut n = 0;
        while n < 3 {
            let p = self.draw_pixel(rng);
            if !out[..n].contains(&p) {
                out[n] = p;
                n += 1;
            }
        }
        Some(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Pose, InferError> {
        let obs = self.observation;
        let k = obs.intrinsics();
        for _ in 0..self.max_attempts {
            let Some(triple) = self.draw_triple(rng) else {
                break;
            };
            let pairs: Vec<(Vec3, Vec3)> = triple
                .iter()
                .map(|&i| {
                    let (x, y) = (i % k.width, i / k.width);
                    let cam = backproject(x as f64, y as f64, obs.depth()[i], k)
                        .expect("sampled pixels have valid depth");
                    (obs.predicted_coord(i), cam)
                })
                .collect();
            if let Ok(pose) = rigid_from_correspondences(&pairs) {
                return Ok(pose);
            }
        }
        Err(InferError::HypothesisFailure(self.max_attempts))
    }
}

/// One hypothesis from a single draw.
pub fn sample_hypothesis<R: Rng + ?Sized>(
    observation: &ObservationSet,
    rng: &mut R,
) -> Result<Pose, InferError> {
    HypothesisSampler::new(observation, InferConfig::default().max_sample_attempts)?.sample(rng)
}

/// Inlier correspondences `(predicted object coord, observed camera point)`
/// for the object rendered at `pose`.
pub fn inlier_correspondences(
    pose: &Pose,
    observation: &ObservationSet,
    mesh: &TriangleMesh,
    threshold: f64,
) -> Vec<(Vec3, Vec3)> {
    let k = observation.intrinsics();
    let Ok(window) = compute_window(pose, mesh.diameter(), k) else {
        return Vec::new();
    };
    let columns: Vec<i64> = (window.x0.max(0)..(window.x0 + window.size as i64).min(k.width as i64)).collect();
    let rows: Vec<i64> = (window.y0.max(0)..(window.y0 + window.size as i64).min(k.height as i64)).collect();
    if columns.is_empty() || rows.is_empty() {
        return Vec::new();
    }
    let rendered = rasterize(mesh, pose, k, &columns, &rows);
    let mut pairs = Vec::new();
    for (ry, &y) in rows.iter().enumerate() {
        for (rx, &x) in columns.iter().enumerate() {
            let r = rendered.index(rx, ry);
            if !rendered.mask[r] {
                continue;
            }
            let i = observation.pixel_index(x, y).expect("clipped to frame");
            if !observation.depth_valid()[i] {
                continue;
            }
            let predicted = observation.predicted_coord(i);
            if (predicted - rendered.object_coords[r]).norm() < threshold {
                let cam = backproject(x as f64, y as f64, observation.depth()[i], k)
                    .expect("valid depth is positive");
                pairs.push((predicted, cam));
            }
        }
    }
    pairs
}

/// Iterated inlier re-estimation. Returns the last pose that had enough
/// support; the input pose if the first round already fails.
pub fn refine(pose: &Pose, observation: &ObservationSet, mesh: &TriangleMesh, cfg: &InferConfig) -> Pose {
    let mut current = *pose;
    for _ in 0..cfg.refine_rounds {
        let pairs = inlier_correspondences(&current, observation, mesh, cfg.inlier_threshold);
        if pairs.len() < cfg.min_correspondences.max(3) {
            break;
        }
        let Ok(next) = rigid_from_correspondences(&pairs) else {
            break;
        };
        let moved = (next.translation - current.translation).norm();
        let turned = next.rotation_angle_to(&current);
        current = next;
        if moved < 1e-3 && turned < 1e-4 {
            break;
        }
    }
    current
}

/// Minimum-energy hypothesis over all sampled and refined poses.
///
/// Ties: refined hypotheses in rank order win over sampled ones, and sampled
/// ones are ordered by generation.
pub fn estimate<E, R>(
    observation: &ObservationSet,
    mesh: &TriangleMesh,
    energy: &E,
    cfg: &InferConfig,
    rng: &mut R,
) -> Result<Hypothesis, InferError>
where
    E: PoseEnergy + ?Sized,
    R: Rng + ?Sized,
{
    let sampler = HypothesisSampler::new(observation, cfg.max_sample_attempts)?;
    let mut poses = Vec::with_capacity(cfg.hypothesis_count);
    let mut last_error = None;
    for _ in 0..cfg.hypothesis_count {
        match sampler.sample(rng) {
            Ok(p) => poses.push(p),
            Err(e) => last_error = Some(e),
        }
    }
    if poses.is_empty() {
        return Err(last_error.unwrap_or(InferError::NoEvidence));
    }

    let energies: Vec<f64> = poses.par_iter().map(|p| energy.energy(p)).collect();
    let mut ranked: Vec<usize> = (0..poses.len()).collect();
    ranked.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]).then(a.cmp(&b)));
    ranked.truncate(cfg.refine_top_k);

    let refined: Vec<Hypothesis> = ranked
        .par_iter()
        .map(|&i| {
            let pose = refine(&poses[i], observation, mesh, cfg);
            Hypothesis {
                pose,
                energy: energy.energy(&pose),
                origin: HypothesisOrigin::Refined,
            }
        })
        .collect();

    let sampled = poses.iter().zip(&energies).map(|(&pose, &energy)| Hypothesis {
        pose,
        energy,
        origin: HypothesisOrigin::Sampled,
    });
    let mut best: Option<Hypothesis> = None;
    for h in refined.into_iter().chain(sampled) {
        if best.map_or(true, |b| h.energy.total_cmp(&b.energy).is_lt()) {
            best = Some(h);
        }
    }
    Ok(best.expect("at least one hypothesis"))
}
