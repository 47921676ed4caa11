//! Pose correctness and occlusion statistics.

use crate::error::OcclusionError;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::render::{render_full_frame, render_scene, TriangleMesh};

/// A pose is correct when the mean vertex displacement is strictly below
/// this fraction of the object diameter.
pub const CORRECT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEvaluation {
    /// Mean vertex displacement (mm).
    pub avg_vertex_distance: f64,
    pub threshold: f64,
    pub correct: bool,
}

pub fn average_vertex_distance(a: &Pose, b: &Pose, mesh: &TriangleMesh) -> f64 {
    let v = mesh.vertices();
    v.iter()
        .map(|p| (a.transform_point(p) - b.transform_point(p)).norm())
        .sum::<f64>()
        / v.len() as f64
}

pub fn evaluate_pose(estimate: &Pose, truth: &Pose, mesh: &TriangleMesh) -> PoseEvaluation {
    let avg_vertex_distance = average_vertex_distance(estimate, truth, mesh);
    let threshold = CORRECT_FRACTION * mesh.diameter();
    PoseEvaluation {
        avg_vertex_distance,
        threshold,
        correct: avg_vertex_distance < threshold,
    }
}

/// Share of the target's unoccluded silhouette where another object is in
/// front.
pub fn occlusion_fraction(
    scene: &[(&TriangleMesh, Pose)],
    target_index: usize,
    k: &CameraIntrinsics,
) -> Result<f64, OcclusionError> {
    let (mesh, pose) = scene[target_index];
    let alone = render_full_frame(mesh, &pose, k).covered_pixels();
    if alone == 0 {
        return Err(OcclusionError::Undefined);
    }
    let composite = render_scene(scene, k);
    let visible = composite
        .owner
        .iter()
        .filter(|o| **o == Some(target_index))
        .count();
    Ok(1.0 - visible as f64 / alone as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionBin {
    pub lo: f64,
    pub hi: f64,
    pub total: usize,
    pub correct: usize,
}

impl OcclusionBin {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

pub const OCCLUSION_BINS: usize = 10;

/// Bin index for a fraction: left-closed bins of width 0.1, the last one
/// also holding 1.0.
pub fn occlusion_bin_index(fraction: f64) -> usize {
    (1..OCCLUSION_BINS)
        .rev()
        .find(|&b| fraction >= b as f64 / OCCLUSION_BINS as f64)
        .unwrap_or(0)
}

/// Non-empty bins in increasing order.
pub fn bin_by_occlusion(results: &[(f64, bool)]) -> Vec<OcclusionBin> {
    let mut bins: Vec<OcclusionBin> = (0..OCCLUSION_BINS)
        .map(|b| OcclusionBin {
            lo: b as f64 / OCCLUSION_BINS as f64,
            hi: (b + 1) as f64 / OCCLUSION_BINS as f64,
            total: 0,
            correct: 0,
        })
        .collect();
    for &(fraction, correct) in results {
        let bin = &mut bins[occlusion_bin_index(fraction)];
        bin.total += 1;
        bin.correct += correct as usize;
    }
    bins.retain(|b| b.total > 0);
    bins
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, Vec3};

    #[test]
    fn translation_by_threshold_is_incorrect() {
        // Diameter is exactly 130 and every coordinate stays an integer.
        let mesh = TriangleMesh::cuboid(Vec3::new(30.0, 40.0, 120.0));
        assert_eq!(mesh.diameter(), 130.0);
        let gt = Pose::from_translation(Vec3::new(0.0, 0.0, 700.0));
        let same = evaluate_pose(&gt, &gt, &mesh);
        assert_eq!(same.avg_vertex_distance, 0.0);
        assert!(same.correct);
        let shifted = Pose::from_translation(Vec3::new(13.0, 0.0, 700.0));
        let e = evaluate_pose(&shifted, &gt, &mesh);
        assert_eq!(e.avg_vertex_distance, 13.0);
        assert_eq!(e.threshold, 13.0);
        assert!(!e.correct);
    }

    #[test]
    fn evaluation_is_symmetric() {
        let mesh = TriangleMesh::cuboid(Vec3::new(30.0, 40.0, 120.0));
        let a = Pose::new(exp_so3(&Vec3::new(0.2, 0.1, -0.3)), Vec3::new(5.0, 0.0, 700.0));
        let b = Pose::new(exp_so3(&Vec3::new(-0.1, 0.4, 0.0)), Vec3::new(0.0, 9.0, 720.0));
        assert_eq!(evaluate_pose(&a, &b, &mesh), evaluate_pose(&b, &a, &mesh));
    }

    #[test]
    fn tetrahedron_half_turn() {
        // Unit tetrahedron shifted to its centroid; 180° about z maps
        // (x, y, z) to (−x, −y, z), so each vertex moves 2·‖(x, y)‖.
        let raw = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let mesh = TriangleMesh::centered(raw.to_vec(), vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]).unwrap();
        // Centered xy: (−¼,−¼), (¾,−¼), (−¼,¾), (−¼,−¼).
        let expected = (2.0 * (0.125f64).sqrt() * 2.0 + 2.0 * (0.625f64).sqrt() * 2.0) / 4.0;
        let turned = Pose::new(exp_so3(&Vec3::new(0.0, 0.0, std::f64::consts::PI)), Vec3::zeros());
        let d = average_vertex_distance(&turned, &Pose::identity(), &mesh);
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn bins_follow_boundary_rules() {
        let bins = bin_by_occlusion(&[(0.55, true)]);
        assert_eq!(bins.len(), 1);
        assert_eq!((bins[0].lo, bins[0].total, bins[0].correct), (0.5, 1, 1));
        assert_eq!(occlusion_bin_index(0.1), 1);
        assert_eq!(occlusion_bin_index(1.0), 9);
        assert_eq!(occlusion_bin_index(0.0), 0);
        assert_eq!(occlusion_bin_index(0.0999), 0);
        for b in 0..=10 {
            let f = b as f64 / 10.0;
            assert_eq!(occlusion_bin_index(f), b.min(9));
        }
    }

    #[test]
    fn occlusion_examples() {
        let k = CameraIntrinsics::new(200.0, 200.0, 79.5, 59.5, 160, 120).unwrap();
        let target = TriangleMesh::cuboid(Vec3::new(100.0, 100.0, 10.0));
        let gt = Pose::from_translation(Vec3::new(0.0, 0.0, 1000.0));
        assert_eq!(occlusion_fraction(&[(&target, gt)], 0, &k), Ok(0.0));

        let wall = TriangleMesh::cuboid(Vec3::new(400.0, 400.0, 10.0));
        let front = Pose::from_translation(Vec3::new(0.0, 0.0, 500.0));
        assert_eq!(occlusion_fraction(&[(&target, gt), (&wall, front)], 0, &k), Ok(1.0));

        let away = Pose::from_translation(Vec3::new(0.0, 0.0, -1000.0));
        assert_eq!(
            occlusion_fraction(&[(&target, away)], 0, &k),
            Err(OcclusionError::Undefined)
        );
    }
}
