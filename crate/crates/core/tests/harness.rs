use std::path::Path;

use abs6d::geometry::*;
use abs6d::harness::dataset::*;
use abs6d::harness::metrics::*;
use abs6d::harness::synth::{generate_split, BenchmarkConfig};
use abs6d::render::TriangleMesh;
use proptest::prelude::*;

#[test]
fn half_covered_plate_is_half_occluded() {
    let k = CameraIntrinsics::new(100.0, 100.0, 31.5, 23.5, 64, 48).unwrap();
    let plate = TriangleMesh::cuboid(Vec3::new(100.0, 100.0, 10.0));
    let target = Pose::from_translation(Vec3::new(0.0, 0.0, 1000.0));
    // right edge projects exactly onto the boundary between two pixel columns
    let blocker = TriangleMesh::cuboid(Vec3::new(300.0, 400.0, 10.0));
    let front = Pose::from_translation(Vec3::new(-150.0, 0.0, 800.0));
    let behind = Pose::from_translation(Vec3::new(-150.0, 0.0, 1200.0));
    let centered = Pose::from_translation(Vec3::new(0.0, 0.0, 800.0));

    assert_eq!(occlusion_fraction(&[(&plate, target)], 0, &k), Ok(0.0));
    assert_eq!(occlusion_fraction(&[(&plate, target), (&blocker, front)], 0, &k), Ok(0.5));
    assert_eq!(occlusion_fraction(&[(&plate, target), (&blocker, behind)], 0, &k), Ok(0.0));
    assert_eq!(occlusion_fraction(&[(&plate, target), (&blocker, centered)], 0, &k), Ok(1.0));
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_roundtrip_is_bit_exact() {
    let scenes = generate_split(&BenchmarkConfig::default(), 3, "rt", 4);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_dataset(a.path(), &scenes).unwrap();
    let loaded = load_dataset(a.path()).unwrap();
    assert_eq!(loaded.len(), 4);
    for (s, l) in scenes.iter().zip(&loaded) {
        assert_eq!(s.id, l.id);
        assert_eq!(s.gt_pose, l.gt_pose);
        assert_eq!(s.occlusion, l.occlusion);
        assert_eq!(s.noise, l.noise);
        assert_eq!(s.mesh.triangles(), l.mesh.triangles());
    }
    save_dataset(b.path(), &loaded).unwrap();
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    assert_eq!(fa.len(), fb.len());
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs:\n{}\n---\n{}", String::from_utf8_lossy(ba), String::from_utf8_lossy(bb));
    }
    let again = load_dataset(b.path()).unwrap();
    for (l, m) in loaded.iter().zip(&again) {
        assert_eq!(l.observation, m.observation);
        assert_eq!(l.mesh, m.mesh);
    }
}

#[test]
fn corrupt_scene_files_are_reported() {
    let scenes = generate_split(&BenchmarkConfig::default(), 3, "bad", 1);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &scenes).unwrap();
    let depth = dir.path().join(&scenes[0].id).join("depth.pgf");
    let bytes = std::fs::read(&depth).unwrap();
    std::fs::write(&depth, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(abs6d::error::IoError::CorruptRaster { .. })));
}

proptest! {
    #[test]
    fn raster_bytes_roundtrip(w in 1usize..8, h in 1usize..8, c in 1usize..5, seed in any::<u64>()) {
        let data: Vec<f32> = (0..w * h * c)
            .map(|i| f32::from_bits((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 20) as u32))
            .collect();
        let r = Raster::new(w, h, c, data).unwrap();
        let bytes = r.to_bytes();
        let back = Raster::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn bins_partition_results(results in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 0..60)) {
        let bins = bin_by_occlusion(&results);
        prop_assert_eq!(bins.iter().map(|b| b.total).sum::<usize>(), results.len());
        prop_assert_eq!(
            bins.iter().map(|b| b.correct).sum::<usize>(),
            results.iter().filter(|r| r.1).count()
        );
        for b in &bins {
            prop_assert!(b.correct <= b.total && b.total > 0);
            prop_assert!((b.hi - b.lo - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_distance_is_symmetric(
        a in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64, -100.0..100.0f64),
        b in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64, -100.0..100.0f64),
    ) {
        let mesh = TriangleMesh::cuboid(Vec3::new(50.0, 80.0, 30.0));
        let pa = Pose::new(exp_so3(&(Vec3::new(a.0, a.1, a.2) * 0.5)), Vec3::new(a.3, 0.0, 900.0));
        let pb = Pose::new(exp_so3(&(Vec3::new(b.0, b.1, b.2) * 0.5)), Vec3::new(0.0, b.3, 900.0));
        let ab = evaluate_pose(&pa, &pb, &mesh);
        let ba = evaluate_pose(&pb, &pa, &mesh);
        prop_assert!((ab.avg_vertex_distance - ba.avg_vertex_distance).abs() < 1e-9);
        prop_assert_eq!(ab.correct, ab.avg_vertex_distance < 0.1 * mesh.diameter());
    }
}

#[test]
fn occlusion_bin_boundaries() {
    let bins = bin_by_occlusion(&[(0.55, true), (0.1, false), (1.0, true)]);
    let spans: Vec<(f64, f64, usize, usize)> = bins.iter().map(|b| (b.lo, b.hi, b.total, b.correct)).collect();
    assert_eq!(spans, vec![(0.1, 0.2, 1, 0), (0.5, 0.6, 1, 1), (0.9, 1.0, 1, 1)]);
}
