mod common;

use abs6d::geometry::*;
use abs6d::render::*;
use common::{random_micro_mesh, raster_mismatches};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(80.0, 80.0, 31.5, 23.5, 64, 48).unwrap()
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    Pose::new(
        exp_so3(&(axis * 2.0)),
        Vec3::new(rng.gen_range(-60.0..60.0), rng.gen_range(-40.0..40.0), rng.gen_range(500.0..900.0)),
    )
}

#[test]
fn depth_matches_ray_casting() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..30 {
        let mesh = random_micro_mesh(&mut rng, 20, 150.0);
        let pose = random_pose(&mut rng);
        let bad = raster_mismatches(&mesh, &pose, &k, 1e-3);
        assert!(bad.is_empty(), "trial {trial}: {:?}", &bad[..bad.len().min(5)]);
    }
}

#[test]
fn object_coordinates_reproject_onto_their_pixel() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let mesh = random_micro_mesh(&mut rng, 20, 150.0);
        let pose = random_pose(&mut rng);
        let r = render_full_frame(&mesh, &pose, &k);
        for y in 0..k.height {
            for x in 0..k.width {
                let i = r.index(x, y);
                assert_eq!(r.mask[i], r.depth[i] > 0.0);
                if !r.mask[i] {
                    continue;
                }
                let c = pose.transform_point(&r.object_coords[i]);
                let (u, v) = k.project(&c);
                assert!((u - x as f64).abs() < 0.75 && (v - y as f64).abs() < 0.75);
                assert!((c.z - r.depth[i]).abs() < 1e-2);
            }
        }
    }
}

#[test]
fn window_cutout_agrees_with_full_frame() {
    let k = CameraIntrinsics::new(120.0, 120.0, 79.5, 59.5, 160, 120).unwrap();
    let mesh = TriangleMesh::cuboid(Vec3::new(200.0, 120.0, 80.0));
    let pose = Pose::new(exp_so3(&Vec3::new(0.3, -0.5, 0.2)), Vec3::new(30.0, -20.0, 1500.0));
    let w = compute_window(&pose, mesh.diameter(), &k).unwrap();
    assert!(w.size <= MAX_RENDER_SIZE);
    let full = render_full_frame(&mesh, &pose, &k);
    let win = render(&mesh, &pose, &k, &w);
    for b in 0..w.size {
        for a in 0..w.size {
            let (x, y) = (w.x0 + a as i64, w.y0 + b as i64);
            if x < 0 || y < 0 || x >= k.width as i64 || y >= k.height as i64 {
                continue;
            }
            let fi = full.index(x as usize, y as usize);
            assert_eq!(win.depth[win.index(a, b)], full.depth[fi]);
        }
    }
}

#[test]
fn large_windows_are_downsampled_to_the_cap() {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 1000.0));
    let w = compute_window(&pose, 200.0, &k).unwrap();
    assert_eq!((w.size, w.render_size()), (120, 100));
    let mesh = TriangleMesh::cuboid(Vec3::new(150.0, 100.0, 60.0));
    let r = render(&mesh, &pose, &k, &w);
    assert_eq!((r.width, r.height), (100, 100));
    let full = render_full_frame(&mesh, &pose, &k);
    let (cols, rows) = (w.sample_columns(), w.sample_rows());
    for (b, &y) in rows.iter().enumerate() {
        for (a, &x) in cols.iter().enumerate() {
            assert_eq!(r.depth[r.index(a, b)], full.depth[full.index(x as usize, y as usize)]);
        }
    }
}
