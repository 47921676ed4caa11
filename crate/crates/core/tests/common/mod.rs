//! Helpers shared by the integration and acceptance tests. Everything here is
//! written independently of the library's evaluation paths.
#![allow(dead_code)]

use abs6d::energynet::{EnergyNet, EnergyNetParams, LayerKind, ParamIndex, ARCHITECTURE};
use abs6d::geometry::{CameraIntrinsics, Pose, Vec3};
use abs6d::observation::{ChannelStack, CHANNELS};
use abs6d::render::{render_full_frame, TriangleMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_stack(size: usize, seed: u64) -> ChannelStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..CHANNELS * size * size)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    ChannelStack::from_data(size, data).unwrap()
}

/// Plain nested-loop forward pass.
pub fn reference_forward(params: &EnergyNetParams, stack: &ChannelStack) -> f64 {
    let s = stack.size();
    let mut x: Vec<Vec<Vec<f64>>> = (0..CHANNELS)
        .map(|c| (0..s).map(|y| (0..s).map(|xx| stack.at(c, y, xx)).collect()).collect())
        .collect();

    let conv = |li: usize, input: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
        let LayerKind::Conv { outputs, inputs } = ARCHITECTURE[li] else { unreachable!() };
        let l = &params.layers[li];
        let h = input[0].len();
        let w = input[0][0].len();
        let mut out = vec![vec![vec![0.0; w]; h]; outputs];
        for o in 0..outputs {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = l.bias[o] as f64;
                    for i in 0..inputs {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as i64 + ky as i64 - 1;
                                let sx = xx as i64 + kx as i64 - 1;
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                    continue;
                                }
                                let wv = l.weights[((o * inputs + i) * 3 + ky) * 3 + kx] as f64;
                                acc += wv * input[i][sy as usize][sx as usize];
                            }
                        }
                    }
                    out[o][y][xx] = acc.tanh();
                }
            }
        }
        out
    };
    let pool = |input: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
        input
            .iter()
            .map(|plane| {
                let (h, w) = (plane.len() / 2, plane[0].len() / 2);
                (0..h)
                    .map(|y| {
                        (0..w)
                            .map(|xx| {
                                let v = [
                                    plane[2 * y][2 * xx],
                                    plane[2 * y][2 * xx + 1],
                                    plane[2 * y + 1][2 * xx],
                                    plane[2 * y + 1][2 * xx + 1],
                                ];
                                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };

    x = conv(0, &x);
    x = conv(1, &x);
    x = pool(&x);
    x = conv(2, &x);
    x = pool(&x);
    x = conv(3, &x);
    let mut v: Vec<f64> = x
        .iter()
        .map(|plane| plane.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for li in 4..7 {
        let l = &params.layers[li];
        let n = v.len();
        v = (0..l.bias.len())
            .map(|o| {
                let mut acc = l.bias[o] as f64;
                for j in 0..n {
                    acc += l.weights[o * n + j] as f64 * v[j];
                }
                if li < 6 {
                    acc.tanh()
                } else {
                    acc
                }
            })
            .collect();
    }
    v[0]
}

/// Central finite difference of the energy with respect to one parameter.
/// The step is measured after rounding the perturbed values to `f32`.
pub fn finite_difference(
    params: &EnergyNetParams,
    stack: &ChannelStack,
    p: ParamIndex,
    h: f64,
) -> f64 {
    let base = params.get(p) as f64;
    let plus = (base + h) as f32;
    let minus = (base - h) as f32;
    let mut q = params.clone();
    q.set(p, plus);
    let e_plus = EnergyNet::new(q.clone()).forward(stack).unwrap();
    q.set(p, minus);
    let e_minus = EnergyNet::new(q).forward(stack).unwrap();
    (e_plus - e_minus) / (plus as f64 - minus as f64)
}

/// Relative disagreement; two values both below `1e-10` count as agreeing.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `per_layer` parameters from each layer, a fifth of them biases.
pub fn sample_parameters(params: &EnergyNetParams, per_layer: usize, seed: u64) -> Vec<ParamIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (li, l) in params.layers.iter().enumerate() {
        for j in 0..per_layer {
            let bias = j % 5 == 4;
            let len = if bias { l.bias.len() } else { l.weights.len() };
            out.push(ParamIndex {
                layer: li,
                bias,
                index: rng.gen_range(0..len),
            });
        }
    }
    out
}

/// Random mesh of `1..=max_triangles` free triangles inside a cube of side
/// `extent` mm, re-centered on its vertex centroid.
pub fn random_micro_mesh(rng: &mut impl Rng, max_triangles: usize, extent: f64) -> TriangleMesh {
    let n = rng.gen_range(1..=max_triangles);
    let h = extent / 2.0;
    let vertices: Vec<Vec3> = (0..3 * n)
        .map(|_| Vec3::new(rng.gen_range(-h..h), rng.gen_range(-h..h), rng.gen_range(-h..h)))
        .collect();
    let triangles = (0..n as u32).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
    TriangleMesh::centered(vertices, triangles).unwrap()
}

/// Möller–Trumbore intersection of the ray `t·dir` (from the camera center)
/// with a triangle; returns `t`.
pub fn ray_triangle(dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-12 {
        return None;
    }
    let s = -a;
    let u = s.dot(&p) / det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) / det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) / det;
    (t > 0.0).then_some(t)
}

/// Depth of the nearest surface through each pixel center (0 = none).
pub fn raycast_depth(mesh: &TriangleMesh, pose: &Pose, k: &CameraIntrinsics) -> Vec<f64> {
    let cam: Vec<Vec3> = mesh.vertices().iter().map(|v| pose.transform_point(v)).collect();
    let mut out = vec![0.0; k.width * k.height];
    for y in 0..k.height {
        for x in 0..k.width {
            let dir = Vec3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let mut best = f64::INFINITY;
            for t in mesh.triangles() {
                let [a, b, c] = t.map(|i| cam[i as usize]);
                if let Some(d) = ray_triangle(&dir, &a, &b, &c) {
                    best = best.min(d);
                }
            }
            if best.is_finite() {
                out[y * k.width + x] = best;
            }
        }
    }
    out
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Smallest image distance from pixel center `(x, y)` to any projected
/// triangle edge.
pub fn edge_distance(mesh: &TriangleMesh, pose: &Pose, k: &CameraIntrinsics, x: usize, y: usize) -> f64 {
    let proj: Vec<(f64, f64)> = mesh
        .vertices()
        .iter()
        .map(|v| k.project(&pose.transform_point(v)))
        .collect();
    let p = (x as f64, y as f64);
    mesh.triangles()
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
        .map(|(i, j)| segment_distance(p, proj[i as usize], proj[j as usize]))
        .fold(f64::INFINITY, f64::min)
}

/// Pixels (center > 0.5 px from every edge) where the rasterized and
/// ray-cast depths differ by more than `tol`.
pub fn raster_mismatches(mesh: &TriangleMesh, pose: &Pose, k: &CameraIntrinsics, tol: f64) -> Vec<(usize, usize, f64, f64)> {
    let r = render_full_frame(mesh, pose, k);
    let oracle = raycast_depth(mesh, pose, k);
    let mut bad = Vec::new();
    for y in 0..k.height {
        for x in 0..k.width {
            let i = y * k.width + x;
            if (r.depth[i] - oracle[i]).abs() > tol && edge_distance(mesh, pose, k, x, y) > 0.5 {
                bad.push((x, y, r.depth[i], oracle[i]));
            }
        }
    }
    bad
}

/// Moments of `chains × 100` Metropolis samples on the quadratic target
/// `‖T − T*‖² / (2·50²)` with rotation proposals effectively off. Each chain
/// starts from an exact draw of the target. Returns (mean error per axis, std
/// per axis, acceptance rate).
pub fn quadratic_chain_moments(chains: usize, seed: u64) -> ([f64; 3], [f64; 3], f64) {
    use abs6d::posterior::{run_chain, ChainConfig, ProposalConfig};
    use rand_distr::{Distribution, Normal};
    let target = Vec3::new(100.0, -50.0, 1500.0);
    let energy = move |h: &Pose| (h.translation - target).norm_squared() / (2.0 * 50.0 * 50.0);
    let proposal = ProposalConfig::for_diameter(1000.0);
    let proposal = ProposalConfig::new(proposal.sigma_t, 1e-12).unwrap();
    let cfg = ChainConfig::default();
    let normal = Normal::new(0.0, 50.0).unwrap();
    let mut sum = Vec3::zeros();
    let mut sq = Vec3::zeros();
    let mut n = 0.0;
    let mut accepted = 0.0;
    for c in 0..chains {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(c as u64));
        let start = target + Vec3::from_fn(|_, _| normal.sample(&mut rng));
        let chain = run_chain(&energy, Pose::from_translation(start), &proposal, &cfg, &mut rng);
        accepted += chain.acceptance_rate();
        for s in chain.samples() {
            let d = s.state.translation - target;
            sum += d;
            sq += d.component_mul(&d);
            n += 1.0;
        }
    }
    let mean = sum / n;
    let var = sq / n - mean.component_mul(&mean);
    (
        [mean.x, mean.y, mean.z],
        [var.x.sqrt(), var.y.sqrt(), var.z.sqrt()],
        accepted / chains as f64,
    )
}

/// Per-axis sample std of translation increments and mean/standard error of
/// the rotation increments `log(R' Rᵀ)` over `n` proposals from a fixed pose.
pub fn proposal_statistics(n: usize, sigma_t: f64, sigma_r: f64, seed: u64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    use abs6d::geometry::{exp_so3, log_so3};
    use abs6d::posterior::{propose, ProposalConfig};
    let cfg = ProposalConfig::new(sigma_t, sigma_r).unwrap();
    let start = Pose::new(exp_so3(&Vec3::new(0.4, -1.1, 0.7)), Vec3::new(10.0, 20.0, 900.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ts, mut tq, mut rs, mut rq) = (Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros());
    for _ in 0..n {
        let h = propose(&start, &cfg, &mut rng);
        let dt = h.translation - start.translation;
        let de = log_so3(&(h.rotation * start.rotation.transpose()));
        ts += dt;
        tq += dt.component_mul(&dt);
        rs += de;
        rq += de.component_mul(&de);
    }
    let nf = n as f64;
    let std = |s: Vec3, q: Vec3| -> [f64; 3] {
        let m = s / nf;
        let v = q / nf - m.component_mul(&m);
        [v.x.sqrt(), v.y.sqrt(), v.z.sqrt()]
    };
    let t_std = std(ts, tq);
    let r_std = std(rs, rq);
    let r_mean = rs / nf;
    (t_std, [r_mean.x, r_mean.y, r_mean.z], r_std.map(|s| s / nf.sqrt()))
}

/// Gradients on the 41-pose family `gt + (j − 20)·spacing·x̂`: the Metropolis
/// estimate (pooled over `chains` chains of 130/30 with ±1 index proposals,
/// started at the lowest-energy index) and the exact gradient from enumerated
/// Gibbs weights. Both are `∂E(gt)/∂θ − E_post[∂E/∂θ]`.
pub struct DiscreteOracle {
    pub estimate: abs6d::energynet::ParamGradient,
    pub exact: abs6d::energynet::ParamGradient,
    pub energies: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn discrete_oracle(seed: u64, chains: usize, spacing: f64) -> DiscreteOracle {
    use abs6d::energynet::{init_params, ParamGradient};
    use abs6d::harness::synth::{generate_scene, BenchmarkConfig};
    use abs6d::posterior::{metropolis, ChainConfig, GibbsPosterior};
    use abs6d::seed::substream;
    use abs6d::train::ml_gradient;

    const POINTS: usize = 41;
    let scene = generate_scene(&BenchmarkConfig::default(), seed, "oracle", 0);
    let net = EnergyNet::new(init_params(&mut substream(seed, "oracle-init", 0)));
    let post = GibbsPosterior::new(&scene.observation, &scene.mesh, &net);
    let stacks: Vec<ChannelStack> = (0..POINTS)
        .map(|j| {
            let dx = Vec3::new((j as f64 - 20.0) * spacing, 0.0, 0.0);
            post.stack(&Pose::new(scene.gt_pose.rotation, scene.gt_pose.translation + dx))
                .unwrap()
        })
        .collect();
    let grads: Vec<(f64, ParamGradient)> = stacks.iter().map(|s| net.backward(s).unwrap()).collect();
    let energies: Vec<f64> = grads.iter().map(|(e, _)| *e).collect();

    let lowest = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = energies.iter().map(|e| (lowest - e).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut exact = grads[20].1.clone();
    for (w, (_, g)) in weights.iter().zip(&grads) {
        exact.add_scaled(g, -w / z);
    }

    let start = (0..POINTS).min_by(|&a, &b| energies[a].total_cmp(&energies[b])).unwrap();
    let energy_of = |j: &i64| {
        if (0..POINTS as i64).contains(j) {
            energies[*j as usize]
        } else {
            f64::INFINITY
        }
    };
    let mut counts = vec![0usize; POINTS];
    for c in 0..chains {
        let mut rng = substream(seed, "oracle-chain", c as u64);
        let chain = metropolis(
            start as i64,
            energies[start],
            &ChainConfig::default(),
            &mut rng,
            |j: &i64, rng: &mut ChaCha8Rng| if rng.gen::<bool>() { j + 1 } else { j - 1 },
            energy_of,
        );
        for s in chain.samples() {
            counts[s.state as usize] += 1;
        }
    }
    let weighted: Vec<(ChannelStack, f64)> = stacks
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| (s.clone(), c as f64))
        .collect();
    let (estimate, _, _) = ml_gradient(&net, &stacks[20], &weighted).unwrap();
    DiscreteOracle {
        estimate,
        exact,
        energies,
        counts,
    }
}

/// `‖a − b‖₁ / ‖b‖₁` over all parameters.
pub fn gradient_relative_l1(a: &abs6d::energynet::ParamGradient, b: &abs6d::energynet::ParamGradient) -> f64 {
    let (num, den) = a
        .iter()
        .zip(b.iter())
        .fold((0.0, 0.0), |(n, d), (x, y)| (n + (x - y).abs(), d + y.abs()));
    num / den
}

/// MAP inference with the average-vertex-distance-to-truth energy on `count`
/// zero-noise benchmark scenes.
pub fn oracle_search(count: usize, seed: u64) -> Vec<abs6d::harness::report::ResultRow> {
    use abs6d::harness::metrics::average_vertex_distance;
    use abs6d::harness::report::run_inference_with;
    use abs6d::harness::synth::{generate_split, BenchmarkConfig};
    use abs6d::infer::InferConfig;
    use abs6d::observation::NoiseParams;
    let cfg = BenchmarkConfig {
        noise: NoiseParams::zero(),
        ..Default::default()
    };
    let scenes = generate_split(&cfg, seed, "oracle", count);
    run_inference_with(&scenes, &InferConfig::default(), seed, |s, p| {
        average_vertex_distance(p, &s.gt_pose, &s.mesh)
    })
}
