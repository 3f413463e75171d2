//! Self-contained verification suites: geometric oracles, finite-difference
//! gradient checks of every differentiable op, Gaussian-mass identities and
//! the curriculum laws. Reachable from `lidarf selftest`.

pub mod fd;

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::render::depth_weight_grad;
use crate::field::{volume_render, volume_render_backward, weights_backward, ColorNet, DensityNet, LidarFeatureNet, LidarInput, NeighborSets, RaySamples};
use crate::geometry::{PinholeCamera, SE3Pose, Vec3, WorldPoint};
use crate::lidar::{voxelize, EncoderInput, EncoderKind, FrnnIndex, GridBounds, LidarEncoder, LidarEncoderConfig};
use crate::nn::{Activation, HashEncoding, HashEncodingConfig, Matrix, Mlp, ParamStore};
use crate::supervision::losses::{distortion_loss, gaussian_interval_mass, interlevel_loss, l2_depth_loss, line_of_sight_loss, SightMode};
use crate::supervision::{CurriculumConfig, CurriculumState};
use crate::synthesis::raster::rasterize_depth;
use fd::{check_gradients, check_input_gradient, FdConfig, FdReport};

/// Probes each gradient check must certify.
pub const MIN_PROBES: usize = 20;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(suite: &'static str, name: &str, f: impl FnOnce() -> (bool, String)) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = f();
    CheckResult {
        suite,
        name: name.to_string(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn fd_verdict(reports: &[FdReport]) -> (bool, String) {
    let passed = reports.iter().all(|r| r.passed() && r.probes >= MIN_PROBES);
    let probes: Vec<usize> = reports.iter().map(|r| r.probes).collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    (passed, format!("probes {probes:?}, max rel err {worst:.2e}"))
}

fn dot_loss(v: &[f32], r: &[f32]) -> f64 {
    v.iter().zip(r).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn runif(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn sorted_edges(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    let mut e = runif(rng, n - 2, lo, hi);
    e.extend([lo, hi]);
    e.sort_by(f32::total_cmp);
    e
}

fn randomize_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng, also: &str, scale: f32) {
    for b in store.blocks_mut() {
        if b.name.ends_with("bias") || (!also.is_empty() && b.name.contains(also)) {
            b.value.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }
}

/// FRNN, z-buffer rasterization and voxelization against brute-force oracles.
pub fn oracle_suite(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let pts: Vec<Vec3> = (0..1000).map(|_| Vec3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..4.0))).collect();
    let qs: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.random_range(-0.5..4.5), rng.random_range(-0.5..4.5), rng.random_range(-0.5..4.5))).collect();
    out.push(timed("oracles", "frnn_vs_brute_force", || {
        let (k, radius) = (8, 0.6);
        let Ok(index) = FrnnIndex::build(&pts, k, radius) else {
            return (false, "build failed".into());
        };
        let mut mismatches = 0;
        for q in &qs {
            let mut all: Vec<(f64, u32)> = pts.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i as u32)).filter(|(d, _)| *d <= radius * radius).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.truncate(k);
            let got: Vec<u32> = index.query(q).iter().map(|n| n.id).collect();
            let want: Vec<u32> = all.iter().map(|(_, i)| *i).collect();
            mismatches += usize::from(got != want);
        }
        (mismatches == 0, format!("{} queries, {mismatches} mismatching", qs.len()))
    }));
    out.push(timed("oracles", "raster_vs_per_pixel_min", || {
        let Ok(cam) = PinholeCamera::new(20.0, 20.0, 16.0, 12.0, 32, 24) else {
            return (false, "camera".into());
        };
        let Ok(w2c) = SE3Pose::look_at(Vec3::new(-1.0, 2.0, 2.0), Vec3::new(2.0, 2.0, 2.0), Vec3::z()) else {
            return (false, "pose".into());
        };
        let wps: Vec<WorldPoint> = pts.iter().map(|p| WorldPoint { position: *p, rgb: None, frame: 0 }).collect();
        let Ok(map) = rasterize_depth(&wps, &cam, &w2c) else {
            return (false, "rasterize failed".into());
        };
        let mut best = vec![0.0f32; cam.num_pixels()];
        for p in &pts {
            let xc = w2c.apply(p);
            if xc.z <= 0.0 {
                continue;
            }
            let (u, v) = (cam.fx * xc.x / xc.z + cam.cx, cam.fy * xc.y / xc.z + cam.cy);
            if !(u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64) {
                continue;
            }
            let i = v.floor() as usize * cam.width + u.floor() as usize;
            let d = xc.norm() as f32;
            if best[i] == 0.0 || d < best[i] {
                best[i] = d;
            }
        }
        let bad = best.iter().zip(&map.depth).filter(|(a, b)| a != b).count();
        (bad == 0, format!("{} hit pixels, {bad} differing", map.valid_count()))
    }));
    out.push(timed("oracles", "voxel_means_vs_grouping", || {
        let bounds = GridBounds { origin: [0.0; 3], extent: 4.0 };
        let res = 8u32;
        let Ok(grid) = voxelize(&pts, res, &bounds) else {
            return (false, "voxelize failed".into());
        };
        let cell = 4.0 / res as f64;
        let mut groups: HashMap<[i32; 3], Vec<Vec3>> = HashMap::new();
        for p in &pts {
            let c = [(p.x / cell).floor() as i32, (p.y / cell).floor() as i32, (p.z / cell).floor() as i32];
            if c.iter().all(|v| (0..res as i32).contains(v)) {
                groups.entry(c).or_default().push(*p);
            }
        }
        let mut worst = 0.0f64;
        let mut ok = grid.len() == groups.len();
        for c in &grid.cells {
            match groups.get(&c.coord) {
                Some(g) => {
                    let mean = g.iter().sum::<Vec3>() / g.len() as f64;
                    worst = worst.max((mean - c.mean).amax());
                    ok &= g.len() == c.count;
                }
                None => ok = false,
            }
        }
        (ok && worst < 1e-6, format!("{} cells, max mean error {worst:.1e}", grid.len()))
    }));
    out
}

/// Central finite differences against every analytic backward pass.
pub fn gradient_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let fd = FdConfig::default();
    let rng0 = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(k));

    out.push(timed("gradients", "mlp", || {
        let mut rng = rng0(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[5, 16, 16, 3], Activation::Relu, Activation::Identity, &mut rng);
        let x = Matrix::from_vec(4, 5, runif(&mut rng, 20, -1.0, 1.0));
        let r = runif(&mut rng, 12, -1.0, 1.0);
        let loss = |s: &ParamStore, x: &Matrix| dot_loss(&mlp.forward(s, x.clone()).unwrap().output().data, &r);
        let c = mlp.forward(&store, x.clone()).unwrap();
        let dx = mlp.backward(&mut store, &c, &Matrix::from_vec(4, 3, r.clone()), true).unwrap().unwrap();
        let a = check_gradients(&store, |s| loss(s, &x), &fd, &mut rng);
        let b = check_input_gradient(&x.data, &dx.data, |v| loss(&store, &Matrix::from_vec(4, 5, v.to_vec())), &fd, &mut rng);
        fd_verdict(&[a, b])
    }));

    out.push(timed("gradients", "hash_encoding", || {
        let mut rng = rng0(2);
        let mut store = ParamStore::new();
        let cfg = HashEncodingConfig {
            levels: 4,
            features_per_level: 2,
            min_resolution: 4,
            max_resolution: 64,
            log2_table_size: 10,
        };
        let enc = HashEncoding::new(&mut store, "h", cfg, &mut rng).unwrap();
        store.value_mut(enc.table).iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let xs: Vec<[f32; 3]> = (0..16).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let r = runif(&mut rng, 16 * enc.output_dim(), -1.0, 1.0);
        enc.backward_batch(&mut store, &xs, &Matrix::from_vec(16, enc.output_dim(), r.clone()));
        fd_verdict(&[check_gradients(&store, |s| dot_loss(&enc.encode_batch(s, &xs).data, &r), &fd, &mut rng)])
    }));

    for (name, kind) in [("lidar_encoder_sparse_conv", EncoderKind::SparseConv), ("lidar_encoder_mlp", EncoderKind::Mlp)] {
        out.push(timed("gradients", name, || {
            let mut rng = rng0(3);
            let pts: Vec<Vec3> = (0..400)
                .map(|i| {
                    if i % 2 == 0 {
                        Vec3::new(rng.random_range(2.0..5.0), rng.random_range(2.0..5.0), 3.3 + rng.random_range(-0.1..0.1))
                    } else {
                        Vec3::new(2.7 + rng.random_range(-0.1..0.1), rng.random_range(2.0..5.0), rng.random_range(2.0..5.0))
                    }
                })
                .collect();
            let grid = voxelize(&pts, 16, &GridBounds { origin: [0.0; 3], extent: 8.0 }).unwrap();
            let input = EncoderInput::from_grid(&grid);
            let cfg = LidarEncoderConfig {
                kind,
                feature_dim: 4,
                voxel_resolution: 16,
                conv_layers: 2,
                conv_channels: 5,
                mlp_hidden: vec![8, 6],
            };
            let mut store = ParamStore::new();
            let enc = LidarEncoder::new(&mut store, "enc", &cfg, &mut rng).unwrap().unwrap();
            randomize_biases(&mut store, &mut rng, "", 0.2);
            let wanted: Vec<u32> = (0..grid.len() as u32).step_by(3).collect();
            let r = runif(&mut rng, grid.len() * 4, -1.0, 1.0);
            let (_, cache) = enc.forward(&store, &input, Some(&wanted));
            enc.backward(&mut store, &input, &cache, &Matrix::from_vec(grid.len(), 4, r.clone()));
            fd_verdict(&[check_gradients(&store, |s| dot_loss(&enc.forward(s, &input, Some(&wanted)).0.data, &r), &fd, &mut rng)])
        }));
    }

    out.push(timed("gradients", "lidar_aggregation", || {
        let mut rng = rng0(4);
        let pts: Vec<Vec3> = (0..60).map(|_| Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.2))).collect();
        let index = FrnnIndex::build(&pts, 6, 0.3).unwrap();
        let mut store = ParamStore::new();
        let net = LidarFeatureNet::new(&mut store, "F", 4, 8, &mut rng);
        randomize_biases(&mut store, &mut rng, "", 0.3);
        let feats = Matrix::from_vec(60, 4, runif(&mut rng, 240, -1.0, 1.0));
        let qs: Vec<Vec3> = (0..30).map(|_| Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-0.1..0.3))).collect();
        let sets = NeighborSets::query(&index, &qs, 1);
        let r = runif(&mut rng, 120, -1.0, 1.0);
        let loss = |s: &ParamStore, f: &Matrix| dot_loss(&net.forward(s, &sets, f).0.data, &r);
        let (_, cache) = net.forward(&store, &sets, &feats);
        let mut df = Matrix::zeros(60, 4);
        net.backward(&mut store, &sets, &cache, &Matrix::from_vec(30, 4, r.clone()), &mut df);
        let a = check_gradients(&store, |s| loss(s, &feats), &fd, &mut rng);
        let b = check_input_gradient(&feats.data, &df.data, |v| loss(&store, &Matrix::from_vec(60, 4, v.to_vec())), &fd, &mut rng);
        fd_verdict(&[a, b])
    }));

    out.push(timed("gradients", "density_network", || {
        let mut rng = rng0(5);
        let mut rl = rng0(6);
        let hash = HashEncodingConfig {
            levels: 3,
            features_per_level: 2,
            min_resolution: 4,
            max_resolution: 16,
            log2_table_size: 8,
        };
        let mut store = ParamStore::new();
        let net = DensityNet::new(&mut store, "d", hash, 8, 4, 3, &mut rng, &mut rl).unwrap();
        randomize_biases(&mut store, &mut rng, "hash", 0.5);
        let xs: Vec<[f32; 3]> = (0..10).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let phi = Matrix::from_vec(10, 3, runif(&mut rng, 30, -1.0, 1.0));
        let present: Vec<bool> = (0..10).map(|i| i % 3 != 0).collect();
        let r = runif(&mut rng, 40, -1.0, 1.0);
        let loss = |s: &ParamStore, phi: &Matrix| dot_loss(&net.forward(s, xs.clone(), Some(LidarInput { phi, present: &present })).0.data, &r);
        let lid = LidarInput { phi: &phi, present: &present };
        let (_, cache) = net.forward(&store, xs.clone(), Some(lid));
        let d_phi = net.backward(&mut store, &cache, &Matrix::from_vec(10, 4, r.clone()), Some(lid)).unwrap();
        let a = check_gradients(&store, |s| loss(s, &phi), &fd, &mut rng);
        let b = check_input_gradient(&phi.data, &d_phi.data, |v| loss(&store, &Matrix::from_vec(10, 3, v.to_vec())), &fd, &mut rng);
        fd_verdict(&[a, b])
    }));

    out.push(timed("gradients", "color_network", || {
        let mut rng = rng0(7);
        let mut store = ParamStore::new();
        let net = ColorNet::new(&mut store, "c", 5, 8, &mut rng);
        let x = Matrix::from_vec(6, 5, runif(&mut rng, 30, -1.0, 1.0));
        let r = runif(&mut rng, 18, -1.0, 1.0);
        let loss = |s: &ParamStore, x: &Matrix| dot_loss(&net.forward(s, x.clone()).0.data, &r);
        let (_, cache) = net.forward(&store, x.clone());
        let dx = net.backward(&mut store, &cache, &Matrix::from_vec(6, 3, r.clone()));
        let a = check_gradients(&store, |s| loss(s, &x), &fd, &mut rng);
        let b = check_input_gradient(&x.data, &dx.data, |v| loss(&store, &Matrix::from_vec(6, 5, v.to_vec())), &fd, &mut rng);
        fd_verdict(&[a, b])
    }));

    out.push(timed("gradients", "volume_rendering", || {
        let mut rng = rng0(8);
        let n = 12;
        let t = {
            let mut t = vec![0.5f32];
            for _ in 0..n {
                let last = *t.last().unwrap();
                t.push(last + rng.random_range(0.05..0.6));
            }
            t
        };
        let s = RaySamples {
            s_edges: t.clone(),
            t_edges: t,
        };
        let sig = runif(&mut rng, n, 0.0, 3.0);
        let col: Vec<[f32; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let (d_rgb, d_depth) = ([0.3f32, -0.7, 0.2], 0.15f32);
        let d_w = runif(&mut rng, n, -1.0, 1.0);
        let loss = |sig: &[f32], col: &[[f32; 3]]| {
            let o = volume_render(&s, sig, col);
            o.depth as f64 * d_depth as f64 + (0..3).map(|k| (o.rgb[k] * d_rgb[k]) as f64).sum::<f64>() + dot_loss(&o.weights, &d_w)
        };
        let o = volume_render(&s, &sig, &col);
        let (ds, dc) = volume_render_backward(&s, &sig, &col, &o, d_rgb, d_depth, Some(&d_w));
        let a = check_input_gradient(&sig, &ds, |v| loss(v, &col), &fd, &mut rng);
        let flat: Vec<f32> = col.iter().flatten().copied().collect();
        let dflat: Vec<f32> = dc.iter().flatten().copied().collect();
        let b = check_input_gradient(&flat, &dflat, |v| loss(&sig, &v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>()), &fd, &mut rng);
        fd_verdict(&[a, b])
    }));

    for (name, mode) in [("sight_cdf", SightMode::Cdf), ("sight_midpoint", SightMode::Midpoint)] {
        out.push(timed("gradients", name, || {
            let mut rng = rng0(9);
            let e = sorted_edges(&mut rng, 25, 9.0, 11.0);
            let w = runif(&mut rng, 24, 0.0, 0.1);
            let (_, g) = line_of_sight_loss(&w, &e, 10.0, 0.15, mode).unwrap();
            fd_verdict(&[check_input_gradient(&w, &g, |v| line_of_sight_loss(v, &e, 10.0, 0.15, mode).unwrap().0, &fd, &mut rng)])
        }));
    }

    out.push(timed("gradients", "depth_and_sight_through_rendering", || {
        let mut rng = rng0(10);
        let mut reports = Vec::new();
        for mode in [SightMode::Cdf, SightMode::Midpoint] {
            let t = sorted_edges(&mut rng, 33, 8.0, 12.0);
            let s = RaySamples {
                s_edges: t.clone(),
                t_edges: t.clone(),
            };
            let sig = runif(&mut rng, 32, 0.0, 1.5);
            let col = vec![[0.5f32; 3]; 32];
            let loss = |sg: &[f32]| {
                let o = volume_render(&s, sg, &col);
                line_of_sight_loss(&o.weights, &t, 10.0, 0.15, mode).unwrap().0 + l2_depth_loss(&[o.depth], &[10.0], &[true]).0
            };
            let o = volume_render(&s, &sig, &col);
            let (_, mut gw) = line_of_sight_loss(&o.weights, &t, 10.0, 0.15, mode).unwrap();
            let (_, gd) = l2_depth_loss(&[o.depth], &[10.0], &[true]);
            depth_weight_grad(&s, &o, gd[0], &mut gw);
            let mut ds = vec![0.0f32; 32];
            weights_backward(&s, &sig, &o.weights, &gw, &mut ds);
            reports.push(check_input_gradient(&sig, &ds, loss, &fd, &mut rng));
        }
        fd_verdict(&reports)
    }));

    out.push(timed("gradients", "distortion", || {
        let mut rng = rng0(11);
        let e = sorted_edges(&mut rng, 17, 0.1, 0.9);
        let w = runif(&mut rng, 16, 0.0, 0.2);
        let (_, g) = distortion_loss(&w, &e);
        fd_verdict(&[check_input_gradient(&w, &g, |v| distortion_loss(v, &e).0, &fd, &mut rng)])
    }));

    out.push(timed("gradients", "interlevel", || {
        let mut rng = rng0(12);
        let fe = sorted_edges(&mut rng, 17, 0.1, 0.9);
        let pe = sorted_edges(&mut rng, 33, 0.1, 0.9);
        let fw = runif(&mut rng, 16, 0.0, 0.2);
        let pw = runif(&mut rng, 32, 0.0, 0.02);
        let (_, g) = interlevel_loss(&fe, &fw, &pe, &pw);
        fd_verdict(&[check_input_gradient(&pw, &g, |v| interlevel_loss(&fe, &fw, &pe, v).0, &fd, &mut rng)])
    }));
    out
}

/// Sum of CDF interval masses over a partition of `[μ-8σ, μ+8σ]`, and the
/// second-order convergence of the midpoint rule towards it.
pub fn gaussian_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(timed("gaussian", "cdf_partition_sums_to_one", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let (mu, sigma) = (rng.random_range(-20.0..20.0), rng.random_range(0.05..3.0));
            let k = rng.random_range(1..60);
            let mut cuts: Vec<f64> = (0..k).map(|_| rng.random_range(-8.0..8.0)).collect();
            cuts.extend([-8.0, 8.0]);
            cuts.sort_by(f64::total_cmp);
            let total: f64 = cuts
                .windows(2)
                .map(|c| gaussian_interval_mass(mu + c[0] * sigma, mu + c[1] * sigma, mu, sigma, SightMode::Cdf).unwrap_or(f64::NAN))
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
        (worst < 1e-6, format!("100 partitions, max |sum - 1| {worst:.1e}"))
    }));
    out.push(timed("gaussian", "midpoint_gap_second_order", || {
        let gap = |width: f64| -> f64 {
            let n = (4.0 / width).round() as usize;
            (0..n)
                .map(|i| {
                    let t0 = -2.0 + i as f64 * width;
                    let a = gaussian_interval_mass(t0, t0 + width, 0.3, 1.0, SightMode::Cdf).unwrap_or(f64::NAN);
                    let b = gaussian_interval_mass(t0, t0 + width, 0.3, 1.0, SightMode::Midpoint).unwrap_or(f64::NAN);
                    (a - b).abs()
                })
                .sum()
        };
        let widths = [0.5, 0.25, 0.125, 0.0625, 0.03125];
        let ratios: Vec<f64> = widths.iter().map(|w| gap(*w) / gap(w / 2.0)).collect();
        (ratios.iter().all(|r| *r >= 3.5), format!("gap ratios per halving {ratios:.2?}"))
    }));
    out
}

/// Monotone schedules reaching their caps at the closed-form iterations.
pub fn curriculum_suite() -> Vec<CheckResult> {
    let cfg = CurriculumConfig::default();
    vec![timed("curriculum", "caps_at_closed_form_steps", || {
        let cap = (10.0f64.ln() / 1.00004f64.ln()).ceil() as u64;
        let floor = (0.15f64.ln() / 0.99995f64.ln()).ceil() as u64;
        let mut s = CurriculumState::new(&cfg);
        let (mut first_cap, mut first_floor) = (None, None);
        let mut monotone = true;
        for m in 1..=cap + 10 {
            let prev = s;
            s.step(&cfg);
            monotone &= s.eps_t >= prev.eps_t && s.eps_o <= prev.eps_o;
            if first_cap.is_none() && s.eps_t >= cfg.eps_t_max {
                first_cap = Some(m);
            }
            if first_floor.is_none() && s.eps_o <= cfg.eps_o_min {
                first_floor = Some(m);
            }
        }
        let near = |a: Option<u64>, b: u64| a.is_some_and(|a| a.abs_diff(b) <= 1);
        let ok = monotone && near(first_cap, cap) && near(first_floor, floor) && cfg.threshold_cap_step().abs_diff(cap) <= 1 && cfg.offset_floor_step().abs_diff(floor) <= 1;
        (ok, format!("eps_t cap at {first_cap:?} (closed form {cap}), eps_o floor at {first_floor:?} (closed form {floor})"))
    })]
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut v = oracle_suite(seed);
    v.extend(gradient_suite(seed));
    v.extend(gaussian_suite(seed));
    v.extend(curriculum_suite());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for c in run_all(0) {
            assert!(c.passed, "{}/{}: {}", c.suite, c.name, c.detail);
        }
    }

    #[test]
    fn gradient_suite_covers_the_ops() {
        let names: Vec<String> = gradient_suite(1).into_iter().map(|c| c.name).collect();
        for n in ["mlp", "hash_encoding", "lidar_aggregation", "volume_rendering", "sight_cdf", "sight_midpoint", "distortion"] {
            assert!(names.iter().any(|x| x == n), "{n}");
        }
    }
}
