//! Turns a dataset into training views with depth targets, augmented views
//! and the pooled pixel sampler.

use rand::Rng;

use super::TrainingConfig;
use crate::data::{pixel_ray, Dataset};
use crate::error::{invalid, Result};
use crate::field::Ray;
use crate::geometry::{accumulate_frames, colorize, normalize_scene, project, window_frames, PinholeCamera, SceneBounds, SE3Pose, Vec3, WorldPoint};
use crate::image_buf::{Mask, RgbImage};
use crate::supervision::{RayTarget, Source};
use crate::synthesis::{generate_augmented_views, hidden_point_removal, rasterize_depth, AugmentedView, BaseView, SparseDepthMap};

#[derive(Debug, Clone)]
pub struct TrainView {
    /// Index into the dataset's frames.
    pub frame: usize,
    pub world_to_camera: SE3Pose,
    pub image: RgbImage,
    pub mask: Mask,
    /// Lidar depth targets (ray distance).
    pub depth: SparseDepthMap,
    pub gt_depth: Option<SparseDepthMap>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub camera: PinholeCamera,
    pub bounds: SceneBounds,
    pub views: Vec<TrainView>,
    pub augmented: Vec<AugmentedView>,
    /// Training-frame Lidar in world coordinates.
    pub lidar_points: Vec<Vec3>,
}

/// Per training view, the rasterized accumulation of the `window` training
/// sweeps nearest in time, optionally after hidden point removal.
pub fn accumulated_depth_maps(data: &Dataset, train: &[usize], window: usize, hpr_gamma: Option<f64>) -> Result<Vec<SparseDepthMap>> {
    let sweeps: Vec<_> = train.iter().map(|&i| data.frames[i].lidar.clone()).collect();
    let poses: Vec<_> = train.iter().map(|&i| data.frames[i].sensor_to_world).collect();
    let stamps: Vec<f64> = sweeps.iter().map(|s| s.timestamp).collect();
    train
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let frame = &data.frames[i];
            let mut pts = accumulate_frames(&sweeps, &poses, &window_frames(&stamps, k, window));
            if let Some(gamma) = hpr_gamma {
                let pos: Vec<Vec3> = pts.iter().map(|p| p.position).collect();
                let visible = hidden_point_removal(&pos, &frame.world_to_camera.camera_center(), gamma)?;
                pts = visible.into_iter().map(|j| pts[j]).collect();
            }
            rasterize_depth(&pts, &data.camera, &frame.world_to_camera)
        })
        .collect()
}

/// Each training sweep colored from its own image; points over masked
/// pixels are dropped.
fn colored_sweeps(data: &Dataset, train: &[usize]) -> Result<Vec<Vec<WorldPoint>>> {
    let cam = &data.camera;
    train
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let f = &data.frames[i];
            let mut pts = accumulate_frames(std::slice::from_ref(&f.lidar), std::slice::from_ref(&f.sensor_to_world), &[0]);
            for p in &mut pts {
                p.frame = k;
            }
            let colored = colorize(&pts, &f.image, cam, &f.world_to_camera)?;
            let mut keep = Vec::with_capacity(colored.len());
            for p in colored {
                if let Some(pr) = project(cam, &f.world_to_camera, &p.position)? {
                    let (x, y) = pr.pixel_index();
                    if !f.mask.is_excluded(x, y) {
                        keep.push(p);
                    }
                }
            }
            Ok(keep)
        })
        .collect()
}

impl PreparedData {
    pub fn build<R: Rng + ?Sized>(data: &Dataset, train: &[usize], cfg: &TrainingConfig, aug_rng: &mut R) -> Result<Self> {
        if train.is_empty() {
            return invalid("training needs at least one view");
        }
        if let Some(&bad) = train.iter().find(|&&i| i >= data.frames.len()) {
            return invalid(format!("training view {bad} out of range"));
        }
        let cam = data.camera;
        let centers: Vec<Vec3> = train.iter().map(|&i| data.frames[i].world_to_camera.camera_center()).collect();
        let bounds = normalize_scene(&centers)?;
        let depths = if cfg.depth_supervised() {
            accumulated_depth_maps(data, train, cfg.depth.window, cfg.depth.hpr.then_some(cfg.depth.hpr_gamma))?
        } else {
            vec![SparseDepthMap::empty(cam.width, cam.height); train.len()]
        };
        let views = train
            .iter()
            .zip(depths)
            .map(|(&i, depth)| {
                let f = &data.frames[i];
                TrainView {
                    frame: i,
                    world_to_camera: f.world_to_camera,
                    image: f.image.clone(),
                    mask: f.mask.clone(),
                    depth,
                    gt_depth: f.gt_depth.clone(),
                }
            })
            .collect::<Vec<_>>();
        let mut augmented = Vec::new();
        if cfg.augmented() {
            let colored = colored_sweeps(data, train)?;
            let stamps: Vec<f64> = train.iter().map(|&i| data.frames[i].timestamp).collect();
            let n = train.len();
            for (k, view) in views.iter().enumerate() {
                let m = cfg.augmentation.count / n + usize::from(k < cfg.augmentation.count % n);
                if m == 0 {
                    continue;
                }
                let pts: Vec<WorldPoint> = window_frames(&stamps, k, cfg.depth.window).into_iter().flat_map(|j| colored[j].iter().copied()).collect();
                let base = BaseView {
                    index: view.frame,
                    world_to_camera: view.world_to_camera,
                    points: &pts,
                };
                augmented.extend(generate_augmented_views(&[base], &cam, m, cfg.augmentation.sigma, aug_rng)?);
            }
        }
        let lidar_points = train
            .iter()
            .flat_map(|&i| {
                let f = &data.frames[i];
                f.lidar.points.iter().map(move |p| f.sensor_to_world.apply(p))
            })
            .collect();
        Ok(Self {
            camera: cam,
            bounds,
            views,
            augmented,
            lidar_points,
        })
    }
}

/// A pixel of a real view (`view < views.len()`) or of an augmented view
/// (`view - views.len()`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewPixel {
    pub view: u32,
    pub pixel: u32,
}

#[derive(Debug, Clone, Default)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub targets: Vec<RayTarget>,
    pub pixels: Vec<ViewPixel>,
    /// Reference depth for real-view pixels that have one.
    pub gt_depth: Vec<Option<f32>>,
}

/// Every unmasked real pixel and valid augmented pixel, sampled uniformly
/// with replacement.
#[derive(Debug, Clone)]
pub struct RayPool {
    pixels: Vec<ViewPixel>,
    real: usize,
}

impl RayPool {
    pub fn new(data: &PreparedData) -> Result<Self> {
        let mut pixels = Vec::new();
        for (v, view) in data.views.iter().enumerate() {
            pixels.extend(view.mask.excluded.iter().enumerate().filter(|(_, e)| !**e).map(|(p, _)| ViewPixel { view: v as u32, pixel: p as u32 }));
        }
        let real = pixels.len();
        let off = data.views.len();
        for (a, aug) in data.augmented.iter().enumerate() {
            pixels.extend(aug.mask.iter().enumerate().filter(|(_, m)| **m).map(|(p, _)| ViewPixel {
                view: (off + a) as u32,
                pixel: p as u32,
            }));
        }
        if pixels.is_empty() {
            return invalid("no unmasked pixels to sample");
        }
        Ok(Self { pixels, real })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn real_pixels(&self) -> usize {
        self.real
    }

    pub fn sample<R: Rng + ?Sized>(&self, data: &PreparedData, n: usize, rng: &mut R) -> RayBatch {
        let cam = &data.camera;
        let mut b = RayBatch {
            rays: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            pixels: Vec::with_capacity(n),
            gt_depth: Vec::with_capacity(n),
        };
        let nv = data.views.len();
        for _ in 0..n {
            let px = self.pixels[rng.random_range(0..self.pixels.len())];
            let p = px.pixel as usize;
            let (x, y) = (p % cam.width, p / cam.width);
            let v = px.view as usize;
            let (w2c, rgb, depth, gt, source) = if v < nv {
                let view = &data.views[v];
                let gt = view.gt_depth.as_ref().and_then(|g| g.get(x, y));
                (&view.world_to_camera, view.image.data[p], view.depth.get(x, y), gt, Source::Real)
            } else {
                let a = &data.augmented[v - nv];
                (&a.world_to_camera, a.rgb.data[p], a.depth.get(x, y), None, Source::Augmented)
            };
            b.rays.push(pixel_ray(cam, w2c, x, y));
            b.targets.push(RayTarget { rgb, depth, source });
            b.pixels.push(px);
            b.gt_depth.push(gt);
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SceneConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_scene() -> Dataset {
        let mut s = SceneConfig::occluder();
        s.frames = 4;
        s.width = 24;
        s.height = 16;
        s.focal = 16.0;
        s.lidar.azimuth_steps = 180;
        s.lidar.elevation_steps = 16;
        s.generate().unwrap()
    }

    fn prepared(d: &Dataset, aug: usize) -> PreparedData {
        let mut cfg = TrainingConfig::default();
        cfg.augmentation.count = aug;
        PreparedData::build(d, &[0, 1, 2, 3], &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn fully_masked_view_contributes_no_rays() {
        let mut d = small_scene();
        d.frames[1].mask = Mask::all(24, 16);
        let p = prepared(&d, 0);
        let pool = RayPool::new(&p).unwrap();
        assert_eq!(pool.len(), 3 * 24 * 16);
        let b = pool.sample(&p, 4096, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(b.rays.len(), 4096);
        assert!(b.pixels.iter().all(|px| px.view != 1));
        for f in &mut d.frames {
            f.mask = Mask::all(24, 16);
        }
        assert!(RayPool::new(&prepared(&d, 0)).is_err());
    }

    #[test]
    fn sampling_is_uniform_over_unmasked_pixels() {
        let d = small_scene();
        let p = prepared(&d, 0);
        let pool = RayPool::new(&p).unwrap();
        let n = pool.len();
        let draws = 200 * n;
        let mut counts = vec![0usize; n];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = pool.sample(&p, draws, &mut rng);
        for px in &b.pixels {
            counts[px.view as usize * 384 + px.pixel as usize] += 1;
        }
        let e = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // chi-square with n-1 dof: mean n-1, std sqrt(2(n-1))
        let dof = (n - 1) as f64;
        assert!((chi2 - dof).abs() < 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2}, dof {dof}");
        let pstd = (e * (1.0 - 1.0 / n as f64)).sqrt();
        let outside = counts.iter().filter(|&&c| (c as f64 - e).abs() > 3.0 * pstd).count();
        assert!(outside as f64 <= 0.01 * n as f64 + 3.0, "{outside} pixels beyond 3 sigma");
    }

    #[test]
    fn targets_carry_depth_where_available() {
        let d = small_scene();
        let p = prepared(&d, 0);
        let b = RayPool::new(&p).unwrap().sample(&p, 2000, &mut ChaCha8Rng::seed_from_u64(4));
        let with = b.targets.iter().filter(|t| t.depth.is_some()).count();
        assert!(with > 0 && with < 2000);
        for (t, px) in b.targets.iter().zip(&b.pixels) {
            let v = &p.views[px.view as usize];
            let (x, y) = (px.pixel as usize % 24, px.pixel as usize / 24);
            assert_eq!(t.depth, v.depth.get(x, y));
            assert_eq!(t.rgb, v.image.get(x, y));
        }
    }

    #[test]
    fn augmented_views_join_the_pool() {
        let d = small_scene();
        let p = prepared(&d, 6);
        assert_eq!(p.augmented.len(), 6);
        assert_eq!(p.augmented.iter().map(|a| a.base).collect::<Vec<_>>(), vec![0, 0, 1, 1, 2, 3]);
        let pool = RayPool::new(&p).unwrap();
        let aug: usize = p.augmented.iter().map(|a| a.valid_pixels()).sum();
        assert_eq!(pool.len(), pool.real_pixels() + aug);
        let b = pool.sample(&p, 3000, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(b.targets.iter().any(|t| t.source == Source::Augmented));
    }

    #[test]
    fn occluder_scene_has_ghost_depths() {
        let d = SceneConfig::occluder().generate().unwrap();
        let train: Vec<usize> = (0..d.frames.len()).collect();
        let maps = accumulated_depth_maps(&d, &train, 10, None).unwrap();
        let (mut valid, mut ghost) = (0usize, 0usize);
        for (m, &i) in maps.iter().zip(&train) {
            let gt = d.frames[i].gt_depth.as_ref().unwrap();
            for (a, b) in m.depth.iter().zip(&gt.depth) {
                if *a > 0.0 && *b > 0.0 {
                    valid += 1;
                    ghost += usize::from((a - b).abs() > 1.0);
                }
            }
        }
        let frac = ghost as f64 / valid as f64;
        assert!(frac >= 0.05, "ghost fraction {frac}");
        let single = accumulated_depth_maps(&d, &train, 1, None).unwrap();
        let g1: usize = single
            .iter()
            .zip(&d.frames)
            .map(|(m, f)| m.depth.iter().zip(&f.gt_depth.as_ref().unwrap().depth).filter(|(a, b)| **a > 0.0 && **b > 0.0 && (**a - **b).abs() > 1.0).count())
            .sum();
        assert!(4 * g1 < ghost, "single-sweep ghosts {g1} vs {ghost}");
    }
}
