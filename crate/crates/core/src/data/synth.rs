//! Analytic synthetic scenes: a textured ground plane, axis-aligned boxes
//! and spheres, seen by a camera moving in a straight line and a raster
//! Lidar riding with it. Every camera ray has an exact intersection, so
//! ground-truth depth is available everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{LidarSweep, PinholeCamera, SE3Pose, Vec3};
use crate::image_buf::{Mask, RgbImage};
use crate::synthesis::SparseDepthMap;

use super::{Dataset, Frame};

/// Solid checker texture with a smooth modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: [f32; 3],
    pub alt: [f32; 3],
    /// Checker cell size (m).
    pub scale: f64,
}

impl Texture {
    pub fn albedo(&self, p: &Vec3) -> [f32; 3] {
        // offset keeps cell boundaries off axis-aligned faces
        let q = (p + Vec3::new(0.37, 0.21, 0.13)) / self.scale;
        let parity = (q.x.floor() + q.y.floor() + q.z.floor()) as i64 & 1;
        let c = if parity == 0 { self.base } else { self.alt };
        let m = 0.85 + 0.15 * ((1.7 * q.x).sin() * (1.3 * q.y + 0.5 * q.z).cos()) as f32;
        [c[0] * m, c[1] * m, c[2] * m]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    /// The plane `z = height`, seen from above.
    Plane { height: f64, texture: Texture },
    Box { min: [f64; 3], max: [f64; 3], texture: Texture },
    Sphere { center: [f64; 3], radius: f64, texture: Texture },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
    pub primitive: usize,
}

impl Primitive {
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
        const T_MIN: f64 = 1e-6;
        match *self {
            Primitive::Plane { height, .. } => {
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let t = (height - o.z) / d.z;
                (t > T_MIN && o.z > height).then(|| (t, Vec3::z()))
            }
            Primitive::Box { min, max, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = (0usize, -1.0f64);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / d[a];
                    let (mut ta, mut tb) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                    let mut sign = -1.0;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        sign = 1.0;
                    }
                    if ta > t0 {
                        t0 = ta;
                        axis = (a, sign);
                    }
                    t1 = t1.min(tb);
                }
                if t0 > t1 || t0 <= T_MIN {
                    return None;
                }
                let mut n = Vec3::zeros();
                n[axis.0] = axis.1;
                Some((t0, n))
            }
            Primitive::Sphere { center, radius, .. } => {
                let c = Vec3::from(center);
                let oc = o - c;
                let b = oc.dot(d);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t > T_MIN).then(|| (t, (o + d * t - c) / radius))
            }
        }
    }

    pub fn texture(&self) -> &Texture {
        match self {
            Primitive::Plane { texture, .. } | Primitive::Box { texture, .. } | Primitive::Sphere { texture, .. } => texture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub azimuth_steps: usize,
    pub elevation_steps: usize,
    /// Elevation range (degrees).
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
    pub noise_std: f64,
    /// Sensor position relative to the camera center (world axes).
    pub mount_offset: [f64; 3],
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            azimuth_steps: 720,
            elevation_steps: 32,
            elevation_min: -30.0,
            elevation_max: 15.0,
            max_range: 30.0,
            noise_std: 0.0,
            mount_offset: [0.0, 0.0, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub primitives: Vec<Primitive>,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub frames: usize,
    /// Camera advance per frame along `direction` (m).
    pub speed: f64,
    pub start: [f64; 3],
    pub direction: [f64; 3],
    /// Viewing direction of the camera (world); need not match motion.
    pub look: [f64; 3],
    pub lidar: LidarConfig,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::street()
    }
}

const LIGHT: [f64; 3] = [0.4, 0.3, 0.85];

fn tex(base: [f32; 3], alt: [f32; 3], scale: f64) -> Texture {
    Texture { base, alt, scale }
}

fn aabb(min: [f64; 3], max: [f64; 3], texture: Texture) -> Primitive {
    Primitive::Box { min, max, texture }
}

impl SceneConfig {
    /// A street seen by a side-looking camera: a facade 6 m away, parked
    /// cars, poles and bollards in between, a gap in the facade showing a
    /// second row of buildings.
    pub fn street() -> Self {
        let road = tex([0.32, 0.32, 0.34], [0.45, 0.44, 0.42], 0.9);
        let walk = tex([0.62, 0.58, 0.52], [0.5, 0.47, 0.43], 0.5);
        let brick = tex([0.62, 0.32, 0.24], [0.78, 0.5, 0.38], 0.6);
        let plaster = tex([0.85, 0.8, 0.62], [0.6, 0.62, 0.7], 1.1);
        let glass = tex([0.2, 0.35, 0.5], [0.35, 0.5, 0.62], 0.8);
        let back = tex([0.55, 0.6, 0.52], [0.4, 0.48, 0.4], 1.4);
        let car_a = tex([0.75, 0.12, 0.1], [0.55, 0.08, 0.08], 0.45);
        let car_b = tex([0.15, 0.3, 0.7], [0.25, 0.45, 0.85], 0.45);
        let car_c = tex([0.85, 0.82, 0.2], [0.6, 0.55, 0.1], 0.45);
        let metal = tex([0.3, 0.3, 0.32], [0.5, 0.5, 0.52], 0.25);
        let primitives = vec![
            Primitive::Plane { height: 0.0, texture: road },
            aabb([-20.0, 2.5, 0.0], [45.0, 6.0, 0.15], walk),
            aabb([-20.0, 6.0, 0.0], [6.0, 9.0, 9.0], brick),
            aabb([6.0, 6.0, 0.0], [13.0, 9.0, 7.0], plaster),
            aabb([16.0, 6.0, 0.0], [45.0, 9.0, 10.0], glass),
            aabb([10.0, 12.0, 0.0], [20.0, 14.0, 12.0], back),
            aabb([13.0, 6.0, 0.0], [13.2, 12.0, 3.0], metal),
            aabb([2.0, 1.2, 0.0], [6.2, 3.0, 1.5], car_a),
            aabb([10.5, 1.3, 0.0], [14.0, 3.0, 1.6], car_b),
            aabb([19.0, 1.2, 0.0], [23.0, 3.0, 1.5], car_c),
            aabb([8.3, 3.4, 0.0], [8.55, 3.65, 4.5], metal),
            aabb([16.6, 3.4, 0.0], [16.85, 3.65, 4.5], metal),
            Primitive::Sphere {
                center: [25.5, 3.8, 0.7],
                radius: 0.7,
                texture: tex([0.2, 0.6, 0.25], [0.35, 0.75, 0.3], 0.3),
            },
        ];
        Self {
            primitives,
            width: 160,
            height: 120,
            focal: 100.0,
            frames: 40,
            speed: 0.5,
            start: [0.0, -1.0, 1.5],
            direction: [1.0, 0.0, 0.0],
            look: [0.25, 1.0, -0.15],
            lidar: LidarConfig {
                max_range: 12.0,
                noise_std: 0.01,
                ..LidarConfig::default()
            },
            seed: 0,
        }
    }

    /// A textured wall with one box in front of it, viewed head-on.
    pub fn occluder() -> Self {
        Self {
            primitives: vec![
                Primitive::Plane {
                    height: 0.0,
                    texture: tex([0.35, 0.35, 0.35], [0.5, 0.5, 0.5], 1.0),
                },
                aabb([-30.0, 6.0, 0.0], [30.0, 7.0, 6.0], tex([0.9, 0.55, 0.2], [0.25, 0.2, 0.55], 0.45)),
                aabb([2.0, 2.5, 0.0], [5.0, 3.5, 3.0], tex([0.2, 0.3, 0.8], [0.9, 0.9, 0.6], 0.35)),
            ],
            frames: 12,
            speed: 1.0,
            start: [0.0, 0.0, 1.5],
            look: [0.0, 1.0, -0.1],
            lidar: LidarConfig {
                elevation_steps: 16,
                max_range: 20.0,
                mount_offset: [0.0, 0.0, 1.0],
                ..LidarConfig::default()
            },
            ..Self::street()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) || self.frames == 0 {
            return invalid("scene needs a positive image size, focal length and frame count");
        }
        if Vec3::from(self.look).norm() < 1e-9 || !(self.speed >= 0.0) {
            return invalid("scene needs a view direction and a non-negative speed");
        }
        let l = &self.lidar;
        if l.azimuth_steps == 0 || l.elevation_steps == 0 || !(l.max_range > 0.0) || !(l.noise_std >= 0.0) {
            return invalid("lidar pattern needs positive steps and range, and non-negative noise");
        }
        Ok(())
    }

    pub fn camera(&self) -> PinholeCamera {
        PinholeCamera {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn camera_center(&self, frame: usize) -> Vec3 {
        Vec3::from(self.start) + Vec3::from(self.direction).normalize() * (self.speed * frame as f64)
    }

    pub fn world_to_camera(&self, frame: usize) -> Result<SE3Pose> {
        let eye = self.camera_center(frame);
        SE3Pose::look_at(eye, eye + Vec3::from(self.look), Vec3::z())
    }

    pub fn sensor_to_world(&self, frame: usize) -> SE3Pose {
        SE3Pose {
            rotation: nalgebra::Matrix3::identity(),
            translation: self.camera_center(frame) + Vec3::from(self.lidar.mount_offset),
        }
    }

    /// Nearest intersection along a unit-direction ray.
    pub fn cast(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (k, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal)) = p.intersect(o, d) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, normal, primitive: k });
                }
            }
        }
        best
    }

    fn sky(d: &Vec3) -> [f32; 3] {
        let a = d.z.clamp(0.0, 1.0) as f32;
        [0.78 - 0.4 * a, 0.84 - 0.3 * a, 0.92 - 0.08 * a]
    }

    /// Shaded color seen along a ray.
    pub fn radiance(&self, o: &Vec3, d: &Vec3) -> ([f32; 3], Option<f64>) {
        match self.cast(o, d) {
            None => (Self::sky(d), None),
            Some(h) => {
                let p = o + d * h.t;
                let a = self.primitives[h.primitive].texture().albedo(&p);
                let light = Vec3::from(LIGHT).normalize();
                let shade = 0.55 + 0.45 * h.normal.dot(&light).max(0.0) as f32;
                ([a[0] * shade, a[1] * shade, a[2] * shade], Some(h.t))
            }
        }
    }

    /// World-frame direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(cam: &PinholeCamera, world_to_camera: &SE3Pose, x: usize, y: usize) -> Vec3 {
        let dc = cam.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
        (world_to_camera.rotation.transpose() * dc).normalize()
    }

    /// Image and ray-distance depth (0 where the ray escapes).
    pub fn render_view(&self, world_to_camera: &SE3Pose) -> (RgbImage, SparseDepthMap) {
        let cam = self.camera();
        let o = world_to_camera.camera_center();
        let mut img = RgbImage::new(cam.width, cam.height);
        let mut depth = SparseDepthMap::empty(cam.width, cam.height);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let d = Self::pixel_direction(&cam, world_to_camera, x, y);
                let (c, t) = self.radiance(&o, &d);
                img.set(x, y, c);
                depth.depth[y * cam.width + x] = t.map_or(0.0, |t| t as f32);
            }
        }
        (img, depth)
    }

    /// One sweep in the sensor frame, with returns beyond `max_range` dropped.
    pub fn lidar_sweep(&self, frame: usize, rng: &mut ChaCha8Rng) -> Result<LidarSweep> {
        let l = &self.lidar;
        let pose = self.sensor_to_world(frame);
        let noise = (l.noise_std > 0.0).then(|| Normal::new(0.0, l.noise_std).expect("positive std"));
        let mut pts = Vec::with_capacity(l.azimuth_steps * l.elevation_steps);
        for e in 0..l.elevation_steps {
            let frac = if l.elevation_steps > 1 { e as f64 / (l.elevation_steps - 1) as f64 } else { 0.5 };
            let el = (l.elevation_min + frac * (l.elevation_max - l.elevation_min)).to_radians();
            for a in 0..l.azimuth_steps {
                let az = (a as f64 + 0.5) / l.azimuth_steps as f64 * std::f64::consts::TAU;
                let d = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                if let Some(h) = self.cast(&pose.translation, &(pose.rotation * d)) {
                    if h.t <= l.max_range {
                        let r = h.t + noise.map_or(0.0, |n| n.sample(rng));
                        pts.push(d * r);
                    }
                }
            }
        }
        LidarSweep::new(pts, frame as f64 * 0.1)
    }

    /// Renders every frame and its sweep.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let cam = self.camera();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut frames = Vec::with_capacity(self.frames);
        for f in 0..self.frames {
            let w2c = self.world_to_camera(f)?;
            let (image, gt) = self.render_view(&w2c);
            frames.push(Frame {
                name: format!("frame_{f:04}"),
                image,
                world_to_camera: w2c,
                mask: Mask::none(cam.width, cam.height),
                timestamp: f as f64 * 0.1,
                lidar: self.lidar_sweep(f, &mut rng)?,
                sensor_to_world: self.sensor_to_world(f),
                gt_depth: Some(gt),
            });
        }
        Ok(Dataset { camera: cam, frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{accumulate_frames, project};
    use crate::synthesis::rasterize_depth;

    #[test]
    fn plane_depth_is_height_over_cosine() {
        let mut s = SceneConfig {
            primitives: vec![Primitive::Plane {
                height: 0.0,
                texture: tex([0.5; 3], [0.4; 3], 1.0),
            }],
            start: [0.0, 0.0, 2.0],
            ..SceneConfig::street()
        };
        s.look = [0.0, 0.0, -1.0];
        let w2c = SE3Pose::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y()).unwrap();
        let (_, depth) = s.render_view(&w2c);
        let cam = s.camera();
        for (x, y) in [(80, 60), (0, 0), (159, 119), (20, 100)] {
            let d = SceneConfig::pixel_direction(&cam, &w2c, x, y);
            let cos = -d.z;
            assert!((depth.get(x, y).unwrap() as f64 - 2.0 / cos).abs() < 1e-5);
        }
    }

    #[test]
    fn noiseless_lidar_lands_on_gt_depth() {
        let mut s = SceneConfig::street();
        s.lidar.noise_std = 0.0;
        s.lidar.mount_offset = [0.0; 3];
        s.frames = 1;
        let data = s.generate().unwrap();
        let f = &data.frames[0];
        let gt = f.gt_depth.as_ref().unwrap();
        let cam = &data.camera;
        let mut checked = 0;
        for p in &f.lidar.points {
            let w = f.sensor_to_world.apply(p);
            if let Some(pr) = project(cam, &f.world_to_camera, &w).unwrap() {
                // the analytic depth along the ray through the projected point
                let dir = (w - f.world_to_camera.camera_center()).normalize();
                let t = s.cast(&f.world_to_camera.camera_center(), &dir).unwrap().t;
                assert!((t - pr.range).abs() < 1e-5, "{t} vs {}", pr.range);
                checked += 1;
            }
        }
        assert!(checked > 1000);
        // rasterized sweep vs pixel-center ground truth: equal on flat interiors
        let pts = accumulate_frames(&[f.lidar.clone()], &[f.sensor_to_world], &[0]);
        let m = rasterize_depth(&pts, cam, &f.world_to_camera).unwrap();
        let close = (0..m.depth.len()).filter(|&i| m.depth[i] > 0.0 && (m.depth[i] - gt.depth[i]).abs() < 0.05).count();
        assert!(close as f64 > 0.8 * m.valid_count() as f64);
    }

    #[test]
    fn displaced_lidar_produces_ghosts_behind_the_box() {
        let s = SceneConfig {
            lidar: LidarConfig {
                noise_std: 0.0,
                ..SceneConfig::occluder().lidar
            },
            ..SceneConfig::occluder()
        };
        let data = s.generate().unwrap();
        let reference = 5;
        let frames: Vec<usize> = (0..s.frames).collect();
        let sweeps: Vec<_> = data.frames.iter().map(|f| f.lidar.clone()).collect();
        let poses: Vec<_> = data.frames.iter().map(|f| f.sensor_to_world).collect();
        let pts = accumulate_frames(&sweeps, &poses, &frames);
        let f = &data.frames[reference];
        let m = rasterize_depth(&pts, &data.camera, &f.world_to_camera).unwrap();
        let gt = f.gt_depth.as_ref().unwrap();
        let box_id = 2;
        let (mut ghosts, mut on_box) = (0, 0);
        for y in 0..data.camera.height {
            for x in 0..data.camera.width {
                let i = y * data.camera.width + x;
                let d = SceneConfig::pixel_direction(&data.camera, &f.world_to_camera, x, y);
                let hit = s.cast(&f.world_to_camera.camera_center(), &d);
                if m.depth[i] > 0.0 && hit.is_some_and(|h| h.primitive == box_id) {
                    on_box += 1;
                    ghosts += (m.depth[i] - gt.depth[i] > 1.0) as usize;
                }
            }
        }
        assert!(on_box > 50 && ghosts > 0, "{ghosts} ghosts over {on_box} box pixels");
    }

    #[test]
    fn generation_is_deterministic() {
        let mut s = SceneConfig::occluder();
        s.frames = 2;
        s.lidar.noise_std = 0.05;
        let (a, b) = (s.generate().unwrap(), s.generate().unwrap());
        assert_eq!(a.frames[1].lidar, b.frames[1].lidar);
        assert_eq!(a.frames[1].image, b.frames[1].image);
    }
}
