//! Camera and Lidar geometry: rigid poses, pinhole projection, sweep
//! accumulation, colorization, scene normalization and contraction.
//!
//! Geometry is carried in `f64`; the neural field converts to `f32` at its
//! boundary.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image_buf::RgbImage;

pub type Vec3 = Vector3<f64>;

/// Rigid transform `x -> R x + t`. Which frames it connects is carried by the
/// field name at the use site (`world_to_camera`, `sensor_to_world`, ...).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

pub const POSE_TOLERANCE: f64 = 1e-6;

impl SE3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose and checks `R Rᵀ = I` and `det R = 1` within [`POSE_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate(POSE_TOLERANCE)?;
        Ok(pose)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if !self.rotation.iter().all(|v| v.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return invalid("pose has non-finite entries");
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > tol {
            return invalid(format!("rotation determinant {det} is not 1"));
        }
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if ortho > tol {
            return invalid(format!("rotation is not orthonormal (max deviation {ortho:e})"));
        }
        Ok(())
    }

    /// Projects the rotation onto SO(3) via SVD.
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Self {
            rotation: r,
            translation: self.translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SE3Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads a row-major 4x4 without validating the rotation.
    pub fn from_row_major_unchecked(m: &[f64; 16]) -> Self {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vec3::new(m[3], m[7], m[11]);
        Self {
            rotation,
            translation,
        }
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Camera center in world coordinates for a world-to-camera pose.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-to-camera pose for a camera at `eye` looking at `target`, with the
    /// camera `-y` axis aligned as closely as possible with `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return invalid("look_at: view direction parallel to up vector");
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // rows of R are camera axes expressed in world coordinates
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self {
            rotation,
            translation: -(rotation * eye),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return invalid("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return invalid("principal point outside the image");
        }
        Ok(())
    }

    /// Camera-frame direction (not normalized, z = 1) through a pixel coordinate.
    #[inline]
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Projection of a world point: sub-pixel location and camera-frame z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
    /// Euclidean distance from the camera center.
    pub range: f64,
}

impl Projection {
    /// Integer pixel containing the projection.
    pub fn pixel_index(&self) -> (usize, usize) {
        (self.pixel[0].floor() as usize, self.pixel[1].floor() as usize)
    }
}

/// Projects a world point through `world_to_camera`. Returns `Ok(None)` behind
/// the camera or outside `[0, width) x [0, height)`.
pub fn project(cam: &PinholeCamera, world_to_camera: &SE3Pose, x_world: &Vec3) -> Result<Option<Projection>> {
    if !x_world.iter().all(|v| v.is_finite()) {
        return invalid(format!("project: non-finite point {x_world:?}"));
    }
    Ok(project_camera_frame(cam, &world_to_camera.apply(x_world)))
}

#[inline]
pub fn project_camera_frame(cam: &PinholeCamera, xc: &Vec3) -> Option<Projection> {
    if xc.z <= 0.0 {
        return None;
    }
    let u = cam.fx * xc.x / xc.z + cam.cx;
    let v = cam.fy * xc.y / xc.z + cam.cy;
    if !(u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64) {
        return None;
    }
    Some(Projection {
        pixel: [u, v],
        depth: xc.z,
        range: xc.norm(),
    })
}

/// Inverse of [`project`] in the camera frame: the point at z = `depth` seen at `pixel`.
pub fn unproject(cam: &PinholeCamera, pixel: [f64; 2], depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return invalid(format!("unproject: depth must be positive, got {depth}"));
    }
    Ok(cam.ray_direction(pixel[0], pixel[1]) * depth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarSweep {
    /// Points in the sensor frame (meters).
    pub points: Vec<Vec3>,
    pub timestamp: f64,
    pub rgb: Option<Vec<[f32; 3]>>,
}

impl LidarSweep {
    pub fn new(points: Vec<Vec3>, timestamp: f64) -> Result<Self> {
        let sweep = Self {
            points,
            timestamp,
            rgb: None,
        };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return invalid("lidar sweep has non-finite coordinates");
        }
        if let Some(rgb) = &self.rgb {
            if rgb.len() != self.points.len() {
                return invalid("lidar rgb length differs from point count");
            }
        }
        Ok(())
    }
}

/// Indices of the `window` frames temporally nearest to `reference`, ties
/// toward earlier frames, returned in ascending index order.
pub fn window_frames(timestamps: &[f64], reference: usize, window: usize) -> Vec<usize> {
    let t_ref = timestamps[reference];
    let mut order: Vec<usize> = (0..timestamps.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (timestamps[a] - t_ref).abs();
        let db = (timestamps[b] - t_ref).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order.truncate(window.max(1));
    order.sort_unstable();
    order
}

/// A world-frame point with optional color and the frame it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub position: Vec3,
    pub rgb: Option<[f32; 3]>,
    pub frame: usize,
}

/// Transforms the sweeps of the `window` frames nearest to `reference` into
/// world coordinates. `sensor_to_world[i]` maps sweep `i` to world.
pub fn accumulate(
    sweeps: &[LidarSweep],
    sensor_to_world: &[SE3Pose],
    reference: usize,
    window: usize,
) -> Result<Vec<WorldPoint>> {
    if sweeps.len() != sensor_to_world.len() {
        return invalid(format!(
            "accumulate: {} sweeps but {} poses",
            sweeps.len(),
            sensor_to_world.len()
        ));
    }
    if sweeps.is_empty() {
        return Ok(Vec::new());
    }
    if reference >= sweeps.len() {
        return invalid(format!("accumulate: reference frame {reference} out of range"));
    }
    let timestamps: Vec<f64> = sweeps.iter().map(|s| s.timestamp).collect();
    let frames = window_frames(&timestamps, reference, window);
    Ok(accumulate_frames(sweeps, sensor_to_world, &frames))
}

/// Transforms the listed frames' sweeps into world coordinates, in frame order.
pub fn accumulate_frames(sweeps: &[LidarSweep], sensor_to_world: &[SE3Pose], frames: &[usize]) -> Vec<WorldPoint> {
    let mut out = Vec::with_capacity(frames.iter().map(|&f| sweeps[f].points.len()).sum());
    for &f in frames {
        let sweep = &sweeps[f];
        let pose = &sensor_to_world[f];
        for (k, p) in sweep.points.iter().enumerate() {
            out.push(WorldPoint {
                position: pose.apply(p),
                rgb: sweep.rgb.as_ref().map(|c| c[k]),
                frame: f,
            });
        }
    }
    out
}

/// Colors world points by bilinear interpolation of `image` at their
/// projections. Points outside the frustum are dropped.
pub fn colorize(points: &[WorldPoint], image: &RgbImage, cam: &PinholeCamera, world_to_camera: &SE3Pose) -> Result<Vec<WorldPoint>> {
    if image.width != cam.width || image.height != cam.height {
        return invalid("colorize: image size differs from camera");
    }
    let mut out = Vec::new();
    for p in points {
        if let Some(proj) = project(cam, world_to_camera, &p.position)? {
            out.push(WorldPoint {
                position: p.position,
                rgb: Some(image.bilinear(proj.pixel[0], proj.pixel[1])),
                frame: p.frame,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Margin added to the trajectory diameter when sizing the scene sphere.
pub const SCENE_MARGIN_M: f64 = 50.0;

impl SceneBounds {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }
}

/// Sphere whose diameter is the largest pairwise camera distance plus
/// [`SCENE_MARGIN_M`], centered on the midpoint of the farthest pair.
pub fn normalize_scene(camera_positions: &[Vec3]) -> Result<SceneBounds> {
    if camera_positions.is_empty() {
        return invalid("normalize_scene: no camera positions");
    }
    let mut best = (0.0, 0usize, 0usize);
    for i in 0..camera_positions.len() {
        for j in (i + 1)..camera_positions.len() {
            let d = (camera_positions[i] - camera_positions[j]).norm();
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    let (d, i, j) = best;
    let center = (camera_positions[i] + camera_positions[j]) * 0.5;
    Ok(SceneBounds {
        center: [center.x, center.y, center.z],
        radius: (d + SCENE_MARGIN_M) * 0.5,
    })
}

/// Maps world space into the open ball of radius 2: identity on the unit ball
/// of normalized coordinates, `(2 - 1/|u|) u/|u|` outside.
pub fn contract(x_world: &Vec3, bounds: &SceneBounds) -> Vec3 {
    let u = (x_world - bounds.center()) / bounds.radius;
    let n = u.norm();
    if n <= 1.0 {
        u
    } else {
        u * ((2.0 - 1.0 / n) / n)
    }
}
