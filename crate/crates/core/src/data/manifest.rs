//! `ldrf-manifest/1`: a JSON scene description whose paths are relative to
//! the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{LidarSweep, PinholeCamera, SE3Pose};
use crate::image_buf::Mask;

use super::formats::{read_depth, read_mask, read_png, read_points, write_depth, write_mask, write_png, write_points};
use super::{Dataset, Frame};

pub const MANIFEST_FORMAT: &str = "ldrf-manifest/1";
/// Largest rotation drift repaired on load.
pub const POSE_REPAIR_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    #[serde(default)]
    pub name: Option<String>,
    pub image: PathBuf,
    /// World-from-camera, row-major 4x4.
    pub pose: Vec<f64>,
    pub lidar: PathBuf,
    /// World-from-sensor, row-major 4x4; sweep points are world-frame without it.
    #[serde(default)]
    pub lidar_pose: Option<Vec<f64>>,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    /// Reference depth map (ray distance), when available.
    #[serde(default)]
    pub depth: Option<PathBuf>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub format: String,
    pub camera: PinholeCamera,
    pub frames: Vec<FrameEntry>,
}

/// Reads a row-major 4x4 rigid transform. Rotations within the pose
/// tolerance are projected back onto SO(3); reflections and larger
/// deviations are rejected.
pub fn parse_pose(m: &[f64], what: &str) -> Result<SE3Pose> {
    let arr: [f64; 16] = m.try_into().map_err(|_| Error::InvalidInput(format!("{what}: pose needs 16 values, got {}", m.len())))?;
    if arr[12..] != [0.0, 0.0, 0.0, 1.0] {
        return invalid(format!("{what}: last pose row must be 0 0 0 1"));
    }
    let raw = SE3Pose::from_row_major_unchecked(&arr);
    if raw.rotation.determinant() < 0.0 {
        return invalid(format!("{what}: pose rotation is a reflection (det < 0)"));
    }
    raw.validate(POSE_REPAIR_TOLERANCE).map_err(|e| Error::InvalidInput(format!("{what}: {e}")))?;
    let fixed = raw.orthonormalized();
    let dev = (fixed.rotation - raw.rotation).abs().max();
    if dev > 1e-9 {
        log::warn!("{what}: pose rotation re-orthonormalized (deviation {dev:e})");
    }
    Ok(fixed)
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile {
            what: "manifest".into(),
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::format(path, format!("format '{}' is not {MANIFEST_FORMAT}", m.format)));
    }
    m.camera.validate()?;
    let root = path.parent().unwrap_or(Path::new("."));
    m.frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then_with(|| a.image.cmp(&b.image)));
    let mut frames = Vec::with_capacity(m.frames.len());
    for (k, e) in m.frames.iter().enumerate() {
        let name = e.name.clone().unwrap_or_else(|| format!("frame {k} ({})", e.image.display()));
        let need = |p: &Path, what: &str| -> Result<PathBuf> {
            let full = root.join(p);
            if full.exists() {
                Ok(full)
            } else {
                Err(Error::MissingFile {
                    what: format!("{what} of {name}"),
                    path: full,
                })
            }
        };
        let image = read_png(&need(&e.image, "image")?)?;
        let w2c = parse_pose(&e.pose, &name)?.inverse();
        let (pts, rgb) = read_points(&need(&e.lidar, "lidar")?)?;
        let sensor_to_world = match &e.lidar_pose {
            Some(p) => parse_pose(p, &format!("{name} lidar"))?,
            None => SE3Pose::identity(),
        };
        let mut lidar = LidarSweep::new(pts, e.timestamp)?;
        lidar.rgb = rgb;
        let mask = match &e.mask {
            Some(p) => read_mask(&need(p, "mask")?)?,
            None => Mask::none(image.width, image.height),
        };
        let gt_depth = e.depth.as_ref().map(|p| need(p, "depth").and_then(|p| read_depth(&p))).transpose()?;
        frames.push(Frame {
            name,
            image,
            world_to_camera: w2c,
            mask,
            timestamp: e.timestamp,
            lidar,
            sensor_to_world,
            gt_depth,
        });
    }
    let data = Dataset { camera: m.camera, frames };
    data.validate()?;
    Ok(data)
}

/// Writes images, sweeps, masks and reference depths next to `manifest.json` in `dir`.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(data.frames.len());
    for f in &data.frames {
        let image = PathBuf::from(format!("images/{}.png", f.name));
        let lidar = PathBuf::from(format!("lidar/{}.bin", f.name));
        write_png(&dir.join(&image), &f.image)?;
        write_points(&dir.join(&lidar), &f.lidar.points, f.lidar.rgb.as_deref())?;
        let mask = if f.mask.count_included() < f.mask.excluded.len() {
            let p = PathBuf::from(format!("masks/{}.png", f.name));
            fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
            write_mask(&dir.join(&p), &f.mask)?;
            Some(p)
        } else {
            None
        };
        let depth = match &f.gt_depth {
            Some(d) => {
                let p = PathBuf::from(format!("depth/{}.bin", f.name));
                write_depth(&dir.join(&p), d)?;
                Some(p)
            }
            None => None,
        };
        entries.push(FrameEntry {
            name: Some(f.name.clone()),
            image,
            pose: f.world_to_camera.inverse().to_row_major().to_vec(),
            lidar,
            lidar_pose: Some(f.sensor_to_world.to_row_major().to_vec()),
            mask,
            depth,
            timestamp: f.timestamp,
        });
    }
    let m = SceneManifest {
        format: MANIFEST_FORMAT.into(),
        camera: data.camera,
        frames: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SceneConfig;

    fn tiny() -> Dataset {
        let mut s = SceneConfig::occluder();
        s.frames = 3;
        s.width = 16;
        s.height = 12;
        s.focal = 10.0;
        s.lidar.azimuth_steps = 36;
        s.lidar.elevation_steps = 4;
        s.generate().unwrap()
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny();
        let p = save_dataset(dir.path(), &d).unwrap();
        let r = load_manifest(&p).unwrap();
        assert_eq!(r.frames.len(), 3);
        for (a, b) in d.frames.iter().zip(&r.frames) {
            assert_eq!(a.gt_depth, b.gt_depth);
            assert!((a.world_to_camera.translation - b.world_to_camera.translation).norm() < 1e-9);
            assert_eq!(a.lidar.points.len(), b.lidar.points.len());
            assert!((a.image.get(3, 4)[0] - b.image.get(3, 4)[0]).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    fn edit(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
        let p = dir.join("manifest.json");
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        f(&mut v);
        fs::write(&p, v.to_string()).unwrap();
        p
    }

    #[test]
    fn missing_image_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        fs::remove_file(dir.path().join("images/frame_0001.png")).unwrap();
        let err = load_manifest(&dir.path().join("manifest.json")).unwrap_err();
        assert!(matches!(err, Error::MissingFile { .. }));
        assert!(err.to_string().contains("frame_0001"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn reflected_pose_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        let p = edit(dir.path(), |v| {
            let pose = &mut v["frames"][0]["pose"];
            for c in [0, 4, 8] {
                pose[c] = serde_json::json!(-pose[c].as_f64().unwrap());
            }
        });
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("reflection"), "{err}");
    }

    #[test]
    fn frames_are_sorted_and_small_drift_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        let p = edit(dir.path(), |v| {
            let fr = v["frames"].as_array_mut().unwrap();
            fr.reverse();
            let x = fr[0]["pose"][0].as_f64().unwrap();
            fr[0]["pose"][0] = serde_json::json!(x * (1.0 + 2e-5));
        });
        let d = load_manifest(&p).unwrap();
        assert!(d.frames.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        for f in &d.frames {
            f.world_to_camera.validate(1e-12).unwrap();
        }
    }

    #[test]
    fn malformed_json_and_wrong_format_fail() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Format { .. })));
        save_dataset(dir.path(), &tiny()).unwrap();
        let p = edit(dir.path(), |v| v["format"] = serde_json::json!("ldrf-manifest/9"));
        assert!(load_manifest(&p).is_err());
    }
}
