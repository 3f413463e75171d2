//! Binary depth maps (`LDRF-D1`), point clouds (`LDRF-P1`) and PNG images.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage as PngRgb};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image_buf::{Mask, RgbImage};
use crate::synthesis::SparseDepthMap;

pub const DEPTH_MAGIC: &[u8; 7] = b"LDRF-D1";
pub const POINTS_MAGIC: &[u8; 7] = b"LDRF-P1";
const POINTS_HAS_RGB: u32 = 1;

fn read_bytes(path: &Path, what: &str) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            what: what.to_string(),
            path: path.to_path_buf(),
        });
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn write_depth(path: &Path, map: &SparseDepthMap) -> Result<()> {
    let mut buf = Vec::with_capacity(15 + 4 * map.depth.len());
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&(map.width as u32).to_le_bytes());
    buf.extend_from_slice(&(map.height as u32).to_le_bytes());
    for d in &map.depth {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    write_bytes(path, &buf)
}

pub fn read_depth(path: &Path) -> Result<SparseDepthMap> {
    let buf = read_bytes(path, "depth map")?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(7)? != DEPTH_MAGIC {
        return Err(Error::format(path, "not an LDRF-D1 depth map"));
    }
    let (w, h) = (c.u32()? as usize, c.u32()? as usize);
    let depth = c.f32s(w * h)?;
    c.finish()?;
    SparseDepthMap::from_depth(w, h, depth).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_points(path: &Path, points: &[Vec3], rgb: Option<&[[f32; 3]]>) -> Result<()> {
    let mut buf = Vec::with_capacity(15 + 24 * points.len());
    buf.extend_from_slice(POINTS_MAGIC);
    buf.extend_from_slice(&(points.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(if rgb.is_some() { POINTS_HAS_RGB } else { 0 }).to_le_bytes());
    for p in points {
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(rgb) = rgb {
        if rgb.len() != points.len() {
            return Err(Error::InvalidInput("point colors differ in length from points".into()));
        }
        for c in rgb {
            for v in c {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    write_bytes(path, &buf)
}

#[allow(clippy::type_complexity)]
pub fn read_points(path: &Path) -> Result<(Vec<Vec3>, Option<Vec<[f32; 3]>>)> {
    let buf = read_bytes(path, "point cloud")?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(7)? != POINTS_MAGIC {
        return Err(Error::format(path, "not an LDRF-P1 point cloud"));
    }
    let n = c.u32()? as usize;
    let flags = c.u32()?;
    if flags & !POINTS_HAS_RGB != 0 {
        return Err(Error::format(path, format!("unknown flags {flags:#x}")));
    }
    let xyz = c.f32s(3 * n)?;
    let pts: Vec<Vec3> = xyz.chunks_exact(3).map(|v| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)).collect();
    if pts.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::format(path, "non-finite coordinates"));
    }
    let rgb = if flags & POINTS_HAS_RGB != 0 {
        Some(c.f32s(3 * n)?.chunks_exact(3).map(|v| [v[0], v[1], v[2]]).collect())
    } else {
        None
    };
    c.finish()?;
    Ok((pts, rgb))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut out = PngRgb::new(img.width as u32, img.height as u32);
    for (i, c) in img.data.iter().enumerate() {
        out.put_pixel((i % img.width) as u32, (i / img.width) as u32, Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    out.save(path)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::MissingFile {
            what: "image".into(),
            path: path.to_path_buf(),
        });
    }
    let img = ImageReader::open(path).map_err(|e| Error::io(path, e))?.decode()?.to_rgb8();
    let data = img.pixels().map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]).collect();
    RgbImage::from_data(img.width() as usize, img.height() as usize, data)
}

/// Single-channel mask, 255 = excluded.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = GrayImage::new(mask.width as u32, mask.height as u32);
    for (i, e) in mask.excluded.iter().enumerate() {
        out.put_pixel((i % mask.width) as u32, (i / mask.width) as u32, Luma([if *e { 255 } else { 0 }]));
    }
    out.save(path)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    if !path.exists() {
        return Err(Error::MissingFile {
            what: "mask".into(),
            path: path.to_path_buf(),
        });
    }
    let img = ImageReader::open(path).map_err(|e| Error::io(path, e))?.decode()?.to_luma8();
    Ok(Mask {
        width: img.width() as usize,
        height: img.height() as usize,
        excluded: img.pixels().map(|p| p[0] >= 128).collect(),
    })
}
