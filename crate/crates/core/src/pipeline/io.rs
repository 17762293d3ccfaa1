use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::raster::Image;

const DEPTH_MAGIC: &[u8; 4] = b"CITD";

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1-channel image as 8-bit grayscale or a 3-channel one as 8-bit RGB.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size")),
        c => return Err(Error::InvalidInput(format!("cannot write a {c}-channel image as PNG"))),
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
}

/// Reads a PNG as values in `[0, 1]`, keeping one channel for grayscale files.
pub fn load_png(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let dynamic = image::open(path).map_err(|e| Error::format("png", format!("{}: {e}", path.display())))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let (channels, raw) = match dynamic {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    Image::from_vec(w, h, channels, raw.into_iter().map(|b| b as f64 / 255.0).collect())
}

/// Normals are stored as `(n + 1) / 2`.
pub fn save_normal_png(path: &Path, normal: &Image) -> Result<()> {
    save_png(path, &normal.map(|v| 0.5 * (v + 1.0)))
}

/// Inverse of [`save_normal_png`]; pixels outside `mask` decode to zero.
pub fn load_normal_png(path: &Path, mask: &Image) -> Result<Image> {
    let img = load_png(path)?;
    img.check_dims(mask.width(), mask.height(), "normal image")?;
    if img.channels() != 3 {
        return Err(Error::format("png", format!("{}: normal image needs 3 channels", path.display())));
    }
    let mut out = img.map(|v| 2.0 * v - 1.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y, 0) <= 0.5 {
                out.pixel_mut(x, y).fill(0.0);
            }
        }
    }
    Ok(out)
}

pub fn depth_to_bytes(depth: &Image) -> Result<Vec<u8>> {
    if depth.channels() != 1 {
        return Err(Error::dimension("depth image channels", 1, depth.channels()));
    }
    let mut out = Vec::with_capacity(16 + 4 * depth.pixel_count());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    for &v in depth.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn depth_from_bytes(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::format("depth", "missing CITD header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    let n = w.checked_mul(h).ok_or_else(|| Error::format("depth", "image size overflows"))?;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::format(
            "depth",
            format!("{w}x{h} image needs {} bytes, file has {}", 16 + 4 * n, bytes.len()),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Image::from_vec(w, h, 1, data)
}

pub fn save_depth(path: &Path, depth: &Image) -> Result<()> {
    fs::write(path, depth_to_bytes(depth)?).map_err(|e| Error::io(path, e))
}

pub fn load_depth(path: &Path) -> Result<Image> {
    depth_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
