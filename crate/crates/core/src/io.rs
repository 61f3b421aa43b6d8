//! File formats: PGM/PNG images, raw f32 volumes with a JSON sidecar,
//! raw and PGM field dumps, and JSON documents.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Field2D, Image2D, Image3D};

/// Reads a grayscale PGM (P2/P5, 8 or 16 bit) or PNG into `[0, 1]`.
/// Color inputs are reduced with luma = 0.299 R + 0.587 G + 0.114 B.
pub fn read_image(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes)
        .or_else(|_| ImageFormat::from_path(path))
        .map_err(|e| Error::format(path, e.to_string()))?;
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64)
            .collect(),
    };
    Image2D::new(w, h, data).map_err(|e| Error::format(path, e.to_string()))
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn gray16(img: &Image2D) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    ImageBuffer::from_vec(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|&v| to_u16(v)).collect(),
    )
    .expect("buffer matches dimensions")
}

/// Writes a 16-bit grayscale image; the format follows the extension
/// (`.pgm` binary P5, `.png` otherwise). Values are clamped to `[0, 1]`.
pub fn write_image(path: &Path, img: &Image2D) -> Result<()> {
    let buf = gray16(img);
    let format = if is_pgm(path) {
        ImageFormat::Pnm
    } else {
        ImageFormat::Png
    };
    buf.save_with_format(path, format)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes an 8-bit binary PGM of values already in `0..=255`.
pub fn write_pgm8(path: &Path, width: usize, height: usize, data: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_vec(width as u32, height as u32, data).expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Pnm)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes an 8-bit RGB PNG from `[0, 1]` triples.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<()> {
    let raw: Vec<u8> = rgb
        .iter()
        .flat_map(|p| p.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_vec(width as u32, height as u32, raw).expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn is_pgm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm") | Some("pnm")
    )
}

/// Writes values as raw 32-bit little-endian floats.
pub fn write_raw_f32(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads raw 32-bit little-endian floats.
pub fn read_raw_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, "length is not a multiple of 4 bytes"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Volume sidecar `{"nx":..,"ny":..,"nz":..}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

/// Sidecar path of a raw volume: same stem, `.json` extension.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn read_volume(path: &Path) -> Result<Image3D> {
    let sidecar = sidecar_path(path);
    if !sidecar.exists() {
        return Err(Error::io(
            &sidecar,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing volume sidecar {} for {}", sidecar.display(), path.display()),
            ),
        ));
    }
    let dims: VolumeDims = read_json(&sidecar)?;
    let values = read_raw_f32(path)?;
    if values.len() != dims.nx * dims.ny * dims.nz {
        return Err(Error::format(
            path,
            format!(
                "{} values do not match sidecar dims {}x{}x{}",
                values.len(),
                dims.nx,
                dims.ny,
                dims.nz
            ),
        ));
    }
    Image3D::new(dims.nx, dims.ny, dims.nz, values).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes raw f32 values plus the dimension sidecar.
pub fn write_volume(path: &Path, dims: VolumeDims, values: &[f64]) -> Result<()> {
    write_raw_f32(path, values)?;
    write_json(&sidecar_path(path), &dims)
}

/// Value range recorded next to a remapped field PGM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRange {
    pub min: f64,
    pub max: f64,
}

/// Affinely remaps the valid range of `field` onto `0..=65535` and writes a
/// 16-bit PGM; invalid pixels map to 0. Returns the range used.
pub fn write_field_pgm(path: &Path, field: &Field2D) -> Result<FieldRange> {
    let (min, max) = field.valid_range().unwrap_or((0.0, 0.0));
    let span = max - min;
    let data: Vec<f64> = field
        .values()
        .iter()
        .zip(field.valid())
        .map(|(&v, &ok)| match (ok, span > 0.0) {
            (true, true) => (v - min) / span,
            _ => 0.0,
        })
        .collect();
    let img = Image2D::new(field.width(), field.height(), data)?;
    write_image(path, &img)?;
    Ok(FieldRange { min, max })
}

/// Binary preview: white where `|v| >= threshold * max|v|` over valid pixels.
pub fn write_threshold_preview(path: &Path, field: &Field2D, threshold: f64) -> Result<()> {
    let peak = field.valid_values().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = threshold * peak;
    let data = field
        .values()
        .iter()
        .zip(field.valid())
        .map(|(&v, &ok)| if ok && peak > 0.0 && v.abs() >= cut { 255 } else { 0 })
        .collect();
    write_pgm8(path, field.width(), field.height(), data)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
