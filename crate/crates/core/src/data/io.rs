use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};

use super::Image;
use crate::error::{Error, Result};

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Reads an 8-bit PNG; grayscale files give one channel, everything else three.
pub fn load_png(path: &Path) -> Result<Image> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let dynamic = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(path, e))?;
    if dynamic.color().has_color() {
        let rgb = dynamic.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Image::new(h as usize, w as usize, 3, data)
    } else {
        let gray = dynamic.to_luma8();
        let (w, h) = gray.dimensions();
        let data = gray.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Image::new(h as usize, w as usize, 1, data)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG with round-to-nearest quantization.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let (h, w, c) = img.dims();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let (w, h) = (w as u32, h as u32);
    let result = match c {
        1 => GrayImage::from_raw(w, h, bytes)
            .expect("buffer sized from dims")
            .save_with_format(path, image::ImageFormat::Png),
        3 => RgbImage::from_raw(w, h, bytes)
            .expect("buffer sized from dims")
            .save_with_format(path, image::ImageFormat::Png),
        _ => return Err(Error::Param(format!("cannot save {c}-channel image as PNG"))),
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => decode_err(path, other),
    })
}

/// `*.png` files in `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
