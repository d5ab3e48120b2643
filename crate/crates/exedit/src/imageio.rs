//! Image files to and from `(3, H, W)` tensors in `[-1, 1]`.

use std::path::Path;

use exedit_core::Tensor;
use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Decodes an image, center-crops it to a square and resizes to `resolution`.
pub fn load_image(path: &Path, resolution: usize) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(rgb_to_tensor(&square_resize(img.to_rgb8(), resolution as u32)))
}

fn square_resize(img: RgbImage, side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    let cropped = if w == h { img } else { image::imageops::crop_imm(&img, (w - s) / 2, (h - s) / 2, s, s).to_image() };
    if s == side {
        cropped
    } else {
        image::imageops::resize(&cropped, side, side, FilterType::Triangle)
    }
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 127.5 - 1.0
    })
}

/// Quantizes `[-1, 1]` to 8-bit, clamping out-of-range values.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> Result<RgbImage> {
    if t.shape().len() != 3 || t.dim(0) != 3 {
        return Err(exedit_core::Error::Validation(format!("expected a (3, H, W) image, got {:?}", t.shape())).into());
    }
    let (h, w) = (t.dim(1), t.dim(2));
    let mut raw = vec![0u8; h * w * 3];
    for (i, v) in t.data().iter().enumerate() {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image"))
}

/// Writes a PNG; other extensions are refused so outputs stay lossless.
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !is_png {
        return Err(Error::Usage(format!("{}: outputs are written as lossless .png files", path.display())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, ImageFormat::Png).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

pub fn save_image(path: &Path, t: &Tensor<f32>) -> Result<()> {
    save_rgb(path, &tensor_to_rgb(t)?)
}
