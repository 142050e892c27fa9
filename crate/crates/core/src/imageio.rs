//! Reading images as luminance planes and writing 8-bit grayscale PNGs.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Real;

/// Identifier of the RGB→luminance transform recorded in model headers.
pub const LUMINANCE_TRANSFORM: &str = "bt601";

/// ITU-R BT.601 luma weights.
const BT601: [f32; 3] = [0.299, 0.587, 0.114];

fn to_luminance<T: Real>(img: DynamicImage) -> Result<Tensor<T>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = match img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| T::from_f64_lossy(p.0[0] as f64 / 255.0)).collect(),
        DynamicImage::ImageLuma16(g) => g.pixels().map(|p| T::from_f64_lossy(p.0[0] as f64 / 65535.0)).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| T::from_f64_lossy(p.0[0] as f64 / 255.0)).collect(),
        DynamicImage::ImageLumaA16(g) => g.pixels().map(|p| T::from_f64_lossy(p.0[0] as f64 / 65535.0)).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| {
                let y = BT601[0] * p.0[0] + BT601[1] * p.0[1] + BT601[2] * p.0[2];
                T::from_f64_lossy(y.clamp(0.0, 1.0) as f64)
            })
            .collect(),
    };
    Tensor::new([h, w], data)
}

/// Loads any supported image as a `[H, W]` luminance plane in [0, 1].
pub fn load_luminance<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    to_luminance(img)
}

/// Writes a `[H, W]` plane in [0, 1] as an 8-bit grayscale PNG.
pub fn save_gray_png<T: Real>(path: impl AsRef<Path>, plane: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = plane.hw()?;
    let mut out = GrayImage::new(w as u32, h as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        let v = (plane.data()[i].to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8;
        *px = Luma([v]);
    }
    out.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let plane = Tensor::<f32>::from_fn([5, 7], |i| (i * 7 % 256) as f32 / 255.0);
        save_gray_png(&p, &plane).unwrap();
        let back: Tensor<f32> = load_luminance(&p).unwrap();
        assert_eq!(back, plane);
    }

    #[test]
    fn rgb_uses_bt601_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let img = image::RgbImage::from_pixel(2, 1, image::Rgb([255, 0, 0]));
        img.save(&p).unwrap();
        let y: Tensor<f64> = load_luminance(&p).unwrap();
        assert!((y.data()[0] - 0.299).abs() < 1e-6);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_luminance::<f32>("/nonexistent/dir/img.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/img.png"));
    }
}
