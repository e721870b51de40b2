//! Image preprocessing for the exported image encoder.

use std::fmt;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use tract_onnx::prelude::{tract_ndarray, Tensor};

/// Per-channel RGB mean and standard deviation used in CLIP training.
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
#[allow(clippy::excessive_precision)]
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PreprocessPolicy {
    /// Feed the image at its original resolution.
    Native,
    /// Bicubic resize of the shorter side to `S`, then center-crop `S×S`.
    Resize(u32),
}

impl fmt::Display for PreprocessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessPolicy::Native => write!(f, "native"),
            PreprocessPolicy::Resize(s) => write!(f, "resize:{s}"),
        }
    }
}

impl FromStr for PreprocessPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "native" {
            return Ok(PreprocessPolicy::Native);
        }
        let size = s
            .strip_prefix("resize:")
            .ok_or_else(|| format!("expected `native` or `resize:<S>`, got {s:?}"))?;
        match size.parse::<u32>() {
            Ok(n) if n > 0 => Ok(PreprocessPolicy::Resize(n)),
            _ => Err(format!("invalid resize target {size:?}")),
        }
    }
}

/// Shorter side to `size` (aspect kept), then a centered `size×size` crop.
pub fn resize_and_crop(img: &RgbImage, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let (nw, nh) = if w <= h {
        let nh = ((f64::from(h) * f64::from(size) / f64::from(w)).round() as u32).max(size);
        (size, nh)
    } else {
        let nw = ((f64::from(w) * f64::from(size) / f64::from(h)).round() as u32).max(size);
        (nw, size)
    };
    let resized = if (nw, nh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, nw, nh, FilterType::CatmullRom)
    };
    let left = ((f64::from(nw - size)) / 2.0).round() as u32;
    let top = ((f64::from(nh - size)) / 2.0).round() as u32;
    imageops::crop_imm(&resized, left, top, size, size).to_image()
}

/// Converts to RGB, applies the policy and returns a `1×3×H×W` tensor
/// scaled to `[0, 1]` and normalized with [`CLIP_MEAN`] / [`CLIP_STD`].
pub fn preprocess(img: &DynamicImage, policy: PreprocessPolicy) -> Tensor {
    let rgb = img.to_rgb8();
    let rgb = match policy {
        PreprocessPolicy::Native => rgb,
        PreprocessPolicy::Resize(size) => resize_and_crop(&rgb, size),
    };
    let (w, h) = rgb.dimensions();
    let array = tract_ndarray::Array4::from_shape_fn(
        (1, 3, h as usize, w as usize),
        |(_, c, y, x)| {
            let v = f32::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0;
            (v - CLIP_MEAN[c]) / CLIP_STD[c]
        },
    );
    array.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn policy_parsing() {
        assert_eq!("native".parse::<PreprocessPolicy>().unwrap(), PreprocessPolicy::Native);
        assert_eq!("resize:224".parse::<PreprocessPolicy>().unwrap(), PreprocessPolicy::Resize(224));
        assert!("resize:0".parse::<PreprocessPolicy>().is_err());
        assert!("resize:".parse::<PreprocessPolicy>().is_err());
        assert!("crop".parse::<PreprocessPolicy>().is_err());
        assert_eq!(PreprocessPolicy::Resize(336).to_string(), "resize:336");
    }

    #[test]
    fn resize_keeps_aspect_then_crops_center() {
        // left half black, right half white, 40x20 landscape
        let img = RgbImage::from_fn(40, 20, |x, _| if x < 20 { Rgb([0; 3]) } else { Rgb([255; 3]) });
        let out = resize_and_crop(&img, 10);
        assert_eq!(out.dimensions(), (10, 10));
        // 40x20 -> 20x10, crop columns 5..15: black then white
        assert!(out.get_pixel(0, 5)[0] < 30);
        assert!(out.get_pixel(9, 5)[0] > 225);

        let tall = RgbImage::new(7, 30);
        assert_eq!(resize_and_crop(&tall, 5).dimensions(), (5, 5));
    }

    #[test]
    fn native_tensor_layout_and_normalization() {
        let img = RgbImage::from_fn(3, 2, |x, y| Rgb([(x * 50) as u8, (y * 100) as u8, 255]));
        let t = preprocess(&DynamicImage::ImageRgb8(img), PreprocessPolicy::Native);
        assert_eq!(t.shape(), &[1, 3, 2, 3]);
        let view = t.to_array_view::<f32>().unwrap();
        let expect = |v: f32, c: usize| (v / 255.0 - CLIP_MEAN[c]) / CLIP_STD[c];
        assert!((view[[0, 0, 1, 2]] - expect(100.0, 0)).abs() < 1e-6);
        assert!((view[[0, 1, 1, 0]] - expect(100.0, 1)).abs() < 1e-6);
        assert!((view[[0, 2, 0, 0]] - expect(255.0, 2)).abs() < 1e-6);
    }

    #[test]
    fn grayscale_is_expanded_to_rgb() {
        let gray = image::GrayImage::from_pixel(4, 4, image::Luma([128]));
        let t = preprocess(&DynamicImage::ImageLuma8(gray), PreprocessPolicy::Resize(2));
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
    }
}
