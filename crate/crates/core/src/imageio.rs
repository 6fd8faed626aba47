//! 8-bit PNG encoding of intensity grids.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::fsio;
use crate::model::ImageInput;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

/// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
pub fn quantize(image: &ImageInput) -> ImageInput {
    let q = |v: f64| to_u8(v) as f64 / 255.0;
    match image {
        ImageInput::Gray(g) => ImageInput::Gray(g.mapv(q)),
        ImageInput::Rgb(c) => ImageInput::Rgb(c.mapv(q)),
    }
}

pub fn encode_png(image: &ImageInput) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    match image {
        ImageInput::Gray(g) => {
            let (h, w) = g.dim();
            let img = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([to_u8(g[(y as usize, x as usize)])]));
            img.write_to(&mut out, ImageFormat::Png).expect("in-memory png encode");
        }
        ImageInput::Rgb(c) => {
            let (h, w, _) = c.dim();
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (y, x) = (y as usize, x as usize);
                image::Rgb([to_u8(c[(y, x, 0)]), to_u8(c[(y, x, 1)]), to_u8(c[(y, x, 2)])])
            });
            img.write_to(&mut out, ImageFormat::Png).expect("in-memory png encode");
        }
    }
    out.into_inner()
}

pub fn save_png(path: &Path, image: &ImageInput) -> Result<()> {
    fsio::write_atomic(path, &encode_png(image))
}

/// Loads a PNG as grayscale or RGB depending on its colour type.
pub fn load_png(path: &Path) -> Result<ImageInput> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| image_err(path, e))
}

pub fn decode_png(bytes: &[u8]) -> std::result::Result<ImageInput, image::ImageError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(match img.color().channel_count() {
        1 | 2 => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            ImageInput::Gray(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                g.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            }))
        }
        _ => {
            let c = img.to_rgb8();
            let (w, h) = c.dimensions();
            ImageInput::Rgb(Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, ch)| {
                c.get_pixel(x as u32, y as u32).0[ch] as f64 / 255.0
            }))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_equals_quantization() {
        let g = ImageInput::Gray(Array2::from_shape_fn((8, 12), |(y, x)| (y * 12 + x) as f64 / 96.0));
        let back = decode_png(&encode_png(&g)).unwrap();
        assert_eq!(back, quantize(&g));
        let c = ImageInput::Rgb(Array3::from_shape_fn((4, 4, 3), |(y, x, ch)| (y + x + ch) as f64 / 9.0));
        assert_eq!(decode_png(&encode_png(&c)).unwrap(), quantize(&c));
    }
}
