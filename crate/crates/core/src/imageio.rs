//! 8-bit PNG/JPEG file I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape, Tensor3};

/// Decodes any supported file into an RGB tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io_at(path, e))?
        .with_guessed_format()?
        .decode()?;
    from_dynamic(&img)
}

pub fn from_dynamic(img: &DynamicImage) -> Result<ImageTensor> {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    ImageTensor::new(Tensor3::from_fn(Shape::new(3, h, w), |c, y, x| {
        f64::from(raw[(y * w + x) * 3 + c]) / 255.0
    }))
}

fn to_byte(v: f64) -> u8 {
    (255.0 * v).round().clamp(0.0, 255.0) as u8
}

/// Writes `round(255 x)` samples as an 8-bit RGB or grey PNG.
pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let s = img.shape();
    let t = img.tensor();
    let (w, h) = (s.width as u32, s.height as u32);
    match s.channels {
        3 => {
            let mut buf = Vec::with_capacity(s.len());
            for y in 0..s.height {
                for x in 0..s.width {
                    for c in 0..3 {
                        buf.push(to_byte(t.get(c, y, x)));
                    }
                }
            }
            RgbImage::from_raw(w, h, buf)
                .expect("buffer sized to image")
                .save_with_format(path, image::ImageFormat::Png)?;
        }
        1 => {
            let buf = t.data().iter().map(|&v| to_byte(v)).collect();
            GrayImage::from_raw(w, h, buf)
                .expect("buffer sized to image")
                .save_with_format(path, image::ImageFormat::Png)?;
        }
        c => return Err(Error::invalid(format!("cannot write {c}-channel image"))),
    }
    Ok(())
}

/// The image as it would read back from an 8-bit file.
pub fn quantize_8bit(img: &ImageTensor) -> ImageTensor {
    ImageTensor::new(img.tensor().map(|v| f64::from(to_byte(v)) / 255.0))
        .expect("quantized values stay in range")
}
