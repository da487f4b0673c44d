//! PNG conversion; pixel values in `[-1, 1]` map linearly onto `[0, 255]`.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn to_rgb(img: &Tensor) -> Result<RgbImage> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("to_rgb", &[s, &[3, 0, 0]]));
    }
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| {
                let v = d[c * h * w + y * w + x].clamp(-1.0, 1.0);
                ((v + 1.0) * 127.5).round() as u8
            });
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(out)
}

pub fn from_rgb(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut d = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            d[c * h * w + y as usize * w + x as usize] = f64::from(p.0[c]) / 127.5 - 1.0;
        }
    }
    Tensor::new([3, h, w], d).expect("shape")
}

pub fn png_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    to_rgb(img)?.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, png_bytes(img)?)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(from_rgb(&img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_on_grid_values() {
        let d: Vec<f64> = (0..12).map(|i| f64::from(i * 20) / 127.5 - 1.0).collect();
        let t = Tensor::new([3, 2, 2], d).unwrap();
        let back = from_rgb(&to_rgb(&t).unwrap());
        assert!(back.max_abs_diff(&t) < 1e-12);
    }
}
