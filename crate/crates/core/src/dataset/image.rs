use std::path::Path;

use image::ColorType;
use ndarray::{s, Array3, Axis};

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 224;
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Channel-major (C, H, W) image with values either in [0, 1] or normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
    pub normalized: bool,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Self {
        Self {
            data,
            normalized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn hflip(&self) -> Self {
        Self {
            data: self.data.slice(s![.., .., ..;-1]).to_owned(),
            normalized: self.normalized,
        }
    }

    pub fn vflip(&self) -> Self {
        Self {
            data: self.data.slice(s![.., ..;-1, ..]).to_owned(),
            normalized: self.normalized,
        }
    }

    /// Bilinear resize to `height` x `width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            data: resize_bilinear(&self.data, height, width),
            normalized: self.normalized,
        }
    }

    pub fn center_crop(&self, height: usize, width: usize) -> Self {
        let (_, h, w) = self.data.dim();
        assert!(height <= h && width <= w, "crop larger than image");
        let top = (h - height) / 2;
        let left = (w - width) / 2;
        Self {
            data: self
                .data
                .slice(s![.., top..top + height, left..left + width])
                .to_owned(),
            normalized: self.normalized,
        }
    }
}

/// Source index pair and weight of the second index for each output coordinate.
/// Half-pixel centers; out-of-range source coordinates clamp to the edge.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(src: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, in_h, in_w) = src.dim();
    if in_h == out_h && in_w == out_w {
        return src.clone();
    }
    let ys = axis_taps(in_h, out_h);
    let xs = axis_taps(in_w, out_w);
    let mut out = Array3::<f64>::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = src.index_axis(Axis(0), ch);
        let mut dst = out.index_axis_mut(Axis(0), ch);
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let top = plane[[y0, x0]] * (1.0 - wx) + plane[[y0, x1]] * wx;
                let bottom = plane[[y1, x0]] * (1.0 - wx) + plane[[y1, x1]] * wx;
                dst[[oy, ox]] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    out
}

/// Decodes an image file, replicating grayscale to three channels, and
/// resizes it to `side` x `side` with values scaled to [0, 1].
pub fn load_and_resize(path: &Path, side: usize) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::ImageLoad {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if matches!(
        img.color(),
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16
    ) {
        log::warn!(
            "{} is grayscale; replicating to 3 channels",
            path.display()
        );
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = Array3::<f64>::zeros((3, h, w));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[[c, y as usize, x as usize]] = f64::from(px[c]) / 255.0;
        }
    }
    Ok(ImageTensor::new(resize_bilinear(&data, side, side)))
}

pub fn normalize(img: &ImageTensor, mean: &[f64; 3], std: &[f64; 3]) -> Result<ImageTensor> {
    if img.normalized {
        return Err(Error::Contract("image is already normalized".into()));
    }
    if img.channels() != 3 {
        return Err(Error::Contract(format!(
            "expected 3 channels, found {}",
            img.channels()
        )));
    }
    if std.contains(&0.0) {
        return Err(Error::Contract("zero standard deviation".into()));
    }
    let mut data = img.data.clone();
    for (c, mut plane) in data.axis_iter_mut(Axis(0)).enumerate() {
        plane.mapv_inplace(|v| (v - mean[c]) / std[c]);
    }
    Ok(ImageTensor {
        data,
        normalized: true,
    })
}

pub fn denormalize(img: &ImageTensor, mean: &[f64; 3], std: &[f64; 3]) -> Result<ImageTensor> {
    if !img.normalized {
        return Err(Error::Contract("image is not normalized".into()));
    }
    let mut data = img.data.clone();
    for (c, mut plane) in data.axis_iter_mut(Axis(0)).enumerate() {
        plane.mapv_inplace(|v| v * std[c] + mean[c]);
    }
    Ok(ImageTensor::new(data))
}

pub fn imagenet_normalize(img: &ImageTensor) -> Result<ImageTensor> {
    normalize(img, &IMAGENET_MEAN, &IMAGENET_STD)
}
