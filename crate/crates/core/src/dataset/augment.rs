use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use crate::error::{Error, Result};

/// Random flips plus zoom-in (scale up, then center-crop back to size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            p_hflip: 0.5,
            p_vflip: 0.5,
            zoom_min: 1.0,
            zoom_max: 1.1,
        }
    }
}

impl AugmentationPolicy {
    /// Policy whose output always equals its input.
    pub fn identity() -> Self {
        Self {
            p_hflip: 0.0,
            p_vflip: 0.0,
            zoom_min: 1.0,
            zoom_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_hflip", self.p_hflip), ("p_vflip", self.p_vflip)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.zoom_min >= 1.0 && self.zoom_min <= self.zoom_max && self.zoom_max.is_finite()) {
            return Err(Error::Config(format!(
                "zoom range [{}, {}] must satisfy 1 <= zoom_min <= zoom_max",
                self.zoom_min, self.zoom_max
            )));
        }
        Ok(())
    }

    /// Draws one transformation. Always consumes exactly three values from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentDraw {
        let h: f64 = rng.random();
        let v: f64 = rng.random();
        let u: f64 = rng.random();
        AugmentDraw {
            hflip: h < self.p_hflip,
            vflip: v < self.p_vflip,
            zoom: self.zoom_min + u * (self.zoom_max - self.zoom_min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    pub zoom: f64,
}

impl AugmentDraw {
    pub fn apply(&self, img: &ImageTensor) -> ImageTensor {
        let mut out = match (self.hflip, self.vflip) {
            (false, false) => img.clone(),
            (true, false) => img.hflip(),
            (false, true) => img.vflip(),
            (true, true) => img.hflip().vflip(),
        };
        let (h, w) = (out.height(), out.width());
        let zh = zoomed_len(h, self.zoom);
        let zw = zoomed_len(w, self.zoom);
        if zh != h || zw != w {
            out = out.resized(zh, zw).center_crop(h, w);
        }
        out
    }
}

/// Side length of the intermediate upscaled image, `round(len * zoom)`.
pub fn zoomed_len(len: usize, zoom: f64) -> usize {
    ((len as f64 * zoom).round() as usize).max(len)
}

pub fn augment<R: Rng + ?Sized>(
    img: &ImageTensor,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> ImageTensor {
    policy.sample(rng).apply(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use ndarray::Array3;
    use proptest::prelude::*;

    fn ramp(c: usize, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((c, h, w), |(k, y, x)| {
            (k * 1000 + y * 37 + x * 3) as f64 / 5000.0
        }))
    }

    /// Reference bilinear sampler written pointwise from the textbook
    /// definition: output pixel (oy, ox) samples the source at
    /// ((oy + 0.5) * in/out - 0.5), clamped to the valid range.
    fn reference_zoom(src: &Array3<f64>, zoom: f64, out_side: usize) -> Array3<f64> {
        let (c, n, _) = src.dim();
        let big = (n as f64 * zoom).round() as usize;
        let off = (big - out_side) / 2;
        let sample = |plane: usize, y: f64, x: f64| -> f64 {
            let y = y.clamp(0.0, (n - 1) as f64);
            let x = x.clamp(0.0, (n - 1) as f64);
            let (y0, x0) = (y.floor(), x.floor());
            let (dy, dx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as usize, x0 as usize);
            let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
            let p = |yy: usize, xx: usize| src[[plane, yy, xx]];
            (1.0 - dy) * ((1.0 - dx) * p(y0, x0) + dx * p(y0, x1))
                + dy * ((1.0 - dx) * p(y1, x0) + dx * p(y1, x1))
        };
        let ratio = n as f64 / big as f64;
        Array3::from_shape_fn((c, out_side, out_side), |(k, oy, ox)| {
            let by = (oy + off) as f64;
            let bx = (ox + off) as f64;
            sample(k, (by + 0.5) * ratio - 0.5, (bx + 0.5) * ratio - 0.5)
        })
    }

    #[test]
    fn forced_hflip_mirrors_exactly() {
        let img = ramp(3, 5, 6);
        let policy = AugmentationPolicy {
            p_hflip: 1.0,
            p_vflip: 0.0,
            zoom_min: 1.0,
            zoom_max: 1.0,
        };
        let mut rng = stream_rng(1, Stream::Augment, &[]);
        let out = augment(&img, &policy, &mut rng);
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(out.data[[1, y, x]], img.data[[1, y, 5 - x]]);
            }
        }
        let twice = augment(&out, &policy, &mut rng);
        assert_eq!(twice, img);
    }

    #[test]
    fn zoom_intermediate_size() {
        assert_eq!(zoomed_len(224, 1.1), 246);
        assert_eq!(zoomed_len(224, 1.0), 224);
        assert_eq!(zoomed_len(4, 1.5), 6);
    }

    #[test]
    fn zoom_matches_reference_sampler_on_toy_image() {
        let img = ramp(2, 4, 4);
        for zoom in [1.25, 1.5, 1.9] {
            let draw = AugmentDraw {
                hflip: false,
                vflip: false,
                zoom,
            };
            let out = draw.apply(&img);
            let expect = reference_zoom(&img.data, zoom, 4);
            assert_eq!(out.data.dim(), (2, 4, 4));
            for (a, b) in out.data.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12, "zoom {zoom}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn full_size_zoom_matches_reference() {
        let img = ramp(3, 224, 224);
        let out = AugmentDraw {
            hflip: false,
            vflip: false,
            zoom: 1.1,
        }
        .apply(&img);
        let expect = reference_zoom(&img.data, 1.1, 224);
        assert_eq!(out.data.dim(), (3, 224, 224));
        let max_err = out
            .data
            .iter()
            .zip(expect.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12);
    }

    #[test]
    fn invalid_policies() {
        let mut p = AugmentationPolicy::default();
        assert!(p.validate().is_ok());
        p.p_hflip = 1.5;
        assert!(p.validate().is_err());
        let p = AugmentationPolicy {
            zoom_min: 0.9,
            ..AugmentationPolicy::default()
        };
        assert!(p.validate().is_err());
        let p = AugmentationPolicy {
            zoom_min: 1.2,
            zoom_max: 1.1,
            ..AugmentationPolicy::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn identity_policy_is_a_no_op() {
        let img = ramp(3, 16, 16);
        let mut rng = stream_rng(3, Stream::Tta, &[]);
        for _ in 0..5 {
            assert_eq!(augment(&img, &AugmentationPolicy::identity(), &mut rng), img);
        }
    }

    proptest! {
        #[test]
        fn shape_preserved_and_zoom_confined(seed in any::<u64>()) {
            let policy = AugmentationPolicy::default();
            let mut rng = stream_rng(seed, Stream::Augment, &[]);
            let draw = policy.sample(&mut rng);
            prop_assert!((1.0..=1.1).contains(&draw.zoom));
            let img = ramp(3, 32, 32);
            let out = draw.apply(&img);
            prop_assert_eq!(out.data.dim(), (3, 32, 32));
        }
    }
}
