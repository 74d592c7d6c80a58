//! Geometric augmentation applied identically to every image of a sample.

use super::LightFieldSample;
use crate::error::Result;
use crate::tensor::{kernels, Scalar, SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

/// Crop (resized back to full size), then horizontal flip, then `rot90`
/// counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct AugmentParams {
    pub crop: Option<Crop>,
    pub hflip: bool,
    pub rot90: u8,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.crop.is_none() && !self.hflip && self.rot90.is_multiple_of(4)
    }

    /// Random draw. Quarter turns are restricted to 0 or 2 on non-square
    /// images so the size is preserved.
    pub fn draw(h: usize, w: usize, min_crop_frac: f64, rng: &mut SeededRng) -> Self {
        let hflip = rng.coin();
        let rot90 = if h == w {
            rng.below(4) as u8
        } else {
            2 * rng.below(2) as u8
        };
        let crop = if rng.coin() && min_crop_frac < 1.0 {
            let frac = rng.uniform(min_crop_frac.clamp(0.0, 1.0), 1.0);
            let ch = ((h as f64 * frac).round() as usize).clamp(1, h);
            let cw = ((w as f64 * frac).round() as usize).clamp(1, w);
            Some(Crop {
                y0: rng.below(h - ch + 1),
                x0: rng.below(w - cw + 1),
                height: ch,
                width: cw,
            })
        } else {
            None
        };
        Self { crop, hflip, rot90 }
    }

    /// Where a continuous point `(row, col)` lands, pixel centers at `+0.5`.
    pub fn map_point(&self, h: usize, w: usize, (mut y, mut x): (f64, f64)) -> (f64, f64) {
        if let Some(c) = self.crop {
            y = (y - c.y0 as f64) * h as f64 / c.height as f64;
            x = (x - c.x0 as f64) * w as f64 / c.width as f64;
        }
        if self.hflip {
            x = w as f64 - x;
        }
        let (mut ch, mut cw) = (h, w);
        for _ in 0..self.rot90 % 4 {
            (y, x) = (cw as f64 - x, y);
            (ch, cw) = (cw, ch);
        }
        (y, x)
    }

    /// Transform a `[.., H, W]` tensor; `nearest` selects the resampling of
    /// the crop.
    fn apply_tensor(&self, t: &Tensor, nearest: bool) -> Result<Tensor> {
        let shape = t.shape().to_vec();
        let rank = shape.len();
        let (h, w) = (shape[rank - 2], shape[rank - 1]);
        let planes = t.numel() / (h * w);
        let mut data = t.data().to_vec();
        if let Some(c) = self.crop {
            let mut cropped = Vec::with_capacity(planes * c.height * c.width);
            for p in 0..planes {
                for y in c.y0..c.y0 + c.height {
                    let row = (p * h + y) * w;
                    cropped.extend_from_slice(&data[row + c.x0..row + c.x0 + c.width]);
                }
            }
            data = if nearest {
                kernels::nearest_forward(planes, c.height, c.width, h, w, &cropped)
            } else {
                kernels::bilinear_forward(planes, c.height, c.width, h, w, &cropped)
            };
        }
        if self.hflip {
            for row in data.chunks_mut(w) {
                row.reverse();
            }
        }
        let (mut ch, mut cw) = (h, w);
        for _ in 0..self.rot90 % 4 {
            data = rot90_ccw(planes, ch, cw, &data);
            (ch, cw) = (cw, ch);
        }
        let mut out_shape = shape;
        out_shape[rank - 2] = ch;
        out_shape[rank - 1] = cw;
        Tensor::new(&out_shape, data)
    }

    pub fn apply(&self, sample: &LightFieldSample) -> Result<LightFieldSample> {
        if self.is_identity() {
            return Ok(sample.clone());
        }
        LightFieldSample::new(
            self.apply_tensor(&sample.allfocus, false)?,
            self.apply_tensor(&sample.slices, false)?,
            self.apply_tensor(&sample.gt, true)?,
        )
    }
}

fn rot90_ccw(planes: usize, h: usize, w: usize, data: &[Scalar]) -> Vec<Scalar> {
    // output is w x h: out(y, x) = in(x, w - 1 - y)
    let mut out = vec![0.0 as Scalar; data.len()];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..w {
            for x in 0..h {
                dst[y * h + x] = src[x * w + (w - 1 - y)];
            }
        }
    }
    out
}

/// Draw random parameters (crops keep at least 75% of each side) and apply
/// them.
pub fn augment(sample: &LightFieldSample, rng: &mut SeededRng) -> Result<LightFieldSample> {
    AugmentParams::draw(sample.height(), sample.width(), 0.75, rng).apply(sample)
}

fn resize_planes(t: &Tensor, oh: usize, ow: usize, nearest: bool) -> Result<Tensor> {
    let shape = t.shape();
    let rank = shape.len();
    let (h, w) = (shape[rank - 2], shape[rank - 1]);
    let planes = t.numel() / (h * w);
    let data = if nearest {
        kernels::nearest_forward(planes, h, w, oh, ow, t.data())
    } else {
        kernels::bilinear_forward(planes, h, w, oh, ow, t.data())
    };
    let mut out = shape.to_vec();
    out[rank - 2] = oh;
    out[rank - 1] = ow;
    Tensor::new(&out, data)
}

/// Resize every image of a sample to `h x w`: bilinear for the images,
/// nearest for the ground truth.
pub fn resize_sample(sample: &LightFieldSample, h: usize, w: usize) -> Result<LightFieldSample> {
    if (sample.height(), sample.width()) == (h, w) {
        return Ok(sample.clone());
    }
    LightFieldSample::new(
        resize_planes(&sample.allfocus, h, w, false)?,
        resize_planes(&sample.slices, h, w, false)?,
        resize_planes(&sample.gt, h, w, true)?,
    )
}
