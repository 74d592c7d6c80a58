//! Synthetic focal stacks: a textured foreground blob over a textured
//! background, each layer defocused by its distance to the focus plane.

use std::f64::consts::PI;

use super::LightFieldSample;
use crate::error::{DlgError, Result};
use crate::tensor::{kernels, Scalar, SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// One focus depth in `[0, 1]` per focal slice.
    pub depth_planes: Vec<f64>,
    /// `(row, col)` of the blob center in pixels.
    pub fg_center: (f64, f64),
    pub fg_radius: f64,
    pub texture_seed: u64,
    pub fg_depth: f64,
    pub bg_depth: f64,
    /// Gaussian sigma in pixels per unit of depth mismatch.
    pub blur_gain: f64,
}

impl SceneSpec {
    pub fn num_slices(&self) -> usize {
        self.depth_planes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(DlgError::invalid("scene must have positive size"));
        }
        if self.depth_planes.is_empty() {
            return Err(DlgError::invalid("scene needs at least one focal slice"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.depth_planes.iter().all(|&d| unit(d))
            || !unit(self.fg_depth)
            || !unit(self.bg_depth)
        {
            return Err(DlgError::invalid("depths must lie in [0, 1]"));
        }
        if self.fg_radius <= 0.0 {
            return Err(DlgError::invalid(
                "degenerate blob: radius must be positive",
            ));
        }
        let limit = self.height.min(self.width) as f64 / 2.0;
        if self.fg_radius >= limit {
            return Err(DlgError::invalid(format!(
                "blob radius {} must be below {limit}",
                self.fg_radius
            )));
        }
        if self.blur_gain < 0.0 {
            return Err(DlgError::invalid("blur_gain must be non-negative"));
        }
        Ok(())
    }

    /// A random scene with `n` evenly spaced focus planes and well separated
    /// foreground and background depths.
    pub fn random(
        height: usize,
        width: usize,
        n: usize,
        blur_gain: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let depth_planes = if n == 1 {
            vec![0.5]
        } else {
            (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
        };
        let fg_depth = rng.uniform(0.0, 1.0);
        // keep at least 0.4 of depth between the layers
        let bg_depth = loop {
            let d = rng.uniform(0.0, 1.0);
            if (d - fg_depth).abs() >= 0.4 {
                break d;
            }
        };
        let m = height.min(width) as f64;
        let fg_radius = rng.uniform(0.18, 0.3) * m;
        let margin = fg_radius + 1.0;
        let fg_center = (
            rng.uniform(margin, height as f64 - margin),
            rng.uniform(margin, width as f64 - margin),
        );
        Self {
            height,
            width,
            depth_planes,
            fg_center,
            fg_radius,
            texture_seed: rng.next_u64(),
            fg_depth,
            bg_depth,
            blur_gain,
        }
    }
}

/// Binary mask of the blob: a circle with a mild two-harmonic wobble.
fn blob_mask(spec: &SceneSpec, phases: [f64; 2]) -> Vec<bool> {
    let (cy, cx) = spec.fg_center;
    let mut mask = Vec::with_capacity(spec.height * spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let theta = dy.atan2(dx);
            let r = spec.fg_radius
                * (1.0
                    + 0.12 * (2.0 * theta + phases[0]).sin()
                    + 0.08 * (3.0 * theta + phases[1]).sin());
            mask.push(dy * dy + dx * dx <= r * r);
        }
    }
    mask
}

/// Two-octave value noise around a base color.
fn background_texture(h: usize, w: usize, rng: &mut SeededRng) -> Vec<Scalar> {
    let mut out = vec![0.0 as Scalar; 3 * h * w];
    for (cell, amp) in [(8usize, 0.35), (2usize, 0.2)] {
        let gh = h.div_ceil(cell) + 1;
        let gw = w.div_ceil(cell) + 1;
        for c in 0..3 {
            let grid: Vec<Scalar> = (0..gh * gw)
                .map(|_| rng.uniform(-amp, amp) as Scalar)
                .collect();
            let up = kernels::bilinear_forward(1, gh, gw, gh * cell, gw * cell, &grid);
            for y in 0..h {
                for x in 0..w {
                    out[(c * h + y) * w + x] += up[y * gw * cell + x];
                }
            }
        }
    }
    let base = [
        rng.uniform(0.3, 0.6),
        rng.uniform(0.3, 0.6),
        rng.uniform(0.3, 0.6),
    ];
    for c in 0..3 {
        for v in &mut out[c * h * w..(c + 1) * h * w] {
            *v = (*v + base[c] as Scalar).clamp(0.0, 1.0);
        }
    }
    out
}

/// Saturated base color with fine oriented stripes and speckle.
fn foreground_texture(h: usize, w: usize, seed: u64) -> Vec<Scalar> {
    let mut rng = SeededRng::new(seed);
    let hue = rng.uniform(0.0, 1.0);
    let base: Vec<f64> = (0..3)
        .map(|c| 0.5 + 0.3 * (2.0 * PI * (hue + c as f64 / 3.0)).cos())
        .collect();
    let angle = rng.uniform(0.0, PI);
    let period = rng.uniform(2.5, 4.0);
    let (sa, ca) = angle.sin_cos();
    let mut out = vec![0.0 as Scalar; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let stripe = 0.22 * (2.0 * PI * (x as f64 * ca + y as f64 * sa) / period).sin();
            let speckle = rng.uniform(-0.08, 0.08);
            for c in 0..3 {
                out[(c * h + y) * w + x] = (base[c] + stripe + speckle).clamp(0.0, 1.0) as Scalar;
            }
        }
    }
    out
}

/// Reflect-101 index into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable Gaussian blur of `planes` planes, radius `ceil(3 sigma)`,
/// reflect padding. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(
    planes: usize,
    h: usize,
    w: usize,
    data: &[Scalar],
    sigma: f64,
) -> Vec<Scalar> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut tmp = vec![0.0 as Scalar; data.len()];
    let mut out = vec![0.0 as Scalar; data.len()];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let mid = &mut tmp[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - radius, w);
                    acc += kv * src[y * w + xx] as f64;
                }
                mid[y * w + x] = acc as Scalar;
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let yy = reflect(y as isize + k as isize - radius, h);
                    acc += kv * mid[yy * w + x] as f64;
                }
                dst[y * w + x] = acc as Scalar;
            }
        }
    }
    out
}

fn composite(mask: &[bool], fg: &[Scalar], bg: &[Scalar], hw: usize) -> Vec<Scalar> {
    let mut out = Vec::with_capacity(3 * hw);
    for c in 0..3 {
        for i in 0..hw {
            out.push(if mask[i] {
                fg[c * hw + i]
            } else {
                bg[c * hw + i]
            });
        }
    }
    out
}

/// Render a scene. Deterministic for a given `(spec, rng state)`.
pub fn gen_synthetic_sample(spec: &SceneSpec, rng: &mut SeededRng) -> Result<LightFieldSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let hw = h * w;
    let phases = [rng.uniform(0.0, 2.0 * PI), rng.uniform(0.0, 2.0 * PI)];
    let mask = blob_mask(spec, phases);
    let bg = background_texture(h, w, rng);
    let fg = foreground_texture(h, w, spec.texture_seed);
    let allfocus = composite(&mask, &fg, &bg, hw);
    let mut slices = Vec::with_capacity(spec.num_slices() * 3 * hw);
    for &plane in &spec.depth_planes {
        let fg_b = gaussian_blur(3, h, w, &fg, spec.blur_gain * (spec.fg_depth - plane).abs());
        let bg_b = gaussian_blur(3, h, w, &bg, spec.blur_gain * (spec.bg_depth - plane).abs());
        slices.extend(composite(&mask, &fg_b, &bg_b, hw));
    }
    let gt: Vec<Scalar> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    LightFieldSample::new(
        Tensor::new(&[3, h, w], allfocus)?,
        Tensor::new(&[spec.num_slices(), 3, h, w], slices)?,
        Tensor::new(&[1, h, w], gt)?,
    )
}

/// Mean squared 4-neighbor Laplacian over the masked pixels whose whole
/// 3x3 neighborhood is also masked, summed over the three channels.
pub fn laplacian_energy(image: &[Scalar], h: usize, w: usize, mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let interior = (-1isize..=1).all(|dy| {
                (-1isize..=1)
                    .all(|dx| mask[(y as isize + dy) as usize * w + (x as isize + dx) as usize])
            });
            if !interior {
                continue;
            }
            for c in 0..3 {
                let at = |yy: usize, xx: usize| image[(c * h + yy) * w + xx] as f64;
                let lap =
                    4.0 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1);
                total += lap * lap;
            }
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
