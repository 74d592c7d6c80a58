//! Light-field samples: synthesis, on-disk format, augmentation and splits.

mod augment;
mod manifest;
pub mod pnm;
mod scene;

pub use augment::{augment, resize_sample, AugmentParams, Crop};
pub use manifest::{
    generate_dataset, make_splits, read_sample, write_sample, DatasetManifest, GenOptions,
    ManifestEntry, SampleMeta, Split,
};
pub use scene::{gaussian_blur, gen_synthetic_sample, laplacian_energy, SceneSpec};

use crate::error::{DlgError, Result};
use crate::tensor::Tensor;

/// An all-focus image `[3,H,W]`, its focal stack `[N,3,H,W]` and a binary
/// saliency mask `[1,H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LightFieldSample {
    pub allfocus: Tensor,
    pub slices: Tensor,
    pub gt: Tensor,
}

impl LightFieldSample {
    pub fn new(allfocus: Tensor, slices: Tensor, gt: Tensor) -> Result<Self> {
        let sample = Self {
            allfocus,
            slices,
            gt,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.allfocus.shape();
        let s = self.slices.shape();
        let g = self.gt.shape();
        if a.len() != 3 || a[0] != 3 {
            return Err(DlgError::shape(format!(
                "allfocus must be [3,H,W], got {a:?}"
            )));
        }
        if s.len() != 4 || s[0] == 0 || s[1] != 3 || s[2..] != a[1..] {
            return Err(DlgError::shape(format!(
                "slices must be [N,3,{},{}], got {s:?}",
                a[1], a[2]
            )));
        }
        if g.len() != 3 || g[0] != 1 || g[1..] != a[1..] {
            return Err(DlgError::shape(format!(
                "gt must be [1,{},{}], got {g:?}",
                a[1], a[2]
            )));
        }
        if !self.gt.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(DlgError::invalid("gt must be binary"));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.allfocus.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.allfocus.shape()[2]
    }

    pub fn num_slices(&self) -> usize {
        self.slices.shape()[0]
    }

    /// The all-focus image as a batch of one, `[1,3,H,W]`.
    pub fn allfocus_batch(&self) -> Tensor {
        let (h, w) = (self.height(), self.width());
        self.allfocus
            .clone()
            .reshape(&[1, 3, h, w])
            .expect("validated shape")
    }

    /// The mask as `[1,1,H,W]`.
    pub fn gt_batch(&self) -> Tensor {
        let (h, w) = (self.height(), self.width());
        self.gt
            .clone()
            .reshape(&[1, 1, h, w])
            .expect("validated shape")
    }
}
