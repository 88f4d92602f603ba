//! Training-time augmentation: rescale, horizontal flip, x-shear and zoom.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::imgproc::{sample_bilinear, GrayImage};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rescale: f64,
    /// Maximum absolute shear angle, radians.
    pub shear_range: f64,
    pub zoom_range: (f64, f64),
    pub hflip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rescale: 1.0,
            shear_range: 0.2,
            zoom_range: (0.8, 1.2),
            hflip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which augmentation is the identity.
    pub fn identity() -> Self {
        Self {
            rescale: 1.0,
            shear_range: 0.0,
            zoom_range: (1.0, 1.0),
            hflip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "zoom_range must satisfy 0 < min <= max, got ({lo}, {hi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::invalid("hflip_prob must lie in [0, 1]"));
        }
        if !(self.shear_range >= 0.0 && self.shear_range.is_finite()) {
            return Err(Error::invalid("shear_range must be non-negative"));
        }
        if !self.rescale.is_finite() {
            return Err(Error::invalid("rescale must be finite"));
        }
        Ok(())
    }

    /// Stream for one sample in one epoch. Keyed on the sample id rather
    /// than its batch position, so the drawn parameters do not depend on
    /// shuffle order or worker assignment.
    pub fn stream(&self, epoch: usize, sample_id: &str) -> seed::Rng {
        seed::rng(
            self.seed ^ seed::key_index(sample_id),
            "augment",
            "sample",
            epoch as u64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub shear: f64,
    pub zoom: f64,
    pub flip: bool,
}

pub fn hflip(img: &GrayImage) -> GrayImage {
    let w = img.width();
    let data = img
        .data()
        .chunks_exact(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    GrayImage::from_parts(w, img.height(), data)
}

/// Shear along x followed by uniform zoom, both about the image center.
///
/// Each output pixel is inverse-mapped into the source and sampled
/// bilinearly; source coordinates outside the image are clamped to the
/// nearest edge.
pub fn affine_warp(img: &GrayImage, shear: f64, zoom: f64) -> Result<GrayImage> {
    if !(zoom > 0.0) || !zoom.is_finite() {
        return Err(Error::invalid(format!("zoom must be positive, got {zoom}")));
    }
    if !shear.is_finite() {
        return Err(Error::invalid("shear must be finite"));
    }
    let (w, h) = (img.width(), img.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let t = shear.tan();
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let dy = (y as f64 - cy) / zoom;
        let sy = (cy + dy).clamp(0.0, max_y);
        for x in 0..w {
            let dx = (x as f64 - cx) / zoom;
            let sx = (cx + dx - t * dy).clamp(0.0, max_x);
            out.push(sample_bilinear(img, sx, sy));
        }
    }
    let (lo, hi) = img.min_max();
    for v in &mut out {
        *v = v.clamp(lo, hi);
    }
    Ok(GrayImage::from_parts(w, h, out))
}

/// Draws shear ~ U[-range, range], zoom ~ U[min, max], flip ~ Bernoulli(p).
pub fn sample_augmentation(cfg: &AugmentConfig, rng: &mut seed::Rng) -> AugmentParams {
    let shear = if cfg.shear_range > 0.0 {
        rng.random_range(-cfg.shear_range..=cfg.shear_range)
    } else {
        0.0
    };
    let (lo, hi) = cfg.zoom_range;
    let zoom = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let flip = rng.random_bool(cfg.hflip_prob);
    AugmentParams { shear, zoom, flip }
}

/// Applies the given parameters: rescale, optional flip, warp, clamp to `[0, 1]`.
pub fn apply_params(img: &GrayImage, rescale: f64, params: &AugmentParams) -> Result<GrayImage> {
    let mut current = if rescale == 1.0 {
        img.clone()
    } else {
        let data = img.data().iter().map(|v| v * rescale).collect();
        GrayImage::from_raw(img.width(), img.height(), data)?
    };
    if params.flip {
        current = hflip(&current);
    }
    if params.shear != 0.0 || params.zoom != 1.0 {
        current = affine_warp(&current, params.shear, params.zoom)?;
    }
    let (w, h) = (current.width(), current.height());
    let data = current
        .into_data()
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(GrayImage::from_parts(w, h, data))
}

/// Samples parameters from `rng` and applies them.
pub fn augment_apply(
    img: &GrayImage,
    cfg: &AugmentConfig,
    rng: &mut seed::Rng,
) -> Result<GrayImage> {
    cfg.validate()?;
    let params = sample_augmentation(cfg, rng);
    apply_params(img, cfg.rescale, &params)
}
