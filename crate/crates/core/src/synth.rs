//! Synthetic scan corpus: a textured mid-gray "brain" on a dark field,
//! with a bright elliptical lesion and its mask on positive samples.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{write_gray_png, write_mask_png, ClassLabel, DatasetManifest, ManifestEntry};
use crate::imgproc::GrayImage;
use crate::seed;
use crate::segment::BinaryMask;
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Total sample count; half positive, half negative.
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    /// Labels cycled over the positive samples.
    pub tumor_classes: Vec<ClassLabel>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 200,
            size: 64,
            seed: 0,
            tumor_classes: vec![ClassLabel::Glioma],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "sample count must be even and at least 2, got {}",
                self.n
            )));
        }
        if self.size < 16 {
            return Err(Error::invalid("synthetic images must be at least 16x16"));
        }
        if self.tumor_classes.is_empty() || self.tumor_classes.iter().any(|c| !c.is_tumor()) {
            return Err(Error::invalid(
                "tumor classes must be non-empty tumor labels",
            ));
        }
        Ok(())
    }
}

pub struct SynthSample {
    pub id: String,
    pub label: ClassLabel,
    pub image: GrayImage,
    pub mask: Option<BinaryMask>,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

const BACKGROUND: f64 = 0.04;
const TISSUE: f64 = 0.33;
const LESION: f64 = 0.85;

/// Generates sample `index` (positives first, then negatives).
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> SynthSample {
    let half = cfg.n / 2;
    let positive = index < half;
    let mut rng = seed::rng(cfg.seed, "synth", "sample", index as u64);
    let s = cfg.size as f64;
    let c = (s - 1.0) / 2.0;

    let brain = Ellipse {
        cx: c + rng.random_range(-0.03..0.03) * s,
        cy: c + rng.random_range(-0.03..0.03) * s,
        a: rng.random_range(0.40..0.45) * s,
        b: rng.random_range(0.34..0.40) * s,
        cos: 1.0,
        sin: 0.0,
    };
    // low-frequency texture: a few random plane waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let freq = rng.random_range(2.0..6.0) * 2.0 * PI / s;
            (
                freq * theta.cos(),
                freq * theta.sin(),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.015..0.035),
            )
        })
        .collect();
    let lesion = positive.then(|| {
        let theta: f64 = rng.random_range(0.0..PI);
        Ellipse {
            cx: brain.cx + rng.random_range(-0.16..0.16) * s,
            cy: brain.cy + rng.random_range(-0.14..0.14) * s,
            a: rng.random_range(0.12..0.20) * s,
            b: rng.random_range(0.10..0.17) * s,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    });
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");

    let n = cfg.size * cfg.size;
    let mut data = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for y in 0..cfg.size {
        for x in 0..cfg.size {
            let (fx, fy) = (x as f64, y as f64);
            let in_lesion = lesion.as_ref().is_some_and(|l| l.contains(fx, fy));
            let base = if in_lesion {
                LESION
            } else if brain.contains(fx, fy) {
                TISSUE
                    + waves
                        .iter()
                        .map(|&(kx, ky, ph, amp)| amp * (kx * fx + ky * fy + ph).sin())
                        .sum::<f64>()
            } else {
                BACKGROUND
            };
            data.push((base + noise.sample(&mut rng)).clamp(0.0, 1.0));
            mask.push(in_lesion);
        }
    }
    let (id, label) = if positive {
        (
            format!("pos-{index:04}"),
            cfg.tumor_classes[index % cfg.tumor_classes.len()],
        )
    } else {
        (format!("neg-{:04}", index - half), ClassLabel::Negative)
    };
    SynthSample {
        id,
        label,
        image: GrayImage::from_parts(cfg.size, cfg.size, data),
        mask: positive
            .then(|| BinaryMask::new(cfg.size, cfg.size, mask).expect("sized by construction")),
    }
}

/// Writes images, masks and `manifest.csv` under `out_dir`; returns the
/// manifest path.
pub fn write_corpus(out_dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    cfg.validate()?;
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(out_dir.join(sub))
            .map_err(|e| Error::io(format!("creating {}", out_dir.join(sub).display()), e))?;
    }
    let mut entries = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let sample = generate_sample(cfg, i);
        let image_rel = PathBuf::from("images").join(format!("{}.png", sample.id));
        write_gray_png(&sample.image, &out_dir.join(&image_rel))?;
        let mask_rel = match &sample.mask {
            Some(m) => {
                let rel = PathBuf::from("masks").join(format!("{}_mask.png", sample.id));
                write_mask_png(m, &out_dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            patient: format!("synthetic-{:04}", i),
            id: sample.id,
            image: image_rel,
            mask: mask_rel,
            label: sample.label,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    let path = out_dir.join(MANIFEST_NAME);
    let file = std::fs::File::create(&path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    manifest.write_csv(file)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positives_have_masks_negatives_do_not() {
        let cfg = SynthConfig {
            n: 6,
            ..Default::default()
        };
        for i in 0..6 {
            let s = generate_sample(&cfg, i);
            if i < 3 {
                assert_eq!(s.label, ClassLabel::Glioma);
                assert!(s.mask.as_ref().unwrap().count() > 0);
            } else {
                assert_eq!(s.label, ClassLabel::Negative);
                assert!(s.mask.is_none());
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::default();
        assert_eq!(
            generate_sample(&cfg, 3).image,
            generate_sample(&cfg, 3).image
        );
        let other = SynthConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            generate_sample(&cfg, 3).image,
            generate_sample(&other, 3).image
        );
    }

    #[test]
    fn rejects_odd_counts() {
        for n in [0, 1, 3] {
            assert!(SynthConfig {
                n,
                ..Default::default()
            }
            .validate()
            .is_err());
        }
    }
}
