//! Sample manifests, image decoding and stratified train/test splits.
//!
//! A manifest is a CSV with the exact header `id,image,mask,label,patient`.
//! Paths are relative to the manifest's directory; an empty `mask` field
//! means the sample has no ground-truth mask.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::DynamicImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::imgproc::{to_grayscale, GrayImage, RgbImage};
use crate::seed;
use crate::segment::BinaryMask;
use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["id", "image", "mask", "label", "patient"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Meningioma,
    Glioma,
    Pituitary,
    /// No tumor. Only produced for synthetic data.
    Negative,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Meningioma,
        ClassLabel::Glioma,
        ClassLabel::Pituitary,
        ClassLabel::Negative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Meningioma => "meningioma",
            ClassLabel::Glioma => "glioma",
            ClassLabel::Pituitary => "pituitary",
            ClassLabel::Negative => "negative",
        }
    }

    pub fn is_tumor(self) -> bool {
        self != ClassLabel::Negative
    }

    /// Binary target for the sigmoid head.
    pub fn target(self) -> f64 {
        if self.is_tumor() {
            1.0
        } else {
            0.0
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        ClassLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown label `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub label: ClassLabel,
    pub patient: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: GrayImage,
    pub mask: Option<BinaryMask>,
    pub label: ClassLabel,
    pub patient: String,
}

/// Reads a manifest without touching pixel data.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    parse_manifest(&text, root)
}

pub fn parse_manifest(text: &str, root: PathBuf) -> Result<DatasetManifest> {
    if text.trim().is_empty() {
        return Ok(DatasetManifest {
            root,
            entries: Vec::new(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_to_parse(e, 1))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::ManifestParse {
            line: 1,
            message: format!(
                "header must be `{}`, got `{}`",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_to_parse(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            match rec.get(i) {
                Some(v) if !v.is_empty() || i == 2 => Ok(v),
                _ => Err(Error::ManifestParse {
                    line,
                    message: format!("missing field `{}`", MANIFEST_HEADER[i]),
                }),
            }
        };
        let id = field(0)?.to_string();
        let image = PathBuf::from(field(1)?);
        let mask = Some(field(2)?).filter(|m| !m.is_empty()).map(PathBuf::from);
        let label = field(3)?.parse().map_err(|e: Error| Error::ManifestParse {
            line,
            message: e.to_string(),
        })?;
        let patient = field(4)?.to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        entries.push(ManifestEntry {
            id,
            image,
            mask,
            label,
            patient,
        });
    }
    Ok(DatasetManifest { root, entries })
}

fn csv_to_parse(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { len, .. } => {
            let missing = MANIFEST_HEADER.get(*len as usize).copied().unwrap_or("?");
            format!("missing field `{missing}` ({len} of 5 fields)")
        }
        _ => e.to_string(),
    };
    Error::ManifestParse { line, message }
}

impl DatasetManifest {
    pub fn get(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.id.as_str(),
                &e.image.to_string_lossy(),
                &e.mask
                    .as_ref()
                    .map(|m| m.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                e.label.as_str(),
                &e.patient,
            ])?;
        }
        w.flush().map_err(|e| Error::io("writing manifest", e))
    }
}

/// Decodes one sample. Intensities are normalized by the format's maximum.
pub fn load_sample(manifest: &DatasetManifest, id: &str) -> Result<LabeledSample> {
    let entry = manifest.get(id)?;
    let image = read_gray(&manifest.resolve(&entry.image))?;
    let mask = entry
        .mask
        .as_ref()
        .map(|m| read_mask(&manifest.resolve(m)))
        .transpose()?;
    if let Some(m) = &mask {
        if m.width() != image.width() || m.height() != image.height() {
            return Err(Error::MaskDimensionMismatch {
                id: id.to_string(),
                width: image.width(),
                height: image.height(),
                mask_width: m.width(),
                mask_height: m.height(),
            });
        }
    }
    Ok(LabeledSample {
        id: entry.id.clone(),
        image,
        mask,
        label: entry.label,
        patient: entry.patient.clone(),
    })
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?
        .with_guessed_format()
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads an 8/16-bit grayscale PNG or PGM. Color inputs go through luma conversion.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let dynamic = open(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic {
        DynamicImage::ImageLuma8(buf) => GrayImage::new(
            w,
            h,
            buf.into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 255.0)
                .collect(),
        ),
        DynamicImage::ImageLuma16(buf) => GrayImage::new(
            w,
            h,
            buf.into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 65535.0)
                .collect(),
        ),
        other => {
            let rgb = other.to_rgb32f();
            let pixels = rgb
                .pixels()
                .map(|p| p.0.map(|c| f64::from(c).clamp(0.0, 1.0)))
                .collect();
            Ok(to_grayscale(&RgbImage::new(w, h, pixels)?))
        }
    }
}

/// Reads a mask: zero is background, any nonzero value is tumor.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let dynamic = open(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let data = match dynamic {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v != 0).collect(),
        other => other
            .to_rgb16()
            .pixels()
            .map(|p| p.0.iter().any(|&c| c != 0))
            .collect(),
    };
    BinaryMask::new(w, h, data)
}

/// Writes an 8-bit grayscale PNG, rounding intensities to the nearest level.
pub fn write_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    save_luma8(bytes, img.width(), img.height(), path)
}

/// Writes a mask as an 8-bit PNG with 255 for tumor pixels.
pub fn write_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let bytes = mask
        .data()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    save_luma8(bytes, mask.width(), mask.height(), path)
}

fn save_luma8(bytes: Vec<u8>, w: usize, h: usize, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::shape("image buffer size"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratify_by_label: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
            stratify_by_label: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Train share of a stratum of `n` samples: `floor(n·fraction + 0.5)`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction + 0.5).floor() as usize).min(n)
}

/// Seeded split; both lists keep manifest order.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut strata: BTreeMap<Option<ClassLabel>, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let key = spec.stratify_by_label.then_some(e.label);
        strata.entry(key).or_default().push(i);
    }
    let mut in_train = vec![false; manifest.entries.len()];
    for (stratum, (key, mut members)) in strata.into_iter().enumerate() {
        if spec.stratify_by_label && members.len() < 2 {
            return Err(Error::StratumTooSmall {
                label: key.map_or("all", ClassLabel::as_str).to_string(),
                count: members.len(),
            });
        }
        let mut rng = seed::rng(spec.seed, "dataset", "split", stratum as u64);
        members.shuffle(&mut rng);
        for &i in &members[..train_count(members.len(), spec.train_fraction)] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .zip(&in_train)
        .partition(|(_, &t)| t);
    Ok(Split {
        train: train.into_iter().map(|(e, _)| e.id.clone()).collect(),
        test: test.into_iter().map(|(e, _)| e.id.clone()).collect(),
    })
}
