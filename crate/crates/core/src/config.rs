//! TOML pipeline configuration.
//!
//! One table per module. Every stochastic component takes its seed from
//! the single top-level `seed`, fanned out by module and purpose, so the
//! sections themselves carry no seeds.
//!
//! ```toml
//! seed = 7
//! out = "run"
//!
//! [dataset]
//! manifest = "data/manifest.csv"
//! train_fraction = 0.7
//!
//! [preprocess]
//! steps = ["smooth", "bilateral"]
//!
//! [segment]
//! k = 3
//! k_max = 10
//!
//! [network]
//! preset = "resnet-mini"
//! input_size = 64
//!
//! [train]
//! epochs = 50
//! train_on = "masked"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataset::SplitSpec;
use crate::imgproc::PreprocessConfig;
use crate::metrics::DEFAULT_DETECT_THRESHOLD;
use crate::nn::{AdamConfig, LayerSpec, NetworkConfig, TrainConfig};
use crate::seed::derive_seed;
use crate::segment::KMeansConfig;
use crate::{Error, Result};

pub const DEFAULT_MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub preprocess: PreprocessConfig,
    pub segment: SegmentSection,
    pub augment: AugmentSection,
    pub network: NetworkSection,
    pub train: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            preprocess: PreprocessConfig::default(),
            segment: SegmentSection::default(),
            augment: AugmentSection::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Defaults to `manifest.csv` under the output directory.
    pub manifest: Option<PathBuf>,
    pub train_fraction: f64,
    pub stratify_by_label: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let split = SplitSpec::default();
        Self {
            manifest: None,
            train_fraction: split.train_fraction,
            stratify_by_label: split.stratify_by_label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Largest k scanned by the elbow command.
    pub k_max: usize,
    pub detect_threshold: f64,
    /// Number of images pooled for the elbow scan, taken in manifest order.
    pub elbow_samples: usize,
}

impl Default for SegmentSection {
    fn default() -> Self {
        let km = KMeansConfig::default();
        Self {
            k: km.k,
            restarts: km.restarts,
            max_iters: km.max_iters,
            tol: km.tol,
            k_max: 10,
            detect_threshold: DEFAULT_DETECT_THRESHOLD,
            elbow_samples: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub rescale: f64,
    pub shear_range: f64,
    pub zoom_range: (f64, f64),
    pub hflip_prob: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            rescale: a.rescale,
            shear_range: a.shear_range,
            zoom_range: a.zoom_range,
            hflip_prob: a.hflip_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// `resnet-mini`, `resnet50` or `custom` (uses `layers`).
    pub preset: String,
    /// Square input side; training images are resized to it.
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            preset: "resnet-mini".into(),
            input_size: 64,
            layers: Vec::new(),
        }
    }
}

/// Which image the classifier is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainOn {
    Raw,
    Preprocessed,
    /// Preprocess, cluster, and keep only the brightest cluster.
    #[default]
    Masked,
}

impl FromStr for TrainOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(TrainOn::Raw),
            "preprocessed" => Ok(TrainOn::Preprocessed),
            "masked" => Ok(TrainOn::Masked),
            other => Err(Error::Config(format!(
                "unknown train_on '{other}' (expected raw, preprocessed or masked)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub train_on: TrainOn,
    pub optimizer: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            train_on: TrainOn::default(),
            optimizer: t.optimizer,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        if let Some(m) = &cfg.dataset.manifest {
            if m.is_relative() {
                cfg.dataset.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.out.join(DEFAULT_MANIFEST))
    }

    fn sub_seed(&self, module: &str, purpose: &str) -> u64 {
        derive_seed(self.seed, module, purpose, 0)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.dataset.train_fraction,
            seed: self.sub_seed("dataset", "split"),
            stratify_by_label: self.dataset.stratify_by_label,
        }
    }

    pub fn kmeans(&self) -> KMeansConfig {
        let s = &self.segment;
        KMeansConfig {
            k: s.k,
            restarts: s.restarts,
            max_iters: s.max_iters,
            tol: s.tol,
            seed: self.sub_seed("segment", "kmeans"),
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        let a = &self.augment;
        AugmentConfig {
            rescale: a.rescale,
            shear_range: a.shear_range,
            zoom_range: a.zoom_range,
            hflip_prob: a.hflip_prob,
            seed: self.sub_seed("augment", "sample"),
        }
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let n = &self.network;
        let s = n.input_size;
        let seed = self.sub_seed("nn", "init");
        let cfg = match n.preset.as_str() {
            "resnet-mini" => NetworkConfig::resnet_mini(s, s, seed),
            "resnet50" => NetworkConfig::resnet50(s, s, 1, seed),
            "custom" => {
                let mut cfg = NetworkConfig::resnet_mini(s, s, seed);
                cfg.layers = n.layers.clone();
                cfg
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown network preset '{other}' (expected resnet-mini, resnet50 or custom)"
                )))
            }
        };
        if n.preset != "custom" && !n.layers.is_empty() {
            return Err(Error::Config(
                "network.layers is only read when preset = \"custom\"".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.sub_seed("nn", "shuffle"),
            augment: self.augment(),
            optimizer: self.train.optimizer,
        }
    }

    /// Checks every section against its own invariants.
    pub fn validate(&self) -> Result<()> {
        self.split_spec().validate()?;
        self.preprocess.resolve()?;
        self.kmeans().validate()?;
        if !(0.0..=1.0).contains(&self.segment.detect_threshold) {
            return Err(Error::Config(
                "segment.detect_threshold must lie in [0, 1]".into(),
            ));
        }
        if self.segment.elbow_samples == 0 {
            return Err(Error::Config(
                "segment.elbow_samples must be at least 1".into(),
            ));
        }
        self.network()?;
        self.train().validate()
    }
}
