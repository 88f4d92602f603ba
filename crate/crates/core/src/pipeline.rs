//! The command-line workflow: each `cmd_*` reads a [`PipelineConfig`],
//! writes its artifacts under the configured output directory and returns
//! what it computed so callers can print or inspect it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{PipelineConfig, TrainOn};
use crate::dataset::{
    self, load_manifest, load_sample, write_gray_png, write_mask_png, DatasetManifest,
};
use crate::imgproc::{preprocess_pipeline, resize, GrayImage, PreprocessConfig};
use crate::metrics::{overlap_report, IoUReport, OverlapSample, TrainCsvWriter};
use crate::nn::{self, Checkpoint, Example, Network, NetworkConfig};
use crate::plot::{Chart, Series};
use crate::segment::{
    elbow_scan_points, extract_tumor_mask, kmeans, BinaryMask, ElbowResult, KMeansConfig,
};
use crate::synth::{self, SynthConfig};
use crate::{Error, Result};

pub const ELBOW_CSV: &str = "elbow.csv";
pub const ELBOW_SVG: &str = "elbow.svg";
pub const IOU_CSV: &str = "iou_report.csv";
pub const TRAIN_CSV: &str = "train_report.csv";
pub const ACCURACY_SVG: &str = "accuracy.svg";
pub const LOSS_SVG: &str = "loss.svg";
pub const CHECKPOINT: &str = "model.json";
pub const PREPROCESSED_DIR: &str = "preprocessed";
pub const SEGMENTED_DIR: &str = "segmented";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn load_dataset(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    load_manifest(&cfg.manifest_path())
}

/// Writes a synthetic corpus and its manifest under `out`.
pub fn cmd_synth(out: &Path, synth_cfg: &SynthConfig) -> Result<PathBuf> {
    synth::write_corpus(out, synth_cfg)
}

pub struct PreprocessOutcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(String, Error)>,
}

/// Writes `<id>_pre.png` for each id. Failures are collected per id and
/// do not stop the remaining ids.
pub fn cmd_preprocess(cfg: &PipelineConfig, ids: &[String]) -> Result<PreprocessOutcome> {
    let mut outcome = PreprocessOutcome {
        written: Vec::new(),
        failures: Vec::new(),
    };
    if ids.is_empty() {
        return Ok(outcome);
    }
    cfg.preprocess.resolve()?;
    let manifest = load_dataset(cfg)?;
    let dir = cfg.out.join(PREPROCESSED_DIR);
    create_dir(&dir)?;
    for id in ids {
        let path = dir.join(format!("{id}_pre.png"));
        let result = load_sample(&manifest, id)
            .and_then(|s| preprocess_pipeline(&s.image, &cfg.preprocess))
            .and_then(|img| write_gray_png(&img, &path));
        match result {
            Ok(()) => outcome.written.push(path),
            Err(e) => outcome.failures.push((id.clone(), e)),
        }
    }
    Ok(outcome)
}

/// Preprocess, cluster and keep the brightest cluster.
pub fn segment_image(
    img: &GrayImage,
    preprocess: &PreprocessConfig,
    km: &KMeansConfig,
) -> Result<BinaryMask> {
    let pre = preprocess_pipeline(img, preprocess)?;
    let model = kmeans(&pre, km)?;
    let mask = extract_tumor_mask(&pre, &model)?;
    if mask.width() == img.width() && mask.height() == img.height() {
        Ok(mask)
    } else {
        // a resize step changed the geometry; resample and threshold at 0.5
        let up = resize(&mask.to_image(), img.width(), img.height())?;
        BinaryMask::new(
            img.width(),
            img.height(),
            up.data().iter().map(|&v| v >= 0.5).collect(),
        )
    }
}

/// Elbow scan over preprocessed intensities, pooled over the first
/// `segment.elbow_samples` images, or over a single image when `image` is
/// given. Writes `elbow.csv` and `elbow.svg`.
pub fn cmd_elbow(cfg: &PipelineConfig, image: Option<&str>) -> Result<ElbowResult> {
    let k_max = cfg.segment.k_max;
    if k_max < 3 {
        return Err(Error::invalid(format!(
            "elbow scan needs k_max >= 3, got {k_max}"
        )));
    }
    let manifest = load_dataset(cfg)?;
    let ids: Vec<String> = match image {
        Some(id) => vec![manifest.get(id)?.id.clone()],
        None => manifest
            .ids()
            .into_iter()
            .take(cfg.segment.elbow_samples)
            .collect(),
    };
    if ids.is_empty() {
        return Err(Error::Empty("no images to scan".into()));
    }
    let mut points = Vec::new();
    for id in &ids {
        let sample = load_sample(&manifest, id)?;
        points.extend_from_slice(preprocess_pipeline(&sample.image, &cfg.preprocess)?.data());
    }
    let result = elbow_scan_points(&points, k_max, &cfg.kmeans())?;
    create_dir(&cfg.out)?;
    let mut w = create_file(&cfg.out.join(ELBOW_CSV))?;
    write_elbow_csv(&result, &mut w)?;
    w.flush().map_err(|e| Error::io("writing elbow.csv", e))?;
    let k = result.chosen_k;
    let chart = Chart {
        title: "Elbow method",
        x_label: "number of clusters k",
        y_label: "WCSS",
        series: vec![Series {
            name: "WCSS",
            points: curve_points(&result.wcss_curve),
        }],
        marker: Some((k as f64, result.wcss_curve[k - 1], format!("k = {k}"))),
    };
    write_text(&cfg.out.join(ELBOW_SVG), &chart.render())?;
    Ok(result)
}

fn curve_points(values: &[f64]) -> Vec<(f64, f64)> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect()
}

pub fn write_elbow_csv<W: Write>(result: &ElbowResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "wcss"])?;
    for (i, v) in result.wcss_curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("writing elbow curve", e))
}

/// Reads a `k,wcss` curve back; rows must be in order from `k = 1`.
pub fn parse_elbow_csv(text: &str) -> Result<Vec<f64>> {
    #[derive(serde::Deserialize)]
    struct Row {
        k: usize,
        wcss: f64,
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut curve = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row?;
        if row.k != curve.len() + 1 {
            return Err(Error::invalid(format!(
                "elbow row k={} out of order",
                row.k
            )));
        }
        curve.push(row.wcss);
    }
    Ok(curve)
}

pub struct SegmentOutcome {
    pub report: IoUReport,
    /// Ids without a ground-truth mask; their predictions are written but
    /// not scored.
    pub skipped: Vec<String>,
}

/// Segments every manifest sample, writes `segmented/<id>_mask.png` and
/// `iou_report.csv`.
pub fn cmd_segment(cfg: &PipelineConfig) -> Result<SegmentOutcome> {
    cfg.preprocess.resolve()?;
    let km = cfg.kmeans();
    km.validate()?;
    let manifest = load_dataset(cfg)?;
    let dir = cfg.out.join(SEGMENTED_DIR);
    create_dir(&dir)?;
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for id in manifest.ids() {
        let sample = load_sample(&manifest, &id)?;
        let predicted = segment_image(&sample.image, &cfg.preprocess, &km)?;
        write_mask_png(&predicted, &dir.join(format!("{id}_mask.png")))?;
        match sample.mask {
            Some(truth) => scored.push((id, sample.label, predicted, truth)),
            None => skipped.push(id),
        }
    }
    let samples: Vec<OverlapSample<'_>> = scored
        .iter()
        .map(|(id, class, predicted, truth)| OverlapSample {
            id,
            class: *class,
            predicted,
            truth,
        })
        .collect();
    let report = if samples.is_empty() {
        IoUReport {
            per_image: Vec::new(),
            per_class: Default::default(),
        }
    } else {
        overlap_report(&samples, cfg.segment.detect_threshold)?
    };
    let mut w = create_file(&cfg.out.join(IOU_CSV))?;
    report.write_csv(&mut w)?;
    w.flush()
        .map_err(|e| Error::io("writing iou_report.csv", e))?;
    Ok(SegmentOutcome { report, skipped })
}

/// The classifier input for one image: the configured transformation,
/// then a resize to the network input.
pub fn training_input(
    cfg: &PipelineConfig,
    img: &GrayImage,
    net: &NetworkConfig,
) -> Result<GrayImage> {
    let prepared = match cfg.train.train_on {
        TrainOn::Raw => img.clone(),
        TrainOn::Preprocessed => preprocess_pipeline(img, &cfg.preprocess)?,
        TrainOn::Masked => {
            let pre = preprocess_pipeline(img, &cfg.preprocess)?;
            let model = kmeans(&pre, &cfg.kmeans())?;
            extract_tumor_mask(&pre, &model)?.apply(&pre)?
        }
    };
    resize(&prepared, net.input.width, net.input.height)
}

pub fn load_examples(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    ids: &[String],
    net: &NetworkConfig,
) -> Result<Vec<Example>> {
    ids.iter()
        .map(|id| {
            let s = load_sample(manifest, id)?;
            Ok(Example {
                id: s.id,
                image: training_input(cfg, &s.image, net)?,
                target: s.label.target(),
            })
        })
        .collect()
}

/// Train and test examples under the configured split.
pub fn prepare_split(
    cfg: &PipelineConfig,
    net: &NetworkConfig,
) -> Result<(Vec<Example>, Vec<Example>)> {
    let manifest = load_dataset(cfg)?;
    let split = dataset::split(&manifest, &cfg.split_spec())?;
    Ok((
        load_examples(cfg, &manifest, &split.train, net)?,
        load_examples(cfg, &manifest, &split.test, net)?,
    ))
}

/// Trains the configured network. `train_report.csv` is flushed after
/// every epoch; the plots and `model.json` are written at the end.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<nn::TrainOutcome> {
    cfg.validate()?;
    let net_cfg = cfg.network()?;
    let (train_set, test_set) = prepare_split(cfg, &net_cfg)?;
    let mut net = Network::new(net_cfg)?;
    create_dir(&cfg.out)?;
    let mut csv_out = TrainCsvWriter::new(create_file(&cfg.out.join(TRAIN_CSV))?)?;
    let outcome = nn::train(&mut net, &train_set, &test_set, &cfg.train(), |row| {
        csv_out.append(row)
    })?;
    let report = &outcome.report;
    let accuracy = Chart {
        title: "Model accuracy",
        x_label: "epoch",
        y_label: "accuracy",
        series: vec![
            Series {
                name: "train",
                points: curve_points(&report.train_acc),
            },
            Series {
                name: "test",
                points: curve_points(&report.test_acc),
            },
        ],
        marker: None,
    };
    write_text(&cfg.out.join(ACCURACY_SVG), &accuracy.render())?;
    let loss = Chart {
        title: "Model loss",
        x_label: "epoch",
        y_label: "binary cross-entropy",
        series: vec![
            Series {
                name: "train",
                points: curve_points(&report.train_loss),
            },
            Series {
                name: "test",
                points: curve_points(&report.test_loss),
            },
        ],
        marker: None,
    };
    write_text(&cfg.out.join(LOSS_SVG), &loss.render())?;
    Checkpoint::capture(&net, Some(&outcome.optimizer)).save(&cfg.out.join(CHECKPOINT))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Test,
    All,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "test" => Ok(SplitName::Test),
            "all" => Ok(SplitName::All),
            other => Err(Error::invalid(format!(
                "unknown split '{other}' (expected train, test or all)"
            ))),
        }
    }
}

/// Loads a checkpoint and returns `(loss, accuracy)` on the named split.
/// The checkpoint must describe the configured network.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    which: SplitName,
) -> Result<(f64, f64)> {
    let expected = cfg.network()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.network.input != expected.input || ckpt.network.layers != expected.layers {
        return Err(Error::shape(format!(
            "checkpoint network (input {}x{}x{}, {} layers) does not match the configured network (input {}x{}x{}, {} layers)",
            ckpt.network.input.height,
            ckpt.network.input.width,
            ckpt.network.input.channels,
            ckpt.network.layers.len(),
            expected.input.height,
            expected.input.width,
            expected.input.channels,
            expected.layers.len(),
        )));
    }
    let mut net = ckpt.restore()?;
    let (train_set, test_set) = prepare_split(cfg, &expected)?;
    let examples = match which {
        SplitName::Train => train_set,
        SplitName::Test => test_set,
        SplitName::All => train_set.into_iter().chain(test_set).collect(),
    };
    if examples.is_empty() {
        return Err(Error::Empty("split has no samples".into()));
    }
    nn::evaluate(&mut net, &examples, cfg.train.batch_size)
}
