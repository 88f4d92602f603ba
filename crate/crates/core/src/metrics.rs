//! Overlap scoring of predicted masks and classification metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::segment::BinaryMask;
use crate::{Error, Result};

pub const DEFAULT_DETECT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.5;

/// Intersection over union. Two empty masks score 0.
pub fn iou(predicted: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    if !predicted.same_dims(truth) {
        return Err(Error::shape(format!(
            "predicted mask is {}x{}, truth is {}x{}",
            predicted.width(),
            predicted.height(),
            truth.width(),
            truth.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in predicted.data().iter().zip(truth.data()) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoURow {
    pub id: String,
    pub class: ClassLabel,
    pub iou: f64,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: ClassLabel,
    /// Mean IoU over detected samples; `None` when nothing was detected.
    pub mean_iou: Option<f64>,
    pub detection_rate: f64,
    pub detected: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoUReport {
    pub per_image: Vec<IoURow>,
    pub per_class: BTreeMap<ClassLabel, ClassSummary>,
}

pub struct OverlapSample<'a> {
    pub id: &'a str,
    pub class: ClassLabel,
    pub predicted: &'a BinaryMask,
    pub truth: &'a BinaryMask,
}

/// Scores every sample and aggregates per class. A sample counts as
/// detected when its IoU reaches `detect_threshold`; the class mean only
/// averages detected samples.
pub fn overlap_report(samples: &[OverlapSample<'_>], detect_threshold: f64) -> Result<IoUReport> {
    if samples.is_empty() {
        return Err(Error::Empty(
            "overlap report needs at least one sample".into(),
        ));
    }
    let per_image = samples
        .iter()
        .map(|s| {
            let v = iou(s.predicted, s.truth)?;
            Ok(IoURow {
                id: s.id.to_string(),
                class: s.class,
                iou: v,
                detected: v > 0.0 && v >= detect_threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_class = summarize(&per_image);
    Ok(IoUReport {
        per_image,
        per_class,
    })
}

/// Per-class aggregation over scored rows.
pub fn summarize(rows: &[IoURow]) -> BTreeMap<ClassLabel, ClassSummary> {
    let mut acc: BTreeMap<ClassLabel, (f64, usize, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.class).or_default();
        if r.detected {
            e.0 += r.iou;
            e.1 += 1;
        }
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(class, (sum, detected, total))| {
            (
                class,
                ClassSummary {
                    class,
                    mean_iou: (detected > 0).then(|| sum / detected as f64),
                    detection_rate: detected as f64 / total as f64,
                    detected,
                    total,
                },
            )
        })
        .collect()
}

const IOU_HEADER: [&str; 4] = ["id", "class", "iou", "detected"];
const SUMMARY_HEADER: [&str; 5] = ["class", "mean_iou", "detection_rate", "detected", "total"];

impl IoUReport {
    /// Per-image rows, a blank line, then the per-class summary block.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(IOU_HEADER)?;
            for r in &self.per_image {
                w.write_record([
                    r.id.as_str(),
                    r.class.as_str(),
                    &format!("{}", r.iou),
                    if r.detected { "true" } else { "false" },
                ])?;
            }
            w.flush().map_err(|e| Error::io("writing IoU report", e))?;
        }
        writeln!(out).map_err(|e| Error::io("writing IoU report", e))?;
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(SUMMARY_HEADER)?;
        for s in self.per_class.values() {
            w.write_record([
                s.class.as_str().to_string(),
                s.mean_iou.map(|m| m.to_string()).unwrap_or_default(),
                s.detection_rate.to_string(),
                s.detected.to_string(),
                s.total.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("writing IoU report", e))?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let (rows_block, summary_block) = text
            .split_once("\n\n")
            .ok_or_else(|| Error::invalid("IoU report is missing its summary block"))?;

        let mut per_image = Vec::new();
        let mut r = csv::Reader::from_reader(rows_block.as_bytes());
        if r.headers()?.iter().ne(IOU_HEADER) {
            return Err(Error::invalid("unexpected IoU report header"));
        }
        for rec in r.records() {
            let rec = rec?;
            per_image.push(IoURow {
                id: rec[0].to_string(),
                class: rec[1].parse()?,
                iou: parse_f64(&rec[2])?,
                detected: parse_bool(&rec[3])?,
            });
        }

        let mut per_class = BTreeMap::new();
        let mut r = csv::Reader::from_reader(summary_block.as_bytes());
        if r.headers()?.iter().ne(SUMMARY_HEADER) {
            return Err(Error::invalid("unexpected IoU summary header"));
        }
        for rec in r.records() {
            let rec = rec?;
            let class: ClassLabel = rec[0].parse()?;
            per_class.insert(
                class,
                ClassSummary {
                    class,
                    mean_iou: if rec[1].is_empty() {
                        None
                    } else {
                        Some(parse_f64(&rec[1])?)
                    },
                    detection_rate: parse_f64(&rec[2])?,
                    detected: parse_usize(&rec[3])?,
                    total: parse_usize(&rec[4])?,
                },
            );
        }
        Ok(Self {
            per_image,
            per_class,
        })
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("not a number: `{s}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("not a count: `{s}`")))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::invalid(format!("not a boolean: `{s}`"))),
    }
}

/// Fraction of samples where `p >= threshold` agrees with the 0/1 label.
pub fn binary_accuracy(probabilities: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} probabilities but {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Empty("accuracy of zero samples".into()));
    }
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= threshold) == (y >= 0.5))
        .count();
    Ok(correct as f64 / probabilities.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Per-epoch loss and accuracy series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn push(&mut self, m: &EpochMetrics) {
        self.train_loss.push(m.train_loss);
        self.test_loss.push(m.test_loss);
        self.train_acc.push(m.train_acc);
        self.test_acc.push(m.test_acc);
    }

    /// Metrics for a 1-based epoch number.
    pub fn row(&self, epoch: usize) -> Option<EpochMetrics> {
        let i = epoch.checked_sub(1)?;
        Some(EpochMetrics {
            epoch,
            train_loss: *self.train_loss.get(i)?,
            test_loss: self.test_loss[i],
            train_acc: self.train_acc[i],
            test_acc: self.test_acc[i],
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = EpochMetrics> + '_ {
        (1..=self.epochs()).filter_map(|e| self.row(e))
    }

    pub fn peak_train_acc(&self) -> f64 {
        self.train_acc.iter().copied().fold(0.0, f64::max)
    }

    pub fn peak_test_acc(&self) -> f64 {
        self.test_acc.iter().copied().fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = TrainCsvWriter::new(out)?;
        for m in self.rows() {
            w.append(&m)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut report = Self::default();
        for (i, row) in r.deserialize::<EpochMetrics>().enumerate() {
            let row = row?;
            if row.epoch != i + 1 {
                return Err(Error::invalid(format!(
                    "epoch {} out of sequence at row {}",
                    row.epoch,
                    i + 1
                )));
            }
            report.push(&row);
        }
        Ok(report)
    }
}

/// Appends epoch rows and flushes after each one, so an aborted run leaves
/// every completed epoch on disk.
pub struct TrainCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrainCsvWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(["epoch", "train_loss", "test_loss", "train_acc", "test_acc"])?;
        inner
            .flush()
            .map_err(|e| Error::io("writing train report", e))?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        self.inner.write_record([
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.test_loss.to_string(),
            m.train_acc.to_string(),
            m.test_acc.to_string(),
        ])?;
        self.inner
            .flush()
            .map_err(|e| Error::io("writing train report", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(w: usize, h: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn iou_examples() {
        let a = block(4, 3, 0, 2, 0, 2);
        let b = block(4, 3, 1, 3, 0, 2);
        let far = block(4, 3, 3, 4, 2, 3);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let e = BinaryMask::empty(4, 3);
        assert_eq!(iou(&e, &e).unwrap(), 0.0);
        assert_eq!(iou(&a, &e).unwrap(), 0.0);
        assert!(iou(&a, &BinaryMask::empty(3, 3)).is_err());
    }

    fn report_for(ious: &[(ClassLabel, f64)], threshold: f64) -> IoUReport {
        // A 100-pixel truth of 10 pixels; prediction overlaps so that IoU is exact.
        let masks: Vec<(BinaryMask, BinaryMask)> = ious
            .iter()
            .map(|&(_, v)| {
                let truth = block(100, 1, 0, 20, 0, 1);
                let inter = (v * 20.0).round() as usize;
                let pred = if inter == 0 {
                    block(100, 1, 50, 60, 0, 1)
                } else {
                    block(100, 1, 0, inter, 0, 1)
                };
                (pred, truth)
            })
            .collect();
        let ids: Vec<String> = (0..ious.len()).map(|i| format!("s{i}")).collect();
        let samples: Vec<OverlapSample> = masks
            .iter()
            .zip(ious)
            .zip(&ids)
            .map(|(((p, t), &(class, _)), id)| OverlapSample {
                id,
                class,
                predicted: p,
                truth: t,
            })
            .collect();
        overlap_report(&samples, threshold).unwrap()
    }

    #[test]
    fn overlap_aggregation() {
        let r = report_for(&[(ClassLabel::Glioma, 1.0)], 0.1);
        let s = &r.per_class[&ClassLabel::Glioma];
        assert_eq!((s.detection_rate, s.mean_iou), (1.0, Some(1.0)));

        let r = report_for(&[(ClassLabel::Pituitary, 0.0)], 0.1);
        let s = &r.per_class[&ClassLabel::Pituitary];
        assert_eq!((s.detection_rate, s.mean_iou), (0.0, None));

        let r = report_for(
            &[
                (ClassLabel::Glioma, 0.65),
                (ClassLabel::Glioma, 0.0),
                (ClassLabel::Glioma, 0.8),
            ],
            0.1,
        );
        let s = &r.per_class[&ClassLabel::Glioma];
        assert!((s.detection_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.mean_iou.unwrap() - 0.725).abs() < 1e-12);
    }

    #[test]
    fn overlap_requires_samples() {
        assert!(overlap_report(&[], 0.1).is_err());
    }

    #[test]
    fn iou_report_csv_round_trip() {
        let r = report_for(
            &[
                (ClassLabel::Glioma, 0.65),
                (ClassLabel::Meningioma, 0.0),
                (ClassLabel::Glioma, 0.8),
            ],
            0.1,
        );
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,class,iou,detected\n"));
        assert_eq!(IoUReport::parse_csv(&text).unwrap(), r);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(binary_accuracy(&[0.9, 0.1], &[1.0, 0.0], 0.5).unwrap(), 1.0);
        assert_eq!(binary_accuracy(&[0.9, 0.9], &[1.0, 0.0], 0.5).unwrap(), 0.5);
        assert_eq!(binary_accuracy(&[0.5], &[1.0], 0.5).unwrap(), 1.0);
        assert!(binary_accuracy(&[0.5], &[1.0, 0.0], 0.5).is_err());
        assert!(binary_accuracy(&[], &[], 0.5).is_err());
    }

    #[test]
    fn train_report_csv_round_trip() {
        let mut r = TrainReport::default();
        for e in 1..=3 {
            r.push(&EpochMetrics {
                epoch: e,
                train_loss: 0.7 / e as f64,
                test_loss: 0.8 / e as f64,
                train_acc: 0.1 * e as f64,
                test_acc: 1.0 / 3.0,
            });
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,test_loss,train_acc,test_acc\n"));
        assert_eq!(TrainReport::parse_csv(&text).unwrap(), r);
        assert_eq!(r.peak_train_acc(), 0.30000000000000004);
    }
}
