//! Mini-batch training with augmentation and per-epoch evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::layers::{Mode, Network};
use super::ops::bce_term;
use super::Tensor;
use crate::augment::{augment_apply, AugmentConfig};
use crate::imgproc::GrayImage;
use crate::metrics::{EpochMetrics, TrainReport, DEFAULT_ACCURACY_THRESHOLD};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            seed: 0,
            augment: AugmentConfig::default(),
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        self.augment.validate()
    }
}

/// One image with its binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub image: GrayImage,
    pub target: f64,
}

/// Stacks single-channel images into an `[n, h, w, 1]` batch.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut n = 0;
    for img in images {
        let d = (img.height(), img.width());
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::shape(format!(
                    "batch mixes {}x{} and {}x{} images",
                    prev.1, prev.0, d.1, d.0
                )))
            }
            _ => {}
        }
        data.extend_from_slice(img.data());
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::Empty("empty batch".into()))?;
    Tensor::new(vec![n, h, w, 1], data)
}

fn check_examples(net: &Network, examples: &[Example], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Empty(format!("{what} set is empty")));
    }
    let input = net.config().input;
    if input.channels != 1 {
        return Err(Error::shape(
            "grayscale training needs a 1-channel network input",
        ));
    }
    for ex in examples {
        if ex.image.height() != input.height || ex.image.width() != input.width {
            return Err(Error::shape(format!(
                "{what} sample `{}` is {}x{}, network expects {}x{}",
                ex.id,
                ex.image.width(),
                ex.image.height(),
                input.width,
                input.height
            )));
        }
    }
    Ok(())
}

/// Mean BCE and accuracy in inference mode, batch norm on running statistics.
pub fn evaluate(net: &mut Network, examples: &[Example], batch_size: usize) -> Result<(f64, f64)> {
    check_examples(net, examples, "evaluation")?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let x = stack_images(chunk.iter().map(|e| &e.image))?;
        let p = net.forward(&x, Mode::Infer)?;
        for (&prob, ex) in p.data().iter().zip(chunk) {
            loss += bce_term(prob, ex.target);
            correct += usize::from((prob >= DEFAULT_ACCURACY_THRESHOLD) == (ex.target >= 0.5));
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// One forward/backward/update step on a batch. Returns the batch loss.
pub fn train_step(
    net: &mut Network,
    optimizer: &mut AdamState,
    images: &[GrayImage],
    targets: &[f64],
) -> Result<f64> {
    let x = stack_images(images)?;
    let y = Tensor::new(vec![targets.len(), 1], targets.to_vec())?;
    net.zero_grad();
    let p = net.forward(&x, Mode::Train)?;
    let loss = super::ops::bce_loss(&p, &y)?;
    net.backward(&y)?;
    optimizer.step(&mut net.params_mut())?;
    Ok(loss)
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub optimizer: AdamState,
}

/// Trains for `cfg.epochs` epochs.
///
/// Each epoch shuffles the training set from a stream derived from
/// `(cfg.seed, epoch)`, augments every training image from a stream keyed
/// on `(cfg.augment.seed, epoch, sample id)`, runs one Adam step per batch
/// and then evaluates both sets in inference mode. `on_epoch` sees every
/// row as soon as it is computed.
pub fn train(
    net: &mut Network,
    train_set: &[Example],
    test_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_examples(net, train_set, "training")?;
    check_examples(net, test_set, "test")?;
    let mut optimizer = AdamState::for_params(cfg.optimizer, &net.params());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = seed::rng(cfg.seed, "nn", "shuffle", epoch as u64);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let images = batch
                .iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    let mut stream = cfg.augment.stream(epoch, &ex.id);
                    augment_apply(&ex.image, &cfg.augment, &mut stream)
                })
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<f64> = batch.iter().map(|&i| train_set[i].target).collect();
            train_step(net, &mut optimizer, &images, &targets)?;
        }
        let (train_loss, train_acc) = evaluate(net, train_set, cfg.batch_size)?;
        let (test_loss, test_acc) = evaluate(net, test_set, cfg.batch_size)?;
        let row = EpochMetrics {
            epoch,
            train_loss,
            test_loss,
            train_acc,
            test_acc,
        };
        report.push(&row);
        on_epoch(&row)?;
    }
    Ok(TrainOutcome { report, optimizer })
}
