//! Brute-force reference implementations shared by the integration tests.
//! Each one follows the textbook definition directly and shares no code
//! with the library beyond its public types.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tumorscan::nn::{Activation, Layer, LayerSpec, Mode, Network, Tensor};
use tumorscan::{BinaryMask, GrayImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(w: usize, h: usize, r: &mut ChaCha8Rng) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| r.random::<f64>()).collect()).unwrap()
}

pub fn random_mask(w: usize, h: usize, density: f64, r: &mut ChaCha8Rng) -> BinaryMask {
    BinaryMask::new(w, h, (0..w * h).map(|_| r.random_bool(density)).collect()).unwrap()
}

/// Mirror index without repeating the edge: -1 -> 1, n -> n-2.
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn px(img: &GrayImage, x: isize, y: isize) -> f64 {
    img.get(mirror(x, img.width()), mirror(y, img.height()))
}

pub fn box_oracle(img: &GrayImage, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = Vec::new();
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += px(img, x + dx, y + dy);
                }
            }
            out.push(s / (k * k) as f64);
        }
    }
    out
}

/// Direct 2-D Gaussian convolution with a normalized 2-D kernel.
pub fn gaussian_oracle(img: &GrayImage, k: usize, sigma: f64) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut weights = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    let mut out = Vec::new();
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut s = 0.0;
            let mut i = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += weights[i] * px(img, x + dx, y + dy);
                    i += 1;
                }
            }
            out.push(s / total);
        }
    }
    out
}

pub fn bilateral_oracle(img: &GrayImage, radius: usize, ss: f64, sr: f64) -> Vec<f64> {
    let r = radius as isize;
    let mut out = Vec::new();
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let center = img.get(x as usize, y as usize);
            let (mut num, mut den) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let q = px(img, x + dx, y + dy);
                    let w = (-((dx * dx + dy * dy) as f64) / (2.0 * ss * ss)).exp()
                        * (-(center - q).powi(2) / (2.0 * sr * sr)).exp();
                    num += w * q;
                    den += w;
                }
            }
            out.push(num / den);
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Minimum WCSS over every assignment of points to exactly `k` non-empty
/// clusters, each cluster scored around its own mean.
pub fn kmeans_optimum(points: &[f64], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            let w: f64 = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| (p - sums[l] / counts[l] as f64).powi(2))
                .sum();
            best = best.min(w);
        }
        // odometer increment in base k
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

pub fn iou_oracle(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let set = |m: &BinaryMask| -> HashSet<(usize, usize)> {
        (0..m.height())
            .flat_map(|y| (0..m.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x, y))
            .collect()
    };
    let (sa, sb) = (set(a), set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

/// NHWC cross-correlation with zero padding, weights `[kh, kw, in, out]`.
pub fn conv_oracle(
    x: &Tensor,
    w: &Tensor,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let [n, h, wd, cin] = x.shape().try_into().unwrap();
    let [kh, kw, _, cout] = w.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xi = |i: usize, y: usize, xx: usize, c: usize| x.data()[((i * h + y) * wd + xx) * cin + c];
    let wi =
        |a: usize, bb: usize, c: usize, o: usize| w.data()[((a * kw + bb) * cin + c) * cout + o];
    let mut out = Vec::new();
    for i in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..cout {
                    let mut s = b[o];
                    for a in 0..kh {
                        for bb in 0..kw {
                            let y = (oy * stride + a) as isize - pad as isize;
                            let xx = (ox * stride + bb) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                continue;
                            }
                            for c in 0..cin {
                                s += xi(i, y as usize, xx as usize, c) * wi(a, bb, c, o);
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    (vec![n, oh, ow, cout], out)
}

pub fn random_tensor(shape: Vec<usize>, r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Below this absolute difference a gradient entry passes regardless of
/// the relative error (both values are at round-off level).
pub const FD_ABS_FLOOR: f64 = 1e-8;

pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < FD_ABS_FLOOR || diff / analytic.abs().max(numeric.abs()) < FD_REL_TOL
}

/// Largest share of sampled entries that may be excluded as non-smooth.
pub const FD_MAX_SKIPPED: f64 = 0.1;
/// Central differences at `h` and `h/2` agree to this relative tolerance
/// on a smooth interval; a larger gap means a ReLU or max-pool switch lies
/// inside `[x - h, x + h]` and the loss has no derivative to compare.
const FD_SMOOTH_TOL: f64 = 1e-5;

/// Worst relative error over the checked entries, with entries under the
/// absolute floor counted as zero error.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
    pub worst: f64,
}

impl GradReport {
    /// `loss(d)` evaluates the loss with the entry shifted by `d`.
    fn check(&mut self, what: String, analytic: f64, mut loss: impl FnMut(f64) -> f64) {
        let central = |loss: &mut dyn FnMut(f64) -> f64, h: f64| (loss(h) - loss(-h)) / (2.0 * h);
        let numeric = central(&mut loss, FD_STEP);
        self.checked += 1;
        if grad_close(analytic, numeric) {
            let diff = (analytic - numeric).abs();
            if diff >= FD_ABS_FLOOR {
                self.worst = self.worst.max(diff / analytic.abs().max(numeric.abs()));
            }
            return;
        }
        let half = central(&mut loss, FD_STEP / 2.0);
        let gap = (numeric - half).abs();
        if gap > FD_ABS_FLOOR && gap > FD_SMOOTH_TOL * numeric.abs().max(half.abs()) {
            self.skipped += 1;
            return;
        }
        self.worst = self
            .worst
            .max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
        self.failures
            .push(format!("{what}: analytic {analytic} numeric {numeric}"));
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.failures.extend(other.failures);
        self.worst = self.worst.max(other.worst);
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
            && self.checked > 0
            && self.skipped as f64 <= FD_MAX_SKIPPED * self.checked as f64
    }
}

/// Picks up to `max` distinct indices out of `0..n`.
fn sample_indices(n: usize, max: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        rand::seq::index::sample(r, n, max).into_vec()
    }
}

/// Central-difference check of one layer under the scalar loss
/// `L = sum(forward(x) * probe)` in training mode.
pub fn check_layer(
    layer: &mut Layer,
    x: &Tensor,
    r: &mut ChaCha8Rng,
    max_entries: usize,
) -> GradReport {
    let y = layer.forward(x.clone(), Mode::Train).unwrap();
    let probe = random_tensor(y.shape().to_vec(), r);
    let loss = |layer: &mut Layer, x: &Tensor| -> f64 {
        let y = layer.forward(x.clone(), Mode::Train).unwrap();
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    for p in layer.params_mut() {
        p.grad.iter_mut().for_each(|g| *g = 0.0);
    }
    layer.forward(x.clone(), Mode::Train).unwrap();
    let dx = layer.backward(probe.clone()).unwrap();
    let analytic_params: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradReport::default();
    for i in sample_indices(x.len(), max_entries, r) {
        report.check(format!("input[{i}]"), dx.data()[i], |d| {
            let mut xd = x.clone();
            xd.data_mut()[i] += d;
            loss(layer, &xd)
        });
    }
    for (pi, analytic) in analytic_params.iter().enumerate() {
        for i in sample_indices(analytic.len(), max_entries, r) {
            let orig = layer.params()[pi].value.data()[i];
            report.check(format!("param{pi}[{i}]"), analytic[i], |d| {
                layer.params_mut()[pi].value.data_mut()[i] = orig + d;
                let l = loss(layer, x);
                layer.params_mut()[pi].value.data_mut()[i] = orig;
                l
            });
        }
    }
    report
}

/// Central-difference check of a whole network under its BCE loss.
pub fn check_network(
    net: &mut Network,
    x: &Tensor,
    labels: &Tensor,
    r: &mut ChaCha8Rng,
    max_entries: usize,
) -> GradReport {
    let loss = |net: &mut Network, x: &Tensor| -> f64 {
        let p = net.forward(x, Mode::Train).unwrap();
        tumorscan::nn::ops::bce_loss(&p, labels).unwrap()
    };
    net.zero_grad();
    net.forward(x, Mode::Train).unwrap();
    net.backward(labels).unwrap();
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    let mut report = GradReport::default();
    for (pi, grads) in analytic.iter().enumerate() {
        for i in sample_indices(grads.len(), max_entries, r) {
            let orig = net.params()[pi].value.data()[i];
            report.check(format!("param{pi}[{i}]"), grads[i], |d| {
                net.params_mut()[pi].value.data_mut()[i] = orig + d;
                let l = loss(net, x);
                net.params_mut()[pi].value.data_mut()[i] = orig;
                l
            });
        }
    }
    report
}

/// One instance of every layer type with a per-sample input shape.
pub fn layer_cases() -> Vec<(&'static str, LayerSpec, Vec<usize>)> {
    vec![
        ("conv", LayerSpec::conv(3, 3, 1, 1), vec![5, 5, 2]),
        ("conv-strided", LayerSpec::conv(2, 3, 2, 1), vec![6, 5, 2]),
        ("batch-norm", LayerSpec::BatchNorm, vec![3, 3, 2]),
        ("relu", LayerSpec::Relu, vec![4, 4, 2]),
        (
            "max-pool",
            LayerSpec::MaxPool { size: 2, stride: 2 },
            vec![4, 6, 2],
        ),
        ("avg-pool", LayerSpec::AvgPool, vec![3, 4, 3]),
        ("flatten", LayerSpec::Flatten, vec![2, 3, 2]),
        (
            "dense",
            LayerSpec::Dense {
                units: 3,
                activation: Activation::None,
            },
            vec![6],
        ),
        (
            "dense-relu",
            LayerSpec::Dense {
                units: 4,
                activation: Activation::Relu,
            },
            vec![5],
        ),
        (
            "dense-sigmoid",
            LayerSpec::Dense {
                units: 2,
                activation: Activation::Sigmoid,
            },
            vec![5],
        ),
        (
            "residual",
            LayerSpec::basic_block(2, 1, false),
            vec![4, 4, 2],
        ),
        (
            "residual-projection",
            LayerSpec::basic_block(3, 2, true),
            vec![4, 4, 2],
        ),
    ]
}
