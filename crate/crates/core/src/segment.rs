//! Intensity K-means segmentation, elbow-based choice of `k`, and
//! extraction of the predicted tumor mask.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::imgproc::GrayImage;
use crate::seed;
use crate::{Error, Result};

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{} mask values for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mask as an image with 1.0 for set pixels.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_parts(
            self.width,
            self.height,
            self.data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// Zeroes every image pixel outside the mask.
    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::shape("mask and image dimensions differ"));
        }
        let data = img
            .data()
            .iter()
            .zip(&self.data)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(GrayImage::from_parts(self.width, self.height, data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            restarts: 10,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.restarts < 1 || self.max_iters < 1 {
            return Err(Error::invalid(
                "k, restarts and max_iters must be at least 1",
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

/// Result of one K-means fit. Centroids are sorted ascending, so index
/// `k - 1` is the brightest cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub wcss: f64,
    /// WCSS after every Lloyd iteration, ending with the final model's value.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn wcss(points: &[f64], centroids: &[f64], assignments: &[usize]) -> Result<f64> {
    if points.len() != assignments.len() {
        return Err(Error::shape(format!(
            "{} points but {} assignments",
            points.len(),
            assignments.len()
        )));
    }
    let mut total = 0.0;
    for (&x, &a) in points.iter().zip(assignments) {
        let c = centroids
            .get(a)
            .ok_or_else(|| Error::invalid(format!("assignment {a} out of range")))?;
        total += (x - c) * (x - c);
    }
    Ok(total)
}

#[inline]
fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centroids.iter().enumerate() {
        let d = (x - c) * (x - c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn assign_all(points: &[f64], centroids: &[f64], assignments: &mut [usize]) {
    for (a, &x) in assignments.iter_mut().zip(points) {
        *a = nearest(x, centroids);
    }
}

fn plus_plus_seed(points: &[f64], k: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points
        .iter()
        .map(|&x| (x - centroids[0]) * (x - centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        centroids.push(c);
        for (d, &x) in d2.iter_mut().zip(points) {
            *d = d.min((x - c) * (x - c));
        }
    }
    centroids
}

/// Moves the worst-fit point into each empty cluster. Donor clusters keep
/// at least one member, which is always possible when `n >= k`.
fn repair_empty(points: &[f64], centroids: &mut [f64], assignments: &mut [usize]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut worst: Option<(usize, f64)> = None;
        for (i, (&x, &a)) in points.iter().zip(assignments.iter()).enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = (x - centroids[a]) * (x - centroids[a]);
            if worst.is_none_or(|(_, wd)| d > wd) {
                worst = Some((i, d));
            }
        }
        if let Some((i, _)) = worst {
            counts[assignments[i]] -= 1;
            assignments[i] = j;
            counts[j] = 1;
            centroids[j] = points[i];
        }
    }
}

/// Lloyd iterations from the given starting centroids.
pub fn lloyd(points: &[f64], init: Vec<f64>, max_iters: usize, tol: f64) -> ClusterModel {
    let k = init.len();
    let mut centroids = init;
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters {
        assign_all(points, &centroids, &mut assignments);
        repair_empty(points, &mut centroids, &mut assignments);

        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &a) in points.iter().zip(&assignments) {
            sums[a] += x;
            counts[a] += 1;
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] > 0 {
                let updated = sums[j] / counts[j] as f64;
                shift = shift.max((updated - centroids[j]).abs());
                centroids[j] = updated;
            }
        }
        iterations += 1;
        history.push(wcss(points, &centroids, &assignments).expect("consistent lengths"));
        if shift < tol {
            break;
        }
    }

    centroids.sort_by(f64::total_cmp);
    assign_all(points, &centroids, &mut assignments);
    let total = wcss(points, &centroids, &assignments).expect("consistent lengths");
    history.push(total);
    ClusterModel {
        k,
        centroids,
        assignments,
        wcss: total,
        wcss_history: history,
        iterations,
    }
}

/// Every restart's model, in restart order. Restart `r` seeds from its own
/// stream derived from `(cfg.seed, r)`.
pub fn kmeans_restarts(points: &[f64], cfg: &KMeansConfig) -> Result<Vec<ClusterModel>> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::Empty("no points to cluster".into()));
    }
    if cfg.k > points.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds the {} available points",
            cfg.k,
            points.len()
        )));
    }
    Ok((0..cfg.restarts)
        .map(|r| {
            let mut rng = seed::rng(cfg.seed, "segment", "kmeans-restart", r as u64);
            let init = plus_plus_seed(points, cfg.k, &mut rng);
            lloyd(points, init, cfg.max_iters, cfg.tol)
        })
        .collect())
}

/// Best-of-restarts K-means on raw intensities; ties keep the earliest restart.
pub fn kmeans_points(points: &[f64], cfg: &KMeansConfig) -> Result<ClusterModel> {
    let runs = kmeans_restarts(points, cfg)?;
    Ok(runs
        .into_iter()
        .reduce(|best, m| if m.wcss < best.wcss { m } else { best })
        .expect("restarts >= 1"))
}

/// K-means over the pixel intensities of `img`.
pub fn kmeans(img: &GrayImage, cfg: &KMeansConfig) -> Result<ClusterModel> {
    kmeans_points(img.data(), cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowResult {
    /// `wcss_curve[i]` is the WCSS for `k = i + 1`.
    pub wcss_curve: Vec<f64>,
    pub chosen_k: usize,
}

/// Picks the elbow of a WCSS curve indexed from `k = 1`.
///
/// The elbow is the `k` in `2..=k_max-1` maximizing the discrete second
/// difference of `ln(WCSS)`, i.e. where the relative rate of decrease
/// changes the most. WCSS is floored at `1e-12 · WCSS(1)` so exact fits
/// stay finite. Ties go to the smallest `k`.
pub fn choose_elbow(curve: &[f64]) -> Result<usize> {
    if curve.len() < 3 {
        return Err(Error::invalid(format!(
            "elbow scan needs k_max >= 3, got {}",
            curve.len()
        )));
    }
    if curve.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(
            "WCSS values must be finite and non-negative",
        ));
    }
    let floor = (curve[0] * 1e-12).max(f64::MIN_POSITIVE);
    let logs: Vec<f64> = curve.iter().map(|w| w.max(floor).ln()).collect();
    let mut best_k = 2;
    let mut best = f64::NEG_INFINITY;
    for i in 1..curve.len() - 1 {
        let d2 = logs[i - 1] - 2.0 * logs[i] + logs[i + 1];
        if d2 > best {
            best = d2;
            best_k = i + 1;
        }
    }
    Ok(best_k)
}

/// Runs K-means for `k = 1..=k_max` over the given intensities.
pub fn elbow_scan_points(points: &[f64], k_max: usize, cfg: &KMeansConfig) -> Result<ElbowResult> {
    if k_max < 3 {
        return Err(Error::invalid(format!(
            "elbow scan needs k_max >= 3, got {k_max}"
        )));
    }
    let wcss_curve = (1..=k_max)
        .map(|k| kmeans_points(points, &KMeansConfig { k, ..*cfg }).map(|m| m.wcss))
        .collect::<Result<Vec<_>>>()?;
    let chosen_k = choose_elbow(&wcss_curve)?;
    Ok(ElbowResult {
        wcss_curve,
        chosen_k,
    })
}

/// Elbow scan over one image; `cfg.k` is ignored.
pub fn elbow_scan(img: &GrayImage, k_max: usize, cfg: &KMeansConfig) -> Result<ElbowResult> {
    elbow_scan_points(img.data(), k_max, cfg)
}

/// Index of the brightest centroid, lowest index on ties.
pub fn brightest_cluster(model: &ClusterModel) -> usize {
    model
        .centroids
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Pixels assigned to the brightest cluster. Contrast-enhanced tumors
/// show up as the brightest tissue.
pub fn extract_tumor_mask(img: &GrayImage, model: &ClusterModel) -> Result<BinaryMask> {
    if model.assignments.len() != img.width() * img.height() {
        return Err(Error::shape(format!(
            "model covers {} pixels, image has {}",
            model.assignments.len(),
            img.width() * img.height()
        )));
    }
    let tumor = brightest_cluster(model);
    BinaryMask::new(
        img.width(),
        img.height(),
        model.assignments.iter().map(|&a| a == tumor).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> KMeansConfig {
        KMeansConfig {
            k,
            seed: 11,
            ..Default::default()
        }
    }

    /// Bands stacked vertically; band `i` has value `values[i]`.
    fn banded(values: &[f64], rows_per_band: usize, width: usize) -> GrayImage {
        let data = values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, rows_per_band * width))
            .collect();
        GrayImage::new(width, rows_per_band * values.len(), data).unwrap()
    }

    #[test]
    fn constant_image_single_cluster() {
        let img = GrayImage::filled(6, 6, 0.42).unwrap();
        let m = kmeans(&img, &cfg(1)).unwrap();
        assert_eq!(m.centroids, vec![0.42]);
        assert_eq!(m.wcss, 0.0);
        let mask = extract_tumor_mask(&img, &m).unwrap();
        assert_eq!(mask.count(), 36);
    }

    #[test]
    fn four_points_two_clusters() {
        let m = kmeans_points(&[0.0, 0.1, 0.9, 1.0], &cfg(2)).unwrap();
        assert!((m.centroids[0] - 0.05).abs() < 1e-12);
        assert!((m.centroids[1] - 0.95).abs() < 1e-12);
        assert!((m.wcss - 0.01).abs() < 1e-12);
        assert_eq!(m.assignments, vec![0, 0, 1, 1]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let img = banded(&[0.1, 0.3, 0.35, 0.8], 3, 5);
        assert_eq!(
            kmeans(&img, &cfg(3)).unwrap(),
            kmeans(&img, &cfg(3)).unwrap()
        );
    }

    #[test]
    fn k_larger_than_points_is_rejected() {
        assert!(kmeans_points(&[0.1, 0.2], &cfg(3)).is_err());
        assert!(kmeans_points(&[0.1, 0.2], &KMeansConfig { tol: 0.0, ..cfg(1) }).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let points = [0.5, 0.5, 0.5, 0.5, 0.9];
        let m = kmeans_points(&points, &cfg(3)).unwrap();
        assert_eq!(m.centroids.len(), 3);
        assert!(m.assignments.iter().all(|&a| a < 3));
        assert!((m.wcss - wcss(&points, &m.centroids, &m.assignments).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn wcss_examples() {
        assert_eq!(wcss(&[0.2, 0.7], &[0.2, 0.7], &[0, 1]).unwrap(), 0.0);
        assert_eq!(wcss(&[0.0, 1.0], &[0.5], &[0, 0]).unwrap(), 0.5);
        assert!(wcss(&[0.0, 1.0], &[0.5], &[0]).is_err());
        assert!(wcss(&[0.0], &[0.5], &[1]).is_err());
    }

    #[test]
    fn elbow_from_curves() {
        assert_eq!(
            choose_elbow(&[100.0, 70.0, 30.0, 28.0, 27.0, 26.5]).unwrap(),
            3
        );
        assert_eq!(choose_elbow(&[60.0, 50.0, 40.0, 30.0, 20.0]).unwrap(), 2);
        assert_eq!(choose_elbow(&[5.0, 1.0, 0.0, 0.0]).unwrap(), 3);
        assert!(choose_elbow(&[2.0, 1.0]).is_err());
    }

    #[test]
    fn elbow_scan_rejects_small_k_max() {
        let img = GrayImage::filled(4, 4, 0.5).unwrap();
        assert!(elbow_scan(&img, 2, &cfg(1)).is_err());
    }

    #[test]
    fn three_bands_mask_and_elbow() {
        let img = banded(&[0.1, 0.5, 0.9], 4, 8);
        let m = kmeans(&img, &cfg(3)).unwrap();
        let mask = extract_tumor_mask(&img, &m).unwrap();
        for (i, &b) in mask.data().iter().enumerate() {
            assert_eq!(b, img.data()[i] == 0.9);
        }
        let e = elbow_scan(&img, 6, &cfg(3)).unwrap();
        assert_eq!(e.wcss_curve.len(), 6);
        assert_eq!(e.chosen_k, 3);
    }

    #[test]
    fn two_bands_mask() {
        let img = banded(&[0.2, 0.8], 3, 4);
        let m = kmeans(&img, &cfg(2)).unwrap();
        assert!((m.centroids[0] - 0.2).abs() < 1e-12 && (m.centroids[1] - 0.8).abs() < 1e-12);
        let mask = extract_tumor_mask(&img, &m).unwrap();
        assert_eq!(mask.count(), 12);
        assert!(mask.data()[12..].iter().all(|&b| b));
    }

    #[test]
    fn mask_dimension_mismatch() {
        let img = GrayImage::filled(4, 4, 0.5).unwrap();
        let m = kmeans_points(&[0.5; 9], &cfg(1)).unwrap();
        assert!(extract_tumor_mask(&img, &m).is_err());
    }
}
