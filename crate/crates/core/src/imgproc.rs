//! Image preprocessing: smoothing, edge-preserving bilateral filtering,
//! grayscale conversion and bilinear resizing.
//!
//! All windowed operations use reflect padding: the border is mirrored
//! without repeating the edge pixel, so index `-1` reads index `1`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Single-channel image, row-major, intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image, checking the length and that every value lies in `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let img = Self::from_raw(width, height, data)?;
        if let Some(v) = img.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(img)
    }

    /// Builds an image whose values are finite but not necessarily
    /// normalized, e.g. intensities still in the `[0, 255]` convention
    /// before an augmentation rescale.
    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite intensity"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Internal constructor for outputs whose invariants follow from the
    /// producing operation.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Reads with reflect padding for out-of-range coordinates.
    #[inline]
    pub(crate) fn get_reflect(&self, x: isize, y: isize) -> f64 {
        self.get(reflect(x, self.width), reflect(y, self.height))
    }
}

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("channel value outside [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilateralParams {
    pub radius: usize,
    pub sigma_space: f64,
    pub sigma_range: f64,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            radius: 4,
            sigma_space: 3.0,
            sigma_range: 0.3,
        }
    }
}

impl BilateralParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::invalid("bilateral radius must be at least 1"));
        }
        if !(self.sigma_space > 0.0) || !(self.sigma_range > 0.0) {
            return Err(Error::invalid("bilateral sigmas must be positive"));
        }
        Ok(())
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn check_odd_kernel(kernel_size: usize) -> Result<()> {
    if kernel_size == 0 || kernel_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel size must be odd and positive, got {kernel_size}"
        )));
    }
    Ok(())
}

/// Convolves rows then columns with a symmetric 1-D kernel.
fn separable(img: &GrayImage, kernel: &[f64]) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * img.get(reflect(x as isize + i as isize - r, w), y);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * tmp[reflect(y as isize + i as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    let (lo, hi) = img.min_max();
    clamp_into(&mut out, lo, hi);
    GrayImage::from_parts(w, h, out)
}

// Convex combinations can overshoot the input range by an ulp.
fn clamp_into(values: &mut [f64], lo: f64, hi: f64) {
    for v in values {
        *v = v.clamp(lo, hi);
    }
}

/// Mean over a `kernel_size × kernel_size` neighborhood.
pub fn box_smooth(img: &GrayImage, kernel_size: usize) -> Result<GrayImage> {
    check_odd_kernel(kernel_size)?;
    if kernel_size > img.width.min(img.height) {
        return Err(Error::invalid(format!(
            "kernel size {kernel_size} exceeds image size {}x{}",
            img.width, img.height
        )));
    }
    let kernel = vec![1.0 / kernel_size as f64; kernel_size];
    Ok(separable(img, &kernel))
}

/// Normalized 1-D Gaussian weights of length `kernel_size`.
pub fn gaussian_kernel(kernel_size: usize, sigma: f64) -> Result<Vec<f64>> {
    check_odd_kernel(kernel_size)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let r = (kernel_size / 2) as f64;
    let mut k: Vec<f64> = (0..kernel_size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

pub fn gaussian_smooth(img: &GrayImage, kernel_size: usize, sigma: f64) -> Result<GrayImage> {
    let kernel = gaussian_kernel(kernel_size, sigma)?;
    Ok(separable(img, &kernel))
}

/// Edge-preserving smoothing: each pixel becomes a weighted mean of its
/// `(2r+1)²` window, with weights falling off in both spatial distance
/// and intensity difference.
pub fn bilateral_filter(img: &GrayImage, params: &BilateralParams) -> Result<GrayImage> {
    params.validate()?;
    let (w, h) = (img.width, img.height);
    let r = params.radius as isize;
    let side = 2 * params.radius + 1;
    let space_denom = 2.0 * params.sigma_space * params.sigma_space;
    let range_denom = 2.0 * params.sigma_range * params.sigma_range;
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| (-((dx * dx + dy * dy) as f64) / space_denom).exp())
        .collect();

    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let center = img.get(x, y);
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -r..=r {
                let row = ((dy + r) as usize) * side;
                for dx in -r..=r {
                    let q = img.get_reflect(x as isize + dx, y as isize + dy);
                    let diff = center - q;
                    let wgt = spatial[row + (dx + r) as usize] * (-diff * diff / range_denom).exp();
                    num += wgt * q;
                    den += wgt;
                }
            }
            out[y * w + x] = num / den;
        }
    }
    let (lo, hi) = img.min_max();
    clamp_into(&mut out, lo, hi);
    Ok(GrayImage::from_parts(w, h, out))
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Rec. 601 luma.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data
        .iter()
        .map(|[r, g, b]| {
            (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::from_parts(img.width, img.height, data)
}

/// Bilinear resampling at pixel centers with edge clamping.
pub fn resize(img: &GrayImage, new_width: usize, new_height: usize) -> Result<GrayImage> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if new_width == img.width && new_height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / new_width as f64;
    let sy = img.height as f64 / new_height as f64;
    let mut out = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        for x in 0..new_width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            out.push(sample_bilinear(img, fx, fy));
        }
    }
    let (lo, hi) = img.min_max();
    clamp_into(&mut out, lo, hi);
    Ok(GrayImage::from_parts(new_width, new_height, out))
}

/// Bilinear sample at a coordinate already clamped into the image.
#[inline]
pub(crate) fn sample_bilinear(img: &GrayImage, fx: f64, fy: f64) -> f64 {
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let top = img.get(x0, y0) * (1.0 - tx) + img.get(x1, y0) * tx;
    let bottom = img.get(x0, y1) * (1.0 - tx) + img.get(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothKind {
    #[default]
    Box,
    Gaussian,
}

/// Preprocessing configuration: an ordered list of step names drawn from
/// `smooth`, `bilateral` and `resize`, plus their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub steps: Vec<String>,
    pub smoothing: SmoothKind,
    pub smooth_kernel: usize,
    pub gaussian_sigma: f64,
    pub bilateral: BilateralParams,
    pub resize_width: Option<usize>,
    pub resize_height: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            steps: vec!["smooth".into(), "bilateral".into()],
            smoothing: SmoothKind::Box,
            smooth_kernel: 7,
            gaussian_sigma: 1.5,
            bilateral: BilateralParams::default(),
            resize_width: None,
            resize_height: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreprocessStep {
    BoxSmooth { kernel_size: usize },
    GaussianSmooth { kernel_size: usize, sigma: f64 },
    Bilateral(BilateralParams),
    Resize { width: usize, height: usize },
}

impl PreprocessStep {
    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        match *self {
            PreprocessStep::BoxSmooth { kernel_size } => box_smooth(img, kernel_size),
            PreprocessStep::GaussianSmooth { kernel_size, sigma } => {
                gaussian_smooth(img, kernel_size, sigma)
            }
            PreprocessStep::Bilateral(p) => bilateral_filter(img, &p),
            PreprocessStep::Resize { width, height } => resize(img, width, height),
        }
    }
}

impl PreprocessConfig {
    /// An empty pipeline.
    pub fn identity() -> Self {
        Self {
            steps: Vec::new(),
            ..Self::default()
        }
    }

    /// Resolves step names into concrete steps, in the listed order.
    pub fn resolve(&self) -> Result<Vec<PreprocessStep>> {
        self.steps
            .iter()
            .map(|name| match name.trim().to_ascii_lowercase().as_str() {
                "smooth" => Ok(match self.smoothing {
                    SmoothKind::Box => PreprocessStep::BoxSmooth {
                        kernel_size: self.smooth_kernel,
                    },
                    SmoothKind::Gaussian => PreprocessStep::GaussianSmooth {
                        kernel_size: self.smooth_kernel,
                        sigma: self.gaussian_sigma,
                    },
                }),
                "bilateral" => Ok(PreprocessStep::Bilateral(self.bilateral)),
                "resize" => match (self.resize_width, self.resize_height) {
                    (Some(width), Some(height)) => Ok(PreprocessStep::Resize { width, height }),
                    _ => Err(Error::Config(
                        "resize step needs resize_width and resize_height".into(),
                    )),
                },
                _ => Err(Error::UnknownStep(name.clone())),
            })
            .collect()
    }
}

/// Applies the configured steps in order.
pub fn preprocess_pipeline(img: &GrayImage, cfg: &PreprocessConfig) -> Result<GrayImage> {
    let steps = cfg.resolve()?;
    steps
        .iter()
        .try_fold(img.clone(), |acc, step| step.apply(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn max_abs_diff(a: &GrayImage, b: &GrayImage) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn reflect_mirrors_without_repeating_edge() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-9, 3), 1);
        assert_eq!(reflect(7, 1), 0);
    }

    #[test]
    fn box_smooth_constant_is_identity() {
        let img = GrayImage::filled(12, 10, 0.4).unwrap();
        let out = box_smooth(&img, 7).unwrap();
        assert!(max_abs_diff(&img, &out) < 1e-15);
    }

    #[test]
    fn box_smooth_impulse_fills_centered_window() {
        let mut data = vec![0.0; 81];
        data[4 * 9 + 4] = 1.0;
        let img = GrayImage::new(9, 9, data).unwrap();
        let out = box_smooth(&img, 7).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let inside = (1..=7).contains(&x) && (1..=7).contains(&y);
                let expected = if inside { 1.0 / 49.0 } else { 0.0 };
                assert!((out.get(x, y) - expected).abs() < 1e-15, "({x},{y})");
            }
        }
    }

    #[test]
    fn box_smooth_rejects_bad_kernels() {
        let img = GrayImage::filled(5, 5, 0.0).unwrap();
        assert!(box_smooth(&img, 4).is_err());
        assert!(box_smooth(&img, 7).is_err());
        assert!(box_smooth(&img, 0).is_err());
    }

    #[test]
    fn gaussian_rejects_bad_args() {
        let img = GrayImage::filled(5, 5, 0.0).unwrap();
        assert!(gaussian_smooth(&img, 4, 1.0).is_err());
        assert!(gaussian_smooth(&img, 3, 0.0).is_err());
        assert!(gaussian_smooth(&img, 3, -1.0).is_err());
    }

    #[test]
    fn gaussian_kernel_sums_to_one() {
        let k = gaussian_kernel(7, 1.3).unwrap();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[6]);
    }

    #[test]
    fn gaussian_impulse_is_outer_product() {
        let mut data = vec![0.0; 121];
        data[5 * 11 + 5] = 1.0;
        let img = GrayImage::new(11, 11, data).unwrap();
        let out = gaussian_smooth(&img, 5, 1.0).unwrap();
        // 1-D kernel computed independently
        let raw: Vec<f64> = (-2..=2)
            .map(|d: i32| (-(d * d) as f64 / 2.0).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        for y in 0..11 {
            for x in 0..11 {
                let (dx, dy) = (x as i32 - 5, y as i32 - 5);
                let expected = if dx.abs() <= 2 && dy.abs() <= 2 {
                    raw[(dx + 2) as usize] * raw[(dy + 2) as usize] / (s * s)
                } else {
                    0.0
                };
                assert!((out.get(x, y) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn huge_sigma_gaussian_matches_box() {
        let img = random_image(16, 16, 3);
        let g = gaussian_smooth(&img, 7, 1e6).unwrap();
        let b = box_smooth(&img, 7).unwrap();
        assert!(max_abs_diff(&g, &b) < 1e-6);
    }

    #[test]
    fn bilateral_constant_is_identity() {
        let img = GrayImage::filled(8, 8, 0.7).unwrap();
        let out = bilateral_filter(&img, &BilateralParams::default()).unwrap();
        assert!(max_abs_diff(&img, &out) < 1e-15);
    }

    #[test]
    fn bilateral_preserves_step_edge() {
        let data = (0..25).map(|i| if i % 5 < 2 { 0.0 } else { 1.0 }).collect();
        let img = GrayImage::new(5, 5, data).unwrap();
        let params = BilateralParams {
            radius: 2,
            sigma_space: 2.0,
            sigma_range: 0.05,
        };
        let out = bilateral_filter(&img, &params).unwrap();
        assert!(max_abs_diff(&img, &out) < 1e-3);
    }

    #[test]
    fn bilateral_with_flat_range_is_gaussian() {
        let img = random_image(16, 16, 9);
        let params = BilateralParams {
            radius: 3,
            sigma_space: 1.7,
            sigma_range: 1e6,
        };
        let b = bilateral_filter(&img, &params).unwrap();
        let g = gaussian_smooth(&img, 7, 1.7).unwrap();
        assert!(max_abs_diff(&b, &g) < 1e-6);
    }

    #[test]
    fn bilateral_rejects_invalid_params() {
        let img = GrayImage::filled(4, 4, 0.0).unwrap();
        for p in [
            BilateralParams {
                radius: 0,
                ..Default::default()
            },
            BilateralParams {
                sigma_space: 0.0,
                ..Default::default()
            },
            BilateralParams {
                sigma_range: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bilateral_filter(&img, &p).is_err());
        }
    }

    #[test]
    fn grayscale_weights() {
        let img = RgbImage::new(
            3,
            1,
            vec![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let g = to_grayscale(&img);
        assert_eq!((g.width(), g.height()), (3, 1));
        assert!((g.get(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(g.get(1, 0), 0.0);
        assert!((g.get(2, 0) - 0.299).abs() < 1e-15);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = random_image(7, 5, 1);
        assert_eq!(resize(&img, 7, 5).unwrap(), img);
        let c = GrayImage::filled(7, 5, 0.3).unwrap();
        let r = resize(&c, 13, 2).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(resize(&img, 0, 3).is_err());
    }

    #[test]
    fn resize_two_pixels_to_four() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize(&img, 4, 1).unwrap();
        // source x = (x + 0.5) * 0.5 - 0.5 clamped to [0, 1]
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn pipeline_rejects_unknown_step() {
        let cfg = PreprocessConfig {
            steps: vec!["sharpen".into()],
            ..Default::default()
        };
        let img = GrayImage::filled(8, 8, 0.1).unwrap();
        assert!(matches!(
            preprocess_pipeline(&img, &cfg),
            Err(Error::UnknownStep(s)) if s == "sharpen"
        ));
    }

    #[test]
    fn pipeline_empty_is_identity_and_composes() {
        let img = random_image(16, 16, 5);
        assert_eq!(
            preprocess_pipeline(&img, &PreprocessConfig::identity()).unwrap(),
            img
        );

        let cfg = PreprocessConfig::default();
        let piped = preprocess_pipeline(&img, &cfg).unwrap();
        let manual =
            bilateral_filter(&box_smooth(&img, 7).unwrap(), &BilateralParams::default()).unwrap();
        assert_eq!(piped, manual);

        let c = GrayImage::filled(16, 16, 0.25).unwrap();
        let smooth_only = PreprocessConfig {
            steps: vec!["smooth".into()],
            ..Default::default()
        };
        let out = preprocess_pipeline(&c, &smooth_only).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn new_rejects_out_of_range() {
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5]).is_err());
        assert!(GrayImage::from_raw(1, 1, vec![255.0]).is_ok());
        assert!(GrayImage::from_raw(1, 1, vec![f64::NAN]).is_err());
    }
}
