//! Uncertainty maps from per-pixel class distributions, plus the Monte Carlo
//! dropout baselines.

use serde::{Deserialize, Serialize};

use crate::error::{PixcueError, Result};
use crate::forward_model::{KSpaceGrid, RealImage, SamplingMask};
use crate::net::{forward, ForwardMode, NetworkParameters};
use crate::quantizer::{expectation_unchecked, ClassProbabilityVolume, SUM_TOLERANCE};
use crate::rng::{derive_seed, stream};

/// Fraction of the (smoothed) peak a class must exceed to be counted by
/// [`fast_variance_map`]. A Gaussian falls to ~0.607 of its peak at one sigma.
pub const PEAK_FRACTION: f64 = 0.6;

/// Non-negative, finite per-pixel uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap(RealImage);

impl UncertaintyMap {
    pub fn new(image: RealImage) -> Result<Self> {
        if let Some(v) = image.values().iter().find(|v| !(**v >= 0.0)) {
            return Err(PixcueError::InvalidArgument(format!("negative uncertainty {v}")));
        }
        Ok(Self(image))
    }

    pub fn image(&self) -> &RealImage {
        &self.0
    }

    pub fn into_image(self) -> RealImage {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

/// Variance of the class index under one pixel's distribution.
pub fn class_variance(p: &[f64]) -> f64 {
    let (mut m1, mut m2) = (0.0, 0.0);
    for (c, &w) in p.iter().enumerate() {
        let c = c as f64;
        m1 += c * w;
        m2 += c * c * w;
    }
    (m2 - m1 * m1).max(0.0)
}

/// `Var(class) / (D - 1)` at every pixel.
pub fn exact_variance_map(p: &ClassProbabilityVolume) -> Result<UncertaintyMap> {
    p.check_normalized(SUM_TOLERANCE)?;
    let top = (p.classes() - 1) as f64;
    let values = p.pixels().map(|px| class_variance(px) / top).collect();
    Ok(UncertaintyMap(RealImage::from_raw(p.rows(), p.cols(), values)))
}

/// Number of classes above `PEAK_FRACTION` times the 3-point smoothed peak.
pub fn peak_width_count(p: &[f64]) -> usize {
    let (argmax, _) = p
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best });
    let lo = argmax.saturating_sub(1);
    let hi = (argmax + 1).min(p.len() - 1);
    let peak = p[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    let cut = PEAK_FRACTION * peak;
    p.iter().filter(|&&v| v > cut).count()
}

/// Gaussian-width shortcut: `sigma = (count - 1) / 2`, `U = sigma² / (D - 1)`.
pub fn fast_variance_map(p: &ClassProbabilityVolume) -> Result<UncertaintyMap> {
    p.check_normalized(SUM_TOLERANCE)?;
    let top = (p.classes() - 1) as f64;
    let values = p
        .pixels()
        .map(|px| {
            let sigma = (peak_width_count(px).max(1) - 1) as f64 / 2.0;
            sigma * sigma / top
        })
        .collect();
    Ok(UncertaintyMap(RealImage::from_raw(p.rows(), p.cols(), values)))
}

/// Per-pixel `|recon - reference|`.
pub fn error_map(recon: &RealImage, reference: &RealImage) -> Result<RealImage> {
    recon.same_shape(reference)?;
    let values = recon.values().iter().zip(reference.values()).map(|(a, b)| (a - b).abs()).collect();
    Ok(RealImage::from_raw(recon.rows(), recon.cols(), values))
}

/// Population variance `(1/T) sum (x_t - mean)²` across images, computed
/// relative to the first image so identical inputs give exactly zero.
pub fn population_variance(images: &[RealImage]) -> Result<UncertaintyMap> {
    let first = images
        .first()
        .ok_or_else(|| PixcueError::InvalidArgument("no images".into()))?;
    for img in images {
        first.same_shape(img)?;
    }
    let t = images.len() as f64;
    let mut mean_shift = vec![0.0; first.len()];
    for img in images {
        for ((m, &v), &v0) in mean_shift.iter_mut().zip(img.values()).zip(first.values()) {
            *m += v - v0;
        }
    }
    mean_shift.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; first.len()];
    for img in images {
        for (i, (&v, &v0)) in img.values().iter().zip(first.values()).enumerate() {
            let d = (v - v0) - mean_shift[i];
            var[i] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= t);
    UncertaintyMap::new(RealImage::from_raw(first.rows(), first.cols(), var))
}

/// Exact variance of the pixel-wise averaged distribution.
pub fn mean_distribution_variance(volumes: &[ClassProbabilityVolume]) -> Result<UncertaintyMap> {
    exact_variance_map(&ClassProbabilityVolume::mean_of(volumes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of stochastic passes T.
    pub passes: usize,
    /// Dropout fraction; 0 disables dropout (every pass identical).
    pub dropout_fraction: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            passes: 50,
            dropout_fraction: 0.2,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes < 2 {
            return Err(PixcueError::InvalidArgument(format!("need at least 2 MC passes, got {}", self.passes)));
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(PixcueError::InvalidArgument(format!(
                "dropout fraction {} outside [0, 1)",
                self.dropout_fraction
            )));
        }
        Ok(())
    }

    /// Seed of pass `t`, fixed before any pass runs.
    pub fn pass_seed(&self, t: usize) -> u64 {
        derive_seed(derive_seed(self.seed, stream::MC_PASS), t as u64)
    }

    fn mode(&self, t: usize) -> ForwardMode {
        ForwardMode::Dropout {
            fraction: self.dropout_fraction,
            seed: self.pass_seed(t),
        }
    }
}

/// Both Monte Carlo maps and the mean reconstruction from one set of passes.
#[derive(Debug, Clone)]
pub struct McResult {
    /// Population variance of the per-pass expectation images.
    pub variance: UncertaintyMap,
    /// Exact variance of the averaged distribution.
    pub mean_distribution: UncertaintyMap,
    pub mean_image: RealImage,
}

pub fn mc_inference(
    y_u: &KSpaceGrid,
    mask: &SamplingMask,
    params: &NetworkParameters,
    cfg: &McConfig,
) -> Result<McResult> {
    cfg.validate()?;
    let volumes = (0..cfg.passes)
        .map(|t| forward(y_u, mask, params, cfg.mode(t)))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<RealImage> = volumes.iter().map(expectation_unchecked).collect();
    let mean = ClassProbabilityVolume::mean_of(&volumes)?;
    Ok(McResult {
        variance: population_variance(&images)?,
        mean_distribution: exact_variance_map(&mean)?,
        mean_image: expectation_unchecked(&mean),
    })
}

/// Predictive variance of the reconstruction across T dropout passes.
pub fn mc_dropout_variance(
    y_u: &KSpaceGrid,
    mask: &SamplingMask,
    params: &NetworkParameters,
    cfg: &McConfig,
) -> Result<UncertaintyMap> {
    cfg.validate()?;
    let images = (0..cfg.passes)
        .map(|t| forward(y_u, mask, params, cfg.mode(t)).map(|v| expectation_unchecked(&v)))
        .collect::<Result<Vec<_>>>()?;
    population_variance(&images)
}

/// Exact variance of the distribution averaged over T dropout passes.
pub fn mc_mean_distribution_variance(
    y_u: &KSpaceGrid,
    mask: &SamplingMask,
    params: &NetworkParameters,
    cfg: &McConfig,
) -> Result<UncertaintyMap> {
    cfg.validate()?;
    let volumes = (0..cfg.passes)
        .map(|t| forward(y_u, mask, params, cfg.mode(t)))
        .collect::<Result<Vec<_>>>()?;
    mean_distribution_variance(&volumes)
}

/// `uncertainty,abs_error` rows, one per pixel (restricted to `mask` if given).
pub fn uncertainty_error_csv(map: &UncertaintyMap, error: &RealImage, mask: Option<&[bool]>) -> Result<String> {
    map.image().same_shape(error)?;
    let mut out = String::from("row,col,uncertainty,abs_error\n");
    let cols = error.cols();
    for (i, (u, e)) in map.values().iter().zip(error.values()).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            out.push_str(&format!("{},{},{u:e},{e:e}\n", i / cols, i % cols));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(rows: Vec<Vec<f64>>) -> ClassProbabilityVolume {
        let d = rows[0].len();
        let n = rows.len();
        ClassProbabilityVolume::new(1, n, d, rows.concat()).unwrap()
    }

    fn one_hot(d: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[c] = 1.0;
        v
    }

    fn gaussian(d: usize, mu: f64, sigma: f64) -> Vec<f64> {
        let w: Vec<f64> = (0..d).map(|c| (-0.5 * ((c as f64 - mu) / sigma).powi(2)).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    // Direct enumeration: sum over every class of c and c² weights.
    fn variance_oracle(p: &[f64]) -> f64 {
        let mean: f64 = p.iter().enumerate().map(|(c, w)| c as f64 * w).sum();
        p.iter().enumerate().map(|(c, w)| (c as f64 - mean).powi(2) * w).sum()
    }

    #[test]
    fn exact_variance_examples() {
        let v = exact_variance_map(&vol(vec![one_hot(256, 0), one_hot(256, 255), one_hot(256, 9)])).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));

        let uniform = vec![1.0 / 256.0; 256];
        assert!((variance_oracle(&uniform) - 5461.25).abs() < 1e-9);
        let u = exact_variance_map(&vol(vec![uniform])).unwrap().values()[0];
        assert!((u - 5461.25 / 255.0).abs() < 1e-9);
        assert!((u - 21.4167).abs() < 1e-4);

        let mut half = vec![0.0; 256];
        half[100] = 0.5;
        half[200] = 0.5;
        assert!((variance_oracle(&half) - 2500.0).abs() < 1e-9);
        let h = exact_variance_map(&vol(vec![half])).unwrap().values()[0];
        assert!((h - 2500.0 / 255.0).abs() < 1e-9);
        assert!((h - 9.8039).abs() < 1e-4);
    }

    #[test]
    fn exact_variance_rejects_unnormalized() {
        let bad = ClassProbabilityVolume::from_raw(1, 1, 2, vec![0.3, 0.3]).unwrap();
        assert!(exact_variance_map(&bad).is_err());
        assert!(fast_variance_map(&bad).is_err());
    }

    #[test]
    fn variance_is_shift_equivariant() {
        let a = gaussian(256, 90.0, 7.0);
        let mut b = vec![0.0; 256];
        b[40..].copy_from_slice(&a[..216]);
        let (va, vb) = (class_variance(&a), class_variance(&b));
        assert!((va - vb).abs() < 1e-6 * va, "{va} {vb}");
    }

    #[test]
    fn fast_variance_one_hot_is_zero() {
        let v = fast_variance_map(&vol(vec![one_hot(256, 0), one_hot(256, 128), one_hot(256, 255)])).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    // Enumerate every class against the 0.6 x smoothed-peak threshold.
    fn count_oracle(p: &[f64]) -> usize {
        let mut best = 0;
        for c in 0..p.len() {
            if p[c] > p[best] {
                best = c;
            }
        }
        let nb: Vec<f64> = [best as isize - 1, best as isize, best as isize + 1]
            .iter()
            .filter(|&&c| c >= 0 && (c as usize) < p.len())
            .map(|&c| p[c as usize])
            .collect();
        let peak = nb.iter().sum::<f64>() / nb.len() as f64;
        (0..p.len()).filter(|&c| p[c] > 0.6 * peak).count()
    }

    #[test]
    fn fast_variance_sigma_five() {
        let p = gaussian(256, 128.0, 5.0);
        assert_eq!(count_oracle(&p), 11);
        let above: Vec<usize> = (0..256).filter(|&c| p[c] > 0.6 * (p[127] + p[128] + p[129]) / 3.0).collect();
        assert_eq!(above, (123..=133).collect::<Vec<_>>());
        assert_eq!(peak_width_count(&p), 11);
        let u = fast_variance_map(&vol(vec![p.clone()])).unwrap().values()[0];
        assert!((u - 25.0 / 255.0).abs() < 1e-12);
        assert!((u - 0.09804).abs() < 1e-5);
        assert!((variance_oracle(&p) - 25.0).abs() < 1e-6);
    }

    #[test]
    fn fast_variance_sigma_two() {
        let p = gaussian(256, 50.0, 2.0);
        assert_eq!(count_oracle(&p), 5);
        let u = fast_variance_map(&vol(vec![p])).unwrap().values()[0];
        assert!((u - 4.0 / 255.0).abs() < 1e-12);
        assert!((u - 0.01569).abs() < 1e-5);
    }

    #[test]
    fn fast_tracks_exact_on_gaussians() {
        for sigma in 2..=20 {
            let s = sigma as f64;
            let p = gaussian(256, 128.0, s);
            assert_eq!(peak_width_count(&p), count_oracle(&p));
            let sigma_hat = (peak_width_count(&p) - 1) as f64 / 2.0;
            assert!((sigma_hat - s).abs() <= 1.0, "sigma {s} -> {sigma_hat}");
            let exact = class_variance(&p);
            let fast = sigma_hat * sigma_hat;
            assert!((fast - exact).abs() / exact <= (2.0 * s + 1.0) / (s * s));
        }
    }

    #[test]
    fn boundary_peak_uses_existing_neighbours() {
        let p = gaussian(16, 0.0, 1.5);
        assert_eq!(peak_width_count(&p), count_oracle(&p));
        let q = gaussian(16, 15.0, 1.5);
        assert_eq!(peak_width_count(&q), count_oracle(&q));
    }

    #[test]
    fn error_map_examples() {
        let r = RealImage::new(1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        assert!(error_map(&r, &r).unwrap().values().iter().all(|&v| v == 0.0));
        let shifted = RealImage::new(1, 3, r.values().iter().map(|v| v + 0.1).collect()).unwrap();
        for v in error_map(&shifted, &r).unwrap().values() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        let a = RealImage::new(1, 4, vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        let b = RealImage::new(1, 4, vec![0.1, 1.0, 2.5, -0.25]).unwrap();
        let e = error_map(&a, &b).unwrap();
        for i in 0..4 {
            assert_eq!(e.values()[i], (a.values()[i] - b.values()[i]).abs());
        }
    }

    #[test]
    fn population_variance_two_passes() {
        let a = RealImage::new(1, 2, vec![0.2, 0.5]).unwrap();
        let b = RealImage::new(1, 2, vec![0.6, 0.5]).unwrap();
        let v = population_variance(&[a.clone(), b]).unwrap();
        assert!((v.values()[0] - 0.04).abs() < 1e-15);
        assert_eq!(v.values()[1], 0.0);
        let same = population_variance(&vec![a; 50]).unwrap();
        assert!(same.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn population_variance_is_order_invariant() {
        let imgs: Vec<RealImage> = (0..7)
            .map(|t| RealImage::new(1, 3, vec![t as f64 * 0.1, (t * t) as f64 * 0.01, 0.3]).unwrap())
            .collect();
        let mut rev = imgs.clone();
        rev.reverse();
        let (a, b) = (population_variance(&imgs).unwrap(), population_variance(&rev).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_distribution_examples() {
        let same = vec![vol(vec![one_hot(256, 40)]); 3];
        assert_eq!(mean_distribution_variance(&same).unwrap().values()[0], 0.0);
        let mixed = [vol(vec![one_hot(256, 100)]), vol(vec![one_hot(256, 200)])];
        let avg = ClassProbabilityVolume::mean_of(&mixed).unwrap();
        assert!((avg.pixel(0).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let u = mean_distribution_variance(&mixed).unwrap().values()[0];
        assert!((u - 2500.0 / 255.0).abs() < 1e-9);
    }

    #[test]
    fn mc_config_validation() {
        assert!(McConfig { passes: 1, ..McConfig::default() }.validate().is_err());
        assert!(McConfig { dropout_fraction: 1.0, ..McConfig::default() }.validate().is_err());
        assert!(McConfig::default().validate().is_ok());
        let c = McConfig::default();
        assert_ne!(c.pass_seed(0), c.pass_seed(1));
    }

    #[test]
    fn csv_export() {
        let m = UncertaintyMap::new(RealImage::new(1, 2, vec![0.5, 0.25]).unwrap()).unwrap();
        let e = RealImage::new(1, 2, vec![0.1, 0.2]).unwrap();
        let csv = uncertainty_error_csv(&m, &e, Some(&[false, true])).unwrap();
        assert_eq!(csv, "row,col,uncertainty,abs_error\n0,1,2.5e-1,2e-1\n");
        assert!(UncertaintyMap::new(RealImage::new(1, 1, vec![-1.0]).unwrap()).is_err());
    }
}
