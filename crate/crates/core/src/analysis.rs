//! Image quality metrics, correlation, joint sampling, and curve fits.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{PixcueError, Result};
use crate::forward_model::RealImage;
use crate::rng::{stream, stream_rng};

/// PSNR reported for (numerically) identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 7;
pub const DEFAULT_FOREGROUND_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub id: String,
    pub nmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mean_uncertainty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    Linear,
    Exponential,
}

/// Linear: `y = slope x + intercept`. Exponential: `y = scale * exp(rate x)`,
/// stored as `coefficients = [scale, rate]`, with R² computed in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub coefficients: [f64; 2],
    pub r_squared: f64,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        match self.model {
            FitModel::Linear => self.coefficients[0] * x + self.coefficients[1],
            FitModel::Exponential => self.coefficients[0] * (self.coefficients[1] * x).exp(),
        }
    }
}

fn squared_error(a: &RealImage, b: &RealImage) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `||recon - reference||² / ||reference||²`.
pub fn nmse(recon: &RealImage, reference: &RealImage) -> Result<f64> {
    let err = squared_error(recon, reference)?;
    let energy: f64 = reference.values().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(PixcueError::InvalidArgument("nmse reference is identically zero".into()));
    }
    Ok(err / energy)
}

/// `10 log10(peak² / mse)` with `peak = max(reference)`, capped at 100 dB.
pub fn psnr(recon: &RealImage, reference: &RealImage) -> Result<f64> {
    let mse = squared_error(recon, reference)? / reference.len() as f64;
    let peak = reference.max();
    if mse < peak * peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over all fully-contained 7x7 uniform windows, K1 = 0.01,
/// K2 = 0.03, sample covariances. The dynamic range is taken over both images
/// so the metric is symmetric.
pub fn ssim(recon: &RealImage, reference: &RealImage) -> Result<f64> {
    recon.same_shape(reference)?;
    let (rows, cols) = (reference.rows(), reference.cols());
    let w = SSIM_WINDOW;
    if rows < w || cols < w {
        return Err(PixcueError::Shape(format!("ssim needs at least {w}x{w} images")));
    }
    let range = recon.max().max(reference.max()) - recon.min().min(reference.min());
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let np = (w * w) as f64;
    let cov_norm = np / (np - 1.0);
    let (a, b) = (recon.values(), reference.values());
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - w {
        for c0 in 0..=cols - w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + w {
                for c in c0..c0 + w {
                    let (x, y) = (a[r * cols + c], b[r * cols + c]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / np, sb / np);
            let va = cov_norm * (saa / np - ma * ma);
            let vb = cov_norm * (sbb / np - mb * mb);
            let vab = cov_norm * (sab / np - ma * mb);
            let num = (2.0 * ma * mb + c1) * (2.0 * vab + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += if den == 0.0 { 1.0 } else { num / den };
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(PixcueError::InvalidArgument(format!(
            "pearson needs two equal-length lists of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(PixcueError::UndefinedCorrelation("constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pixel is foreground iff its value exceeds `threshold * max(reference)`.
pub fn foreground_mask(reference: &RealImage, threshold: f64) -> Vec<bool> {
    let cut = threshold * reference.max();
    reference.values().iter().map(|&v| v > cut).collect()
}

/// Values of `image` at the selected pixels.
pub fn masked_values(image: &RealImage, mask: &[bool]) -> Vec<f64> {
    image.values().iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect()
}

/// Draws `n` distinct pixels (from the foreground when a mask is given) and
/// returns `(row, col, a, b)` for each, in draw order.
pub fn sample_joint(
    map_a: &RealImage,
    map_b: &RealImage,
    n: usize,
    seed: u64,
    foreground: Option<&[bool]>,
) -> Result<Vec<(usize, usize, f64, f64)>> {
    map_a.same_shape(map_b)?;
    let candidates: Vec<usize> = match foreground {
        Some(mask) => {
            if mask.len() != map_a.len() {
                return Err(PixcueError::Shape("foreground mask size mismatch".into()));
            }
            (0..map_a.len()).filter(|&i| mask[i]).collect()
        }
        None => (0..map_a.len()).collect(),
    };
    if n > candidates.len() {
        return Err(PixcueError::InvalidArgument(format!(
            "cannot sample {n} pixels from {} candidates",
            candidates.len()
        )));
    }
    let mut rng = stream_rng(seed, stream::SAMPLE_JOINT);
    let cols = map_a.cols();
    Ok(index::sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|i| {
            let p = candidates[i];
            (p / cols, p % cols, map_a.values()[p], map_b.values()[p])
        })
        .collect())
}

/// Ordinary least squares `y = slope x + intercept`; R² := 0 for constant y.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(PixcueError::InvalidArgument("linear fit needs >= 2 paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(PixcueError::InvalidArgument("linear fit needs non-constant x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    Ok(FitResult {
        model: FitModel::Linear,
        coefficients: [slope, intercept],
        r_squared,
    })
}

/// `y = a exp(b x)` via least squares on `(x, ln y)`.
pub fn exponential_fit(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if let Some(bad) = y.iter().find(|&&v| !(v > 0.0)) {
        return Err(PixcueError::InvalidArgument(format!(
            "exponential fit needs positive y, got {bad}"
        )));
    }
    let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let lin = linear_fit(x, &ln_y)?;
    Ok(FitResult {
        model: FitModel::Exponential,
        coefficients: [lin.coefficients[1].exp(), lin.coefficients[0]],
        r_squared: lin.r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(n: usize, f: impl Fn(usize, usize) -> f64) -> RealImage {
        RealImage::new(n, n, (0..n * n).map(|i| f(i / n, i % n)).collect()).unwrap()
    }

    fn ramp(n: usize) -> RealImage {
        img(n, |r, c| (r * n + c) as f64 / (n * n) as f64)
    }

    #[test]
    fn nmse_examples() {
        let r = ramp(8);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert_eq!(nmse(&RealImage::zeros(8, 8), &r).unwrap(), 1.0);
        let doubled = img(8, |row, col| 2.0 * r.get(row, col));
        assert!((nmse(&doubled, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmse(&r, &RealImage::zeros(8, 8)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let mut reference = RealImage::zeros(10, 10);
        reference.values_mut()[0] = 1.0;
        assert_eq!(psnr(&reference, &reference).unwrap(), PSNR_CAP_DB);
        // mse = 0.01 when 1 of 100 pixels is off by 1
        let mut recon = reference.clone();
        recon.values_mut()[5] = 1.0;
        assert!((psnr(&recon, &reference).unwrap() - 20.0).abs() < 1e-9);
        // mse = peak² = 1
        let minus = RealImage::new(10, 10, reference.values().iter().map(|v| v - 1.0).collect()).unwrap();
        assert!(psnr(&minus, &reference).unwrap().abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_error() {
        let r = ramp(16);
        let mut last = f64::INFINITY;
        for k in 1..6 {
            let noisy = img(16, |row, col| r.get(row, col) + 0.01 * k as f64 * ((row + col) % 2) as f64);
            let p = psnr(&noisy, &r).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    // Direct per-window evaluation of the SSIM formula.
    fn ssim_oracle(a: &RealImage, b: &RealImage) -> f64 {
        let n = a.rows();
        let range = a.max().max(b.max()) - a.min().min(b.min());
        let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
        let mut vals = Vec::new();
        for r0 in 0..=n - 7 {
            for c0 in 0..=n - 7 {
                let xs: Vec<f64> = (0..49).map(|k| a.get(r0 + k / 7, c0 + k % 7)).collect();
                let ys: Vec<f64> = (0..49).map(|k| b.get(r0 + k / 7, c0 + k % 7)).collect();
                let mx = xs.iter().sum::<f64>() / 49.0;
                let my = ys.iter().sum::<f64>() / 49.0;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / 48.0;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / 48.0;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / 48.0;
                vals.push((2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_examples() {
        let r = ramp(16);
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        let shifted = img(16, |row, col| r.get(row, col) + 0.1);
        let s = ssim(&shifted, &r).unwrap();
        assert!((s - ssim_oracle(&shifted, &r)).abs() < 1e-12);
        assert!(s < 1.0);
        assert!((ssim(&r, &shifted).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 5.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        // hand computation: sum dxdy = 3, sum dx² = 2, sum dy² = 14/3
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 3.0 / (2.0 * 14.0 / 3.0f64).sqrt()).abs() < 1e-12);
        assert!((r - 0.981).abs() < 1e-3);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(PixcueError::UndefinedCorrelation(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn sample_joint_examples() {
        let a = ramp(8);
        let b = img(8, |r, c| (r + c) as f64);
        let all = sample_joint(&a, &b, 64, 1, None).unwrap();
        let mut seen: Vec<usize> = all.iter().map(|(r, c, _, _)| r * 8 + c).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
        assert_eq!(sample_joint(&a, &b, 10, 9, None).unwrap(), sample_joint(&a, &b, 10, 9, None).unwrap());
        let big = ramp(64);
        let mut picks: Vec<(usize, usize)> =
            sample_joint(&big, &big, 100, 3, None).unwrap().iter().map(|p| (p.0, p.1)).collect();
        picks.sort_unstable();
        picks.dedup();
        assert_eq!(picks.len(), 100);
        let fg = foreground_mask(&a, 0.5);
        for (r, c, _, _) in sample_joint(&a, &b, 10, 2, Some(&fg)).unwrap() {
            assert!(fg[r * 8 + c]);
        }
        assert!(sample_joint(&a, &b, 65, 1, None).is_err());
    }

    #[test]
    fn foreground_examples() {
        assert!(foreground_mask(&RealImage::zeros(4, 4), 0.05).iter().all(|&m| !m));
        let r = ramp(8);
        let fg0 = foreground_mask(&r, 0.0);
        assert_eq!(fg0, r.values().iter().map(|&v| v > 0.0).collect::<Vec<_>>());
        let fg = foreground_mask(&r, 0.5);
        let cut = 0.5 * r.max();
        let oracle: Vec<bool> = r.values().iter().map(|&v| v > cut).collect();
        assert_eq!(fg, oracle);
        assert_eq!(fg.iter().filter(|&&m| m).count(), 32);
    }

    #[test]
    fn linear_fit_examples() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.coefficients[0] - 3.0).abs() < 1e-12 && (f.coefficients[1] - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let c = linear_fit(&x, &[2.0; 4]).unwrap();
        assert_eq!(c.coefficients[0], 0.0);
        assert_eq!(c.r_squared, 0.0);
    }

    #[test]
    fn linear_fit_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        let f = linear_fit(&x, &y).unwrap();
        // solve [n sx; sx sxx] [b; m] = [sy; sxy] by Cramer's rule
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        let slope = (n * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        assert!((f.coefficients[0] - slope).abs() < 1e-9);
        assert!((f.coefficients[1] - intercept).abs() < 1e-9);
        // residuals orthogonal to 1 and x
        let res: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - f.predict(*a)).collect();
        assert!(res.iter().sum::<f64>().abs() < 1e-9);
        assert!(res.iter().zip(&x).map(|(r, a)| r * a).sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn exponential_fit_examples() {
        let x = [0.0f64, 0.5, 1.0, 1.5];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * (3.0 * v).exp()).collect();
        let f = exponential_fit(&x, &y).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-9 && (f.coefficients[1] - 3.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let c = exponential_fit(&x, &[4.0; 4]).unwrap();
        assert!((c.coefficients[0] - 4.0).abs() < 1e-12 && c.coefficients[1].abs() < 1e-12);
        assert!(exponential_fit(&x, &[1.0, 0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn exponential_fit_matches_log_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 20.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.5 * (-0.7 * v).exp() * (1.0 + rng.gen_range(-0.05..0.05))).collect();
        let f = exponential_fit(&x, &y).unwrap();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let n = x.len() as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), ly.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        let rate = (n * sxy - sx * sy) / det;
        let scale = ((sxx * sy - sx * sxy) / det).exp();
        assert!((f.coefficients[1] - rate).abs() < 1e-9);
        assert!((f.coefficients[0] - scale).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn nmse_scale_law(c in -3.0f64..3.0) {
            let r = ramp(8);
            let scaled = img(8, |row, col| c * r.get(row, col));
            prop_assert!((nmse(&scaled, &r).unwrap() - (c - 1.0).powi(2)).abs() < 1e-9);
        }

        #[test]
        fn pearson_affine_invariant(v in prop::collection::vec(-10.0f64..10.0, 3..20),
                                    scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let w: Vec<f64> = v.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
            if let Ok(r) = pearson(&v, &w) {
                let t: Vec<f64> = v.iter().map(|x| scale * x + shift).collect();
                prop_assert!((pearson(&t, &w).unwrap() - r).abs() < 1e-9);
            }
        }

        #[test]
        fn ssim_self_is_one(v in prop::collection::vec(0.0f64..1.0, 64)) {
            let a = RealImage::new(8, 8, v).unwrap();
            prop_assume!(a.max() > a.min());
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn refit_of_fitted_line_is_exact(v in prop::collection::vec(-5.0f64..5.0, 3..20)) {
            let x: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
            let f = linear_fit(&x, &v).unwrap();
            let line: Vec<f64> = x.iter().map(|a| f.predict(*a)).collect();
            let g = linear_fit(&x, &line).unwrap();
            if f.coefficients[0].abs() > 1e-6 {
                prop_assert!((g.r_squared - 1.0).abs() < 1e-9);
            }
        }
    }
}
