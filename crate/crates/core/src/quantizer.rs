//! Intensity quantization, class-probability volumes, and the classification
//! losses defined on them.

use crate::error::{PixcueError, Result};
use crate::forward_model::RealImage;

/// Probabilities are clamped to this floor before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on per-pixel probability sums accepted by consumers.
pub const SUM_TOLERANCE: f64 = 1e-3;

pub const DEFAULT_BITS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    rows: usize,
    cols: usize,
    n_bits: u32,
    labels: Vec<u32>,
}

impl QuantizedImage {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn classes(&self) -> usize {
        1 << self.n_bits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Maps every label back to `h / (D - 1)`.
    pub fn dequantize(&self) -> RealImage {
        let top = (self.classes() - 1) as f64;
        RealImage::from_raw(self.rows, self.cols, self.labels.iter().map(|&h| h as f64 / top).collect())
    }
}

/// `h = round_half_up(clamp(x, 0, 1) * (D - 1))`.
pub fn quantize(image: &RealImage, n_bits: u32) -> Result<QuantizedImage> {
    if !(1..=16).contains(&n_bits) {
        return Err(PixcueError::InvalidArgument(format!("n_bits {n_bits} outside 1..=16")));
    }
    let top = ((1u32 << n_bits) - 1) as f64;
    let labels = image
        .values()
        .iter()
        .map(|&x| (x.clamp(0.0, 1.0) * top + 0.5).floor() as u32)
        .collect();
    Ok(QuantizedImage {
        rows: image.rows(),
        cols: image.cols(),
        n_bits,
        labels,
    })
}

/// Per-pixel distributions over `classes` intensity levels, stored pixel-major
/// (`probs[pixel * classes + class]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilityVolume {
    rows: usize,
    cols: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl ClassProbabilityVolume {
    /// Validates shape, non-negativity, and per-pixel normalization (1e-3).
    pub fn new(rows: usize, cols: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        let v = Self::from_raw(rows, cols, classes, probs)?;
        v.check_normalized(SUM_TOLERANCE)?;
        Ok(v)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(PixcueError::Shape(format!("need at least 2 classes, got {classes}")));
        }
        if probs.len() != rows * cols * classes {
            return Err(PixcueError::Shape(format!(
                "{} probabilities for {rows}x{cols}x{classes}",
                probs.len()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(PixcueError::InvalidArgument(format!(
                "probability entry {i} is negative or not finite"
            )));
        }
        Ok(Self { rows, cols, classes, probs })
    }

    pub fn check_normalized(&self, tolerance: f64) -> Result<()> {
        for (pixel, p) in self.pixels().enumerate() {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(PixcueError::NotNormalized { pixel, sum });
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.probs[index * self.classes..(index + 1) * self.classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.probs.chunks_exact(self.classes)
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.rows, self.cols, self.classes) != (other.rows, other.cols, other.classes) {
            return Err(PixcueError::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.rows, self.cols, self.classes, other.rows, other.cols, other.classes
            )));
        }
        Ok(())
    }

    /// Pixel-wise average of several volumes of the same shape.
    pub fn mean_of(volumes: &[ClassProbabilityVolume]) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| PixcueError::InvalidArgument("no volumes to average".into()))?;
        let mut acc = vec![0.0; first.probs.len()];
        for v in volumes {
            first.same_shape(v)?;
            acc.iter_mut().zip(&v.probs).for_each(|(a, p)| *a += p);
        }
        let k = volumes.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Self::from_raw(first.rows, first.cols, first.classes, acc)
    }
}

/// Dirac-delta distribution at each pixel's label.
pub fn one_hot_target(q: &QuantizedImage) -> ClassProbabilityVolume {
    let d = q.classes();
    let mut probs = vec![0.0; q.labels.len() * d];
    for (i, &h) in q.labels.iter().enumerate() {
        probs[i * d + h as usize] = 1.0;
    }
    ClassProbabilityVolume {
        rows: q.rows,
        cols: q.cols,
        classes: d,
        probs,
    }
}

/// Probability-weighted mean class index, normalized to [0, 1].
pub fn expectation_image(p: &ClassProbabilityVolume) -> Result<RealImage> {
    p.check_normalized(SUM_TOLERANCE)?;
    Ok(expectation_unchecked(p))
}

pub(crate) fn expectation_unchecked(p: &ClassProbabilityVolume) -> RealImage {
    let top = (p.classes - 1) as f64;
    let values = p
        .pixels()
        .map(|px| px.iter().enumerate().map(|(c, &w)| c as f64 * w).sum::<f64>() / top)
        .collect();
    RealImage::from_raw(p.rows, p.cols, values)
}

/// Per-pixel categorical cross-entropy `-sum t log p` (nats) and its mean.
pub fn cross_entropy(
    p: &ClassProbabilityVolume,
    target: &ClassProbabilityVolume,
) -> Result<(RealImage, f64)> {
    p.same_shape(target)?;
    let values: Vec<f64> = p
        .pixels()
        .zip(target.pixels())
        .map(|(q, t)| {
            let mut acc = 0.0;
            for (&qc, &tc) in q.iter().zip(t) {
                if tc > 0.0 {
                    acc -= tc * qc.max(PROB_FLOOR).ln();
                }
            }
            acc
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((RealImage::from_raw(p.rows, p.cols, values), mean))
}

/// Per-pixel `KL(target || p)`, with `0 log 0 = 0` and the same clamp as
/// [`cross_entropy`].
pub fn kl_divergence(target: &ClassProbabilityVolume, p: &ClassProbabilityVolume) -> Result<RealImage> {
    p.same_shape(target)?;
    let values = target
        .pixels()
        .zip(p.pixels())
        .map(|(t, q)| {
            let mut acc = 0.0;
            for (&tc, &qc) in t.iter().zip(q) {
                if tc > 0.0 {
                    acc += tc * (tc.ln() - qc.max(PROB_FLOOR).ln());
                }
            }
            acc
        })
        .collect();
    Ok(RealImage::from_raw(p.rows, p.cols, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(probs: Vec<f64>) -> ClassProbabilityVolume {
        let d = probs.len();
        ClassProbabilityVolume::new(1, 1, d, probs).unwrap()
    }

    fn one_hot(d: usize, c: usize) -> ClassProbabilityVolume {
        let mut v = vec![0.0; d];
        v[c] = 1.0;
        single(v)
    }

    #[test]
    fn quantize_examples() {
        let img = RealImage::new(1, 3, vec![0.0, 1.0, 0.5]).unwrap();
        assert_eq!(quantize(&img, 8).unwrap().labels(), &[0, 255, 128]);
        let out_of_range = RealImage::new(1, 2, vec![-0.5, 2.0]).unwrap();
        assert_eq!(quantize(&out_of_range, 8).unwrap().labels(), &[0, 255]);
        assert!(quantize(&img, 0).is_err());
        assert!(quantize(&img, 17).is_err());
    }

    #[test]
    fn one_hot_and_expectation() {
        let img = RealImage::new(1, 2, vec![0.0, 0.7]).unwrap();
        let t = one_hot_target(&quantize(&img, 8).unwrap());
        assert_eq!(t.pixel(0)[0], 1.0);
        assert!(t.pixel(0)[1..].iter().all(|&v| v == 0.0));
        for px in t.pixels() {
            assert_eq!(px.iter().sum::<f64>(), 1.0);
        }
        assert_eq!(expectation_image(&one_hot(256, 77)).unwrap().values()[0], 77.0 / 255.0);
    }

    #[test]
    fn expectation_of_uniform_is_half() {
        for d in [2usize, 16, 256] {
            let e = expectation_image(&single(vec![1.0 / d as f64; d])).unwrap();
            assert!((e.values()[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_two_point_mass() {
        let mut v = vec![0.0; 256];
        v[100] = 0.5;
        v[200] = 0.5;
        let e = expectation_image(&single(v)).unwrap().values()[0];
        // 0.5 * 100 + 0.5 * 200 = 150 classes
        assert!((e - 150.0 / 255.0).abs() < 1e-12);
        assert!((e - 0.588235).abs() < 1e-6);
    }

    #[test]
    fn expectation_rejects_unnormalized() {
        let v = ClassProbabilityVolume::from_raw(1, 1, 2, vec![0.6, 0.6]).unwrap();
        assert!(matches!(expectation_image(&v), Err(PixcueError::NotNormalized { .. })));
    }

    #[test]
    fn cross_entropy_examples() {
        let t = one_hot(256, 3);
        assert_eq!(cross_entropy(&t, &t).unwrap().1, 0.0);
        let uniform = single(vec![1.0 / 256.0; 256]);
        let (_, ce) = cross_entropy(&uniform, &t).unwrap();
        assert!((ce - 256f64.ln()).abs() < 1e-12);
        assert!((ce - 5.5452).abs() < 1e-4);
        let mut half = vec![0.5 / 255.0; 256];
        half[3] = 0.5;
        let (_, ce) = cross_entropy(&single(half), &t).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&uniform, &one_hot(16, 0)).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = single(vec![0.9, 0.1]);
        assert_eq!(kl_divergence(&p, &p).unwrap().values()[0], 0.0);
        let t = single(vec![0.5, 0.5]);
        let kl = kl_divergence(&t, &p).unwrap().values()[0];
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl - oracle).abs() < 1e-15);
        assert!((kl - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn mean_of_volumes() {
        let m = ClassProbabilityVolume::mean_of(&[one_hot(4, 0), one_hot(4, 2)]).unwrap();
        assert_eq!(m.pixel(0), &[0.5, 0.0, 0.5, 0.0]);
        assert!(ClassProbabilityVolume::mean_of(&[]).is_err());
    }

    fn dist(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, d).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn quantization_error_bound(x in prop::collection::vec(0.0f64..=1.0, 1..64), bits in 1u32..=16) {
            let img = RealImage::new(1, x.len(), x).unwrap();
            let q = quantize(&img, bits).unwrap();
            let bound = 1.0 / (2.0 * ((1u64 << bits) - 1) as f64) + 1e-9;
            for (a, b) in q.dequantize().values().iter().zip(img.values()) {
                prop_assert!((a - b).abs() <= bound);
            }
        }

        #[test]
        fn one_hot_ce_equals_kl_bitwise(p in dist(16), c in 0usize..16) {
            let p = ClassProbabilityVolume::from_raw(1, 1, 16, p).unwrap();
            let t = one_hot(16, c);
            let ce = cross_entropy(&p, &t).unwrap().0.values()[0];
            let kl = kl_divergence(&t, &p).unwrap().values()[0];
            prop_assert_eq!(ce.to_bits(), kl.to_bits());
            prop_assert!(ce >= 0.0);
        }

        #[test]
        fn expectation_is_linear(p in dist(8), q in dist(8), lambda in 0.0f64..1.0) {
            let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let e = |v: Vec<f64>| expectation_unchecked(&ClassProbabilityVolume::from_raw(1, 1, 8, v).unwrap()).values()[0];
            let lhs = e(mix);
            let rhs = lambda * e(p) + (1.0 - lambda) * e(q);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
