use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{PixcueError, Result};
use crate::rng::{stream, stream_rng};

/// Set of sampled phase-encode lines of an `n_lines`-row grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingMask {
    n_lines: usize,
    sampled: Vec<usize>,
}

impl SamplingMask {
    /// Sorts and validates the given line indices.
    pub fn new(n_lines: usize, mut sampled: Vec<usize>) -> Result<Self> {
        sampled.sort_unstable();
        if sampled.windows(2).any(|w| w[0] == w[1]) {
            return Err(PixcueError::InvalidArgument("duplicate mask line".into()));
        }
        if let Some(&bad) = sampled.iter().find(|&&i| i >= n_lines) {
            return Err(PixcueError::InvalidArgument(format!(
                "mask line {bad} out of range for {n_lines} lines"
            )));
        }
        Ok(Self { n_lines, sampled })
    }

    pub fn full(n_lines: usize) -> Self {
        Self {
            n_lines,
            sampled: (0..n_lines).collect(),
        }
    }

    pub fn n_lines(&self) -> usize {
        self.n_lines
    }

    pub fn sampled(&self) -> &[usize] {
        &self.sampled
    }

    pub fn len(&self) -> usize {
        self.sampled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sampled.is_empty()
    }

    pub fn contains(&self, line: usize) -> bool {
        self.sampled.binary_search(&line).is_ok()
    }

    /// One flag per row, true where sampled.
    pub fn row_indicator(&self) -> Vec<bool> {
        let mut keep = vec![false; self.n_lines];
        for &i in &self.sampled {
            keep[i] = true;
        }
        keep
    }

    /// Fraction of lines sampled.
    pub fn sampling_ratio(&self) -> f64 {
        self.sampled.len() as f64 / self.n_lines as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Equidistant,
    Random,
}

/// Serializable recipe for a mask generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub accel: f64,
    pub center_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MaskSpec {
    pub fn build(&self, n: usize) -> Result<SamplingMask> {
        match self.kind {
            MaskKind::Equidistant => make_mask_equidistant(n, self.accel, self.center_fraction),
            MaskKind::Random => make_mask_random(n, self.accel, self.center_fraction, self.seed),
        }
    }
}

fn validate(accel: f64, center_fraction: f64) -> Result<()> {
    if !(accel >= 1.0) || !accel.is_finite() {
        return Err(PixcueError::InvalidArgument(format!("acceleration {accel} must be >= 1")));
    }
    if !(0.0..=1.0).contains(&center_fraction) {
        return Err(PixcueError::InvalidArgument(format!(
            "center fraction {center_fraction} outside [0, 1]"
        )));
    }
    Ok(())
}

/// The `round(n * f)` contiguous lines around `n / 2`, biased low on ties.
pub fn center_lines(n: usize, center_fraction: f64) -> std::ops::Range<usize> {
    let count = ((n as f64 * center_fraction).round() as usize).min(n);
    let start = (n / 2).saturating_sub(count / 2).min(n - count);
    start..start + count
}

/// Returns (center block, non-center lines, number of extra lines to pick).
fn budget(n: usize, accel: f64, center_fraction: f64) -> (std::ops::Range<usize>, Vec<usize>, usize) {
    let center = center_lines(n, center_fraction);
    let total = (n as f64 / accel).floor() as usize;
    let others: Vec<usize> = (0..n).filter(|i| !center.contains(i)).collect();
    let extra = total.saturating_sub(center.len()).min(others.len());
    (center, others, extra)
}

/// Center block plus equidistant lines spread over the rest of k-space.
pub fn make_mask_equidistant(n: usize, accel: f64, center_fraction: f64) -> Result<SamplingMask> {
    validate(accel, center_fraction)?;
    let (center, others, extra) = budget(n, accel, center_fraction);
    let mut lines: Vec<usize> = center.collect();
    lines.extend((0..extra).map(|j| others[j * others.len() / extra]));
    SamplingMask::new(n, lines)
}

/// Center block plus lines drawn uniformly without replacement.
pub fn make_mask_random(n: usize, accel: f64, center_fraction: f64, seed: u64) -> Result<SamplingMask> {
    validate(accel, center_fraction)?;
    let (center, others, extra) = budget(n, accel, center_fraction);
    let mut rng = stream_rng(seed, stream::MASK);
    let mut lines: Vec<usize> = center.collect();
    lines.extend(index::sample(&mut rng, others.len(), extra).into_iter().map(|i| others[i]));
    SamplingMask::new(n, lines)
}
