use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::KSpaceGrid;
use crate::error::{PixcueError, Result};
use crate::rng::{stream, stream_rng};

/// Additive white complex Gaussian noise. `sigma` is absolute, in k-space units,
/// and applies separately to the real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

pub fn add_complex_noise(k: &KSpaceGrid, spec: NoiseSpec) -> Result<KSpaceGrid> {
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(PixcueError::InvalidArgument(format!("noise sigma {} must be >= 0", spec.sigma)));
    }
    if spec.sigma == 0.0 {
        return Ok(k.clone());
    }
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut rng = stream_rng(spec.seed, stream::NOISE);
    let values = k
        .values()
        .iter()
        .map(|&v| {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            v + Complex64::new(re, im)
        })
        .collect();
    KSpaceGrid::new(k.rows(), k.cols(), values)
}
