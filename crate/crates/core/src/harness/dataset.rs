use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PixcueError, Result};
use crate::forward_model::{
    acquire, add_complex_noise, generate_phantom, shepp_logan_ellipses, undersample, Blend, ContrastProfile, Ellipse,
    KSpaceGrid, MaskSpec, NoiseSpec, PhantomSpec, RealImage, SamplingMask,
};
use crate::net::TrainingExample;
use crate::rng::{derive_seed, stream, stream_rng};

/// Recipe for a seeded set of `count` jittered head phantoms with contrast
/// profiles assigned round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSetSpec {
    #[serde(default = "default_size")]
    pub size: usize,
    pub count: usize,
    #[serde(default = "all_profiles")]
    pub profiles: Vec<ContrastProfile>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Extra random ellipses added to every phantom.
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    /// Base ellipses; the modified Shepp-Logan head when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipses: Option<Vec<Ellipse>>,
}

fn default_size() -> usize {
    64
}

fn all_profiles() -> Vec<ContrastProfile> {
    ContrastProfile::ALL.to_vec()
}

fn default_jitter() -> f64 {
    0.5
}

fn default_blobs() -> usize {
    3
}

/// One generated phantom with its provenance.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub id: String,
    pub profile: ContrastProfile,
    pub seed: u64,
    pub image: RealImage,
}

impl PhantomSetSpec {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Phantom `i` cycles through the profiles; its seed is derived from the set seed.
    pub fn phantom_spec(&self, i: usize) -> (PhantomSpec, u64) {
        let seed = derive_seed(self.seed, i as u64);
        let mut rng = stream_rng(seed, stream::BLOBS);
        let mut ellipses = self.ellipses.clone().unwrap_or_else(shepp_logan_ellipses);
        for _ in 0..self.blobs {
            ellipses.push(random_blob(&mut rng));
        }
        let spec = PhantomSpec {
            size: self.size,
            ellipses,
            contrast_profile: self.profiles[i % self.profiles.len()],
            anomaly: None,
            jitter: self.jitter,
        };
        (spec, seed)
    }

    pub fn generate(&self) -> Result<Vec<Phantom>> {
        if self.profiles.is_empty() && self.count > 0 {
            return Err(PixcueError::Config("phantom set lists no contrast profiles".into()));
        }
        (0..self.len())
            .map(|i| {
                let (spec, seed) = self.phantom_spec(i);
                Ok(Phantom {
                    id: format!("{}_{i:03}", spec.contrast_profile.label()),
                    profile: spec.contrast_profile,
                    seed,
                    image: generate_phantom(&spec, seed)?,
                })
            })
            .collect()
    }
}

/// Small ellipse inside the brain region with a modest signed intensity.
fn random_blob(rng: &mut impl Rng) -> Ellipse {
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    Ellipse {
        center: [rng.gen_range(0.35..0.65), rng.gen_range(0.3..0.7)],
        axes: [rng.gen_range(0.02..0.07), rng.gen_range(0.02..0.07)],
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        intensity: sign * rng.gen_range(0.05..0.2),
        blend: Blend::Add,
    }
}

/// Replace-blend anomaly for test case `i`, placed inside the brain with an
/// intensity far from the surrounding tissue.
pub fn anomaly(seed: u64, i: usize) -> Ellipse {
    let mut rng = stream_rng(derive_seed(seed, i as u64), stream::ANOMALY);
    Ellipse {
        center: [rng.gen_range(0.38..0.62), rng.gen_range(0.32..0.68)],
        axes: [rng.gen_range(0.03..0.06), rng.gen_range(0.03..0.06)],
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        intensity: rng.gen_range(0.8..1.0),
        blend: Blend::Replace,
    }
}

/// Mask for example `i`: random masks get a per-example seed.
pub fn example_mask(spec: &MaskSpec, n: usize, i: usize) -> Result<SamplingMask> {
    let mut s = spec.clone();
    s.seed = derive_seed(spec.seed, i as u64);
    s.build(n)
}

pub fn training_examples(phantoms: &[Phantom], mask: &MaskSpec) -> Result<Vec<TrainingExample>> {
    phantoms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(TrainingExample {
                image: p.image.clone(),
                mask: example_mask(mask, p.image.rows(), i)?,
            })
        })
        .collect()
}

/// Fully sampled k-space with optional noise, then undersampled.
pub fn measure(image: &RealImage, mask: &SamplingMask, sigma: f64, noise_seed: u64) -> Result<KSpaceGrid> {
    let k = add_complex_noise(&acquire(image)?, NoiseSpec { sigma, seed: noise_seed })?;
    undersample(&k, mask)
}
