use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvShape;
use crate::error::{PixcueError, Result};
use crate::rng::{stream, stream_rng};

/// Network architecture. Fully convolutional, so image size is not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Unrolled stages K; the last one carries the classification head.
    pub iterations: usize,
    /// Hidden channels of each per-stage image block.
    pub hidden_channels: usize,
    /// Bits per class label; the head emits `2^n_bits` logits per pixel.
    pub n_bits: u32,
    /// Hidden channels of the head's nonlinear branch (0 = linear head only).
    #[serde(default)]
    pub head_hidden: usize,
    /// Fixed gain applied to the head logits.
    #[serde(default = "unit")]
    pub logit_scale: f64,
    /// Width in classes of the Gaussian the linear head starts from; 0 keeps
    /// a random initialization.
    #[serde(default)]
    pub prior_width: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            iterations: 6,
            hidden_channels: 16,
            n_bits: 8,
            head_hidden: 0,
            logit_scale: 1.0,
            prior_width: 0.0,
        }
    }
}

impl ArchSpec {
    pub fn classes(&self) -> usize {
        1 << self.n_bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(PixcueError::InvalidArgument("need at least one iteration".into()));
        }
        if self.hidden_channels == 0 {
            return Err(PixcueError::InvalidArgument("need at least one hidden channel".into()));
        }
        if !(1..=16).contains(&self.n_bits) {
            return Err(PixcueError::InvalidArgument(format!("n_bits {} outside 1..=16", self.n_bits)));
        }
        if !(self.logit_scale > 0.0) || !self.logit_scale.is_finite() {
            return Err(PixcueError::InvalidArgument("logit_scale must be positive".into()));
        }
        if !(self.prior_width >= 0.0) || !self.prior_width.is_finite() {
            return Err(PixcueError::InvalidArgument("prior_width must be >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn block_convs(&self) -> [ConvShape; 2] {
        [
            ConvShape { in_ch: 2, out_ch: self.hidden_channels, kernel: 3 },
            ConvShape { in_ch: self.hidden_channels, out_ch: 2, kernel: 3 },
        ]
    }

    pub(crate) fn head_convs(&self) -> Vec<ConvShape> {
        let d = self.classes() + 1;
        let linear = ConvShape { in_ch: 2, out_ch: d, kernel: 3 };
        if self.head_hidden == 0 {
            vec![linear]
        } else {
            vec![
                linear,
                ConvShape { in_ch: 2, out_ch: self.head_hidden, kernel: 3 },
                ConvShape { in_ch: self.head_hidden, out_ch: d, kernel: 1 },
            ]
        }
    }
}

/// Named, shaped buffer of parameters (or of their gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { name, shape, data: vec![0.0; len] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv {
    fn zeros(prefix: &str, s: ConvShape) -> Self {
        Self {
            weight: Tensor::zeros(format!("{prefix}.weight"), vec![s.out_ch, s.in_ch, s.kernel, s.kernel]),
            bias: Tensor::zeros(format!("{prefix}.bias"), vec![s.out_ch]),
        }
    }
}

/// All trainable state: per-stage step sizes, per-stage image blocks (one
/// fewer than the stage count), and the classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub arch: ArchSpec,
    pub step_sizes: Tensor,
    pub blocks: Vec<[Conv; 2]>,
    pub head: Vec<Conv>,
}

impl NetworkParameters {
    /// Every tensor zero, including step sizes.
    pub fn zeros(arch: &ArchSpec) -> Result<Self> {
        arch.validate()?;
        let [c1, c2] = arch.block_convs();
        let blocks = (0..arch.iterations - 1)
            .map(|k| [Conv::zeros(&format!("block{k}.conv1"), c1), Conv::zeros(&format!("block{k}.conv2"), c2)])
            .collect();
        let head = arch
            .head_convs()
            .into_iter()
            .enumerate()
            .map(|(i, s)| Conv::zeros(&format!("head.conv{}", i + 1), s))
            .collect();
        Ok(Self {
            arch: arch.clone(),
            step_sizes: Tensor::zeros("step_sizes".into(), vec![arch.iterations]),
            blocks,
            head,
        })
    }

    /// Same structure with every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.step_sizes];
        for [a, b] in &self.blocks {
            out.extend([&a.weight, &a.bias, &b.weight, &b.bias]);
        }
        for c in &self.head {
            out.extend([&c.weight, &c.bias]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.step_sizes];
        for [a, b] in &mut self.blocks {
            out.extend([&mut a.weight, &mut a.bias, &mut b.weight, &mut b.bias]);
        }
        for c in &mut self.head {
            out.extend([&mut c.weight, &mut c.bias]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Unit step sizes, zero biases, and fan-in scaled uniform weights
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` on every conv except the last conv of
/// each residual branch, which starts at zero. With a positive `prior_width`
/// the linear head starts as a discretized Gaussian of that width centered on
/// the real part of its input.
pub fn init_params(arch: &ArchSpec, seed: u64) -> Result<NetworkParameters> {
    let mut p = NetworkParameters::zeros(arch)?;
    p.step_sizes.data.iter_mut().for_each(|a| *a = 1.0);
    let mut rng = stream_rng(seed, stream::INIT);
    let [c1, _] = arch.block_convs();
    let heads = arch.head_convs();
    let mut fill = |conv: &mut Conv, s: ConvShape| {
        let bound = 1.0 / (s.fan_in() as f64).sqrt();
        conv.weight.data.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
    };
    for block in &mut p.blocks {
        fill(&mut block[0], c1);
    }
    if arch.prior_width > 0.0 {
        gaussian_head(&mut p.head[0], arch);
    } else {
        fill(&mut p.head[0], heads[0]);
    }
    if heads.len() == 3 {
        fill(&mut p.head[1], heads[1]);
    }
    Ok(p)
}

/// Class scores `c (u x - u^2 / 2)` with `u = d / (D - 1)` and
/// `c = ((D - 1) / width)^2`; unit sharpness.
fn gaussian_head(conv: &mut Conv, arch: &ArchSpec) {
    let d = arch.classes();
    let top = (d - 1) as f64;
    let c = (top / arch.prior_width).powi(2) / arch.logit_scale;
    conv.weight.data.iter_mut().for_each(|w| *w = 0.0);
    conv.bias.data.iter_mut().for_each(|b| *b = 0.0);
    for k in 0..d {
        let u = k as f64 / top;
        // center tap of the real channel
        conv.weight.data[k * 18 + 4] = c * u;
        conv.bias.data[k] = -0.5 * c * u * u;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchSpec {
        ArchSpec { iterations: 3, hidden_channels: 4, n_bits: 4, head_hidden: 0, logit_scale: 1.0, prior_width: 0.0 }
    }

    #[test]
    fn init_is_deterministic_with_unit_steps() {
        let a = init_params(&small(), 5).unwrap();
        assert_eq!(a, init_params(&small(), 5).unwrap());
        assert_ne!(a, init_params(&small(), 6).unwrap());
        assert!(a.step_sizes.data.iter().all(|&s| s == 1.0));
        assert_eq!(a.blocks.len(), 2);
        assert_eq!(a.head[0].weight.shape, vec![17, 2, 3, 3]);
    }

    #[test]
    fn init_weights_are_centered() {
        let arch = ArchSpec { iterations: 2, hidden_channels: 16, n_bits: 8, head_hidden: 0, logit_scale: 1.0, prior_width: 0.0 };
        let p = init_params(&arch, 1).unwrap();
        let w = &p.head[0].weight.data;
        assert!(w.len() >= 4608);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
        let bound = 1.0 / 18f64.sqrt();
        assert!(w.iter().all(|x| x.abs() < bound));
        // uniform on [-b, b] has variance b²/3
        assert!((var - bound * bound / 3.0).abs() < 0.1 * bound * bound / 3.0);
    }

    #[test]
    fn tensor_names_are_unique() {
        let arch = ArchSpec { head_hidden: 8, ..small() };
        let p = init_params(&arch, 0).unwrap();
        let mut names: Vec<&str> = p.tensors().iter().map(|t| t.name.as_str()).collect();
        let len = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), len);
        assert_eq!(p.tensors().len(), p.clone().tensors_mut().len());
    }

    #[test]
    fn rejects_bad_arch() {
        assert!(init_params(&ArchSpec { iterations: 0, ..small() }, 0).is_err());
        assert!(init_params(&ArchSpec { n_bits: 0, ..small() }, 0).is_err());
    }
}
