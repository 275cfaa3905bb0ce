//! Unrolled data-consistency network with a per-pixel softmax head.
//!
//! Stage `k < K-1`:
//! `y_{k+1} = y_k - a_k M (y_k - y_u) + F G_k(F^H y_k)`.
//! Stage `K-1` applies only the data-consistency term, returns to the image
//! domain, and the head turns the (real, imaginary) channels into per-pixel
//! class scores followed by a softmax. The head is a linear 3x3 conv plus an
//! optional nonlinear branch (3x3 conv, softplus, dropout, 1x1 conv); it
//! emits `D` class scores `z_c` and one extra channel `z_D`, and the logits are
//! `logit_scale * exp(z_D) * z_c`, so `z_D` sets a per-pixel sharpness.

use num_complex::Complex64;

use super::layers::{conv_backward, conv_forward, dropout_mask, sigmoid, softplus, ConvShape};
use super::params::{Conv, NetworkParameters};
use crate::error::{PixcueError, Result};
use crate::forward_model::{fft2_centered_inplace, Direction, KSpaceGrid, SamplingMask};
use crate::quantizer::{ClassProbabilityVolume, QuantizedImage, PROB_FLOOR};
use crate::rng::{stream, stream_rng};

/// How hidden activations are treated during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    Deterministic,
    /// Inverted dropout after every hidden activation.
    Dropout { fraction: f64, seed: u64 },
}

impl ForwardMode {
    fn validate(&self) -> Result<()> {
        if let ForwardMode::Dropout { fraction, .. } = self {
            if !(0.0..1.0).contains(fraction) {
                return Err(PixcueError::InvalidArgument(format!("dropout fraction {fraction} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// One supervised example: undersampled k-space, its mask, and the quantized
/// fully-sampled image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub y_u: KSpaceGrid,
    pub mask: SamplingMask,
    pub target: QuantizedImage,
}

/// `y - a M (y - y_u)`, evaluated as `y_u + (1 - a)(y - y_u)` on sampled rows
/// so that `a = 1` reproduces `y_u` exactly.
pub fn data_consistency_step(
    y: &KSpaceGrid,
    y_u: &KSpaceGrid,
    mask: &SamplingMask,
    alpha: f64,
) -> Result<KSpaceGrid> {
    let n = y.require_square()?;
    if y_u.rows() != n || y_u.cols() != n || mask.n_lines() != n {
        return Err(PixcueError::Shape("data consistency operands disagree in size".into()));
    }
    let mut out = y.values().to_vec();
    dc_inplace(&mut out, y_u.values(), mask.sampled(), n, alpha);
    KSpaceGrid::new(n, n, out)
}

fn dc_inplace(y: &mut [Complex64], y_u: &[Complex64], sampled: &[usize], n: usize, alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    let keep = 1.0 - alpha;
    for &r in sampled {
        for (v, &u) in y[r * n..(r + 1) * n].iter_mut().zip(&y_u[r * n..(r + 1) * n]) {
            *v = u + (*v - u) * keep;
        }
    }
}

/// `-sum over sampled bins of Re(g conj(y - y_u))`: derivative of the DC
/// step with respect to its step size, given upstream gradient `g`.
fn dc_alpha_grad(g: &[Complex64], y: &[Complex64], y_u: &[Complex64], sampled: &[usize], n: usize) -> f64 {
    let mut acc = 0.0;
    for &r in sampled {
        for c in r * n..(r + 1) * n {
            let d = y[c] - y_u[c];
            acc -= g[c].re * d.re + g[c].im * d.im;
        }
    }
    acc
}

fn mask_rows_inplace(g: &mut [Complex64], sampled: &[usize], n: usize, alpha: f64) {
    let keep = 1.0 - alpha;
    for &r in sampled {
        g[r * n..(r + 1) * n].iter_mut().for_each(|v| *v *= keep);
    }
}

fn to_channels(x: &[Complex64]) -> Vec<f64> {
    let np = x.len();
    let mut out = vec![0.0; 2 * np];
    for (i, v) in x.iter().enumerate() {
        out[i] = v.re;
        out[np + i] = v.im;
    }
    out
}

fn from_channels(ch: &[f64]) -> Vec<Complex64> {
    let np = ch.len() / 2;
    (0..np).map(|i| Complex64::new(ch[i], ch[np + i])).collect()
}

fn check_finite(values: &[Complex64], stage: usize) -> Result<()> {
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(PixcueError::NonFinite(format!("k-space estimate after iteration {stage}")));
    }
    Ok(())
}

struct Hidden {
    pre: Vec<f64>,
    /// Post-activation, post-dropout values fed to the next conv.
    post: Vec<f64>,
    drop: Option<Vec<f64>>,
}

fn hidden_forward(pre: Vec<f64>, drop: Option<Vec<f64>>) -> Hidden {
    let mut post: Vec<f64> = pre.iter().map(|&v| softplus(v)).collect();
    if let Some(m) = &drop {
        post.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    Hidden { pre, post, drop }
}

fn hidden_backward(h: &Hidden, mut grad: Vec<f64>) -> Vec<f64> {
    if let Some(m) = &h.drop {
        grad.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
    }
    grad.iter_mut().zip(&h.pre).for_each(|(g, &x)| *g *= sigmoid(x));
    grad
}

struct StageTrace {
    y: Vec<Complex64>,
    feats: Vec<f64>,
    hidden: Hidden,
}

struct Trace {
    n: usize,
    stages: Vec<StageTrace>,
    y_last: Vec<Complex64>,
    feats: Vec<f64>,
    head_hidden: Option<Hidden>,
    /// Channel-major head output: `D` class scores then the log inverse temperature.
    head_out: Vec<f64>,
    inv_temp: Vec<f64>,
    /// Pixel-major softmax output.
    probs: Vec<f64>,
}

struct DropSource {
    fraction: f64,
    rng: rand_chacha::ChaCha8Rng,
}

impl DropSource {
    fn new(mode: ForwardMode) -> Option<Self> {
        match mode {
            ForwardMode::Dropout { fraction, seed } if fraction > 0.0 => Some(Self {
                fraction,
                rng: stream_rng(seed, stream::DROPOUT),
            }),
            _ => None,
        }
    }

    fn mask(source: &mut Option<Self>, len: usize) -> Option<Vec<f64>> {
        source.as_mut().map(|s| dropout_mask(len, s.fraction, &mut s.rng))
    }
}

fn conv_shapes(p: &NetworkParameters) -> ([ConvShape; 2], Vec<ConvShape>) {
    (p.arch.block_convs(), p.arch.head_convs())
}

fn apply(conv: &Conv, s: ConvShape, n: usize, input: &[f64]) -> Vec<f64> {
    conv_forward(s, n, &conv.weight.data, &conv.bias.data, input)
}

fn run(y_u: &KSpaceGrid, mask: &SamplingMask, params: &NetworkParameters, mode: ForwardMode) -> Result<Trace> {
    mode.validate()?;
    let n = y_u.require_square()?;
    if n % 2 != 0 || mask.n_lines() != n {
        return Err(PixcueError::Shape(format!(
            "k-space {n}x{n} with a {}-line mask",
            mask.n_lines()
        )));
    }
    let np = n * n;
    let (block_shapes, head_shapes) = conv_shapes(params);
    let k_total = params.arch.iterations;
    let alphas = &params.step_sizes.data;
    let yu = y_u.values();
    let sampled = mask.sampled();
    let mut drops = DropSource::new(mode);

    let mut y = yu.to_vec();
    let mut stages = Vec::with_capacity(k_total - 1);
    for (k, block) in params.blocks.iter().enumerate() {
        let mut x = y.clone();
        fft2_centered_inplace(&mut x, n, Direction::Inverse);
        let feats = to_channels(&x);
        let pre = apply(&block[0], block_shapes[0], n, &feats);
        let hidden = hidden_forward(pre, DropSource::mask(&mut drops, block_shapes[0].out_ch * np));
        let out = apply(&block[1], block_shapes[1], n, &hidden.post);
        let mut update = from_channels(&out);
        fft2_centered_inplace(&mut update, n, Direction::Forward);
        let mut next = y.clone();
        dc_inplace(&mut next, yu, sampled, n, alphas[k]);
        next.iter_mut().zip(&update).for_each(|(a, b)| *a += b);
        check_finite(&next, k)?;
        stages.push(StageTrace { y, feats, hidden });
        y = next;
    }

    let y_last = y;
    let mut x = y_last.clone();
    dc_inplace(&mut x, yu, sampled, n, alphas[k_total - 1]);
    check_finite(&x, k_total - 1)?;
    fft2_centered_inplace(&mut x, n, Direction::Inverse);
    let feats = to_channels(&x);

    let mut logits = apply(&params.head[0], head_shapes[0], n, &feats);
    let head_hidden = if head_shapes.len() == 3 {
        let pre = apply(&params.head[1], head_shapes[1], n, &feats);
        let h = hidden_forward(pre, DropSource::mask(&mut drops, head_shapes[1].out_ch * np));
        let branch = apply(&params.head[2], head_shapes[2], n, &h.post);
        logits.iter_mut().zip(&branch).for_each(|(a, b)| *a += b);
        Some(h)
    } else {
        None
    };
    let d = params.arch.classes();
    let scale = params.arch.logit_scale;
    let mut probs = vec![0.0; np * d];
    let mut inv_temp = vec![0.0; np];
    for (px, row) in probs.chunks_exact_mut(d).enumerate() {
        let tau = logits[d * np + px].exp();
        inv_temp[px] = tau;
        for (c, v) in row.iter_mut().enumerate() {
            *v = scale * tau * logits[c * np + px];
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || !tau.is_finite() {
            return Err(PixcueError::NonFinite(format!("head logits at pixel {px}")));
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }

    Ok(Trace {
        n,
        stages,
        y_last,
        feats,
        head_hidden,
        head_out: logits,
        inv_temp,
        probs,
    })
}

/// Per-pixel class distributions for undersampled k-space.
pub fn forward(
    y_u: &KSpaceGrid,
    mask: &SamplingMask,
    params: &NetworkParameters,
    mode: ForwardMode,
) -> Result<ClassProbabilityVolume> {
    let t = run(y_u, mask, params, mode)?;
    ClassProbabilityVolume::from_raw(t.n, t.n, params.arch.classes(), t.probs)
}

fn sample_loss(probs: &[f64], labels: &[u32], d: usize) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(px, &h)| -probs[px * d + h as usize].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / labels.len() as f64
}

fn check_sample(s: &Sample, params: &NetworkParameters) -> Result<()> {
    if s.target.n_bits() != params.arch.n_bits {
        return Err(PixcueError::Shape(format!(
            "target has {} bits, network expects {}",
            s.target.n_bits(),
            params.arch.n_bits
        )));
    }
    if s.target.rows() != s.y_u.rows() || s.target.cols() != s.y_u.cols() {
        return Err(PixcueError::Shape("target and k-space sizes differ".into()));
    }
    Ok(())
}

/// Mean cross-entropy over pixels and samples, forward only.
pub fn loss(params: &NetworkParameters, batch: &[Sample], mode: ForwardMode) -> Result<f64> {
    if batch.is_empty() {
        return Err(PixcueError::InvalidArgument("empty batch".into()));
    }
    let d = params.arch.classes();
    let mut total = 0.0;
    for s in batch {
        check_sample(s, params)?;
        let t = run(&s.y_u, &s.mask, params, mode)?;
        total += sample_loss(&t.probs, s.target.labels(), d);
    }
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to every parameter.
///
/// In dropout mode sample `i` of the batch uses seed `derive_seed(seed, i)`.
pub fn loss_and_gradients(
    params: &NetworkParameters,
    batch: &[Sample],
    mode: ForwardMode,
) -> Result<(f64, NetworkParameters)> {
    if batch.is_empty() {
        return Err(PixcueError::InvalidArgument("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    let weight = 1.0 / batch.len() as f64;
    for (i, s) in batch.iter().enumerate() {
        check_sample(s, params)?;
        let sample_mode = match mode {
            ForwardMode::Dropout { fraction, seed } => ForwardMode::Dropout {
                fraction,
                seed: crate::rng::derive_seed(seed, i as u64),
            },
            m => m,
        };
        let trace = run(&s.y_u, &s.mask, params, sample_mode)?;
        total += sample_loss(&trace.probs, s.target.labels(), params.arch.classes());
        backward(params, &trace, s, weight, &mut grads);
    }
    if !grads.is_finite() {
        return Err(PixcueError::NonFinite("gradient".into()));
    }
    Ok((total * weight, grads))
}

fn backward(params: &NetworkParameters, t: &Trace, s: &Sample, weight: f64, grads: &mut NetworkParameters) {
    let n = t.n;
    let np = n * n;
    let d = params.arch.classes();
    let (block_shapes, head_shapes) = conv_shapes(params);
    let yu = s.y_u.values();
    let sampled = s.mask.sampled();
    let alphas = &params.step_sizes.data;
    let k_total = params.arch.iterations;

    // d(mean CE)/d(head output), channel-major. Final logits are
    // `scale * tau * z_c` with `tau = exp(z_D)`.
    let coef = weight / np as f64 * params.arch.logit_scale;
    let mut g_logits = vec![0.0; (d + 1) * np];
    let log_floor = PROB_FLOOR.ln();
    for (px, &h) in s.target.labels().iter().enumerate() {
        let p = &t.probs[px * d..(px + 1) * d];
        let h = h as usize;
        if p[h].ln() < log_floor {
            continue;
        }
        let tau = t.inv_temp[px];
        let mut g_tau = 0.0;
        for c in 0..d {
            let target = if c == h { 1.0 } else { 0.0 };
            let g = coef * (p[c] - target);
            g_logits[c * np + px] = g * tau;
            g_tau += g * t.head_out[c * np + px];
        }
        g_logits[d * np + px] = g_tau * tau;
    }

    let linear = &mut grads.head[0];
    let mut g_feats = conv_backward(
        head_shapes[0], n, &params.head[0].weight.data, &t.feats, &g_logits,
        &mut linear.weight.data, &mut linear.bias.data, true,
    )
    .expect("input gradient requested");
    if let Some(h) = &t.head_hidden {
        let [_, c1, c2] = &mut grads.head[..] else { unreachable!() };
        let g_hidden = conv_backward(
            head_shapes[2], n, &params.head[2].weight.data, &h.post, &g_logits,
            &mut c2.weight.data, &mut c2.bias.data, true,
        )
        .expect("input gradient requested");
        let g_pre = hidden_backward(h, g_hidden);
        let g_branch = conv_backward(
            head_shapes[1], n, &params.head[1].weight.data, &t.feats, &g_pre,
            &mut c1.weight.data, &mut c1.bias.data, true,
        )
        .expect("input gradient requested");
        g_feats.iter_mut().zip(&g_branch).for_each(|(a, b)| *a += b);
    }

    // Image domain back to k-space: adjoint of F^H is F.
    let mut g = from_channels(&g_feats);
    fft2_centered_inplace(&mut g, n, Direction::Forward);

    // Final data-consistency stage.
    grads.step_sizes.data[k_total - 1] += dc_alpha_grad(&g, &t.y_last, yu, sampled, n);
    mask_rows_inplace(&mut g, sampled, n, alphas[k_total - 1]);

    for (k, stage) in t.stages.iter().enumerate().rev() {
        grads.step_sizes.data[k] += dc_alpha_grad(&g, &stage.y, yu, sampled, n);
        // Through the learned update F G_k(F^H y_k).
        let mut g_update = g.clone();
        fft2_centered_inplace(&mut g_update, n, Direction::Inverse);
        let g_out = to_channels(&g_update);
        let [gc1, gc2] = &mut grads.blocks[k];
        let block = &params.blocks[k];
        let g_hidden = conv_backward(
            block_shapes[1], n, &block[1].weight.data, &stage.hidden.post, &g_out,
            &mut gc2.weight.data, &mut gc2.bias.data, true,
        )
        .expect("input gradient requested");
        let g_pre = hidden_backward(&stage.hidden, g_hidden);
        let g_in = conv_backward(
            block_shapes[0], n, &block[0].weight.data, &stage.feats, &g_pre,
            &mut gc1.weight.data, &mut gc1.bias.data, k > 0,
        );
        // Direct path through the data-consistency term.
        mask_rows_inplace(&mut g, sampled, n, alphas[k]);
        if let Some(g_in) = g_in {
            let mut g_x = from_channels(&g_in);
            fft2_centered_inplace(&mut g_x, n, Direction::Forward);
            g.iter_mut().zip(&g_x).for_each(|(a, b)| *a += b);
        }
    }
}
