//! Channel-major (`[channel][row][col]`) building blocks with explicit
//! backward passes.

use rand::Rng;

/// Dense 2-D convolution with zero "same" padding and odd square kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl ConvShape {
    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Visits every (weight index, input channel, row offset, col offset) tap of
/// output channel `o`.
#[inline]
fn taps(s: ConvShape, o: usize, mut f: impl FnMut(usize, usize, isize, isize)) {
    let k = s.kernel;
    let half = (k / 2) as isize;
    for i in 0..s.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let w = ((o * s.in_ch + i) * k + ky) * k + kx;
                f(w, i, ky as isize - half, kx as isize - half);
            }
        }
    }
}

/// Row/col range of output pixels whose tap at offset `d` stays inside.
#[inline]
fn valid(n: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    lo..hi
}

pub(crate) fn conv_forward(s: ConvShape, n: usize, weight: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    let np = n * n;
    debug_assert_eq!(input.len(), s.in_ch * np);
    let mut out = vec![0.0; s.out_ch * np];
    for o in 0..s.out_ch {
        let out_o = &mut out[o * np..(o + 1) * np];
        out_o.iter_mut().for_each(|v| *v = bias[o]);
        taps(s, o, |wi, i, dy, dx| {
            let w = weight[wi];
            if w == 0.0 {
                return;
            }
            let inp = &input[i * np..(i + 1) * np];
            let cols = valid(n, dx);
            for y in valid(n, dy) {
                let sy = (y as isize + dy) as usize;
                let dst = &mut out_o[y * n + cols.start..y * n + cols.end];
                let sx0 = (cols.start as isize + dx) as usize;
                let src = &inp[sy * n + sx0..sy * n + sx0 + cols.len()];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        });
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    s: ConvShape,
    n: usize,
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let np = n * n;
    let mut grad_in = want_input.then(|| vec![0.0; s.in_ch * np]);
    for o in 0..s.out_ch {
        let g_o = &grad_out[o * np..(o + 1) * np];
        grad_bias[o] += g_o.iter().sum::<f64>();
        taps(s, o, |wi, i, dy, dx| {
            let inp = &input[i * np..(i + 1) * np];
            let cols = valid(n, dx);
            let sx0 = (cols.start as isize + dx) as usize;
            let mut acc = 0.0;
            for y in valid(n, dy) {
                let sy = (y as isize + dy) as usize;
                let g = &g_o[y * n + cols.start..y * n + cols.end];
                let src = &inp[sy * n + sx0..sy * n + sx0 + cols.len()];
                acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
            }
            grad_weight[wi] += acc;
            if let Some(gi) = grad_in.as_mut() {
                let w = weight[wi];
                if w == 0.0 {
                    return;
                }
                let gi = &mut gi[i * np..(i + 1) * np];
                for y in valid(n, dy) {
                    let sy = (y as isize + dy) as usize;
                    let g = &g_o[y * n + cols.start..y * n + cols.end];
                    let dst = &mut gi[sy * n + sx0..sy * n + sx0 + cols.len()];
                    for (d, &v) in dst.iter_mut().zip(g) {
                        *d += w * v;
                    }
                }
            }
        });
    }
    grad_in
}

/// `ln(1 + e^x)`, the smooth ramp.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverted-dropout multipliers: 0 with probability `fraction`, else
/// `1 / (1 - fraction)`.
pub(crate) fn dropout_mask(len: usize, fraction: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - fraction);
    (0..len)
        .map(|_| if rng.gen::<f64>() < fraction { 0.0 } else { keep })
        .collect()
}
