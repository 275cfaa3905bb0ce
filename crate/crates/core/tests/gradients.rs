//! Analytic gradients against central finite differences.

use pixcue::forward_model::{acquire, make_mask_random, undersample, RealImage};
use pixcue::net::{init_params, loss, loss_and_gradients, ArchSpec, ForwardMode, NetworkParameters, Sample};
use pixcue::quantizer::quantize;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const STEP: f64 = 1e-5;

fn phantom(n: usize) -> RealImage {
    let values = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64 / n as f64 - 0.5, (i % n) as f64 / n as f64 - 0.45);
            if r * r / 0.16 + c * c / 0.1 < 1.0 { 0.2 + 0.6 * (r + 0.5) } else { 0.02 }
        })
        .collect();
    RealImage::new(n, n, values).unwrap()
}

fn instance(arch: &ArchSpec) -> (NetworkParameters, Vec<Sample>) {
    let n = 16;
    let img = phantom(n);
    let mask = make_mask_random(n, 2.5, 0.125, 21).unwrap();
    let sample = Sample {
        y_u: undersample(&acquire(&img).unwrap(), &mask).unwrap(),
        mask,
        target: quantize(&img, arch.n_bits).unwrap(),
    };
    let mut params = init_params(arch, 77).unwrap();
    let mut rng = StdRng::seed_from_u64(5);
    for t in params.tensors_mut() {
        let bound = if t.name == "step_sizes" { 0.0 } else { 0.4 };
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..=bound));
    }
    // move away from the symmetric unit step sizes
    params.step_sizes.data.iter_mut().enumerate().for_each(|(k, a)| *a = 0.6 + 0.15 * k as f64);
    (params, vec![sample])
}

/// Largest relative error over every parameter; the denominator is floored at
/// 1e-6 so gradients at round-off level are compared absolutely.
fn max_relative_error(arch: &ArchSpec) -> (f64, String) {
    let (params, batch) = instance(arch);
    let (_, grads) = loss_and_gradients(&params, &batch, ForwardMode::Deterministic).unwrap();
    let mut worst = (0.0, String::new());
    let names: Vec<String> = params.tensors().iter().map(|t| t.name.clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].data.len();
        for j in 0..len {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti].data[j] += delta;
                loss(&p, &batch, ForwardMode::Deterministic).unwrap()
            };
            let fd = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let an = grads.tensors()[ti].data[j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{j}] analytic {an:e} numeric {fd:e}"));
            }
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let arch = ArchSpec { iterations: 2, hidden_channels: 4, n_bits: 4, head_hidden: 0, logit_scale: 1.0, prior_width: 0.0 };
    let (err, at) = max_relative_error(&arch);
    assert!(err < 1e-4, "max relative error {err:e} at {at}");
}

#[test]
fn gradients_match_with_hidden_head_and_gain() {
    let arch = ArchSpec { iterations: 3, hidden_channels: 3, n_bits: 3, head_hidden: 4, logit_scale: 4.0, prior_width: 0.0 };
    let (err, at) = max_relative_error(&arch);
    assert!(err < 1e-4, "max relative error {err:e} at {at}");
}
