use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{ComplexImage, KSpaceGrid};
use crate::error::{PixcueError, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Image to centered k-space.
    Forward,
    /// Centered k-space to image.
    Inverse,
}

/// Swaps quadrants so index 0 moves to n/2 (its own inverse for even n).
fn quadrant_swap(data: &mut [Complex64], n: usize) {
    let h = n / 2;
    for r in 0..h {
        for c in 0..n {
            let c2 = (c + h) % n;
            data.swap(r * n + c, (r + h) * n + c2);
        }
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Unitary centered 2-D DFT of a square, even-sided, row-major buffer.
///
/// Forward: `shift(fft2(x)) / n`. Inverse: `ifft2(shift(k)) / n`. The two
/// are exact adjoints of each other.
pub fn fft2_centered_inplace(data: &mut [Complex64], n: usize, direction: Direction) {
    debug_assert_eq!(data.len(), n * n);
    debug_assert!(n.is_multiple_of(2));
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match direction {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    });
    if direction == Direction::Inverse {
        quadrant_swap(data, n);
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    transpose(data, n);
    fft.process_with_scratch(data, &mut scratch);
    transpose(data, n);
    let scale = 1.0 / n as f64;
    data.iter_mut().for_each(|v| *v *= scale);
    if direction == Direction::Forward {
        quadrant_swap(data, n);
    }
}

fn check_even(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(PixcueError::Shape(format!("grid side must be even and positive, got {n}")));
    }
    Ok(())
}

/// Unitary 2-D DFT into centered k-space.
pub fn dft2_unitary(img: &ComplexImage) -> Result<KSpaceGrid> {
    let n = img.require_square()?;
    check_even(n)?;
    let mut data = img.values().to_vec();
    fft2_centered_inplace(&mut data, n, Direction::Forward);
    Ok(KSpaceGrid::from_raw(n, data))
}

/// Inverse of [`dft2_unitary`].
pub fn idft2_unitary(k: &KSpaceGrid) -> Result<ComplexImage> {
    let n = k.require_square()?;
    check_even(n)?;
    let mut data = k.values().to_vec();
    fft2_centered_inplace(&mut data, n, Direction::Inverse);
    Ok(ComplexImage::from_raw(n, data))
}
