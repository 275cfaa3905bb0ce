//! Synthetic single-coil Cartesian MRI acquisition.
//!
//! Images and k-space grids are square complex fields stored row-major.
//! K-space is centered: the DC bin sits at index `(n/2, n/2)`. Rows are
//! phase-encode lines; undersampling removes whole rows.

mod fft;
mod mask;
mod noise;
mod phantom;

pub use fft::{dft2_unitary, fft2_centered_inplace, idft2_unitary, Direction};
pub use mask::{center_lines, make_mask_equidistant, make_mask_random, MaskKind, MaskSpec, SamplingMask};
pub use noise::{add_complex_noise, NoiseSpec};
pub use phantom::{
    generate_phantom, insert_anomaly, rasterize_ellipse, shepp_logan_ellipses, Blend,
    ContrastProfile, Ellipse, PhantomSpec,
};

use num_complex::Complex64;

use crate::error::{PixcueError, Result};

macro_rules! complex_field {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            rows: usize,
            cols: usize,
            values: Vec<Complex64>,
        }

        impl $name {
            pub fn new(rows: usize, cols: usize, values: Vec<Complex64>) -> Result<Self> {
                if values.len() != rows * cols {
                    return Err(PixcueError::Shape(format!(
                        "{} values for a {rows}x{cols} grid",
                        values.len()
                    )));
                }
                if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
                    return Err(PixcueError::NonFinite(format!(
                        "{} entry {i} is not finite",
                        stringify!($name)
                    )));
                }
                Ok(Self { rows, cols, values })
            }

            pub fn zeros(n: usize) -> Self {
                Self {
                    rows: n,
                    cols: n,
                    values: vec![Complex64::new(0.0, 0.0); n * n],
                }
            }

            /// Skips validation; callers guarantee shape and finiteness.
            pub(crate) fn from_raw(n: usize, values: Vec<Complex64>) -> Self {
                debug_assert_eq!(values.len(), n * n);
                Self { rows: n, cols: n, values }
            }

            pub fn rows(&self) -> usize {
                self.rows
            }

            pub fn cols(&self) -> usize {
                self.cols
            }

            pub fn values(&self) -> &[Complex64] {
                &self.values
            }

            pub fn into_values(self) -> Vec<Complex64> {
                self.values
            }

            pub fn get(&self, row: usize, col: usize) -> Complex64 {
                self.values[row * self.cols + col]
            }

            pub fn energy(&self) -> f64 {
                self.values.iter().map(|v| v.norm_sqr()).sum()
            }

            pub(crate) fn require_square(&self) -> Result<usize> {
                if self.rows != self.cols {
                    return Err(PixcueError::Shape(format!(
                        "expected a square grid, got {}x{}",
                        self.rows, self.cols
                    )));
                }
                Ok(self.rows)
            }
        }
    };
}

complex_field!(
    /// Complex-valued image, row-major.
    ComplexImage
);
complex_field!(
    /// Centered k-space samples, row-major; rows are phase-encode lines.
    KSpaceGrid
);

/// Reinterprets stored samples; no transform is applied.
impl From<KSpaceGrid> for ComplexImage {
    fn from(k: KSpaceGrid) -> Self {
        Self { rows: k.rows, cols: k.cols, values: k.values }
    }
}

/// Reinterprets stored samples; no transform is applied.
impl From<ComplexImage> for KSpaceGrid {
    fn from(x: ComplexImage) -> Self {
        Self { rows: x.rows, cols: x.cols, values: x.values }
    }
}

impl ComplexImage {
    pub fn from_real(image: &RealImage) -> Self {
        Self {
            rows: image.rows,
            cols: image.cols,
            values: image.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn magnitude(&self) -> RealImage {
        RealImage {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn real_part(&self) -> RealImage {
        RealImage {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v.re).collect(),
        }
    }
}

/// Real-valued image or map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl RealImage {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(PixcueError::Shape(format!(
                "{} values for a {rows}x{cols} image",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PixcueError::NonFinite(format!("image entry {i} is not finite")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn same_shape(&self, other: &RealImage) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(PixcueError::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Keeps the sampled rows of `k` and zeroes every other row.
pub fn undersample(k: &KSpaceGrid, mask: &SamplingMask) -> Result<KSpaceGrid> {
    if mask.n_lines() != k.rows() {
        return Err(PixcueError::Shape(format!(
            "mask has {} lines, k-space has {} rows",
            mask.n_lines(),
            k.rows()
        )));
    }
    let cols = k.cols();
    let keep = mask.row_indicator();
    let values = k
        .values()
        .chunks(cols)
        .zip(&keep)
        .flat_map(|(row, &kept)| {
            row.iter()
                .map(move |&v| if kept { v } else { Complex64::new(0.0, 0.0) })
        })
        .collect();
    Ok(KSpaceGrid {
        rows: k.rows(),
        cols,
        values,
    })
}

/// Zero-filled reconstruction: the inverse transform of undersampled data.
pub fn zero_filled(y_u: &KSpaceGrid) -> Result<ComplexImage> {
    idft2_unitary(y_u)
}

/// Fully sampled k-space of a real image.
pub fn acquire(image: &RealImage) -> Result<KSpaceGrid> {
    dft2_unitary(&ComplexImage::from_real(image))
}
