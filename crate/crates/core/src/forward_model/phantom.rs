use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RealImage;
use crate::error::{PixcueError, Result};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    #[default]
    Add,
    Replace,
}

/// Ellipse in image-fraction coordinates: `center` is (x, y) with x along
/// columns and y along rows, `axes` are semi-axes, all as fractions of the
/// image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    #[serde(default)]
    pub angle: f64,
    pub intensity: f64,
    #[serde(default)]
    pub blend: Blend,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let u = (dx * c + dy * s) / self.axes[0];
        let v = (-dx * s + dy * c) / self.axes[1];
        u * u + v * v <= 1.0
    }
}

/// Monotone intensity remap imitating different tissue contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContrastProfile {
    #[default]
    Pd,
    T1,
    T2,
    Flair,
}

impl ContrastProfile {
    pub const ALL: [ContrastProfile; 4] = [Self::Pd, Self::T1, Self::T2, Self::Flair];

    fn gamma(self) -> f64 {
        match self {
            Self::Pd => 1.0,
            Self::T1 => 0.8,
            Self::T2 => 0.6,
            Self::Flair => 1.4,
        }
    }

    pub fn remap(self, v: f64) -> f64 {
        v.clamp(0.0, 1.0).powf(self.gamma())
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Pd => "pd",
            Self::T1 => "t1",
            Self::T2 => "t2",
            Self::Flair => "flair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub ellipses: Vec<Ellipse>,
    #[serde(default)]
    pub contrast_profile: ContrastProfile,
    #[serde(default)]
    pub anomaly: Option<Ellipse>,
    /// Random perturbation strength in [0, 1]; 0 makes the seed irrelevant.
    #[serde(default)]
    pub jitter: f64,
}

/// Modified Shepp-Logan head, converted to image-fraction coordinates.
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    // (intensity, a, b, x0, y0, degrees) on [-1, 1]^2 with y up.
    const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    TABLE
        .iter()
        .map(|&(intensity, a, b, x0, y0, deg)| Ellipse {
            center: [0.5 + x0 / 2.0, 0.5 - y0 / 2.0],
            axes: [a / 2.0, b / 2.0],
            angle: -deg.to_radians(),
            intensity,
            blend: Blend::Add,
        })
        .collect()
}

/// Pixels whose centers fall inside the ellipse.
pub fn rasterize_ellipse(n: usize, ellipse: &Ellipse) -> Vec<bool> {
    let mut inside = vec![false; n * n];
    for r in 0..n {
        let y = (r as f64 + 0.5) / n as f64;
        for c in 0..n {
            let x = (c as f64 + 0.5) / n as f64;
            inside[r * n + c] = ellipse.contains(x, y);
        }
    }
    inside
}

fn jittered(e: &Ellipse, jitter: f64, rng: &mut impl Rng) -> Ellipse {
    let mut u = || rng.gen_range(-1.0..1.0) * jitter;
    Ellipse {
        center: [e.center[0] + 0.03 * u(), e.center[1] + 0.03 * u()],
        axes: [e.axes[0] * (1.0 + 0.15 * u()), e.axes[1] * (1.0 + 0.15 * u())],
        angle: e.angle + 0.3 * u(),
        intensity: e.intensity * (1.0 + 0.3 * u()),
        blend: e.blend,
    }
}

/// Rasterizes the ellipses in order, clamps to [0, 1], applies the contrast
/// remap, then stamps the anomaly if present.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<RealImage> {
    let n = spec.size;
    if n == 0 {
        return Err(PixcueError::InvalidArgument("phantom size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.jitter) {
        return Err(PixcueError::InvalidArgument(format!("jitter {} outside [0, 1]", spec.jitter)));
    }
    let mut rng = stream_rng(seed, stream::PHANTOM);
    let mut values = vec![0.0; n * n];
    for e in &spec.ellipses {
        if !(-1.0..=1.0).contains(&e.intensity) || e.axes.iter().any(|&a| !(a > 0.0)) {
            return Err(PixcueError::InvalidArgument(format!("bad ellipse {e:?}")));
        }
        let e = if spec.jitter > 0.0 { jittered(e, spec.jitter, &mut rng) } else { *e };
        for (v, inside) in values.iter_mut().zip(rasterize_ellipse(n, &e)) {
            if inside {
                match e.blend {
                    Blend::Add => *v += e.intensity,
                    Blend::Replace => *v = e.intensity,
                }
            }
        }
    }
    let values = values.into_iter().map(|v| spec.contrast_profile.remap(v)).collect();
    let image = RealImage::new(n, n, values)?;
    match &spec.anomaly {
        Some(a) => insert_anomaly(&image, a),
        None => Ok(image),
    }
}

/// Replaces pixels inside `anomaly` with its intensity (clamped to [0, 1]).
pub fn insert_anomaly(image: &RealImage, anomaly: &Ellipse) -> Result<RealImage> {
    if image.rows() != image.cols() {
        return Err(PixcueError::Shape("anomaly insertion needs a square image".into()));
    }
    let value = anomaly.intensity.clamp(0.0, 1.0);
    let mut out = image.clone();
    for (v, inside) in out.values_mut().iter_mut().zip(rasterize_ellipse(image.rows(), anomaly)) {
        if inside {
            *v = value;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ellipses: Vec<Ellipse>) -> PhantomSpec {
        PhantomSpec {
            size: 32,
            ellipses,
            contrast_profile: ContrastProfile::Pd,
            anomaly: None,
            jitter: 0.0,
        }
    }

    fn disc(cx: f64, cy: f64, r: f64, intensity: f64) -> Ellipse {
        Ellipse { center: [cx, cy], axes: [r, r], angle: 0.0, intensity, blend: Blend::Add }
    }

    #[test]
    fn empty_spec_is_zero() {
        let img = generate_phantom(&spec(vec![]), 0).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_ellipse_interior_and_exterior() {
        let e = disc(0.5, 0.5, 0.3, 0.8);
        let img = generate_phantom(&spec(vec![e]), 0).unwrap();
        let inside = rasterize_ellipse(32, &e);
        assert!(inside[16 * 32 + 16]);
        for (v, i) in img.values().iter().zip(inside) {
            assert_eq!(*v, if i { 0.8 } else { 0.0 });
        }
    }

    #[test]
    fn additive_overlap_is_clamped() {
        let img = generate_phantom(&spec(vec![disc(0.5, 0.5, 0.3, 0.7), disc(0.5, 0.5, 0.2, 0.6)]), 0).unwrap();
        assert_eq!(img.get(16, 16), 1.0);
        assert_eq!(img.max(), 1.0);
    }

    #[test]
    fn shepp_logan_in_range_and_profiles_monotone() {
        for profile in ContrastProfile::ALL {
            let s = PhantomSpec { contrast_profile: profile, jitter: 0.5, ..spec(shepp_logan_ellipses()) };
            let img = generate_phantom(&s, 3).unwrap();
            assert!(img.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(img.max() > 0.5);
            assert_eq!(img, generate_phantom(&s, 3).unwrap());
        }
        for w in [0.0, 0.1, 0.2, 0.5, 0.9, 1.0].windows(2) {
            for p in ContrastProfile::ALL {
                assert!(p.remap(w[0]) <= p.remap(w[1]));
            }
        }
    }

    #[test]
    fn anomaly_outside_or_equal_is_noop() {
        let base = generate_phantom(&spec(vec![disc(0.5, 0.5, 0.4, 0.3)]), 0).unwrap();
        let outside = disc(3.0, 3.0, 0.1, 1.0);
        assert_eq!(insert_anomaly(&base, &outside).unwrap(), base);
        let same = disc(0.5, 0.5, 0.1, 0.3);
        assert_eq!(insert_anomaly(&base, &same).unwrap(), base);
    }

    #[test]
    fn anomaly_changes_exactly_its_pixels() {
        let n = 64;
        let base = RealImage::filled(n, n, 0.3);
        // area fraction pi r^2 = 0.02
        let r = (0.02 / std::f64::consts::PI).sqrt();
        let a = disc(0.45, 0.55, r, 1.0);
        let out = insert_anomaly(&base, &a).unwrap();
        let changed = out.values().iter().zip(base.values()).filter(|(x, y)| x != y).count();
        // brute-force count of pixel centers inside the disc
        let mut expected = 0;
        for row in 0..n {
            for col in 0..n {
                let x = (col as f64 + 0.5) / n as f64 - 0.45;
                let y = (row as f64 + 0.5) / n as f64 - 0.55;
                if x * x + y * y <= r * r {
                    expected += 1;
                }
            }
        }
        assert_eq!(changed, expected);
        assert!((changed as f64 / (n * n) as f64 - 0.02).abs() < 0.005);
    }
}
