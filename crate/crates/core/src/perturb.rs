//! Influencing-factor transforms: uniform haze overlay and Gaussian blur,
//! both parameterized by an intensity `epsilon` in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Image;

pub const DEFAULT_HAZE_COLOR: [f64; 3] = [0.8, 0.8, 0.8];
pub const DEFAULT_SIGMA_MAX: f64 = 3.0;

/// A perturbation family with its fixed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum PerturbationKind {
    Haze {
        #[serde(default = "default_haze_color")]
        haze_color: [f64; 3],
    },
    Blur {
        #[serde(default = "default_sigma_max")]
        sigma_max: f64,
    },
}

fn default_haze_color() -> [f64; 3] {
    DEFAULT_HAZE_COLOR
}

fn default_sigma_max() -> f64 {
    DEFAULT_SIGMA_MAX
}

impl PerturbationKind {
    pub fn haze() -> Self {
        PerturbationKind::Haze { haze_color: DEFAULT_HAZE_COLOR }
    }

    pub fn blur() -> Self {
        PerturbationKind::Blur { sigma_max: DEFAULT_SIGMA_MAX }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerturbationKind::Haze { .. } => "haze",
            PerturbationKind::Blur { .. } => "blur",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PerturbationKind::Haze { haze_color } => {
                if haze_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::Config(format!("haze color {haze_color:?} outside [0, 1]^3")));
                }
            }
            PerturbationKind::Blur { sigma_max } => {
                if !(sigma_max.is_finite() && *sigma_max > 0.0) {
                    return Err(Error::Config(format!("sigma_max must be positive, got {sigma_max}")));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, image: &Image, epsilon: f64) -> Result<Image> {
        match self {
            PerturbationKind::Haze { haze_color } => apply_haze(image, epsilon, *haze_color),
            PerturbationKind::Blur { sigma_max } => apply_blur(image, epsilon, *sigma_max),
        }
    }
}

/// The epsilon levels used for one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonGrid {
    pub factor_name: String,
    pub levels: Vec<f64>,
}

impl EpsilonGrid {
    pub fn new(factor_name: impl Into<String>, levels: Vec<f64>) -> Result<Self> {
        let grid = Self { factor_name: factor_name.into(), levels };
        grid.validate()?;
        Ok(grid)
    }

    /// `scale * base`, element-wise.
    pub fn scaled(factor_name: impl Into<String>, scale: f64, base: &[f64]) -> Result<Self> {
        Self::new(factor_name, base.iter().map(|e| scale * e).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config(format!("epsilon grid for {} is empty", self.factor_name)));
        }
        if let Some(e) = self.levels.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::Config(format!("{}: epsilon {e} outside [0, 1]", self.factor_name)));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "{}: epsilon levels must be strictly increasing",
                self.factor_name
            )));
        }
        Ok(())
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..=1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::Domain(epsilon))
    }
}

/// `x' = (1 - eps) x + eps c`, per channel.
pub fn apply_haze(image: &Image, epsilon: f64, haze_color: [f64; 3]) -> Result<Image> {
    check_epsilon(epsilon)?;
    let channels = image.channels();
    if channels != haze_color.len() {
        return Err(Error::Dimension {
            expected: format!("{} channels", haze_color.len()),
            found: format!("{channels} channels"),
        });
    }
    if epsilon == 0.0 {
        return Ok(image.clone());
    }
    let pixels = image
        .pixels()
        .chunks_exact(channels)
        .flat_map(|px| px.iter().zip(haze_color).map(|(&v, c)| (1.0 - epsilon) * v + epsilon * c))
        .collect();
    Ok(Image::from_clamped(image.width(), image.height(), channels, pixels))
}

/// Square Gaussian weight grid with radius `ceil(3 sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    radius: usize,
    weights: Vec<f64>,
    /// Normalized 1-D factor; `weights` is its outer product with itself.
    profile: Vec<f64>,
}

impl GaussianKernel {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Weight at offset `(dy, dx)` from the center.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) * (2 * r + 1) + dx + r) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }
}

pub fn gaussian_kernel(sigma: f64) -> GaussianKernel {
    if !(sigma > 0.0) {
        return GaussianKernel { radius: 0, weights: vec![1.0], profile: vec![1.0] };
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let profile: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut weights: Vec<f64> = profile.iter().flat_map(|a| profile.iter().map(move |b| a * b)).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    GaussianKernel { radius, weights, profile }
}

/// Gaussian blur with `sigma = sigma_max * epsilon`, edge pixels replicated
/// beyond the border.
pub fn apply_blur(image: &Image, epsilon: f64, sigma_max: f64) -> Result<Image> {
    check_epsilon(epsilon)?;
    let sigma = sigma_max * epsilon;
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    Ok(convolve_separable(image, kernel.profile()))
}

fn convolve_separable(image: &Image, profile: &[f64]) -> Image {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let r = (profile.len() / 2) as isize;
    let src = image.pixels();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &wt) in profile.iter().enumerate() {
                    let sx = clamp(x as isize + t as isize - r, w);
                    acc += wt * src[(row + sx) * c + ch];
                }
                horiz[(row + x) * c + ch] = acc;
            }
        }
    }

    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &wt) in profile.iter().enumerate() {
                    let sy = clamp(y as isize + t as isize - r, h);
                    acc += wt * horiz[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Image::from_clamped(w, h, c, out)
}

/// Applies each `(kind, epsilon)` left to right.
pub fn apply_stack(image: &Image, assignment: &[(PerturbationKind, f64)]) -> Result<Image> {
    let mut current = image.clone();
    for (kind, epsilon) in assignment {
        current = kind.apply(&current, *epsilon)?;
    }
    Ok(current)
}
