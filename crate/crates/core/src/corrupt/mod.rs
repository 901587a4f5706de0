//! Probe-set corruptions and the SSIM similarity measure.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};
use crate::tensor::Tensor;

pub const DEFAULT_BACKGROUND_THRESHOLD: f64 = 0.1;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

const GRATING_PERIOD: f64 = 8.0;
const CHECKER_BLOCK: usize = 4;

fn check_unit_range(x: &Tensor, op: &str) -> Result<()> {
    match x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::contract(format!("{op} needs values in [0, 1], found {v}"))),
        None => Ok(()),
    }
}

/// `1 - x` elementwise.
pub fn flip_colors(x: &Tensor) -> Result<Tensor> {
    check_unit_range(x, "flip_colors")?;
    Ok(x.map(|v| 1.0 - v))
}

/// Each pixel is hit with probability `density` and then set to 0 or 1
/// with equal odds.
pub fn salt_pepper(x: &Tensor, density: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::contract(format!("salt-pepper density {density} outside [0, 1]")));
    }
    let mut out = x.clone();
    for v in out.data_mut() {
        if rng.random::<f64>() < density {
            *v = if rng.random::<bool>() { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

/// `n` draws of `N(0, variance)`: the additive term of [`gaussian_noise`]
/// before clamping.
pub fn gaussian_perturbation(n: usize, variance: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::contract(format!("gaussian variance {variance} must be non-negative")));
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::contract(e.to_string()))?;
    Ok((0..n).map(|_| normal.sample(rng)).collect())
}

/// `x + N(0, variance)` per pixel, clamped to `[0, 1]`.
pub fn gaussian_noise(x: &Tensor, variance: f64, rng: &mut Rng) -> Result<Tensor> {
    let noise = gaussian_perturbation(x.len(), variance, rng)?;
    let data = x
        .data()
        .iter()
        .zip(noise)
        .map(|(v, n)| (v + n).clamp(0.0, 1.0))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Diagonal sinusoidal grating `0.5 + 0.4·sin(2π(r+c)/8)`.
    Style1,
    /// Checkerboard of 4×4 blocks with per-image values in `[0.2, 0.8]`.
    Style2,
}

fn plane_dims(x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [.., h, w] if x.rank() >= 2 => Ok((h, w)),
        _ => Err(Error::contract(format!("expected an image, got shape {:?}", x.shape()))),
    }
}

/// Replaces background pixels (below `threshold`) with a texture.
pub fn style_background(x: &Tensor, texture: Texture, threshold: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!("background threshold {threshold} outside (0, 1)")));
    }
    check_unit_range(x, "style_background")?;
    let (h, w) = plane_dims(x)?;
    let pattern: Vec<f64> = match texture {
        Texture::Style1 => (0..h * w)
            .map(|i| {
                let (r, c) = ((i / w) as f64, (i % w) as f64);
                0.5 + 0.4 * (2.0 * std::f64::consts::PI * (r + c) / GRATING_PERIOD).sin()
            })
            .collect(),
        Texture::Style2 => {
            let (bh, bw) = (h.div_ceil(CHECKER_BLOCK), w.div_ceil(CHECKER_BLOCK));
            let blocks: Vec<f64> = (0..bh * bw).map(|_| rng.random_range(0.2..=0.8)).collect();
            (0..h * w)
                .map(|i| blocks[(i / w / CHECKER_BLOCK) * bw + (i % w) / CHECKER_BLOCK])
                .collect()
        }
    };
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < threshold {
            *v = pattern[i % (h * w)];
        }
    }
    Ok(out)
}

/// Mean structural similarity over all `window`×`window` patches
/// (stride 1) of each plane. Uniform weights and population moments.
pub fn ssim(a: &Tensor, b: &Tensor, window: usize, c1: f64, c2: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "ssim needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (h, w) = plane_dims(a)?;
    if window == 0 || window > h || window > w {
        return Err(Error::contract(format!("ssim window {window} does not fit {h}x{w}")));
    }
    let n = (window * window) as f64;
    let moments = |x: &[f64], y: &[f64], r0: usize, c0: usize| {
        let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
        for r in r0..r0 + window {
            for c in c0..c0 + window {
                let (u, v) = (x[r * w + c], y[r * w + c]);
                sx += u;
                sy += v;
                sxy += u * v;
            }
        }
        let (mx, my) = (sx / n, sy / n);
        (mx, my, sxy / n - mx * my)
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.data().chunks_exact(h * w).zip(b.data().chunks_exact(h * w)) {
        for r0 in 0..=h - window {
            for c0 in 0..=w - window {
                // the same routine yields variances (x with itself) and the
                // covariance, so ssim(x, x) is exactly 1
                let (mx, my, cov) = moments(pa, pb, r0, c0);
                let (_, _, vx) = moments(pa, pa, r0, c0);
                let (_, _, vy) = moments(pb, pb, r0, c0);
                let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// SSIM with the standard 8×8 window and constants for `[0, 1]` images.
pub fn ssim_default(a: &Tensor, b: &Tensor) -> Result<f64> {
    ssim(a, b, SSIM_WINDOW, SSIM_C1, SSIM_C2)
}

/// A named probe-set transformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    Raw,
    Flipped,
    SaltPepper { density: f64 },
    Gaussian { variance: f64 },
    Style {
        texture: Texture,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
}

fn default_threshold() -> f64 {
    DEFAULT_BACKGROUND_THRESHOLD
}

impl Corruption {
    /// The ten probe conditions of the MNIST comparison.
    pub fn standard_suite() -> Vec<Corruption> {
        let style = |texture| Corruption::Style {
            texture,
            threshold: DEFAULT_BACKGROUND_THRESHOLD,
        };
        vec![
            Corruption::Raw,
            Corruption::Flipped,
            Corruption::SaltPepper { density: 0.2 },
            Corruption::SaltPepper { density: 0.5 },
            Corruption::SaltPepper { density: 0.9 },
            Corruption::Gaussian { variance: 0.5 },
            Corruption::Gaussian { variance: 0.9 },
            Corruption::Gaussian { variance: 1.5 },
            style(Texture::Style1),
            style(Texture::Style2),
        ]
    }

    pub fn apply(&self, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        match *self {
            Corruption::Raw => Ok(x.clone()),
            Corruption::Flipped => flip_colors(x),
            Corruption::SaltPepper { density } => salt_pepper(x, density, rng),
            Corruption::Gaussian { variance } => gaussian_noise(x, variance, rng),
            Corruption::Style { texture, threshold } => style_background(x, texture, threshold, rng),
        }
    }

    /// Corrupts every sample; image `i` of run `run` draws from its own
    /// stream so results do not depend on processing order.
    pub fn apply_dataset(&self, ds: &LabeledDataset, seed: u64, run: u64) -> Result<LabeledDataset> {
        if *self == Corruption::Raw {
            return Ok(ds.clone());
        }
        ds.map_samples(|i, s| {
            let mut r = rng::stream(seed, &[tag::CORRUPT, run, i as u64]);
            self.apply(s, &mut r)
        })
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::Raw => write!(f, "raw"),
            Corruption::Flipped => write!(f, "flipped"),
            Corruption::SaltPepper { density } => write!(f, "salt_pepper:{density}"),
            Corruption::Gaussian { variance } => write!(f, "gaussian:{variance}"),
            Corruption::Style { texture, threshold } => {
                let name = match texture {
                    Texture::Style1 => "style1",
                    Texture::Style2 => "style2",
                };
                if *threshold == DEFAULT_BACKGROUND_THRESHOLD {
                    write!(f, "{name}")
                } else {
                    write!(f, "{name}:{threshold}")
                }
            }
        }
    }
}

/// Parses `raw`, `flipped`, `salt_pepper:0.2`, `gaussian:0.5`, `style1`,
/// `style2` and `style1:0.2` (custom threshold).
impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let number = |what: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::contract(format!("{name} needs a {what}, e.g. {name}:0.5")))?;
            a.parse()
                .map_err(|_| Error::contract(format!("bad {what} {a:?} in corruption {s:?}")))
        };
        let c = match name {
            "raw" if arg.is_none() => Corruption::Raw,
            "flipped" if arg.is_none() => Corruption::Flipped,
            "salt_pepper" => Corruption::SaltPepper {
                density: number("density")?,
            },
            "gaussian" => Corruption::Gaussian {
                variance: number("variance")?,
            },
            "style1" | "style2" => Corruption::Style {
                texture: if name == "style1" { Texture::Style1 } else { Texture::Style2 },
                threshold: if arg.is_some() { number("threshold")? } else { DEFAULT_BACKGROUND_THRESHOLD },
            },
            _ => return Err(Error::contract(format!("unknown corruption {s:?}"))),
        };
        Ok(c)
    }
}
