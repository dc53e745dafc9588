//! Post-hoc distortions for robustness evaluation.
//!
//! Level scales: noise σ = 0.02·ℓ, blur radius ℓ pixels (σ = ℓ/3),
//! quantization block 2ℓ with step 0.025·ℓ, brightness shift ±0.05·ℓ.
//! Level 0 is the identity for every kind.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_LEVEL: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PerturbKind {
    GaussianNoise,
    GaussianBlur,
    BlockQuantize,
    BrightnessShift,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 4] = [
        PerturbKind::GaussianNoise,
        PerturbKind::GaussianBlur,
        PerturbKind::BlockQuantize,
        PerturbKind::BrightnessShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::GaussianNoise => "gaussian_noise",
            PerturbKind::GaussianBlur => "gaussian_blur",
            PerturbKind::BlockQuantize => "block_quantize",
            PerturbKind::BrightnessShift => "brightness_shift",
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown perturbation {s:?} (expected one of gaussian_noise, gaussian_blur, block_quantize, brightness_shift)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Fixed(u8),
    /// Drawn uniformly from `1..=5` per call.
    Random,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Fixed(l) => write!(f, "{l}"),
            Level::Random => f.write_str("random"),
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(Level::Random);
        }
        match s.parse::<u8>() {
            Ok(l) if l <= MAX_LEVEL => Ok(Level::Fixed(l)),
            _ => Err(Error::Config(format!("perturbation level must be 0..=5 or \"random\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PerturbationSpec {
    pub kind: PerturbKind,
    pub level: Level,
    /// Number of distinct kinds stacked. The first is `kind`; the rest are
    /// drawn from the remaining kinds in a seeded order.
    pub mix_count: usize,
}

impl PerturbationSpec {
    pub fn single(kind: PerturbKind, level: u8) -> Self {
        PerturbationSpec {
            kind,
            level: Level::Fixed(level),
            mix_count: 1,
        }
    }
}

/// Applies `p` to an `H × W × C` image. Pure function of `(image, p, seed)`.
pub fn perturb(image: &Tensor<f32>, p: &PerturbationSpec, seed: u64) -> Result<Tensor<f32>> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::shape("perturb", shape, &[]));
    }
    if let Level::Fixed(l) = p.level {
        if l > MAX_LEVEL {
            return Err(Error::Config(format!("perturbation level {l} exceeds {MAX_LEVEL}")));
        }
    }
    if p.mix_count == 0 || p.mix_count > PerturbKind::ALL.len() {
        return Err(Error::Config(format!(
            "mix_count must be in 1..=4, got {}",
            p.mix_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = vec![p.kind];
    let mut rest: Vec<PerturbKind> = PerturbKind::ALL.into_iter().filter(|&k| k != p.kind).collect();
    rest.shuffle(&mut rng);
    kinds.extend(rest.into_iter().take(p.mix_count - 1));

    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut data = image.data().to_vec();
    for kind in kinds {
        let level = match p.level {
            Level::Fixed(l) => l,
            Level::Random => rng.gen_range(1..=MAX_LEVEL),
        };
        if level == 0 {
            continue;
        }
        let l = level as f64;
        match kind {
            PerturbKind::GaussianNoise => {
                let noise = Normal::new(0.0, 0.02 * l).expect("positive sigma");
                for v in &mut data {
                    *v += noise.sample(&mut rng) as f32;
                }
            }
            PerturbKind::GaussianBlur => data = blur(&data, h, w, c, level as usize),
            PerturbKind::BlockQuantize => quantize_blocks(&mut data, h, w, c, 2 * level as usize, 0.025 * l),
            PerturbKind::BrightnessShift => {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let shift = (sign * 0.05 * l) as f32;
                data.iter_mut().for_each(|v| *v += shift);
            }
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Tensor::new(shape, data)
}

fn gaussian_kernel(radius: usize) -> Vec<f64> {
    let sigma = radius as f64 / 3.0;
    let k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur(data: &[f32], h: usize, w: usize, c: usize, radius: usize) -> Vec<f32> {
    let k = gaussian_kernel(radius);
    let r = radius as isize;
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xx = at(x as isize + j as isize - r, w);
                    acc += kv * data[(y * w + xx) * c + ch] as f64;
                }
                tmp[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    let mut out = vec![0.0f32; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let yy = at(y as isize + j as isize - r, h);
                    acc += kv * tmp[(yy * w + x) * c + ch] as f64;
                }
                out[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    out
}

/// Compression-like quantization: within each `block × block` tile, deviations
/// from the tile mean are rounded to multiples of `step`.
fn quantize_blocks(data: &mut [f32], h: usize, w: usize, c: usize, block: usize, step: f64) {
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (y1, x1) = ((by + block).min(h), (bx + block).min(w));
            for ch in 0..c {
                let idx = |y: usize, x: usize| (y * w + x) * c + ch;
                let mut sum = 0.0;
                for y in by..y1 {
                    for x in bx..x1 {
                        sum += data[idx(y, x)] as f64;
                    }
                }
                let mean = sum / ((y1 - by) * (x1 - bx)) as f64;
                for y in by..y1 {
                    for x in bx..x1 {
                        let v = data[idx(y, x)] as f64;
                        data[idx(y, x)] = (mean + ((v - mean) / step).round() * step) as f32;
                    }
                }
            }
        }
    }
}

/// Peak signal-to-noise ratio in dB for peak 1 (infinite for identical images).
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    Ok(10.0 * (1.0 / mse).log10())
}
