//! Procedural face-like originals and locally tampered derivatives.
//!
//! Originals are a smooth background gradient, a face ellipse with one to
//! three feature ellipses, and fine sensor-like texture noise. A manipulated
//! frame keeps every pixel of its original except inside one contiguous
//! region in the central half of the image, where one of four tamper methods
//! is blended in and the native texture is replaced by a generator
//! fingerprint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, identity_of, DatasetSpec, Family, ImageSample};
use crate::tensor::Tensor;

/// Largest per-pixel change a tamper may make. With the region capped at a
/// quarter of the image this bounds the global mean change below 0.05.
pub const MAX_PIXEL_CHANGE: f32 = 0.19;

/// Region area bounds as a fraction of the image (upper bound exclusive).
pub const MIN_REGION_FRACTION: f64 = 0.02;
pub const MAX_REGION_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TamperMethod {
    Warp,
    TextureSubstitution,
    ColorShift,
    ForeignBlend,
}

impl TamperMethod {
    pub const ALL: [TamperMethod; 4] = [
        TamperMethod::Warp,
        TamperMethod::TextureSubstitution,
        TamperMethod::ColorShift,
        TamperMethod::ForeignBlend,
    ];
}

/// Generator constants for one family.
#[derive(Clone, Debug)]
struct Style {
    texture_sigma: f64,
    background: (f64, f64),
    face: (f64, f64),
    feature_contrast: (f64, f64),
    methods: &'static [TamperMethod],
    /// Period-two lattice, as left by transposed-convolution upsampling.
    lattice_amp: (f64, f64),
    /// Nearest-neighbour upsampled 2×2 noise blocks.
    block_amp: (f64, f64),
    tone_shift: (f64, f64),
    feather: f64,
}

fn style(family: Family) -> Style {
    match family {
        Family::A => Style {
            texture_sigma: 0.020,
            background: (0.15, 0.55),
            face: (0.45, 0.80),
            feature_contrast: (0.15, 0.30),
            methods: &TamperMethod::ALL,
            lattice_amp: (0.12, 0.18),
            block_amp: (0.0, 0.0),
            tone_shift: (0.06, 0.12),
            feather: 2.0,
        },
        Family::B => Style {
            texture_sigma: 0.032,
            background: (0.25, 0.70),
            face: (0.35, 0.70),
            feature_contrast: (0.10, 0.25),
            methods: &[TamperMethod::ForeignBlend, TamperMethod::ColorShift, TamperMethod::Warp],
            lattice_amp: (0.03, 0.06),
            block_amp: (0.04, 0.08),
            tone_shift: (0.04, 0.10),
            feather: 3.0,
        },
    }
}

#[derive(Clone, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    /// Normalized radius: < 1 inside.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }

    /// Coverage with a roughly one-pixel soft edge.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let r = self.radius(y, x);
        let edge = 1.0 / self.rx.min(self.ry).max(1.0);
        ((1.0 + edge - r) / (2.0 * edge)).clamp(0.0, 1.0)
    }
}

/// Identity-level layout shared by every frame of a video.
#[derive(Clone, Debug)]
struct Layout {
    bg0: f64,
    bg1: f64,
    bg_angle: f64,
    shapes: Vec<Ellipse>,
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..=range.1)
}

fn layout(style: &Style, h: f64, w: f64, rng: &mut ChaCha8Rng) -> Layout {
    let face_value = uniform(rng, style.face);
    let face = Ellipse {
        cy: h / 2.0 + rng.gen_range(-0.06..0.06) * h,
        cx: w / 2.0 + rng.gen_range(-0.06..0.06) * w,
        ry: rng.gen_range(0.30..0.40) * h,
        rx: rng.gen_range(0.24..0.34) * w,
        angle: rng.gen_range(-0.2..0.2),
        value: face_value,
    };
    let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let eye_contrast = sign(rng) * uniform(rng, style.feature_contrast);
    let eye_dy = rng.gen_range(-0.14..-0.06) * h;
    let eye_dx = rng.gen_range(0.09..0.15) * w;
    let eye_r = (rng.gen_range(0.04..0.07) * h, rng.gen_range(0.05..0.08) * w);
    let mut shapes = vec![face.clone()];
    let n_features = rng.gen_range(1..=3);
    if n_features >= 2 {
        for side in [-1.0, 1.0] {
            shapes.push(Ellipse {
                cy: face.cy + eye_dy,
                cx: face.cx + side * eye_dx,
                ry: eye_r.0,
                rx: eye_r.1,
                angle: 0.0,
                value: (face_value + eye_contrast).clamp(0.0, 1.0),
            });
        }
    }
    if n_features != 2 {
        let mouth_contrast = sign(rng) * uniform(rng, style.feature_contrast);
        shapes.push(Ellipse {
            cy: face.cy + rng.gen_range(0.12..0.20) * h,
            cx: face.cx + rng.gen_range(-0.03..0.03) * w,
            ry: rng.gen_range(0.03..0.05) * h,
            rx: rng.gen_range(0.08..0.14) * w,
            angle: rng.gen_range(-0.15..0.15),
            value: (face_value + mouth_contrast).clamp(0.0, 1.0),
        });
    }
    Layout {
        bg0: uniform(rng, style.background),
        bg1: uniform(rng, style.background),
        bg_angle: rng.gen_range(0.0..std::f64::consts::TAU),
        shapes,
    }
}

/// Smooth (texture-free) rendering of a layout with per-frame jitter.
fn render(layout: &Layout, h: usize, w: usize, frame_rng: &mut ChaCha8Rng) -> Vec<f64> {
    let jy = frame_rng.gen_range(-0.8..0.8);
    let jx = frame_rng.gen_range(-0.8..0.8);
    let gain = frame_rng.gen_range(-0.015..0.015);
    let (s, c) = layout.bg_angle.sin_cos();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = ((fx / w as f64 - 0.5) * c + (fy / h as f64 - 0.5) * s + 0.5).clamp(0.0, 1.0);
            let mut v = layout.bg0 + (layout.bg1 - layout.bg0) * t;
            for e in &layout.shapes {
                let cov = e.coverage(fy - jy, fx - jx);
                v += (e.value - v) * cov;
            }
            out.push(v + gain);
        }
    }
    out
}

fn to_image(values: &[f64], spec: &DatasetSpec) -> Tensor<f32> {
    let c = spec.channels;
    let mut data = Vec::with_capacity(values.len() * c);
    for &v in values {
        for _ in 0..c {
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(&[spec.height, spec.width, c], data).expect("image dims from spec")
}

fn identity_seed(spec: &DatasetSpec, video_id: &str) -> u64 {
    derive_seed(spec.seed, &[spec.family.tag(), identity_of(video_id)], &[])
}

/// Original (label 0) frame `frame_idx` of video `video_id`.
pub fn gen_original(spec: &DatasetSpec, video_id: &str, frame_idx: u32) -> ImageSample {
    let st = style(spec.family);
    let (h, w) = (spec.height, spec.width);
    let mut id_rng = ChaCha8Rng::seed_from_u64(identity_seed(spec, video_id));
    let lay = layout(&st, h as f64, w as f64, &mut id_rng);
    let mut frame_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        &[spec.family.tag(), video_id, "frame"],
        &[frame_idx as u64],
    ));
    let mut values = render(&lay, h, w, &mut frame_rng);
    let noise = Normal::new(0.0, st.texture_sigma).expect("sigma");
    for v in &mut values {
        *v += noise.sample(&mut frame_rng);
    }
    ImageSample {
        pixels: to_image(&values, spec),
        label: 0,
        video_id: video_id.to_string(),
        frame_idx,
        family: spec.family,
        tamper_mask: None,
    }
}

/// Tamper region and method, fixed per fake video.
#[derive(Clone, Debug)]
struct TamperPlan {
    mask: Vec<u8>,
    method: TamperMethod,
    lattice_amp: f64,
    block_amp: f64,
    tone: f64,
    contrast: f64,
    swirl: f64,
    foreign: Layout,
    center: (f64, f64),
}

fn region(h: usize, w: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, (f64, f64)) {
    let (y0, y1) = (h / 4, h - h / 4);
    let (x0, x1) = (w / 4, w - w / 4);
    let total = (h * w) as f64;
    loop {
        let rh = rng.gen_range(2..=(y1 - y0));
        let rw = rng.gen_range(2..=(x1 - x0));
        let top = rng.gen_range(y0..=y1 - rh);
        let left = rng.gen_range(x0..=x1 - rw);
        let ellipse = rng.gen_bool(0.5);
        let (cy, cx) = (top as f64 + rh as f64 / 2.0, left as f64 + rw as f64 / 2.0);
        let mut mask = vec![0u8; h * w];
        for y in top..top + rh {
            for x in left..left + rw {
                let inside = !ellipse || {
                    let dy = (y as f64 + 0.5 - cy) / (rh as f64 / 2.0);
                    let dx = (x as f64 + 0.5 - cx) / (rw as f64 / 2.0);
                    dy * dy + dx * dx <= 1.0
                };
                mask[y * w + x] = u8::from(inside);
            }
        }
        let frac = mask.iter().filter(|&&m| m != 0).count() as f64 / total;
        if (MIN_REGION_FRACTION..MAX_REGION_FRACTION).contains(&frac) {
            return (mask, (cy, cx));
        }
    }
}

fn plan(spec: &DatasetSpec, video_id: &str) -> TamperPlan {
    let st = style(spec.family);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        &[spec.family.tag(), video_id, "tamper"],
        &[],
    ));
    let (mask, center) = region(spec.height, spec.width, &mut rng);
    let method = st.methods[rng.gen_range(0..st.methods.len())];
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let contrast = if rng.gen_bool(0.5) {
        rng.gen_range(1.3..1.6)
    } else {
        rng.gen_range(0.5..0.7)
    };
    let foreign = layout(&st, spec.height as f64, spec.width as f64, &mut rng);
    TamperPlan {
        mask,
        method,
        lattice_amp: uniform(&mut rng, st.lattice_amp),
        block_amp: uniform(&mut rng, st.block_amp),
        tone: sign * uniform(&mut rng, st.tone_shift),
        contrast,
        swirl: sign * rng.gen_range(1.5..2.5),
        foreign,
        center,
    }
}

/// Blend weight ramping from the region border inwards.
fn feather(mask: &[u8], h: usize, w: usize, width: f64) -> Vec<f64> {
    let reach = width.ceil() as isize;
    let mut alpha = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] == 0 {
                continue;
            }
            // Chebyshev distance to the nearest outside pixel (image border counts as outside).
            let mut d = reach + 1;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    let outside = yy < 0
                        || xx < 0
                        || yy >= h as isize
                        || xx >= w as isize
                        || mask[yy as usize * w + xx as usize] == 0;
                    if outside {
                        d = d.min(dy.abs().max(dx.abs()));
                    }
                }
            }
            alpha[y * w + x] = (d as f64 / width).min(1.0);
        }
    }
    alpha
}

fn box_smooth(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    acc += values[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * w + x] = acc / n;
        }
    }
    out
}

fn bilinear(values: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = values[y0 * w + x0] * (1.0 - fx) + values[y0 * w + x1] * fx;
    let bot = values[y1 * w + x0] * (1.0 - fx) + values[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Manipulated (label 1) counterpart of `original`. Pixels outside the
/// returned mask are bit-identical to the original.
pub fn gen_manipulated(original: &ImageSample, spec: &DatasetSpec) -> ImageSample {
    debug_assert_eq!(original.label, 0, "manipulating an already manipulated sample");
    let st = style(spec.family);
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let fake_id = format!("{}-fake", identity_of(&original.video_id));
    let plan = plan(spec, &fake_id);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        &[spec.family.tag(), &fake_id, "tamper-frame"],
        &[original.frame_idx as u64],
    ));

    // luminance of the original (first channel; all channels are equal)
    let src: Vec<f64> = original.pixels.data().iter().step_by(c).map(|&v| v as f64).collect();
    let smooth = box_smooth(&src, h, w);
    let alpha = feather(&plan.mask, h, w, st.feather);
    let region_mean = {
        let (s, n) = src
            .iter()
            .zip(&plan.mask)
            .filter(|(_, &m)| m != 0)
            .fold((0.0, 0.0), |(s, n), (v, _)| (s + v, n + 1.0));
        s / n
    };
    let foreign = render(&plan.foreign, h, w, &mut rng);
    let block_noise: Vec<f64> = (0..h.div_ceil(2) * w.div_ceil(2)).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut out = original.pixels.clone();
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if plan.mask[i] == 0 {
                continue;
            }
            let target = match plan.method {
                TamperMethod::Warp => {
                    let (dy, dx) = (y as f64 - plan.center.0, x as f64 - plan.center.1);
                    let r = (dy * dy + dx * dx).sqrt();
                    let theta = plan.swirl * (-r / 4.0).exp();
                    let (s, co) = theta.sin_cos();
                    bilinear(&smooth, h, w, plan.center.0 + dy * co - dx * s, plan.center.1 + dy * s + dx * co)
                        + plan.tone * 0.5
                }
                TamperMethod::TextureSubstitution => smooth[i] + plan.tone * 0.5,
                TamperMethod::ColorShift => region_mean + (smooth[i] - region_mean) * plan.contrast + plan.tone,
                TamperMethod::ForeignBlend => foreign[i] * 0.5 + smooth[i] * 0.5 + plan.tone * 0.5,
            };
            let lattice = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
            let block = block_noise[(y / 2) * w.div_ceil(2) + x / 2];
            let target = target + plan.lattice_amp * lattice + plan.block_amp * block;
            let delta = (alpha[i] * (target - src[i])).clamp(-MAX_PIXEL_CHANGE as f64, MAX_PIXEL_CHANGE as f64);
            for ch in 0..c {
                let v = &mut data[i * c + ch];
                *v = (*v + delta as f32).clamp(0.0, 1.0);
            }
        }
    }
    ImageSample {
        pixels: out,
        label: 1,
        video_id: fake_id,
        frame_idx: original.frame_idx,
        family: original.family,
        tamper_mask: Some(plan.mask),
    }
}
