use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    /// Query projection, `D × D`, heads packed along the columns.
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    /// Output projection of the concatenated heads, `D × D`.
    pub wo: Tensor<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
    pub mlp_w1: Tensor<T>,
    pub mlp_b1: Tensor<T>,
    pub mlp_w2: Tensor<T>,
    pub mlp_b2: Tensor<T>,
}

const LAYER_FIELDS: [&str; 12] = [
    "ln1.gamma",
    "ln1.beta",
    "attn.wq",
    "attn.wk",
    "attn.wv",
    "attn.wo",
    "ln2.gamma",
    "ln2.beta",
    "mlp.w1",
    "mlp.b1",
    "mlp.w2",
    "mlp.b2",
];

impl<T: Scalar> LayerParams<T> {
    fn tensors(&self) -> [&Tensor<T>; 12] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 12] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = Tensor<T>>) -> Self {
        let mut next = || it.next().expect("tensor count checked by caller");
        LayerParams {
            ln1_gamma: next(),
            ln1_beta: next(),
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            ln2_gamma: next(),
            ln2_beta: next(),
            mlp_w1: next(),
            mlp_b1: next(),
            mlp_w2: next(),
            mlp_b2: next(),
        }
    }
}

/// All trainable tensors of the model. The canonical order of
/// [`ModelParams::tensors`] is shared by the optimizer, the weights file and
/// the graph binding.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    /// Shared patch projection `(P²·C) × D`; a convolution with kernel = stride = P.
    pub patch_weight: Tensor<T>,
    pub patch_bias: Tensor<T>,
    /// `1 × D`
    pub class_token: Tensor<T>,
    /// `(N+1) × D`
    pub pos_embed: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub norm_gamma: Tensor<T>,
    pub norm_beta: Tensor<T>,
    /// `D × num_classes`
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

/// How [`init_params`] fills the tensors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Truncated normal (σ = 0.02, cut at 2σ) weights and class token, zero
    /// biases and position embeddings, unit LN gains.
    Standard,
    /// Every tensor drawn from N(0, std²), LN gains from 1 + N(0, std²).
    /// Gives generic, non-degenerate gradients for verification.
    Dense { std: f64 },
    /// Xavier-uniform projection matrices, truncated normal (σ = 0.02) class
    /// token and position embeddings, zero biases, unit LN gains.
    Xavier,
}

/// `(name, shape)` of every parameter tensor in canonical order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.dim;
    let h = cfg.mlp_hidden();
    let mut out = vec![
        ("patch_embed.weight".to_string(), vec![cfg.patch_len(), d]),
        ("patch_embed.bias".to_string(), vec![d]),
        ("class_token".to_string(), vec![1, d]),
        ("pos_embed".to_string(), vec![cfg.seq_len(), d]),
    ];
    let layer_shapes = [
        vec![d],
        vec![d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d, h],
        vec![h],
        vec![h, d],
        vec![d],
    ];
    for l in 0..cfg.depth {
        for (field, shape) in LAYER_FIELDS.iter().zip(&layer_shapes) {
            out.push((format!("blocks.{l}.{field}"), shape.clone()));
        }
    }
    out.push(("norm.gamma".to_string(), vec![d]));
    out.push(("norm.beta".to_string(), vec![d]));
    out.push(("head.weight".to_string(), vec![d, cfg.num_classes]));
    out.push(("head.bias".to_string(), vec![cfg.num_classes]));
    out
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    param_shapes(cfg)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let tensors = param_shapes(cfg)
            .into_iter()
            .map(|(_, s)| Tensor::zeros(&s))
            .collect();
        Self::from_tensors(cfg, tensors).expect("shapes from config")
    }

    /// Rebuilds parameters from tensors in canonical order, checking shapes.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = param_shapes(cfg);
        if tensors.len() != shapes.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let patch_weight = it.next().unwrap();
        let patch_bias = it.next().unwrap();
        let class_token = it.next().unwrap();
        let pos_embed = it.next().unwrap();
        let layers = (0..cfg.depth).map(|_| LayerParams::from_iter(&mut it)).collect();
        Ok(ModelParams {
            patch_weight,
            patch_bias,
            class_token,
            pos_embed,
            layers,
            norm_gamma: it.next().unwrap(),
            norm_beta: it.next().unwrap(),
            head_weight: it.next().unwrap(),
            head_bias: it.next().unwrap(),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![
            &self.patch_weight,
            &self.patch_bias,
            &self.class_token,
            &self.pos_embed,
        ];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend([
            &self.norm_gamma,
            &self.norm_beta,
            &self.head_weight,
            &self.head_bias,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.patch_weight,
            &mut self.patch_bias,
            &mut self.class_token,
            &mut self.pos_embed,
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([
            &mut self.norm_gamma,
            &mut self.norm_beta,
            &mut self.head_weight,
            &mut self.head_bias,
        ]);
        out
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let depth = self.layers.len();
        let tensors: Vec<Tensor<U>> = self.tensors().into_iter().map(Tensor::cast).collect();
        let mut it = tensors.into_iter();
        let patch_weight = it.next().unwrap();
        let patch_bias = it.next().unwrap();
        let class_token = it.next().unwrap();
        let pos_embed = it.next().unwrap();
        let layers = (0..depth).map(|_| LayerParams::from_iter(&mut it)).collect();
        ModelParams {
            patch_weight,
            patch_bias,
            class_token,
            pos_embed,
            layers,
            norm_gamma: it.next().unwrap(),
            norm_beta: it.next().unwrap(),
            head_weight: it.next().unwrap(),
            head_bias: it.next().unwrap(),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Weight,
    Bias,
    Gain,
    Position,
}

fn role(name: &str) -> Role {
    if name.ends_with(".gamma") {
        Role::Gain
    } else if name.ends_with(".beta") || name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") {
        Role::Bias
    } else if name == "pos_embed" {
        Role::Position
    } else {
        Role::Weight
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

/// Deterministic parameter initialization: the same `(config, seed, scheme)`
/// always yields bit-identical tensors.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64, scheme: InitScheme) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = param_shapes(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let r = role(&name);
            let data: Vec<f64> = match scheme {
                InitScheme::Standard => match r {
                    Role::Weight => (0..n).map(|_| truncated_normal(&mut rng, 0.02)).collect(),
                    Role::Bias | Role::Position => vec![0.0; n],
                    Role::Gain => vec![1.0; n],
                },
                InitScheme::Xavier => match r {
                    Role::Weight if name != "class_token" => {
                        let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
                    }
                    Role::Weight | Role::Position => (0..n).map(|_| truncated_normal(&mut rng, 0.02)).collect(),
                    Role::Bias => vec![0.0; n],
                    Role::Gain => vec![1.0; n],
                },
                InitScheme::Dense { std } => {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let offset = if r == Role::Gain { 1.0 } else { 0.0 };
                    (0..n).map(|_| offset + normal.sample(&mut rng)).collect()
                }
            };
            Tensor::from_f64(&shape, &data).expect("shape from config")
        })
        .collect();
    ModelParams::from_tensors(cfg, tensors).expect("shapes from config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let cfg = ModelConfig::default();
        let a: ModelParams<f32> = init_params(&cfg, 7, InitScheme::Standard);
        let b: ModelParams<f32> = init_params(&cfg, 7, InitScheme::Standard);
        assert_eq!(a, b);
        let c: ModelParams<f32> = init_params(&cfg, 8, InitScheme::Standard);
        assert_ne!(a, c);
    }

    #[test]
    fn standard_init_layout() {
        let cfg = ModelConfig::default();
        let p: ModelParams<f64> = init_params(&cfg, 1, InitScheme::Standard);
        assert!(p.pos_embed.data().iter().all(|&v| v == 0.0));
        assert!(p.patch_bias.data().iter().all(|&v| v == 0.0));
        assert!(p.layers[0].ln1_gamma.data().iter().all(|&v| v == 1.0));
        assert!(p.norm_beta.data().iter().all(|&v| v == 0.0));
        assert!(p.class_token.data().iter().any(|&v| v != 0.0));
        assert!(p.layers[1].wq.data().iter().all(|&v| v.abs() <= 0.04));
        let std = (p.layers[1].mlp_w1.data().iter().map(|v| v * v).sum::<f64>()
            / p.layers[1].mlp_w1.len() as f64)
            .sqrt();
        assert!((0.015..0.02).contains(&std), "{std}");
    }

    #[test]
    fn closed_form_parameter_count() {
        let cfg = ModelConfig {
            height: 32,
            width: 32,
            channels: 1,
            patch_size: 8,
            dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            ..ModelConfig::default()
        };
        // patch proj 64·64 + 64, class token 64, positions 17·64
        let embed = 64 * 64 + 64 + 64 + 17 * 64;
        // LN 2·64, q/k/v/out 4·64·64, LN 2·64, MLP 64·256 + 256 + 256·64 + 64
        let layer = 128 + 4 * 4096 + 128 + (16384 + 256 + 16384 + 64);
        // final LN 2·64, fc 64·2 + 2
        let head = 128 + 128 + 2;
        assert_eq!(embed + 2 * layer + head, 105_026);
        assert_eq!(param_count(&cfg), 105_026);
        let p: ModelParams<f32> = init_params(&cfg, 0, InitScheme::Standard);
        assert_eq!(p.num_scalars(), 105_026);
    }

    #[test]
    fn from_tensors_rejects_wrong_shape() {
        let cfg = ModelConfig::default();
        let mut tensors = ModelParams::<f32>::zeros(&cfg).into_tensors();
        tensors[3] = Tensor::zeros(&[16, 64]);
        let err = ModelParams::from_tensors(&cfg, tensors).unwrap_err();
        assert!(err.to_string().contains("pos_embed"), "{err}");
    }
}
