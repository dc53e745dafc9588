//! Attention rollout: attributes the class token's final representation to
//! input patches by chaining residual-adjusted, head-averaged attention.

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Attention matrices captured during a forward pass, `layers[l][h]` of shape
/// `(N+1) × (N+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<Tensor<f64>>>,
}

impl AttentionRecord {
    pub fn from_graph<T: Scalar>(g: &Graph<T>, attention: &[Vec<Var>]) -> Self {
        AttentionRecord {
            layers: attention
                .iter()
                .map(|heads| heads.iter().map(|&v| g.value(v).cast()).collect())
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Largest deviation of any attention row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in self.layers.iter().flatten() {
            let (rows, _) = a.rows_cols();
            for r in 0..rows {
                worst = worst.max((a.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
        worst
    }
}

fn residual_adjusted_mean(heads: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let first = heads
        .first()
        .ok_or_else(|| Error::Numeric("attention layer without heads".into()))?;
    let shape = first.shape().to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape("attention_rollout", &shape, &[]));
    }
    let n = shape[0];
    let mut avg = vec![0.0; n * n];
    for h in heads {
        if h.shape() != shape.as_slice() {
            return Err(Error::shape("attention_rollout", &shape, h.shape()));
        }
        for (a, &v) in avg.iter_mut().zip(h.data()) {
            *a += v;
        }
    }
    let k = heads.len() as f64;
    for r in 0..n {
        for c in 0..n {
            let v = 0.5 * avg[r * n + c] / k + if r == c { 0.5 } else { 0.0 };
            avg[r * n + c] = v;
        }
        let s: f64 = avg[r * n..(r + 1) * n].iter().sum();
        avg[r * n..(r + 1) * n].iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new(&[n, n], avg)
}

/// Rollout heatmap over the `N` patches (non-negative, sums to 1).
///
/// Each layer's heads are averaged, the residual path is folded in as
/// `½·Ā + ½·I` (rows renormalized), and the layers are chained as
/// `R = A'_L ··· A'_1`. The heatmap is the class-token row of `R` over the
/// patch columns, renormalized.
pub fn attention_rollout(record: &AttentionRecord) -> Result<Tensor<f64>> {
    let mut layers = record.layers.iter();
    let first = layers
        .next()
        .ok_or_else(|| Error::Numeric("empty attention record".into()))?;
    let mut rollout = residual_adjusted_mean(first)?;
    for heads in layers {
        let a = residual_adjusted_mean(heads)?;
        if a.shape() != rollout.shape() {
            return Err(Error::shape("attention_rollout", rollout.shape(), a.shape()));
        }
        rollout = a.matmul(&rollout)?;
    }
    let cls = &rollout.row(0)[1..];
    let mass: f64 = cls.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Numeric("class token carries no patch attention".into()));
    }
    Tensor::new(&[cls.len()], cls.iter().map(|v| v / mass).collect())
}

/// Nearest-neighbour upsampling of a per-patch map to `H × W`: every pixel
/// takes the value of the patch that contains it.
pub fn patch_map_to_pixels(map: &[f64], cfg: &ModelConfig) -> Result<Tensor<f64>> {
    if map.len() != cfg.num_patches() {
        return Err(Error::shape("patch_map_to_pixels", &[map.len()], &[cfg.num_patches()]));
    }
    let (p, gc) = (cfg.patch_size, cfg.grid_cols());
    let mut out = Vec::with_capacity(cfg.height * cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            out.push(map[(y / p) * gc + x / p]);
        }
    }
    Tensor::new(&[cfg.height, cfg.width], out)
}

/// Heatmap mass falling on the pixels of `mask` (`H × W`, nonzero = inside),
/// with each patch's weight spread uniformly over its `P²` pixels.
pub fn mass_inside_mask(heatmap: &[f64], mask: &[u8], cfg: &ModelConfig) -> Result<f64> {
    if mask.len() != cfg.height * cfg.width {
        return Err(Error::shape("mass_inside_mask", &[mask.len()], &[cfg.height, cfg.width]));
    }
    let per_pixel = patch_map_to_pixels(heatmap, cfg)?;
    let area = (cfg.patch_size * cfg.patch_size) as f64;
    Ok(per_pixel
        .data()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0)
        .map(|(w, _)| w / area)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::new(&[n, n], data.to_vec()).unwrap()
    }

    fn uniform(n: usize) -> Tensor<f64> {
        Tensor::full(&[n, n], 1.0 / n as f64)
    }

    #[test]
    fn uniform_single_layer_gives_uniform_heatmap() {
        let record = AttentionRecord {
            layers: vec![vec![uniform(5), uniform(5)]],
        };
        let heat = attention_rollout(&record).unwrap();
        for &v in heat.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_upper_layers_reproduce_first_layer_class_row() {
        let a1 = t(3, &[0.2, 0.5, 0.3, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4]);
        let record = AttentionRecord {
            layers: vec![vec![a1], vec![Tensor::eye(3)], vec![Tensor::eye(3)]],
        };
        let heat = attention_rollout(&record).unwrap();
        assert!((heat.data()[0] - 0.5 / 0.8).abs() < 1e-12);
        assert!((heat.data()[1] - 0.3 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn two_layer_chain_matches_hand_product() {
        let a1 = t(3, &[0.2, 0.5, 0.3, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4]);
        let a2 = t(3, &[0.6, 0.2, 0.2, 0.25, 0.5, 0.25, 0.1, 0.1, 0.8]);
        // A' = ½A + ½I (rows already sum to 1):
        // A1' = [[.6,.25,.15],[.05,.9,.05],[.15,.15,.7]]
        // A2' = [[.8,.1,.1],[.125,.75,.125],[.05,.05,.9]]
        // row 0 of A2'·A1' = .8·r0 + .1·r1 + .1·r2 of A1'
        //   = [.48+.005+.015, .2+.09+.015, .12+.005+.07] = [.5, .305, .195]
        let record = AttentionRecord {
            layers: vec![vec![a1], vec![a2]],
        };
        let heat = attention_rollout(&record).unwrap();
        let want = [0.305 / 0.5, 0.195 / 0.5];
        for (g, w) in heat.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn heads_are_averaged() {
        let h1 = t(3, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let h2 = t(3, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let record = AttentionRecord {
            layers: vec![vec![h1, h2]],
        };
        let heat = attention_rollout(&record).unwrap();
        assert_eq!(heat.data(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_record_is_an_error() {
        let record = AttentionRecord { layers: vec![] };
        assert!(attention_rollout(&record).is_err());
    }

    #[test]
    fn pixel_fill_and_mask_mass() {
        let cfg = ModelConfig {
            height: 4,
            width: 4,
            patch_size: 2,
            dim: 4,
            heads: 1,
            ..ModelConfig::default()
        };
        let heat = [0.1, 0.2, 0.3, 0.4];
        let px = patch_map_to_pixels(&heat, &cfg).unwrap();
        assert_eq!(px.get(&[0, 1]), 0.1);
        assert_eq!(px.get(&[1, 2]), 0.2);
        assert_eq!(px.get(&[3, 3]), 0.4);
        let mut mask = vec![0u8; 16];
        mask[2 * 4 + 2] = 1; // one pixel of patch 3
        mask[3 * 4 + 3] = 1; // another pixel of patch 3
        let m = mass_inside_mask(&heat, &mask, &cfg).unwrap();
        assert!((m - 0.2).abs() < 1e-12);
    }
}
