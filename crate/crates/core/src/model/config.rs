use crate::error::{Error, Result};
use crate::tensor::GeluKind;

/// Epsilon inside every layer norm of the model.
pub const LN_EPS: f64 = 1e-6;

/// Architecture hyper-parameters. The default is the desk-scale model: a
/// 32×32 grayscale input cut into 8×8 patches (16 tokens plus the class
/// token), width 64, two units of four heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    pub gelu: GeluKind,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            channels: 1,
            patch_size: 8,
            dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            dropout: 0.1,
            gelu: GeluKind::Exact,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.height", self.height),
            ("model.width", self.width),
            ("model.channels", self.channels),
            ("model.patch_size", self.patch_size),
            ("model.dim", self.dim),
            ("model.depth", self.depth),
            ("model.heads", self.heads),
            ("model.mlp_ratio", self.mlp_ratio),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not tiled exactly by {}x{} patches",
                self.height, self.width, self.patch_size, self.patch_size
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.dim {} is not divisible by model.heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "model.dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::Config("only binary classification is supported".into()));
        }
        Ok(())
    }

    pub fn grid_rows(&self) -> usize {
        self.height / self.patch_size
    }

    pub fn grid_cols(&self) -> usize {
        self.width / self.patch_size
    }

    /// N = H·W / P²
    pub fn num_patches(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    /// Token count including the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    /// P²·C
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_sizes() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 16);
        assert_eq!(c.patch_len(), 64);
        assert_eq!(c.head_dim(), 16);

        let full = ModelConfig {
            height: 384,
            width: 384,
            channels: 3,
            patch_size: 16,
            ..ModelConfig::default()
        };
        full.validate().unwrap();
        assert_eq!(full.num_patches(), 576);
        assert_eq!(full.patch_len(), 768);
    }

    #[test]
    fn rejects_untileable_and_bad_heads() {
        let c = ModelConfig {
            patch_size: 5,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
