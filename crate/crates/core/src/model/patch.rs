use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// The bag of non-overlapping patches of one image: an `N × (P²·C)` matrix
/// whose rows follow the patch grid in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBag<T = f32> {
    pub patches: Tensor<T>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch_size: usize,
    pub channels: usize,
}

/// Cuts an `H × W × C` image into its patch bag. Each row is the row-major
/// flattening of one `P × P × C` tile.
pub fn patchify<T: Scalar>(image: &Tensor<T>, cfg: &ModelConfig) -> Result<PatchBag<T>> {
    let expected = [cfg.height, cfg.width, cfg.channels];
    if image.shape() != expected {
        return Err(Error::shape("patchify", image.shape(), &expected));
    }
    let p = cfg.patch_size;
    if cfg.height % p != 0 || cfg.width % p != 0 {
        return Err(Error::Config("image not tiled exactly by patches".into()));
    }
    let (gr, gc, c, w) = (cfg.grid_rows(), cfg.grid_cols(), cfg.channels, cfg.width);
    let src = image.data();
    let mut data = Vec::with_capacity(src.len());
    for tr in 0..gr {
        for tc in 0..gc {
            for py in 0..p {
                let y = tr * p + py;
                let start = (y * w + tc * p) * c;
                data.extend_from_slice(&src[start..start + p * c]);
            }
        }
    }
    Ok(PatchBag {
        patches: Tensor::new(&[gr * gc, p * p * c], data)?,
        grid_rows: gr,
        grid_cols: gc,
        patch_size: p,
        channels: c,
    })
}

impl<T: Scalar> PatchBag<T> {
    pub fn num_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Inverse of [`patchify`].
    pub fn unpatchify(&self) -> Tensor<T> {
        let (p, c) = (self.patch_size, self.channels);
        let (h, w) = (self.grid_rows * p, self.grid_cols * p);
        let mut out = vec![T::zero(); h * w * c];
        let src = self.patches.data();
        let row_len = p * p * c;
        for tr in 0..self.grid_rows {
            for tc in 0..self.grid_cols {
                let patch = &src[(tr * self.grid_cols + tc) * row_len..][..row_len];
                for py in 0..p {
                    let y = tr * p + py;
                    let dst = (y * w + tc * p) * c;
                    out[dst..dst + p * c].copy_from_slice(&patch[py * p * c..(py + 1) * p * c]);
                }
            }
        }
        Tensor::new(&[h, w, c], out).expect("patch grid shape")
    }

    /// Reorders the patch rows: row `i` of the result is row `order[i]` here.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.num_patches());
        let row_len = self.patches.shape()[1];
        let mut data = Vec::with_capacity(self.patches.len());
        for &src in order {
            data.extend_from_slice(self.patches.row(src));
        }
        PatchBag {
            patches: Tensor::new(&[order.len(), row_len], data).expect("same shape"),
            ..self.clone()
        }
    }
}
