use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::LN_EPS;
use super::{patchify, AttentionRecord, ModelConfig, ModelParams, PatchBag};
use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; masks are drawn from a stream seeded with `seed`.
    Train { seed: u64 },
}

/// Per-layer graph handles.
#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

/// [`ModelParams`] recorded on a graph, in the same canonical order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub patch_weight: Var,
    pub patch_bias: Var,
    pub class_token: Var,
    pub pos_embed: Var,
    pub layers: Vec<BoundLayer>,
    pub norm_gamma: Var,
    pub norm_beta: Var,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.patch_weight, self.patch_bias, self.class_token, self.pos_embed];
        for l in &self.layers {
            out.extend([
                l.ln1_gamma,
                l.ln1_beta,
                l.wq,
                l.wk,
                l.wv,
                l.wo,
                l.ln2_gamma,
                l.ln2_beta,
                l.mlp_w1,
                l.mlp_b1,
                l.mlp_w2,
                l.mlp_b2,
            ]);
        }
        out.extend([self.norm_gamma, self.norm_beta, self.head_weight, self.head_bias]);
        out
    }

    /// Rebuilds the handle structure from vars in canonical order.
    pub fn from_vars(vars: &[Var], depth: usize) -> Self {
        assert_eq!(vars.len(), 8 + 12 * depth, "parameter var count");
        let mut it = vars.iter().copied();
        let mut next = || it.next().unwrap();
        let patch_weight = next();
        let patch_bias = next();
        let class_token = next();
        let pos_embed = next();
        let layers = (0..depth)
            .map(|_| BoundLayer {
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
            })
            .collect();
        BoundParams {
            patch_weight,
            patch_bias,
            class_token,
            pos_embed,
            layers,
            norm_gamma: next(),
            norm_beta: next(),
            head_weight: next(),
            head_bias: next(),
        }
    }
}

/// Records every parameter tensor on `g`, as trainable leaves or constants.
pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Result<BoundParams> {
    let vars = params
        .tensors()
        .into_iter()
        .map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundParams::from_vars(&vars, params.layers.len()))
}

/// `z₀ = [x_class; B·W + b] + E` for a bag `N × (P²·C)`.
pub fn embed<T: Scalar>(g: &mut Graph<T>, bag: Var, p: &BoundParams) -> Result<Var> {
    let proj = g.matmul(bag, p.patch_weight)?;
    let proj = g.add_row(proj, p.patch_bias)?;
    let tokens = g.concat_rows(&[p.class_token, proj])?;
    g.add(tokens, p.pos_embed)
}

/// Scaled dot-product attention of one head. Returns the output `A·v` and the
/// row-stochastic attention matrix `A = softmax(q·kᵀ/√d)`.
pub fn self_attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let d = g.shape(q)[1];
    let logits = g.matmul_bt(q, k)?;
    let logits = g.scale(logits, T::lit(1.0 / (d as f64).sqrt()))?;
    let attn = g.softmax_rows(logits)?;
    let out = g.matmul(attn, v)?;
    Ok((out, attn))
}

/// Multi-head self-attention: `k` heads on column slices of the packed
/// projections, concatenated and projected by `W`.
pub fn msa<T: Scalar>(g: &mut Graph<T>, z: Var, layer: &BoundLayer, heads: usize) -> Result<(Var, Vec<Var>)> {
    let q = g.matmul(z, layer.wq)?;
    let k = g.matmul(z, layer.wk)?;
    let v = g.matmul(z, layer.wv)?;
    let dh = g.shape(q)[1] / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut attns = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let (o, a) = self_attention(g, qh, kh, vh)?;
        outs.push(o);
        attns.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok((g.matmul(cat, layer.wo)?, attns))
}

/// `linear → GELU → dropout → linear`
pub fn mlp<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layer: &BoundLayer,
    cfg: &ModelConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let h = g.matmul(x, layer.mlp_w1)?;
    let h = g.add_row(h, layer.mlp_b1)?;
    let h = g.gelu(h, cfg.gelu)?;
    let h = match dropout_rng {
        Some(rng) => g.dropout(h, cfg.dropout, rng)?,
        None => h,
    };
    let h = g.matmul(h, layer.mlp_w2)?;
    g.add_row(h, layer.mlp_b2)
}

/// One pre-norm unit:
/// `z' = MSA(LN(z)) + z`, `z_next = MLP(LN(z')) + z'`.
pub fn transformer_unit<T: Scalar>(
    g: &mut Graph<T>,
    z: Var,
    layer: &BoundLayer,
    cfg: &ModelConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Vec<Var>)> {
    let eps = T::lit(LN_EPS);
    let n1 = g.layer_norm(z, layer.ln1_gamma, layer.ln1_beta, eps)?;
    let (attn_out, attns) = msa(g, n1, layer, cfg.heads)?;
    let z_mid = g.add(attn_out, z)?;
    let n2 = g.layer_norm(z_mid, layer.ln2_gamma, layer.ln2_beta, eps)?;
    let m = mlp(g, n2, layer, cfg, dropout_rng)?;
    Ok((g.add(m, z_mid)?, attns))
}

/// Graph handles produced by [`forward_graph`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub embedded: Var,
    /// Token sequence after the last unit, before the final norm.
    pub encoded: Var,
    /// `[num_classes]` logits read from the class-token row.
    pub logits: Var,
    /// `attention[layer][head]`, each `(N+1) × (N+1)`.
    pub attention: Vec<Vec<Var>>,
}

/// Full forward pass on a patch bag already recorded on `g`:
/// embed, `L` units, final LN, `fc` of the class token.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    bag: Var,
    p: &BoundParams,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<ForwardVars> {
    let mut rng = match mode {
        Mode::Train { seed } if cfg.dropout > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let embedded = embed(g, bag, p)?;
    let mut z = embedded;
    let mut attention = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (next, attns) = transformer_unit(g, z, layer, cfg, rng.as_mut())?;
        z = next;
        attention.push(attns);
    }
    let cls = g.rows(z, 0, 1)?;
    let cls = g.layer_norm(cls, p.norm_gamma, p.norm_beta, T::lit(LN_EPS))?;
    let logits = g.matmul(cls, p.head_weight)?;
    let logits = g.add_row(logits, p.head_bias)?;
    let logits = g.reshape(logits, &[cfg.num_classes])?;
    Ok(ForwardVars {
        embedded,
        encoded: z,
        logits,
        attention,
    })
}

/// Output of a tape-free inference pass.
#[derive(Clone, Debug)]
pub struct Prediction<T = f32> {
    pub logits: Tensor<T>,
    pub record: AttentionRecord,
}

impl<T: Scalar> Prediction<T> {
    /// Softmax probability of the "manipulated" class.
    pub fn fake_probability(&self) -> f64 {
        fake_probability(self.logits.data())
    }
}

/// `softmax(logits)[1]`, computed stably.
pub fn fake_probability<T: Scalar>(logits: &[T]) -> f64 {
    let a = logits[0].as_f64();
    let b = logits[1].as_f64();
    1.0 / (1.0 + (a - b).exp())
}

pub fn forward_bag<T: Scalar>(
    bag: &PatchBag<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Prediction<T>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, params, false)?;
    let bag_var = g.constant(bag.patches.clone())?;
    let fv = forward_graph(&mut g, bag_var, &bound, cfg, mode)?;
    let record = AttentionRecord::from_graph(&g, &fv.attention);
    Ok(Prediction {
        logits: g.value(fv.logits).clone(),
        record,
    })
}

/// Patchify + full forward pass on an `H × W × C` image.
pub fn forward<T: Scalar>(
    image: &Tensor<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Prediction<T>> {
    let bag = patchify(image, cfg)?;
    forward_bag(&bag, params, cfg, mode)
}
