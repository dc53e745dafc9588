//! The bag-of-local-feature transformer.

mod config;
mod forward;
mod params;
mod patch;
mod rollout;

pub use config::{ModelConfig, LN_EPS};
pub use forward::{
    bind, embed, fake_probability, forward, forward_bag, forward_graph, mlp, msa, self_attention,
    transformer_unit, BoundLayer, BoundParams, ForwardVars, Mode, Prediction,
};
pub use params::{init_params, param_count, param_shapes, InitScheme, LayerParams, ModelParams};
pub use patch::{patchify, PatchBag};
pub use rollout::{attention_rollout, mass_inside_mask, patch_map_to_pixels, AttentionRecord};
