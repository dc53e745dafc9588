//! Finite-difference verification of every differentiable op and of the
//! full model loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{
    init_params, param_shapes, self_attention, forward_graph, BoundParams, InitScheme, Mode, ModelConfig, ModelParams,
};
use crate::tensor::{grad_check, GeluKind, GradCheckConfig, GradCheckReport, Graph, Tensor, Var};
use crate::trainer::cross_entropy;

type Op = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("shape")
}

/// Checks `op` through a fixed random projection to a scalar, so every
/// output element carries a distinct weight.
fn check(name: &str, shapes: &[&[usize]], op: Op, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<(String, GradCheckReport)> {
    let inputs: Vec<(String, Tensor<f64>)> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("{name}.in{i}"), random(s, rng)))
        .collect();
    let probe = {
        let mut g = Graph::new();
        let vars = inputs.iter().map(|(_, t)| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = op(&mut g, &vars)?;
        random(g.shape(out), rng)
    };
    let report = grad_check(
        |g, vars| {
            let out = op(g, vars)?;
            let w = g.constant(probe.clone())?;
            let weighted = g.mul(out, w)?;
            g.sum(weighted)
        },
        &inputs,
        cfg,
    )?;
    Ok((name.to_string(), report))
}

/// Every primitive, the attention block, and the full model loss with respect
/// to each parameter tensor. The model runs in f64 with a dense random init
/// so that no gradient is trivially zero.
pub fn gradcheck_suite(model: &ModelConfig, cfg: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cases: Vec<(&str, Vec<&[usize]>, Op)> = vec![
        ("matmul", vec![&[3, 4], &[4, 5]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_bt", vec![&[3, 4], &[5, 4]], Box::new(|g, v| g.matmul_bt(v[0], v[1]))),
        ("transpose", vec![&[3, 4]], Box::new(|g, v| g.transpose(v[0]))),
        ("add", vec![&[3, 4], &[3, 4]], Box::new(|g, v| g.add(v[0], v[1]))),
        ("add_row", vec![&[3, 4], &[4]], Box::new(|g, v| g.add_row(v[0], v[1]))),
        ("mul", vec![&[3, 4], &[3, 4]], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![&[3, 4]], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("softmax_rows", vec![&[3, 5]], Box::new(|g, v| g.softmax_rows(v[0]))),
        ("log_softmax_rows", vec![&[3, 5]], Box::new(|g, v| g.log_softmax_rows(v[0]))),
        (
            "layer_norm",
            vec![&[3, 6], &[6], &[6]],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-6)),
        ),
        ("gelu_exact", vec![&[3, 4]], Box::new(|g, v| g.gelu(v[0], GeluKind::Exact))),
        ("gelu_tanh", vec![&[3, 4]], Box::new(|g, v| g.gelu(v[0], GeluKind::Tanh))),
        (
            "dropout",
            vec![&[4, 5]],
            Box::new(|g, v| g.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(7))),
        ),
        ("sum", vec![&[3, 4]], Box::new(|g, v| g.sum(v[0]))),
        ("mean", vec![&[3, 4]], Box::new(|g, v| g.mean(v[0]))),
        ("slice_cols", vec![&[3, 6]], Box::new(|g, v| g.slice_cols(v[0], 2, 3))),
        ("concat_cols", vec![&[3, 2], &[3, 4]], Box::new(|g, v| g.concat_cols(&[v[0], v[1]]))),
        ("concat_rows", vec![&[1, 4], &[3, 4]], Box::new(|g, v| g.concat_rows(&[v[0], v[1]]))),
        ("rows", vec![&[5, 3]], Box::new(|g, v| g.rows(v[0], 1, 3))),
        ("pick", vec![&[3, 4]], Box::new(|g, v| g.pick(v[0], 7))),
        ("reshape", vec![&[3, 4]], Box::new(|g, v| g.reshape(v[0], &[2, 6]))),
        (
            "self_attention",
            vec![&[5, 4], &[5, 4], &[5, 4]],
            Box::new(|g, v| Ok(self_attention(g, v[0], v[1], v[2])?.0)),
        ),
        (
            "cross_entropy",
            vec![&[2]],
            Box::new(|g, v| {
                let l = cross_entropy(g, v[0], 1)?;
                g.reshape(l, &[1])
            }),
        ),
    ];
    let mut out = Vec::with_capacity(cases.len() + 1);
    for (name, shapes, op) in cases {
        out.push(check(name, &shapes, op, cfg, &mut rng)?);
    }
    out.push(("model".to_string(), check_model(model, cfg)?));
    Ok(out)
}

/// Cross-entropy of the full model (dropout active with a fixed mask seed)
/// with respect to every parameter tensor.
pub fn check_model(model: &ModelConfig, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    model.validate()?;
    let params: ModelParams<f64> = init_params(model, cfg.seed ^ 0x5eed, InitScheme::Dense { std: 0.15 });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let image = random(&[model.height, model.width, model.channels], &mut rng);
    let bag = crate::model::patchify(&image, model)?.patches;
    let inputs: Vec<(String, Tensor<f64>)> = param_shapes(model)
        .into_iter()
        .map(|(n, _)| n)
        .zip(params.into_tensors())
        .collect();
    let depth = model.depth;
    grad_check(
        |g, vars| {
            let bound = BoundParams::from_vars(vars, depth);
            let b = g.constant(bag.clone())?;
            let fv = forward_graph(g, b, &bound, model, Mode::Train { seed: 5 })?;
            cross_entropy(g, fv.logits, 1)
        },
        &inputs,
        cfg,
    )
}

/// Human-readable report with one line per checked tensor.
pub fn format_suite(results: &[(String, GradCheckReport)]) -> String {
    let mut s = String::new();
    for (name, r) in results {
        s.push_str(&format!("== {name} [{}]\n", if r.passed { "PASS" } else { "FAIL" }));
        s.push_str(&r.to_string());
        if !s.ends_with('\n') {
            s.push('\n');
        }
    }
    let failed = results.iter().filter(|(_, r)| !r.passed).count();
    s.push_str(&format!("{} checks, {failed} failed\n", results.len()));
    s
}
