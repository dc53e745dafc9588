//! Cross-entropy training with momentum SGD on a per-step cosine schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{derive_seed, identity_of, ImageSample};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, roc_auc, ScoredSample};
use crate::model::{bind, fake_probability, forward_bag, forward_graph, patchify, Mode, ModelConfig, ModelParams, PatchBag};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
    /// L2 penalty added to the gradient; 0 disables.
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            lr0: 0.01,
            momentum: 0.9,
            lr_min: 0.0,
            seed: 0,
            eval_every: 1,
            weight_decay: 0.0,
            grad_clip: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_min >= 0.0 && self.lr0 > self.lr_min) {
            return bad(format!(
                "need train.lr0 > train.lr_min >= 0, got lr0 = {} and lr_min = {}",
                self.lr0, self.lr_min
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("train.momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("train.eval_every must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("train.weight_decay and train.grad_clip must be >= 0".into());
        }
        Ok(())
    }

    /// Optimizer steps in a full run over `n` training samples.
    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// `−log softmax(logits)[label]`, recorded on `g`.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, label: usize) -> Result<Var> {
    let n = g.value(logits).len();
    if label >= n {
        return Err(Error::Data(format!("label {label} out of range for {n} classes")));
    }
    let logp = g.log_softmax_rows(logits)?;
    let picked = g.pick(logp, label)?;
    g.scale(picked, T::lit(-1.0))
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·t/T))`
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(Error::Config(format!("cosine schedule needs 0 <= t <= T, T >= 1 (t = {t}, T = {total})")));
    }
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * t as f64 / total as f64).cos()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub velocity: Vec<Tensor<T>>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub t: usize,
    pub total: usize,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[&Tensor<T>], momentum: f64, total: usize) -> Self {
        OptimizerState {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            momentum,
            weight_decay: 0.0,
            t: 0,
            total,
        }
    }
}

/// Classic momentum: `v ← μ·v + g`, `p ← p − lr·v`. Consumes the gradients,
/// leaving every slot `None`.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &mut [Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Numeric(format!(
            "sgd_step: {} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(Option::is_none) {
        return Err(Error::Numeric(format!("sgd_step: parameter {i} has no gradient")));
    }
    if state.t >= state.total {
        return Err(Error::Numeric(format!("sgd_step: step {} beyond schedule length {}", state.t, state.total)));
    }
    let mu = T::lit(state.momentum);
    let wd = T::lit(state.weight_decay);
    let lr = T::lit(lr);
    for ((p, g), v) in params.iter_mut().zip(grads.iter_mut()).zip(&mut state.velocity) {
        let g = g.take().expect("checked above");
        if g.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::shape("sgd_step", p.shape(), g.shape()));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let gv = if state.weight_decay > 0.0 { gv + wd * *pv } else { gv };
            *vv = mu * *vv + gv;
            *pv = *pv - lr * *vv;
        }
    }
    state.t += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub val_auc: Option<f64>,
    /// Learning rate of the schedule at the end of the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("epoch,mean_loss,train_acc,val_acc,val_auc,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{:e}\n",
                r.epoch,
                r.mean_loss,
                r.train_acc,
                opt(r.val_acc),
                opt(r.val_auc),
                r.lr
            ));
        }
        out
    }
}

/// Loss, logits and per-parameter gradients of one sample.
fn sample_gradients(
    params: &ModelParams<f32>,
    bag: &PatchBag<f32>,
    label: u8,
    cfg: &ModelConfig,
    dropout_seed: u64,
) -> Result<(f64, [f32; 2], Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let bound = bind(&mut g, params, true)?;
    let x = g.constant(bag.patches.clone())?;
    let fv = forward_graph(&mut g, x, &bound, cfg, Mode::Train { seed: dropout_seed })?;
    let loss = cross_entropy(&mut g, fv.logits, label as usize)?;
    let loss_value = g.value(loss).data()[0] as f64;
    let logits = g.value(fv.logits).data();
    let logits = [logits[0], logits[1]];
    g.backward(loss)?;
    let grads = bound
        .vars()
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            g.take_grad(v)
                .ok_or_else(|| Error::Numeric(format!("parameter {i} received no gradient")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss_value, logits, grads))
}

/// Fake-class probability for every sample, in input order.
pub fn predict_scores(params: &ModelParams<f32>, cfg: &ModelConfig, samples: &[ImageSample]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let bag = patchify(&s.pixels, cfg)?;
            Ok(forward_bag(&bag, params, cfg, Mode::Eval)?.fake_probability())
        })
        .collect()
}

/// Frame-level accuracy (threshold 0.5) and ROC-AUC.
pub fn evaluate(params: &ModelParams<f32>, cfg: &ModelConfig, samples: &[ImageSample]) -> Result<(f64, f64)> {
    let scores = predict_scores(params, cfg, samples)?;
    let scored: Vec<ScoredSample> = samples
        .iter()
        .zip(scores)
        .map(|(s, p)| ScoredSample::new(p, s.label, s.video_id.clone()))
        .collect();
    Ok((accuracy(&scored, 0.5)?, roc_auc(&scored)?))
}

/// Trains `params` on `train`, validating on `val`.
pub fn train(
    mut params: ModelParams<f32>,
    cfg: &ModelConfig,
    train: &[ImageSample],
    val: &[ImageSample],
    tc: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    tc.validate()?;
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty splits, got {} train and {} val samples",
            train.len(),
            val.len()
        )));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.label > 1) {
        return Err(Error::Data(format!("sample {}#{} has label {}", s.video_id, s.frame_idx, s.label)));
    }
    let mut history = TrainHistory::default();
    if tc.epochs == 0 {
        return Ok((params, history));
    }
    let bags = train
        .par_iter()
        .map(|s| patchify(&s.pixels, cfg))
        .collect::<Result<Vec<_>>>()?;
    let total = tc.total_steps(train.len());
    let mut state = OptimizerState::new(&params.tensors(), tc.momentum, total);
    state.weight_decay = tc.weight_decay;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &["shuffle"], &[]));
    let mut units = shuffle_units(train);

    for epoch in 0..tc.epochs {
        units.shuffle(&mut shuffle_rng);
        let order: Vec<usize> = units.iter().flatten().copied().collect();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(tc.batch_size) {
            let step = state.t as u64;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(i, &k)| {
                    let seed = derive_seed(tc.seed, &["dropout"], &[step, i as u64]);
                    sample_gradients(&params, &bags[k], train[k].label, cfg, seed)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::NonFinite(op) => Error::Numeric(format!(
                        "non-finite value in {op} at epoch {epoch}, step {step}; lower train.lr0 or enable train.grad_clip"
                    )),
                    other => other,
                })?;

            let mut sum: Option<Vec<Tensor<f32>>> = None;
            for (&k, (loss, logits, grads)) in batch.iter().zip(results) {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
                }
                loss_sum += loss;
                let predicted = u8::from(fake_probability(&logits) >= 0.5);
                correct += usize::from(predicted == train[k].label);
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let mut grads: Vec<Option<Tensor<f32>>> = sum
                .expect("non-empty batch")
                .into_iter()
                .map(|t| Some(t.map(|v| v * scale)))
                .collect();
            if tc.grad_clip > 0.0 {
                clip_global_norm(&mut grads, tc.grad_clip);
            }
            let lr = cosine_lr(state.t, total, tc.lr0, tc.lr_min)?;
            sgd_step(&mut params.tensors_mut(), &mut grads, &mut state, lr)?;
        }

        let validate = (epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs;
        let (val_acc, val_auc) = if validate {
            let (a, u) = evaluate(&params, cfg, val)?;
            (Some(a), Some(u))
        } else {
            (None, None)
        };
        history.records.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
            val_auc,
            lr: cosine_lr(state.t, total, tc.lr0, tc.lr_min)?,
        });
    }
    Ok((params, history))
}

/// Groups each original frame with its manipulated counterpart (same
/// identity and frame index) so that shuffling keeps pairs together and
/// batches stay label-balanced. Samples without a partner form their own unit.
fn shuffle_units(samples: &[ImageSample]) -> Vec<Vec<usize>> {
    let mut units: BTreeMap<(&str, u32), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        units.entry((identity_of(&s.video_id), s.frame_idx)).or_default().push(i);
    }
    units.into_values().collect()
}

fn clip_global_norm(grads: &mut [Option<Tensor<f32>>], max_norm: f64) {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ce(logits: &[f64], label: usize) -> f64 {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::new(&[logits.len()], logits.to_vec()).unwrap()).unwrap();
        let loss = cross_entropy(&mut g, l, label).unwrap();
        g.value(loss).data()[0]
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((ce(&[0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-12);
        let saturated = ce(&[30.0, -30.0], 0);
        assert!(saturated.is_finite() && (0.0..1e-20).contains(&saturated));
        // -ln(e^2 / (e^1 + e^2)) = ln(1 + e^-1)
        assert!((ce(&[1.0, 2.0], 1) - 0.313262).abs() < 1e-6);
        assert!((ce(&[1.0, 2.0], 1) - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::new(&[2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert!(cross_entropy(&mut g, l, 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = [0.3, -1.2];
        let mut g = Graph::<f64>::new();
        let l = g.param(Tensor::new(&[2], logits.to_vec()).unwrap()).unwrap();
        let loss = cross_entropy(&mut g, l, 1).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(l).unwrap().data().to_vec();
        let z = logits[0].exp() + logits[1].exp();
        let p = [logits[0].exp() / z, logits[1].exp() / z];
        assert!((grad[0] - p[0]).abs() < 1e-12);
        assert!((grad[1] - (p[1] - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 0.01, 0.0).unwrap(), 0.01);
        assert!(cosine_lr(100, 100, 0.01, 0.0).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.01, 0.0).unwrap() - 0.005).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 0.01, 0.0).is_err());
        assert!(cosine_lr(0, 0, 0.01, 0.0).is_err());
    }

    fn step_once(p: &mut Tensor<f64>, g: &Tensor<f64>, state: &mut OptimizerState<f64>, lr: f64) {
        let mut grads = vec![Some(g.clone())];
        sgd_step(&mut [p], &mut grads, state, lr).unwrap();
        assert!(grads[0].is_none());
    }

    #[test]
    fn sgd_momentum_zero_is_plain_descent() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::new(&[3], vec![0.25, 0.5, -1.0]).unwrap();
        let mut state = OptimizerState::new(&[&p], 0.0, 10);
        step_once(&mut p, &g, &mut state, 0.5);
        assert_eq!(p.data(), &[1.0 - 0.125, -2.0 - 0.25, 0.5 + 0.5]);
    }

    #[test]
    fn sgd_two_momentum_steps_move_2_9_g() {
        let mut p = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
        let g = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let mut state = OptimizerState::new(&[&p], 0.9, 10);
        step_once(&mut p, &g, &mut state, 1.0);
        step_once(&mut p, &g, &mut state, 1.0);
        assert!((p.data()[0] + 2.9).abs() < 1e-12);
        assert!((p.data()[1] - 5.8).abs() < 1e-12);
        assert_eq!(state.t, 2);
    }

    #[test]
    fn sgd_zero_grads_leave_params() {
        let mut p = Tensor::new(&[2], vec![0.7, -0.1]).unwrap();
        let before = p.clone();
        let mut state = OptimizerState::new(&[&p], 0.9, 10);
        step_once(&mut p, &Tensor::zeros(&[2]), &mut state, 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_missing_grad_is_an_error() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut state = OptimizerState::new(&[&p], 0.9, 10);
        let mut grads = vec![None];
        assert!(sgd_step(&mut [&mut p], &mut grads, &mut state, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { momentum: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().total_steps(33), 20 * 3);
    }
}
