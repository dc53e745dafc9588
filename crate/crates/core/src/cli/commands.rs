//! The five subcommands as library functions. Each takes a validated
//! [`RunConfig`] and writes its artifacts under the configured directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Protocol, RunConfig};
use super::gradcheck::{format_suite, gradcheck_suite};
use super::manifest::{load_samples, mask_path_for, write_manifest, ManifestRow};
use super::weights::{load_weights, save_weights};
use crate::data::{
    build_split, derive_seed, encode_mask, perturb, read_pnm, write_pnm, Family, ImageSample, Level, PerturbKind,
    PerturbationSpec, Split,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, roc_auc, video_level, ScoredSample};
use crate::model::{
    attention_rollout, forward, init_params, mass_inside_mask, patch_map_to_pixels, ModelConfig, ModelParams, Mode,
};
use crate::tensor::{GradCheckConfig, Tensor};
use crate::trainer::{predict_scores, train, TrainHistory};

fn dims(cfg: &ModelConfig) -> [usize; 3] {
    [cfg.height, cfg.width, cfg.channels]
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

/// Writes images, masks and `manifest.csv` under `paths.data_dir`. The
/// training family gets every split; with `data.cross_family` the other
/// family's test split is added for the cross-family protocol.
pub fn gen_data(cfg: &RunConfig) -> Result<Vec<ManifestRow>> {
    let root = &cfg.paths.data_dir;
    let mut jobs = vec![];
    for split in Split::ALL {
        jobs.push((cfg.data.family, split));
    }
    if cfg.data.cross_family {
        jobs.push((cfg.data.family.other(), Split::Test));
    }
    let mut rows = Vec::new();
    for (family, split) in jobs {
        let spec = cfg.dataset_spec(family);
        let samples = build_split(&spec, split)?;
        let rel_dir = format!("{family}/{split}");
        ensure_dir(&root.join(&rel_dir))?;
        let ext = if spec.channels == 1 { "pgm" } else { "ppm" };
        for s in &samples {
            let rel = format!("{rel_dir}/{}_{:03}.{ext}", s.video_id, s.frame_idx);
            write_pnm(&root.join(&rel), &s.pixels)?;
            if let Some(mask) = &s.tamper_mask {
                fs::write(root.join(mask_path_for(&rel)), encode_mask(mask, spec.height, spec.width)?)?;
            }
            rows.push(ManifestRow {
                path: rel,
                label: s.label,
                video_id: s.video_id.clone(),
                frame_idx: s.frame_idx,
                family,
                split,
            });
        }
    }
    write_manifest(&cfg.manifest_path(), &rows)?;
    Ok(rows)
}

/// Trains on the manifest's training-family train split, validating on its
/// val split. Writes the weights file and `history.csv` to `paths.out_dir`.
pub fn train_cmd(cfg: &RunConfig) -> Result<TrainHistory> {
    let manifest = cfg.manifest_path();
    let train_set = load_samples(&manifest, cfg.data.family, Split::Train, dims(&cfg.model))?;
    let val_set = load_samples(&manifest, cfg.data.family, Split::Val, dims(&cfg.model))?;
    let params = init_params(&cfg.model, cfg.train.seed, cfg.init.scheme());
    let (params, history) = train(params, &cfg.model, &train_set, &val_set, &cfg.train)?;
    ensure_dir(&cfg.paths.out_dir)?;
    save_weights(&cfg.weights_path(), &params, &cfg.model)?;
    fs::write(cfg.paths.out_dir.join("history.csv"), history.to_csv())?;
    Ok(history)
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub protocol: &'static str,
    pub split: Split,
    pub family: Family,
    pub perturbation: String,
    pub level: String,
    pub acc: f64,
    pub auc_frame: f64,
    pub auc_video: f64,
    pub n: usize,
}

pub const REPORT_HEADER: &str = "protocol,split,family,perturbation,level,acc,auc_frame,auc_video,n";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.protocol, r.split, r.family, r.perturbation, r.level, r.acc, r.auc_frame, r.auc_video, r.n
        );
    }
    s
}

/// Rollout mass inside the tamper mask over correctly classified fakes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Localization {
    pub n: usize,
    pub mean_mass: f64,
    pub mean_area: f64,
}

impl Localization {
    /// Mean mass inside the mask over the mean mask area; 1 is chance.
    pub fn ratio(&self) -> f64 {
        self.mean_mass / self.mean_area
    }
}

/// `None` when no fake is classified correctly.
pub fn localization(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    samples: &[ImageSample],
    threshold: f64,
) -> Result<Option<Localization>> {
    let per_sample = samples
        .par_iter()
        .filter(|s| s.label == 1)
        .map(|s| {
            let pred = forward(&s.pixels, params, cfg, Mode::Eval)?;
            if pred.fake_probability() < threshold {
                return Ok(None);
            }
            let mask = s
                .tamper_mask
                .as_ref()
                .ok_or_else(|| Error::Data(format!("fake {}#{} has no tamper mask", s.video_id, s.frame_idx)))?;
            let heat = attention_rollout(&pred.record)?;
            Ok(Some((mass_inside_mask(heat.data(), mask, cfg)?, s.mask_fraction())))
        })
        .collect::<Result<Vec<_>>>()?;
    let hits: Vec<(f64, f64)> = per_sample.into_iter().flatten().collect();
    if hits.is_empty() {
        return Ok(None);
    }
    let n = hits.len() as f64;
    Ok(Some(Localization {
        n: hits.len(),
        mean_mass: hits.iter().map(|h| h.0).sum::<f64>() / n,
        mean_area: hits.iter().map(|h| h.1).sum::<f64>() / n,
    }))
}

fn score_row(
    protocol: &'static str,
    split: Split,
    family: Family,
    perturbation: &str,
    level: String,
    samples: &[ImageSample],
    scores: &[f64],
    threshold: f64,
) -> Result<ReportRow> {
    let scored: Vec<ScoredSample> = samples
        .iter()
        .zip(scores)
        .map(|(s, &p)| ScoredSample::new(p, s.label, s.video_id.clone()))
        .collect();
    Ok(ReportRow {
        protocol,
        split,
        family,
        perturbation: perturbation.to_string(),
        level,
        acc: accuracy(&scored, threshold)?,
        auc_frame: roc_auc(&scored)?,
        auc_video: roc_auc(&video_level(&scored)?)?,
        n: samples.len(),
    })
}

/// The perturbation settings of the robustness protocol: the single,
/// random and mixed suites, then each kind on its own.
pub fn perturbation_suite(level: u8) -> Vec<(String, Option<PerturbKind>, Level, usize)> {
    let mut out = vec![
        ("std/sing".to_string(), None, Level::Fixed(level), 1),
        ("std/rand".to_string(), None, Level::Random, 1),
        ("std/mix3".to_string(), None, Level::Fixed(level), 3),
    ];
    for k in PerturbKind::ALL {
        out.push((k.name().to_string(), Some(k), Level::Fixed(level), 1));
    }
    out
}

/// Applies one perturbation setting to every sample. `kind = None` draws the
/// leading kind per sample. Seeds depend only on the sample and the setting.
pub fn perturb_samples(
    samples: &[ImageSample],
    name: &str,
    kind: Option<PerturbKind>,
    level: Level,
    mix_count: usize,
    seed: u64,
) -> Result<Vec<ImageSample>> {
    samples
        .par_iter()
        .map(|s| {
            let sample_seed = derive_seed(seed, &[name, &s.video_id], &[s.frame_idx as u64]);
            let kind = kind.unwrap_or_else(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
                PerturbKind::ALL[rng.gen_range(0..PerturbKind::ALL.len())]
            });
            let spec = PerturbationSpec { kind, level, mix_count };
            let mut out = s.clone();
            out.pixels = perturb(&s.pixels, &spec, sample_seed.wrapping_add(1))?;
            Ok(out)
        })
        .collect()
}

/// Output of [`eval_cmd`].
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub rows: Vec<ReportRow>,
    pub localization: Option<Localization>,
}

/// Runs the configured protocols and writes `report.csv` to `paths.out_dir`.
pub fn eval_cmd(cfg: &RunConfig) -> Result<EvalOutcome> {
    let weights = cfg.weights_path();
    let params = load_weights(&weights, &cfg.model)?;
    let manifest = cfg.manifest_path();
    let model = &cfg.model;
    let ev = &cfg.eval;
    let family = cfg.data.family;
    let mut rows = Vec::new();
    let mut loc = None;

    let needs_home = ev.protocol.includes(Protocol::InDist) || ev.protocol.includes(Protocol::Perturbed);
    let home = if needs_home {
        load_samples(&manifest, family, ev.split, dims(model))?
    } else {
        Vec::new()
    };
    if ev.protocol.includes(Protocol::InDist) {
        let scores = predict_scores(&params, model, &home)?;
        rows.push(score_row("in_dist", ev.split, family, "none", "0".into(), &home, &scores, ev.threshold)?);
        loc = localization(&params, model, &home, ev.threshold)?;
    }
    if ev.protocol.includes(Protocol::CrossFamily) {
        let other = family.other();
        let away = load_samples(&manifest, other, Split::Test, dims(model))?;
        let scores = predict_scores(&params, model, &away)?;
        rows.push(score_row("cross_family", Split::Test, other, "none", "0".into(), &away, &scores, ev.threshold)?);
    }
    if ev.protocol.includes(Protocol::Perturbed) {
        for (name, kind, level, mix) in perturbation_suite(ev.level) {
            let shifted = perturb_samples(&home, &name, kind, level, mix, ev.seed)?;
            let scores = predict_scores(&params, model, &shifted)?;
            rows.push(score_row(
                "perturbed",
                ev.split,
                family,
                &name,
                level.to_string(),
                &shifted,
                &scores,
                ev.threshold,
            )?);
        }
    }
    ensure_dir(&cfg.paths.out_dir)?;
    fs::write(cfg.paths.out_dir.join("report.csv"), report_csv(&rows))?;
    Ok(EvalOutcome { rows, localization: loc })
}

/// Output of [`rollout_cmd`].
#[derive(Clone, Debug)]
pub struct RolloutOutcome {
    pub score: f64,
    /// Per-patch rollout weights (sum to 1).
    pub heatmap: Vec<f64>,
    pub heatmap_path: PathBuf,
    pub overlay_path: PathBuf,
}

/// Min-max scaling of the pixel heatmap to `[0, 1]`; a constant map becomes 0.
pub fn normalize_heatmap(pixels: &[f64]) -> Vec<f64> {
    let lo = pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; pixels.len()];
    }
    pixels.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Writes `<stem>.heatmap.pgm` and `<stem>.overlay.ppm` to `paths.out_dir`.
/// The overlay mixes the input (as RGB) half and half with a red heat layer.
pub fn rollout_cmd(cfg: &RunConfig, image_path: &Path) -> Result<RolloutOutcome> {
    let model = &cfg.model;
    let params = load_weights(&cfg.weights_path(), model)?;
    let image = read_pnm(image_path).map_err(|e| Error::Data(format!("{}: {e}", image_path.display())))?;
    if image.shape() != dims(model) {
        return Err(Error::Data(format!(
            "{} is {:?}, the model expects {:?}",
            image_path.display(),
            image.shape(),
            dims(model)
        )));
    }
    let pred = forward(&image, &params, model, Mode::Eval)?;
    let heat = attention_rollout(&pred.record)?;
    let pixels = patch_map_to_pixels(heat.data(), model)?;
    let norm = normalize_heatmap(pixels.data());
    let (h, w, c) = (model.height, model.width, model.channels);
    let gray = Tensor::new(&[h, w, 1], norm.iter().map(|&v| v as f32).collect())?;
    let mut overlay = Vec::with_capacity(h * w * 3);
    for (i, &v) in norm.iter().enumerate() {
        let px = &image.data()[i * c..(i + 1) * c];
        for ch in 0..3 {
            let base = px[if c == 1 { 0 } else { ch }];
            let heat = if ch == 0 { v as f32 } else { 0.0 };
            overlay.push(0.5 * base + 0.5 * heat);
        }
    }
    let overlay = Tensor::new(&[h, w, 3], overlay)?;
    let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    ensure_dir(&cfg.paths.out_dir)?;
    let heatmap_path = cfg.paths.out_dir.join(format!("{stem}.heatmap.pgm"));
    let overlay_path = cfg.paths.out_dir.join(format!("{stem}.overlay.ppm"));
    write_pnm(&heatmap_path, &gray)?;
    write_pnm(&overlay_path, &overlay)?;
    Ok(RolloutOutcome {
        score: pred.fake_probability(),
        heatmap: heat.into_data(),
        heatmap_path,
        overlay_path,
    })
}

/// Runs the finite-difference suite at the configured model size. Returns
/// the printable report and whether every check passed.
pub fn gradcheck_cmd(cfg: &RunConfig) -> Result<(String, bool)> {
    let gc = GradCheckConfig {
        seed: cfg.train.seed,
        ..GradCheckConfig::default()
    };
    let results = gradcheck_suite(&cfg.model, &gc)?;
    let passed = results.iter().all(|(_, r)| r.passed);
    Ok((format_suite(&results), passed))
}
