use std::fs;
use std::path::Path;
use std::process::Command;

use bolf::cli::{
    eval_cmd, gen_data, gradcheck_cmd, load_samples, load_weights, read_manifest, rollout_cmd, save_weights, train_cmd,
    Protocol, RunConfig, REPORT_HEADER,
};
use bolf::data::{decode_pnm, Family, Split};
use bolf::model::{init_params, ModelParams};
use bolf::trainer::evaluate;
use bolf::Error;

fn small(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(
        "model.dim = 16\nmodel.depth = 1\nmodel.heads = 2\nmodel.mlp_ratio = 2\n\
         data.train = 6\ndata.val = 3\ndata.test = 3\ndata.frames_per_video = 2\n\
         train.epochs = 2\ntrain.batch_size = 8\nmodel.init = xavier\ntrain.grad_clip = 2\n",
    )
    .unwrap();
    cfg.paths.data_dir = dir.join("data");
    cfg.paths.out_dir = dir.join("out");
    cfg
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn manifest_counts_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let rows = gen_data(&cfg).unwrap();
    let per = |n: usize| 2 * n * cfg.data.frames_per_video;
    assert_eq!(rows.len(), per(6) + per(3) + per(3) + per(3));
    let text = fs::read_to_string(cfg.manifest_path()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "path,label,video_id,frame_idx,family,split");
    let back = read_manifest(&cfg.manifest_path()).unwrap();
    assert_eq!(back, rows);
    let count = |f: Family, s: Split| back.iter().filter(|r| r.family == f && r.split == s).count();
    assert_eq!(count(Family::A, Split::Train), per(6));
    assert_eq!(count(Family::A, Split::Val), per(3));
    assert_eq!(count(Family::A, Split::Test), per(3));
    assert_eq!(count(Family::B, Split::Test), per(3));
    assert_eq!(count(Family::B, Split::Train), 0);
    assert_eq!(back.iter().filter(|r| r.label == 1).count(), rows.len() / 2);
    for r in back.iter().filter(|r| r.label == 1) {
        assert!(cfg.paths.data_dir.join(r.mask_path()).exists());
    }
}

#[test]
fn gen_data_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let rows = gen_data(&cfg).unwrap();
    let before: Vec<Vec<u8>> = rows.iter().map(|r| bytes(&cfg.paths.data_dir.join(&r.path))).collect();
    let manifest = bytes(&cfg.manifest_path());
    gen_data(&cfg).unwrap();
    assert_eq!(bytes(&cfg.manifest_path()), manifest);
    for (r, b) in rows.iter().zip(&before) {
        assert_eq!(&bytes(&cfg.paths.data_dir.join(&r.path)), b, "{}", r.path);
    }
}

#[test]
fn train_without_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    assert!(matches!(train_cmd(&cfg), Err(Error::Data(_))));
}

#[test]
fn zero_epochs_writes_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.epochs = 0;
    gen_data(&cfg).unwrap();
    let h = train_cmd(&cfg).unwrap();
    assert!(h.records.is_empty());
    let saved = load_weights(&cfg.weights_path(), &cfg.model).unwrap();
    let init: ModelParams<f32> = init_params(&cfg.model, cfg.train.seed, cfg.init.scheme());
    for (a, b) in saved.tensors().iter().zip(init.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn reloaded_weights_reproduce_final_val_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    gen_data(&cfg).unwrap();
    let h = train_cmd(&cfg).unwrap();
    let last = h.last().unwrap();
    let params = load_weights(&cfg.weights_path(), &cfg.model).unwrap();
    let val = load_samples(&cfg.manifest_path(), Family::A, Split::Val, [32, 32, 1]).unwrap();
    let (acc, auc) = evaluate(&params, &cfg.model, &val).unwrap();
    assert_eq!(acc.to_bits(), last.val_acc.unwrap().to_bits());
    assert_eq!(auc.to_bits(), last.val_auc.unwrap().to_bits());
    let csv = fs::read_to_string(cfg.paths.out_dir.join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + cfg.train.epochs);
    assert!(csv.starts_with("epoch,mean_loss,train_acc,val_acc,val_auc,lr\n"));
}

#[test]
fn train_split_accuracy_not_below_val() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.apply_text("data.train = 16\ntrain.epochs = 4\n").unwrap();
    gen_data(&cfg).unwrap();
    let h = train_cmd(&cfg).unwrap();
    cfg.eval.protocol = Protocol::InDist;
    cfg.eval.split = Split::Train;
    let report = eval_cmd(&cfg).unwrap();
    assert!(report.rows[0].acc >= h.last().unwrap().val_acc.unwrap(), "{:?} vs {:?}", report.rows[0], h.last());
}

#[test]
fn eval_protocols_and_level_zero_identity() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    gen_data(&cfg).unwrap();
    train_cmd(&cfg).unwrap();

    cfg.eval.level = 0;
    let out = eval_cmd(&cfg).unwrap();
    let text = fs::read_to_string(cfg.paths.out_dir.join("report.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), REPORT_HEADER);
    assert_eq!(text.lines().count(), 1 + out.rows.len());
    let base = &out.rows[0];
    assert_eq!(base.protocol, "in_dist");
    let perturbed: Vec<_> = out.rows.iter().filter(|r| r.protocol == "perturbed").collect();
    assert_eq!(perturbed.len(), 7);
    for r in perturbed.iter().filter(|r| r.perturbation != "std/rand") {
        assert_eq!(r.level, "0");
        assert_eq!((r.acc, r.auc_frame, r.auc_video, r.n), (base.acc, base.auc_frame, base.auc_video, base.n));
    }

    cfg.eval.protocol = Protocol::CrossFamily;
    let out = eval_cmd(&cfg).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert!(out.rows.iter().all(|r| r.family == Family::B && r.split == Split::Test));
    let text = fs::read_to_string(cfg.paths.out_dir.join("report.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.starts_with("cross_family,test,B,")));
}

#[test]
fn eval_without_weights_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    gen_data(&cfg).unwrap();
    assert!(matches!(eval_cmd(&cfg), Err(Error::Data(_))));
}

fn rollout_fixture(params: &ModelParams<f32>) -> (tempfile::TempDir, RunConfig, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let rows = gen_data(&cfg).unwrap();
    save_weights(&cfg.weights_path(), params, &cfg.model).unwrap();
    let fake = rows.iter().find(|r| r.label == 1).unwrap();
    let image = cfg.paths.data_dir.join(&fake.path);
    (dir, cfg, image)
}

#[test]
fn uniform_attention_gives_constant_heatmap() {
    let cfg = small(Path::new("."));
    let (_dir, cfg, image) = rollout_fixture(&ModelParams::zeros(&cfg.model));
    let out = rollout_cmd(&cfg, &image).unwrap();
    let n = out.heatmap.len() as f64;
    assert!(out.heatmap.iter().all(|&v| (v - 1.0 / n).abs() < 1e-12));
    let heat = decode_pnm(&bytes(&out.heatmap_path)).unwrap();
    let first = heat.data()[0];
    assert!(heat.data().iter().all(|&v| v == first));
    assert_eq!(out.score, 0.5);
}

#[test]
fn heatmap_spans_full_range_and_overlay_is_rgb() {
    let cfg = small(Path::new("."));
    let params = init_params(&cfg.model, 3, cfg.init.scheme());
    let (_dir, cfg, image) = rollout_fixture(&params);
    let out = rollout_cmd(&cfg, &image).unwrap();
    assert!((out.heatmap.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    let raw = bytes(&out.heatmap_path);
    let pixels = &raw[raw.len() - 32 * 32..];
    assert_eq!(*pixels.iter().min().unwrap(), 0);
    assert_eq!(*pixels.iter().max().unwrap(), 255);
    let overlay = decode_pnm(&bytes(&out.overlay_path)).unwrap();
    assert_eq!(overlay.shape(), &[32, 32, 3]);
    assert!(out.score > 0.0 && out.score < 1.0);
}

#[test]
fn rollout_rejects_mismatched_image() {
    let cfg = small(Path::new("."));
    let params = init_params(&cfg.model, 3, cfg.init.scheme());
    let (dir, cfg, _) = rollout_fixture(&params);
    let odd = dir.path().join("odd.pgm");
    fs::write(&odd, bolf::data::encode_pnm(&bolf::tensor::Tensor::zeros(&[16, 32, 1])).unwrap()).unwrap();
    assert!(matches!(rollout_cmd(&cfg, &odd), Err(Error::Data(_))));
}

#[test]
fn pipeline_is_deterministic() {
    let run = |dir: &Path| {
        let cfg = small(dir);
        gen_data(&cfg).unwrap();
        train_cmd(&cfg).unwrap();
        eval_cmd(&cfg).unwrap();
        ["manifest.csv"]
            .iter()
            .map(|f| bytes(&cfg.paths.data_dir.join(f)))
            .chain(["history.csv", "weights.bolf", "report.csv"].iter().map(|f| bytes(&cfg.paths.out_dir.join(f))))
            .collect::<Vec<_>>()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let cfg = small(Path::new("."));
    let (report, passed) = gradcheck_cmd(&cfg).unwrap();
    assert!(passed, "{report}");
    for name in ["matmul", "layer_norm", "self_attention", "model", "blocks.0.attn.wq", "head.bias"] {
        assert!(report.contains(name), "missing {name}");
    }
}

fn bolf(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bolf"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(bolf(d, &["train", "--set", "no.such=1"]).status.code(), Some(2));
    assert_eq!(bolf(d, &["train", "--set", "train.lr0=-1"]).status.code(), Some(2));
    assert_eq!(bolf(d, &["train", "--config", "missing.conf"]).status.code(), Some(2));
    assert_eq!(bolf(d, &["train"]).status.code(), Some(3));
    let small = [
        "--set", "data.train=2", "--set", "data.val=1", "--set", "data.test=1", "--set", "data.frames_per_video=1",
    ];
    let gen = bolf(d, &[&["gen-data"][..], &small].concat());
    assert_eq!(gen.status.code(), Some(0), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(d.join("data/manifest.csv").exists());
    let train = bolf(d, &[&["train", "--epochs", "1", "--seed", "4", "--out", "r"][..], &small].concat());
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(d.join("r/weights.bolf").exists() && d.join("r/history.csv").exists());
}
