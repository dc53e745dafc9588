use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use bolf::cli::{eval_cmd, gen_data, gradcheck_cmd, rollout_cmd, train_cmd, RunConfig};
use bolf::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Bag-of-local-feature transformer for face-manipulation detection.
#[derive(Parser, Debug)]
#[command(name = "bolf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` config file; defaults apply to keys it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets both data.seed and train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sets paths.out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sets train.epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Overrides one config key, e.g. `--set model.depth=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print the effective configuration before running.
    #[arg(long, global = true)]
    show_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData(Common),
    /// Train on the manifest's train split; writes weights and history.csv.
    Train(Common),
    /// Run the evaluation protocols; writes report.csv.
    Eval(Common),
    /// Attention-rollout heatmap and overlay for one image.
    Rollout {
        image: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every op and of the full model loss.
    Gradcheck(Common),
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.data.seed = s;
        cfg.train.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.paths.out_dir = o.clone();
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    if c.show_config {
        print!("{cfg}");
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(&c)?;
            let rows = gen_data(&cfg)?;
            println!("wrote {} images and {}", rows.len(), cfg.manifest_path().display());
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let history = train_cmd(&cfg)?;
            for r in &history.records {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "epoch {:>3}  loss {:.4}  train_acc {:.4}  val_acc {}  val_auc {}  lr {:.5}",
                    r.epoch + 1,
                    r.mean_loss,
                    r.train_acc,
                    opt(r.val_acc),
                    opt(r.val_auc),
                    r.lr
                );
            }
            println!("weights: {}", cfg.weights_path().display());
        }
        Command::Eval(c) => {
            let cfg = load_config(&c)?;
            let out = eval_cmd(&cfg)?;
            println!(
                "{:<13} {:<6} {:<3} {:<16} {:<6} {:>7} {:>9} {:>9} {:>6}",
                "protocol", "split", "fam", "perturbation", "level", "acc", "auc_frame", "auc_video", "n"
            );
            for r in &out.rows {
                println!(
                    "{:<13} {:<6} {:<3} {:<16} {:<6} {:>7.4} {:>9.4} {:>9.4} {:>6}",
                    r.protocol, r.split.name(), r.family.tag(), r.perturbation, r.level, r.acc, r.auc_frame, r.auc_video, r.n
                );
            }
            match out.localization {
                Some(l) => println!(
                    "localization: {} correct fakes, mask mass {:.4} vs area {:.4} (ratio {:.2})",
                    l.n,
                    l.mean_mass,
                    l.mean_area,
                    l.ratio()
                ),
                None if out.rows.iter().any(|r| r.protocol == "in_dist") => {
                    println!("localization: no correctly classified fakes")
                }
                None => {}
            }
            println!("report: {}", cfg.paths.out_dir.join("report.csv").display());
        }
        Command::Rollout { image, common } => {
            let cfg = load_config(&common)?;
            let out = rollout_cmd(&cfg, &image)?;
            println!("fake probability: {:.6}", out.score);
            println!("heatmap: {}", out.heatmap_path.display());
            println!("overlay: {}", out.overlay_path.display());
        }
        Command::Gradcheck(c) => {
            let cfg = load_config(&c)?;
            let (report, passed) = gradcheck_cmd(&cfg)?;
            print!("{report}");
            if !passed {
                return Err(Error::Numeric("gradient check failed".into()));
            }
        }
    }
    eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
