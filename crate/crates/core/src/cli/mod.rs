//! Command-line plumbing: run configuration, weights files, manifests and
//! the subcommands behind the `bolf` binary.

mod commands;
mod config;
mod gradcheck;
mod manifest;
mod weights;

pub use commands::{
    eval_cmd, gen_data, gradcheck_cmd, localization, normalize_heatmap, perturb_samples, perturbation_suite,
    report_csv, rollout_cmd, train_cmd, EvalOutcome, Localization, ReportRow, RolloutOutcome, REPORT_HEADER,
};
pub use config::{DataConfig, EvalConfig, InitChoice, PathsConfig, Protocol, RunConfig, KEYS};
pub use gradcheck::{check_model, format_suite, gradcheck_suite};
pub use manifest::{load_samples, mask_path_for, read_manifest, write_manifest, ManifestRow};
pub use weights::{decode_tensors, decode_weights, encode_weights, load_weights, save_weights, MAGIC, VERSION};
