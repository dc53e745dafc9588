//! Seeded synthetic forgery data: originals, locally tampered fakes,
//! perturbation suites and netpbm image I/O.

mod netpbm;
mod perturb;
mod synth;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use netpbm::{decode_mask, decode_pnm, encode_mask, encode_pnm, read_pnm, write_pnm};
pub use perturb::{perturb, psnr, Level, PerturbKind, PerturbationSpec, MAX_LEVEL};
pub use synth::{gen_manipulated, gen_original, TamperMethod, MAX_PIXEL_CHANGE};

/// Generator style. The two families differ in base texture and in how
/// their fakes are made, so training on one and testing on the other is a
/// real distribution shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    A,
    B,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::A => "A",
            Family::B => "B",
        }
    }

    pub fn other(self) -> Family {
        match self {
            Family::A => Family::B,
            Family::B => Family::A,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Family::A),
            "B" | "b" => Ok(Family::B),
            _ => Err(Error::Config(format!("unknown family {s:?} (expected A or B)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `H × W × C`, values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    /// 0 = original, 1 = manipulated.
    pub label: u8,
    pub video_id: String,
    pub frame_idx: u32,
    pub family: Family,
    /// Row-major `H × W`, nonzero inside the manipulated region. Present iff
    /// `label == 1`. Never fed to the model or the loss.
    pub tamper_mask: Option<Vec<u8>>,
}

impl ImageSample {
    /// Fraction of the image covered by the tamper mask (0 for originals).
    pub fn mask_fraction(&self) -> f64 {
        self.tamper_mask
            .as_ref()
            .map_or(0.0, |m| m.iter().filter(|&&v| v != 0).count() as f64 / m.len() as f64)
    }
}

/// What to generate. Split counts are source identities: each identity gives
/// one original video and one manipulated video of `frames_per_video` frames,
/// so a split holds `2 · count · frames_per_video` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub family: Family,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub frames_per_video: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            family: Family::A,
            train: 72,
            val: 14,
            test: 14,
            frames_per_video: 20,
            height: 32,
            width: 32,
            channels: 1,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return bad(format!(
                "data.train/val/test must all be >= 1, got {}/{}/{}",
                self.train, self.val, self.test
            ));
        }
        if self.frames_per_video == 0 {
            return bad("data.frames_per_video must be >= 1".into());
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!(
                "data.height and data.width must be >= 8, got {}x{}",
                self.height, self.width
            ));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return bad(format!("data.channels must be 1 or 3, got {}", self.channels));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// Number of samples `split` will hold.
    pub fn samples_in(&self, split: Split) -> usize {
        2 * self.count(split) * self.frames_per_video
    }

    /// Video id of the original from identity `index` of `split`.
    pub fn original_id(&self, split: Split, index: usize) -> String {
        format!("{}-{}-{index:04}-real", self.family.tag().to_lowercase(), split.name())
    }
}

/// The identity part of a video id (`-real` / `-fake` suffix removed).
pub fn identity_of(video_id: &str) -> &str {
    video_id
        .strip_suffix("-real")
        .or_else(|| video_id.strip_suffix("-fake"))
        .unwrap_or(video_id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[ImageSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Generates every split. Per identity the order is the original's frames
/// followed by the fake's frames.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    Ok(Dataset {
        spec: spec.clone(),
        train: build_split(spec, Split::Train)?,
        val: build_split(spec, Split::Val)?,
        test: build_split(spec, Split::Test)?,
    })
}

/// Generates one split; identical to the matching field of [`build_dataset`].
pub fn build_split(spec: &DatasetSpec, split: Split) -> Result<Vec<ImageSample>> {
    spec.validate().map_err(|e| match e {
        Error::Config(m) => Error::Data(m),
        other => other,
    })?;
    Ok((0..spec.count(split))
        .into_par_iter()
        .flat_map_iter(|i| {
            let id = spec.original_id(split, i);
            let originals: Vec<ImageSample> = (0..spec.frames_per_video as u32)
                .map(|f| gen_original(spec, &id, f))
                .collect();
            let fakes: Vec<ImageSample> = originals.iter().map(|o| gen_manipulated(o, spec)).collect();
            originals.into_iter().chain(fakes)
        })
        .collect())
}

/// Stable 64-bit seed from a root seed and identifiers (FNV-1a over the
/// parts, finished with a SplitMix64 mix).
pub fn derive_seed(seed: u64, tags: &[&str], nums: &[u64]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
        // separator so ("ab","c") != ("a","bc")
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    };
    eat(&seed.to_le_bytes());
    for t in tags {
        eat(t.as_bytes());
    }
    for n in nums {
        eat(&n.to_le_bytes());
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_parts() {
        assert_ne!(derive_seed(1, &["ab", "c"], &[]), derive_seed(1, &["a", "bc"], &[]));
        assert_ne!(derive_seed(1, &["x"], &[0]), derive_seed(2, &["x"], &[0]));
        assert_eq!(derive_seed(7, &["x"], &[3]), derive_seed(7, &["x"], &[3]));
    }

    #[test]
    fn identity_strips_suffix_only() {
        assert_eq!(identity_of("a-train-0003-real"), "a-train-0003");
        assert_eq!(identity_of("a-train-0003-fake"), "a-train-0003");
        assert_eq!(identity_of("a-train-0003"), "a-train-0003");
    }

    #[test]
    fn zero_counts_rejected() {
        let spec = DatasetSpec { val: 0, ..DatasetSpec::default() };
        assert!(matches!(build_dataset(&spec), Err(Error::Data(_))));
    }
}
