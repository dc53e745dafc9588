//! Dataset manifest CSV: `path,label,video_id,frame_idx,family,split`, with
//! image paths relative to the manifest's directory.

use std::path::{Path, PathBuf};

use crate::data::{decode_mask, read_pnm, Family, ImageSample, Split};
use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["path", "label", "video_id", "frame_idx", "family", "split"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub label: u8,
    pub video_id: String,
    pub frame_idx: u32,
    pub family: Family,
    pub split: Split,
}

impl ManifestRow {
    /// Relative path of the tamper mask stored next to a manipulated image.
    pub fn mask_path(&self) -> String {
        mask_path_for(&self.path)
    }
}

pub fn mask_path_for(image_path: &str) -> String {
    let stem = image_path.rsplit_once('.').map_or(image_path, |(s, _)| s);
    format!("{stem}.mask.pgm")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("manifest {}: {e}", path.display()))
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.path.as_str(),
            &r.label.to_string(),
            &r.video_id,
            &r.frame_idx.to_string(),
            r.family.tag(),
            r.split.name(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(HEADER) {
        return Err(Error::Data(format!(
            "manifest {} has columns {:?}, expected {}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let bad = |what: &str| Error::Data(format!("manifest {} line {line}: bad {what}", path.display()));
        let label: u8 = rec[1].parse().map_err(|_| bad("label"))?;
        if label > 1 {
            return Err(Error::Data(format!(
                "manifest {} line {line}: label must be 0 or 1, got {label}",
                path.display()
            )));
        }
        rows.push(ManifestRow {
            path: rec[0].to_string(),
            label,
            video_id: rec[2].to_string(),
            frame_idx: rec[3].parse().map_err(|_| bad("frame_idx"))?,
            family: rec[4].parse().map_err(|_| bad("family"))?,
            split: rec[5].parse().map_err(|_| bad("split"))?,
        });
    }
    Ok(rows)
}

/// Loads the images (and, for manipulated rows, masks) of the rows matching
/// `family` and `split`, in manifest order. `dims` is the expected `H × W × C`.
pub fn load_samples(
    manifest: &Path,
    family: Family,
    split: Split,
    dims: [usize; 3],
) -> Result<Vec<ImageSample>> {
    let root: PathBuf = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let rows = read_manifest(manifest)?;
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.family == family && r.split == split) {
        let file = root.join(&r.path);
        let pixels = read_pnm(&file).map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        if pixels.shape() != dims {
            return Err(Error::Data(format!(
                "{} is {:?}, the model expects {dims:?}",
                file.display(),
                pixels.shape()
            )));
        }
        let tamper_mask = if r.label == 1 {
            let mfile = root.join(r.mask_path());
            let bytes = std::fs::read(&mfile).map_err(|e| Error::Data(format!("{}: {e}", mfile.display())))?;
            let (mask, h, w) = decode_mask(&bytes)?;
            if [h, w] != dims[..2] {
                return Err(Error::Data(format!("{} is {h}x{w}, image is {}x{}", mfile.display(), dims[0], dims[1])));
            }
            Some(mask)
        } else {
            None
        };
        out.push(ImageSample {
            pixels,
            label: r.label,
            video_id: r.video_id.clone(),
            frame_idx: r.frame_idx,
            family,
            tamper_mask,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} has no family {family} {split} rows",
            manifest.display()
        )));
    }
    Ok(out)
}
