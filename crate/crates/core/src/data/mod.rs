//! Target chips: synthetic generation, dataset manifests and PGM files.
//!
//! On disk a dataset is `{root}/images/*.pgm` (16-bit), `{root}/masks/*.pgm`
//! (8-bit, optional) and `{root}/manifest.csv` with header
//! `image,mask,label`; paths in the manifest are relative to `{root}`.

mod pgm;
mod synth;

pub use pgm::{decode_pgm, encode_pgm, load_mask, load_pgm, quantize16, save_mask, save_pgm};
pub use synth::{
    generate_synthetic_dataset, generate_synthetic_dataset_with, SynthOptions, CLUTTER_LEVEL, SILHOUETTES,
};

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};
use crate::rng;

/// One labeled image with its target support.
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    pub id: String,
    pub image: GrayImage,
    pub mask: Mask,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: Option<String>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub num_classes: usize,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Parses and validates a manifest: unique filenames, labels covering
/// `0..num_classes` without gaps.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let image_col = col("image").ok_or_else(|| parse_err(1, "missing `image` column".into()))?;
    let label_col = col("label").ok_or_else(|| parse_err(1, "missing `label` column".into()))?;
    let mask_col = col("mask");

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let image = record
            .get(image_col)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(line, "empty image field".into()))?
            .to_string();
        let label: usize = record
            .get(label_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(line, "label is not a non-negative integer".into()))?;
        let mask = mask_col
            .and_then(|c| record.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        if !seen.insert(image.clone()) {
            return Err(parse_err(line, format!("duplicate image `{image}`")));
        }
        entries.push(ManifestEntry { image, mask, label });
    }
    if entries.is_empty() {
        return Err(parse_err(1, "manifest lists no images".into()));
    }
    let labels: BTreeSet<usize> = entries.iter().map(|e| e.label).collect();
    let num_classes = labels.len();
    if labels.iter().copied().ne(0..num_classes) {
        return Err(parse_err(
            1,
            format!("labels must be contiguous from 0, found {labels:?}"),
        ));
    }
    Ok(DatasetManifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        entries,
        num_classes,
    })
}

/// Mask from intensity: pixels above the 90th percentile, dilated by 2 px.
pub fn threshold_mask(img: &GrayImage) -> Mask {
    let mut sorted = img.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let p90 = sorted[((sorted.len() - 1) as f64 * 0.9).floor() as usize];
    let raw = Mask::new(
        img.height(),
        img.width(),
        img.data().iter().map(|&v| v > p90).collect(),
    )
    .expect("mask shape matches image");
    raw.dilate(2)
}

/// Loads every chip listed in a manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<Chip>> {
    let manifest = read_manifest(manifest_path)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = load_pgm(manifest.root.join(&e.image))?;
            let mask = match &e.mask {
                Some(m) => {
                    let mask = load_mask(manifest.root.join(m))?;
                    if mask.height() != image.height() || mask.width() != image.width() {
                        return Err(Error::format(
                            manifest.root.join(m),
                            "mask dimensions differ from image",
                        ));
                    }
                    mask
                }
                None => threshold_mask(&image),
            };
            let id = Path::new(&e.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.image.clone());
            Ok(Chip {
                id,
                image,
                mask,
                label: e.label,
            })
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes chips under `root` as 16-bit images, 8-bit masks and a manifest.
pub fn save_dataset(chips: &[Chip], root: impl AsRef<Path>) -> Result<PathBuf> {
    let root = root.as_ref();
    create_dir(&root.join("images"))?;
    create_dir(&root.join("masks"))?;
    let mut csv = String::from("image,mask,label\n");
    for chip in chips {
        let image = format!("images/{}.pgm", chip.id);
        let mask = format!("masks/{}.pgm", chip.id);
        save_pgm(&chip.image, root.join(&image), 16)?;
        save_mask(&chip.mask, root.join(&mask))?;
        csv.push_str(&format!("{image},{mask},{}\n", chip.label));
    }
    let manifest = root.join(MANIFEST_FILE);
    fs::write(&manifest, csv).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Stratified, seed-derived split. Each class contributes
/// `round(n_class * test_fraction)` chips to the test side. Both sides keep
/// the input order.
pub fn train_test_split(chips: &[Chip], test_fraction: f64, seed: u64) -> Result<(Vec<Chip>, Vec<Chip>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let classes = chips.iter().map(|c| c.label).max().map_or(0, |m| m + 1);
    let mut rng = rng::stream(seed, u64::MAX);
    let mut is_test = vec![false; chips.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..chips.len()).filter(|&i| chips[i].label == class).collect();
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = chips
        .iter()
        .cloned()
        .zip(is_test)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(c, _)| c).collect(),
        test.into_iter().map(|(c, _)| c).collect(),
    ))
}
