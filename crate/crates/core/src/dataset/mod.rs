//! Data sourcing: file formats, landmark masks, subject-wise splits and the
//! procedural thermal-face generator.

pub mod formats;
pub mod landmarks;
pub mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMask, ThermalImage};

pub use formats::{load_mask, load_thermal, save_mask, save_thermal};
pub use landmarks::{landmarks_to_mask, LandmarkSet, RegionDefinition};
pub use synth::{synth_face, SyntheticFaceConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Annotation {
    Mask(PathBuf),
    Landmarks(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub image: PathBuf,
    pub annotation: Annotation,
    pub subject_id: String,
}

/// Samples on disk. Relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    #[serde(skip)]
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<IndexEntry>) -> Self {
        DatasetIndex {
            version: MANIFEST_VERSION,
            root: root.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.subject_id.as_str()).collect()
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let mut idx: DatasetIndex = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "manifest",
            offset: 0,
            detail: e.to_string(),
        })?;
        idx.root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(e) = idx.entries.iter().find(|e| e.subject_id.is_empty()) {
            return Err(Error::contract(
                "DatasetIndex",
                format!("entry {} has an empty subject id", e.image.display()),
            ));
        }
        Ok(idx)
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(manifest, text + "\n").map_err(|e| Error::io(manifest, e))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads one sample; landmark annotations are rasterized with `regions`.
    pub fn load_sample(
        &self,
        i: usize,
        regions: &RegionDefinition,
    ) -> Result<(ThermalImage, LabelMask)> {
        let e = &self.entries[i];
        let img = load_thermal(&self.resolve(&e.image))?;
        let mask = match &e.annotation {
            Annotation::Mask(p) => load_mask(&self.resolve(p))?,
            Annotation::Landmarks(p) => {
                let lm = formats::load_landmarks(&self.resolve(p), &e.subject_id)?;
                landmarks_to_mask(&lm, regions, img.height(), img.width())?
            }
        };
        if mask.dims() != img.dims() {
            return Err(Error::contract(
                "load_sample",
                format!(
                    "{}: mask is {:?} but image is {:?}",
                    e.image.display(),
                    mask.dims(),
                    img.dims()
                ),
            ));
        }
        Ok((img, mask))
    }
}

/// Partitions whole subjects: `ceil(fraction · subjects)` go to train,
/// capped so validation keeps at least one subject.
pub fn split_by_subject<R: Rng + ?Sized>(
    idx: &DatasetIndex,
    train_fraction: f64,
    rng: &mut R,
) -> Result<(DatasetIndex, DatasetIndex)> {
    let mut subjects: Vec<&str> = idx.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::contract(
            "split_by_subject",
            format!("need at least 2 distinct subjects, found {}", subjects.len()),
        ));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::contract(
            "split_by_subject",
            format!("train fraction {train_fraction} is outside [0, 1]"),
        ));
    }
    subjects.shuffle(rng);
    let wanted = (train_fraction * subjects.len() as f64 - 1e-9).ceil() as usize;
    let n_train = wanted.clamp(1, subjects.len() - 1);
    let train_set: BTreeSet<&str> = subjects[..n_train].iter().copied().collect();
    let (train, val): (Vec<IndexEntry>, Vec<IndexEntry>) = idx
        .entries
        .iter()
        .cloned()
        .partition(|e| train_set.contains(e.subject_id.as_str()));
    Ok((
        DatasetIndex::new(idx.root.clone(), train),
        DatasetIndex::new(idx.root.clone(), val),
    ))
}
