use crate::dataset::{self, synth, DatasetIndex, RegionDefinition};
use crate::error::{Error, Result};
use crate::raster::{min_max_normalize, LabelMask, ThermalImage};
use crate::rng;
use crate::tiaug::{augment_batch, AugSample};

use super::config::{DataSource, OccludedValConfig};

pub type Sample = (ThermalImage, LabelMask);

/// Raw °C images with masks, split into train and validation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl TrainData {
    /// Common image size; every sample must share it.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let first = self
            .train
            .first()
            .ok_or_else(|| Error::contract("train", "training set is empty"))?;
        if self.val.is_empty() {
            return Err(Error::contract("train", "validation set is empty"));
        }
        let dims = first.0.dims();
        for (i, (img, mask)) in self.train.iter().chain(&self.val).enumerate() {
            if img.dims() != dims || mask.dims() != dims {
                return Err(Error::contract(
                    "train",
                    format!("sample {i} is {:?}, expected {dims:?}", img.dims()),
                ));
            }
        }
        Ok(dims)
    }

    pub fn max_label(&self) -> u8 {
        self.train
            .iter()
            .chain(&self.val)
            .flat_map(|(_, m)| m.labels().iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Materializes a data source. Synthetic frames are generated for
/// `train_subjects + val_subjects` identities; the first `train_subjects`
/// identities form the training split.
pub fn load_data(source: &DataSource) -> Result<TrainData> {
    match source {
        DataSource::Synthetic(s) => {
            let train = synth::synth_dataset(&s.face, s.train_count, s.train_subjects)?;
            let val_face = dataset::SyntheticFaceConfig {
                seed: rng::mix(s.face.seed, 0x7a1),
                ..s.face.clone()
            };
            let val = synth::synth_dataset(&val_face, s.val_count, s.val_subjects)?;
            let pairs = |v: Vec<synth::SyntheticSample>| v.into_iter().map(|s| (s.image, s.mask)).collect();
            Ok(TrainData {
                train: pairs(train),
                val: pairs(val),
            })
        }
        DataSource::Manifest(m) => {
            let idx = DatasetIndex::load(&m.path)?;
            let (train, val) = dataset::split_by_subject(&idx, m.train_fraction, &mut rng::seeded(m.split_seed))?;
            let regions = RegionDefinition::default();
            let load = |split: &DatasetIndex| -> Result<Vec<Sample>> {
                (0..split.len()).map(|i| split.load_sample(i, &regions)).collect()
            };
            Ok(TrainData {
                train: load(&train)?,
                val: load(&val)?,
            })
        }
    }
}

/// Min-max normalized copies, the network's input convention.
pub fn normalized(samples: &[Sample]) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|(img, mask)| Ok((min_max_normalize(img)?, mask.clone())))
        .collect()
}

/// Validation images with synthetic occluders and noise, normalized.
pub fn occluded_val(val: &[Sample], cfg: &OccludedValConfig, workers: usize) -> Result<Vec<Sample>> {
    Ok(augment_batch(val, &cfg.aug, cfg.seed, workers)?
        .into_iter()
        .map(|AugSample { image, mask, .. }| (image, mask))
        .collect())
}
