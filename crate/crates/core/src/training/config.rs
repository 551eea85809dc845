use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticFaceConfig;
use crate::error::{Error, Result};
use crate::samcl::LossConfig;
use crate::segnet::UNetConfig;
use crate::tensor::OptimizerConfig;
use crate::tiaug::{AugConfig, GeometryConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "bce")]
    Bce,
    #[serde(rename = "dice")]
    Dice,
    #[serde(rename = "rmi")]
    Rmi,
    #[serde(rename = "rmi+tiaug")]
    RmiTiaug,
    #[serde(rename = "rmi+tiaug+samcl")]
    RmiTiaugSamcl,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::Bce,
        LossMode::Dice,
        LossMode::Rmi,
        LossMode::RmiTiaug,
        LossMode::RmiTiaugSamcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Bce => "bce",
            LossMode::Dice => "dice",
            LossMode::Rmi => "rmi",
            LossMode::RmiTiaug => "rmi+tiaug",
            LossMode::RmiTiaugSamcl => "rmi+tiaug+samcl",
        }
    }

    pub fn uses_tiaug(self) -> bool {
        matches!(self, LossMode::RmiTiaug | LossMode::RmiTiaugSamcl)
    }

    pub fn uses_samcl(self) -> bool {
        self == LossMode::RmiTiaugSamcl
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown loss mode {s:?}"))
    }
}

/// Procedurally generated faces. Train and validation frames come from
/// disjoint synthetic subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSource {
    pub face: SyntheticFaceConfig,
    pub train_count: usize,
    pub val_count: usize,
    pub train_subjects: usize,
    pub val_subjects: usize,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            face: SyntheticFaceConfig::default(),
            train_count: 200,
            val_count: 50,
            train_subjects: 20,
            val_subjects: 5,
        }
    }
}

/// A dataset manifest on disk, split by subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    pub path: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_train_fraction() -> f64 {
    crate::dataset::DEFAULT_TRAIN_FRACTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Manifest(ManifestSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSource::default())
    }
}

/// How the occluded validation variant is built: the validation images
/// pass through this augmentation with a fixed seed, identically for every
/// loss mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OccludedValConfig {
    pub aug: AugConfig,
    pub seed: u64,
}

impl Default for OccludedValConfig {
    fn default() -> Self {
        OccludedValConfig {
            aug: AugConfig {
                occluder_count_range: (1, 4),
                geometry: GeometryConfig::disabled(),
                ..AugConfig::default()
            },
            seed: 0x0cc1_0ded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Threads preparing augmented batches ahead of the training step.
    pub aug_workers: usize,
    pub optimizer: OptimizerConfig,
    pub net: UNetConfig,
    pub loss: LossConfig,
    /// Weight of the triplet loss in the class-swap mode.
    pub lambda_samcl: f64,
    /// Keep the RMI segmentation loss alongside the triplet loss.
    pub samcl_with_base_loss: bool,
    /// Per-class weights for the BCE baseline; `None` means all ones.
    pub bce_class_weights: Option<Vec<f64>>,
    pub dice_smooth: f64,
    /// Training-time augmentation. Defaults to mild geometry: upright,
    /// near-scale faces at validation leave the full flip/rotate/2x range
    /// unlearnable within a short schedule.
    pub aug: AugConfig,
    pub occluded_val: OccludedValConfig,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_mode: LossMode::RmiTiaugSamcl,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            aug_workers: 2,
            optimizer: OptimizerConfig::default(),
            net: UNetConfig::default(),
            loss: LossConfig::default(),
            lambda_samcl: 1.0,
            samcl_with_base_loss: true,
            bce_class_weights: None,
            dice_smooth: 1.0,
            aug: AugConfig {
                geometry: GeometryConfig::mild(),
                ..AugConfig::default()
            },
            occluded_val: OccludedValConfig::default(),
            data: DataSource::default(),
        }
    }
}

fn nested(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { pointer, detail } => Error::Config {
            pointer: format!("{prefix}{pointer}"),
            detail,
        },
        other => other,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("/batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("/epochs", "must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config("/optimizer/lr", format!("must be > 0, got {}", o.lr)));
        }
        for (ptr, b) in [("/optimizer/beta1", o.beta1), ("/optimizer/beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(ptr, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::config("/optimizer/eps", "eps must be > 0 and weight_decay >= 0"));
        }
        self.net.validate().map_err(|e| nested("/net", e))?;
        self.loss.validate().map_err(|e| nested("/loss", e))?;
        self.aug.validate().map_err(|e| nested("/aug", e))?;
        self.occluded_val.aug.validate().map_err(|e| nested("/occluded_val/aug", e))?;
        if !(self.lambda_samcl >= 0.0 && self.lambda_samcl.is_finite()) {
            return Err(Error::config("/lambda_samcl", format!("must be >= 0, got {}", self.lambda_samcl)));
        }
        if let Some(w) = &self.bce_class_weights {
            if w.len() != self.net.num_classes {
                return Err(Error::config(
                    "/bce_class_weights",
                    format!("{} weights for {} classes", w.len(), self.net.num_classes),
                ));
            }
            if let Some(i) = w.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::config(format!("/bce_class_weights/{i}"), "weights must be positive"));
            }
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::config("/dice_smooth", "must be > 0"));
        }
        match &self.data {
            DataSource::Synthetic(s) => {
                s.face.validate().map_err(|e| nested("/data/face", e))?;
                let m = self.net.size_multiple();
                if s.face.height % m != 0 || s.face.width % m != 0 {
                    return Err(Error::config(
                        "/data/face/height",
                        format!("image sides must be multiples of {m} for this network"),
                    ));
                }
                if s.train_count == 0 || s.val_count == 0 {
                    return Err(Error::config("/data/train_count", "train and val counts must be positive"));
                }
                if s.train_subjects == 0
                    || s.val_subjects == 0
                    || s.train_subjects > s.train_count
                    || s.val_subjects > s.val_count
                {
                    return Err(Error::config(
                        "/data/train_subjects",
                        "each split needs between 1 and its frame count subjects",
                    ));
                }
                if self.net.num_classes != crate::dataset::synth::NUM_CLASSES {
                    return Err(Error::config(
                        "/net/num_classes",
                        format!("synthetic faces have {} classes", crate::dataset::synth::NUM_CLASSES),
                    ));
                }
            }
            DataSource::Manifest(m) => {
                if !(m.train_fraction > 0.0 && m.train_fraction < 1.0) {
                    return Err(Error::config("/data/train_fraction", "must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    /// Weights passed to the BCE baseline.
    pub fn class_weights(&self) -> Vec<f64> {
        self.bce_class_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.net.num_classes])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_round_trip_through_names() {
        for m in LossMode::ALL {
            assert_eq!(m.name().parse::<LossMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("rmi+samcl".parse::<LossMode>().is_err());
        assert!(LossMode::RmiTiaugSamcl.uses_tiaug() && !LossMode::Rmi.uses_tiaug());
    }

    #[test]
    fn default_validates_and_round_trips() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn tagged_data_sources_parse() {
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"data": {"kind": "manifest", "path": "d/index.json"}}"#).unwrap();
        match cfg.data {
            DataSource::Manifest(m) => assert_eq!(m.train_fraction, 0.85),
            other => panic!("{other:?}"),
        }
        let cfg: TrainConfig = serde_json::from_str(r#"{"data": {"kind": "synthetic", "val_count": 7}}"#).unwrap();
        assert!(matches!(cfg.data, DataSource::Synthetic(SyntheticSource { val_count: 7, .. })));
    }

    #[test]
    fn nested_errors_carry_full_pointers() {
        let mut cfg = TrainConfig::default();
        cfg.aug.netd_max = 0.0;
        match cfg.validate() {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/aug/netd_max"),
            other => panic!("{other:?}"),
        }
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
