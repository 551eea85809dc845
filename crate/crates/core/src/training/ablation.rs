use serde::{Deserialize, Serialize};

use super::config::{DataSource, LossMode, SyntheticSource, TrainConfig};
use super::data::TrainData;
use super::{train_with_progress, EpochRecord};
use crate::error::{Error, Result};
use crate::segnet::UNetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Shared settings; `loss_mode` and `seed` are overridden per run.
    pub train: TrainConfig,
    pub modes: Vec<LossMode>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig::default(),
            modes: vec![LossMode::Rmi, LossMode::RmiTiaug, LossMode::RmiTiaugSamcl],
            seeds: vec![0, 1, 2],
        }
    }
}

impl AblationConfig {
    /// The desk-scale synthetic benchmark: 200 train and 50 validation
    /// faces at 64×64, six classes, 20 epochs, three seeds. A narrow UNet
    /// and batches of 8 keep the nine runs within a single-core budget.
    pub fn benchmark() -> Self {
        let mut train = TrainConfig {
            batch_size: 8,
            epochs: 20,
            net: UNetConfig {
                depth: 3,
                base_channels: 8,
                ..UNetConfig::default()
            },
            data: DataSource::Synthetic(SyntheticSource::default()),
            ..TrainConfig::default()
        };
        train.optimizer.lr = 2e-3;
        AblationConfig {
            train,
            ..AblationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.len() < 2 {
            return Err(Error::config("/modes", "an ablation needs at least 2 loss modes"));
        }
        if let Some(m) = self.modes.iter().enumerate().find(|(i, m)| self.modes[..*i].contains(m)) {
            return Err(Error::config(format!("/modes/{}", m.0), format!("{} is listed twice", m.1)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("/seeds", "at least one seed is required"));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config { pointer, detail } => Error::Config {
                pointer: format!("/train{pointer}"),
                detail,
            },
            other => other,
        })
    }
}

/// Best-epoch validation mIoU (%) of one mode, one entry per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: LossMode,
    pub clean: Vec<f64>,
    pub occluded: Vec<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl AblationRow {
    pub fn clean_stats(&self) -> (f64, f64) {
        mean_std(&self.clean)
    }

    pub fn occluded_stats(&self) -> (f64, f64) {
        mean_std(&self.occluded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    pub fn row(&self, mode: LossMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// One row per mode: per-seed scores then mean and std, clean first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode");
        for split in ["clean", "occluded"] {
            for s in &self.seeds {
                out.push_str(&format!(",{split}_seed{s}"));
            }
            out.push_str(&format!(",{split}_mean,{split}_std"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(r.mode.name());
            for (scores, (mean, std)) in [(&r.clean, r.clean_stats()), (&r.occluded, r.occluded_stats())] {
                for v in scores {
                    out.push_str(&format!(",{v}"));
                }
                out.push_str(&format!(",{mean},{std}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18} {:>16} {:>16}\n", "mode", "val mIoU", "occluded mIoU");
        for r in &self.rows {
            let (cm, cs) = r.clean_stats();
            let (om, os) = r.occluded_stats();
            out.push_str(&format!(
                "{:<18} {:>16} {:>16}\n",
                r.mode.name(),
                format!("{cm:.2} ± {cs:.2}"),
                format!("{om:.2} ± {os:.2}")
            ));
        }
        out
    }
}

/// Trains every mode on every seed against the same data. `progress`
/// receives `(mode, seed, record)` after each epoch.
pub fn ablation(
    cfg: &AblationConfig,
    data: &TrainData,
    mut progress: impl FnMut(LossMode, u64, &EpochRecord),
) -> Result<AblationResult> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let mut row = AblationRow {
            mode,
            clean: Vec::new(),
            occluded: Vec::new(),
        };
        for &seed in &cfg.seeds {
            let run = TrainConfig {
                loss_mode: mode,
                seed,
                ..cfg.train.clone()
            };
            let out = train_with_progress(&run, data, |r| progress(mode, seed, r))?;
            row.clean.push(out.best().val.miou);
            row.occluded.push(out.best().occluded_val.miou);
        }
        rows.push(row);
    }
    Ok(AblationResult {
        seeds: cfg.seeds.clone(),
        rows,
    })
}
