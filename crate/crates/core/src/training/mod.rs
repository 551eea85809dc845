//! Training loop, baseline losses and the loss-mode ablation.
//!
//! A run is a pure function of its config and data. Batches are prepared on
//! a producer thread that runs ahead of the optimizer through a bounded
//! queue; sample `i` of epoch `e` is augmented with its own derived seed, so
//! the worker count never changes the result.

pub mod ablation;
pub mod config;
pub mod data;
pub mod losses;

use std::sync::mpsc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::evaluate;
use crate::metrics::EvalReport;
use crate::raster::LabelMask;
use crate::rng;
use crate::samcl::{class_swap, one_hot, rmi_distance, samcl_loss, AuxNet};
use crate::segnet::{image_batch, UNet};
use crate::tensor::{Graph, Optimizer, Tensor, Var};
use crate::tiaug::{augment, AugConfig};

pub use ablation::{ablation, AblationConfig, AblationResult, AblationRow};
pub use config::{DataSource, LossMode, OccludedValConfig, SyntheticSource, TrainConfig};
pub use data::{load_data, normalized, occluded_val, Sample, TrainData};
pub use losses::{dice_loss, weighted_bce_loss};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUG: u64 = 3;
const STREAM_SWAP: u64 = 4;

/// Batches waiting in the queue ahead of the optimizer.
const PREFETCH: usize = 2;

/// Prefix of auxiliary-network entries in a checkpoint.
pub const AUX_PREFIX: &str = "aux";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalReport,
    pub occluded_val: EvalReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub mode: LossMode,
    /// Parameters from the epoch with the best clean validation mIoU.
    pub net: UNet,
    pub aux: Option<AuxNet>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }

    pub fn loss_curve(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.train_loss).collect()
    }

    /// Best-epoch clean validation report with the full loss curve.
    pub fn report(&self) -> EvalReport {
        EvalReport {
            loss_curve: self.loss_curve(),
            ..self.best().val.clone()
        }
    }

    /// Network entries, plus auxiliary entries when the mode trains one.
    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor)> {
        let mut e = self.net.entries();
        if let Some(aux) = &self.aux {
            e.extend(aux.params().entries(AUX_PREFIX));
        }
        e
    }

    /// `epoch,split,iou_<class>…,miou,pixel_accuracy,loss`; empty IoU cells
    /// mark classes absent from both prediction and ground truth.
    pub fn metrics_csv(&self) -> String {
        let classes = self.net.config().num_classes;
        let names = class_names(classes);
        let mut out = String::from("epoch,split");
        for n in &names {
            out.push_str(&format!(",iou_{n}"));
        }
        out.push_str(",miou,pixel_accuracy,loss\n");
        for r in &self.history {
            for (split, rep) in [("val", &r.val), ("occluded_val", &r.occluded_val)] {
                out.push_str(&format!("{},{split}", r.epoch));
                for v in &rep.per_class_iou {
                    match v {
                        Some(v) => out.push_str(&format!(",{v}")),
                        None => out.push(','),
                    }
                }
                out.push_str(&format!(",{},{},{}\n", rep.miou, rep.pixel_accuracy, r.train_loss));
            }
        }
        out
    }
}

pub fn class_names(classes: usize) -> Vec<String> {
    use crate::dataset::landmarks::CLASS_NAMES;
    if classes == CLASS_NAMES.len() {
        CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|c| format!("class{c}")).collect()
    }
}

struct Batch {
    images: Tensor,
    masks: Vec<LabelMask>,
}

/// Builds the batches of one epoch in order, sending each as it is ready.
#[allow(clippy::too_many_arguments)]
fn produce_epoch(
    epoch: usize,
    order: &[usize],
    batch_size: usize,
    clean: &[Sample],
    raw: &[Sample],
    aug: Option<(&AugConfig, u64)>,
    pool: &rayon::ThreadPool,
    tx: &mpsc::SyncSender<Result<Batch>>,
) {
    let n = raw.len() as u64;
    for chunk in order.chunks(batch_size) {
        let samples: Result<Vec<Sample>> = match aug {
            None => Ok(chunk.iter().map(|&i| clean[i].clone()).collect()),
            Some((cfg, seed)) => pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&i| {
                        let stream = epoch as u64 * n + i as u64;
                        let (img, mask) = &raw[i];
                        augment(img, mask, cfg, &mut rng::substream(seed, stream)).map(|s| (s.image, s.mask))
                    })
                    .collect()
            }),
        };
        let batch = samples.and_then(|s| {
            let imgs: Vec<_> = s.iter().map(|(i, _)| i).collect();
            Ok(Batch {
                images: image_batch(&imgs)?,
                masks: s.into_iter().map(|(_, m)| m).collect(),
            })
        });
        let failed = batch.is_err();
        if tx.send(batch).is_err() || failed {
            return;
        }
    }
}

struct Model {
    net: UNet,
    aux: Option<AuxNet>,
}

impl Model {
    fn step_loss(
        &self,
        g: &Graph,
        cfg: &TrainConfig,
        batch: &Batch,
        swap_rng: &mut rng::SeededRng,
    ) -> Result<(Var, Vec<Var>)> {
        let mut vars = self.net.params().bind(g, true);
        let logits = self.net.forward(g, &vars, g.constant(batch.images.clone()))?;
        let masks: Vec<&LabelMask> = batch.masks.iter().collect();
        let y = one_hot(&masks, cfg.net.num_classes)?;
        let loss = match cfg.loss_mode {
            LossMode::Bce => weighted_bce_loss(g, logits, &y, &cfg.class_weights())?,
            LossMode::Dice => dice_loss(g, logits, &y, cfg.dice_smooth)?,
            LossMode::Rmi | LossMode::RmiTiaug => rmi_distance(g, logits, &y, &cfg.loss)?,
            LossMode::RmiTiaugSamcl => {
                let aux = self.aux.as_ref().expect("class-swap mode owns an auxiliary net");
                let aux_vars = aux.params().bind(g, true);
                vars.extend_from_slice(&aux_vars);
                let neg = class_swap(&y, swap_rng)?;
                let triplet = samcl_loss(g, logits, &y, &neg.tensor, aux, &aux_vars, &cfg.loss)?.total;
                let weighted = g.mul_scalar(triplet, cfg.lambda_samcl);
                if cfg.samcl_with_base_loss {
                    g.add(rmi_distance(g, logits, &y, &cfg.loss)?, weighted)?
                } else {
                    weighted
                }
            }
        };
        Ok((loss, vars))
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.net.params_mut().tensors_mut();
        if let Some(aux) = self.aux.as_mut() {
            p.extend(aux.params_mut().tensors_mut());
        }
        p
    }

    fn param_tensors(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self.net.params().tensors().iter().collect();
        if let Some(aux) = &self.aux {
            p.extend(aux.params().tensors());
        }
        p
    }

    fn grads(&self, g: &Graph, vars: &[Var]) -> Vec<Tensor> {
        let split = self.net.params().len();
        let mut grads = self.net.params().grads(g, &vars[..split]);
        if let Some(aux) = &self.aux {
            grads.extend(aux.params().grads(g, &vars[split..]));
        }
        grads
    }
}

pub fn train(cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    train_with_progress(cfg, data, |_| {})
}

/// Trains, calling `progress` after every epoch.
pub fn train_with_progress(
    cfg: &TrainConfig,
    data: &TrainData,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (h, w) = data.dims()?;
    let m = cfg.net.size_multiple();
    if h % m != 0 || w % m != 0 {
        return Err(Error::contract(
            "train",
            format!("images are {h}×{w}; the network needs multiples of {m}"),
        ));
    }
    if data.max_label() as usize >= cfg.net.num_classes {
        return Err(Error::contract(
            "train",
            format!("mask label {} is not below {} classes", data.max_label(), cfg.net.num_classes),
        ));
    }
    let mut aug_cfg = cfg.aug.clone();
    if aug_cfg.geometry.output_size.is_none() {
        aug_cfg.geometry.output_size = Some((h, w));
    }
    let workers = cfg.aug_workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;

    let clean_train = normalized(&data.train)?;
    let clean_val = normalized(&data.val)?;
    let occ_val = occluded_val(&data.val, &cfg.occluded_val, workers)?;

    let mut init = rng::substream(cfg.seed, STREAM_INIT);
    let net = UNet::build(&cfg.net, &mut init)?;
    let aux = cfg
        .loss_mode
        .uses_samcl()
        .then(|| AuxNet::new(cfg.net.num_classes, &mut init));
    let mut model = Model { net, aux };
    let mut opt = Optimizer::new(cfg.optimizer.clone(), model.param_tensors());
    let mut swap_rng = rng::substream(cfg.seed, STREAM_SWAP);
    let aug_seed = rng::mix(cfg.seed, STREAM_AUG);
    let aug = cfg.loss_mode.uses_tiaug().then_some((&aug_cfg, aug_seed));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, UNet, Option<AuxNet>)> = None;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::seeded(rng::mix(rng::mix(cfg.seed, STREAM_SHUFFLE), epoch as u64)));

        let (tx, rx) = mpsc::sync_channel(PREFETCH);
        let (loss_sum, steps) = std::thread::scope(|s| -> Result<(f64, usize)> {
            let (order, clean, raw, pool) = (&order, &clean_train, &data.train, &pool);
            s.spawn(move || produce_epoch(epoch, order, cfg.batch_size, clean, raw, aug, pool, &tx));
            let (mut sum, mut steps) = (0.0, 0usize);
            for batch in rx {
                let batch = batch?;
                let g = Graph::new();
                let (loss, vars) = model.step_loss(&g, cfg, &batch, &mut swap_rng)?;
                let value = g.item(loss);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "{} loss became {value} at epoch {}, step {}",
                        cfg.loss_mode,
                        epoch + 1,
                        steps + 1
                    )));
                }
                g.backward(loss)?;
                let grads = model.grads(&g, &vars);
                if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {i} at epoch {}, step {}",
                        epoch + 1,
                        steps + 1
                    )));
                }
                opt.step(&mut model.params_mut(), &grads)?;
                sum += value;
                steps += 1;
            }
            Ok((sum, steps))
        })?;

        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / steps as f64,
            val: evaluate(&model.net, &clean_val)?,
            occluded_val: evaluate(&model.net, &occ_val)?,
        };
        progress(&record);
        if best.as_ref().is_none_or(|b| record.val.miou > b.0) {
            best = Some((record.val.miou, epoch + 1, model.net.clone(), model.aux.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, net, aux) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        mode: cfg.loss_mode,
        net,
        aux,
        history,
        best_epoch,
    })
}
