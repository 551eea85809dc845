//! Prediction and evaluation. Needs only the trained network: nothing from
//! augmentation or the auxiliary training losses is reachable from here.

use crate::error::{Error, Result};
use crate::metrics::{Confusion, EvalReport};
use crate::raster::{min_max_normalize, LabelMask, ThermalImage};
use crate::segnet::{argmax_channels, image_batch, UNet};

/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 16;

/// Min-max normalizes each raw image, runs the network and takes the argmax.
pub fn predict(net: &UNet, images: &[&ThermalImage]) -> Result<Vec<LabelMask>> {
    let normalized = images
        .iter()
        .map(|i| min_max_normalize(i))
        .collect::<Result<Vec<_>>>()?;
    predict_normalized(net, &normalized.iter().collect::<Vec<_>>())
}

/// Like [`predict`] for images already scaled to `[0, 1]`.
pub fn predict_normalized(net: &UNet, images: &[&ThermalImage]) -> Result<Vec<LabelMask>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        out.extend(argmax_channels(&net.logits(&image_batch(chunk)?)?)?);
    }
    Ok(out)
}

/// Pooled scores of `net` on normalized images.
pub fn evaluate(net: &UNet, samples: &[(ThermalImage, LabelMask)]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::contract("evaluate", "no samples"));
    }
    let images: Vec<&ThermalImage> = samples.iter().map(|(i, _)| i).collect();
    let preds = predict_normalized(net, &images)?;
    let mut c = Confusion::new(net.config().num_classes);
    for (p, (_, gt)) in preds.iter().zip(samples) {
        c.add(p, gt)?;
    }
    Ok(EvalReport::from_confusion(&c))
}
