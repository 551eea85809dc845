//! UNET-style encoder-decoder producing per-pixel class logits.
//!
//! Each stage is two 3×3 convolutions with relu. The encoder halves the
//! resolution with 2×2 max pooling; the decoder doubles it with nearest
//! upsampling followed by a 1×1 convolution, concatenates the skip
//! connection and applies another double convolution. A 1×1 head maps to
//! the class channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMask, ThermalImage};
use crate::tensor::{xavier_conv, Graph, ParamSet, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub input_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 16,
            num_classes: 6,
            input_channels: 1,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 6 {
            return Err(Error::config("/depth", format!("must be in 1..=6, got {}", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::config("/base_channels", "must be positive"));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(Error::config("/num_classes", format!("must be in 2..=255, got {}", self.num_classes)));
        }
        if self.input_channels == 0 {
            return Err(Error::config("/input_channels", "must be positive"));
        }
        Ok(())
    }

    /// Spatial sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        (1usize << self.depth).max(8)
    }

    fn width(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    /// Checkpoint encoding of the config.
    pub fn to_tensor(&self) -> Tensor {
        let v = [self.depth, self.base_channels, self.num_classes, self.input_channels];
        Tensor::new(&[4], v.iter().map(|&x| x as f64).collect()).expect("4 values")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if t.shape() != [4] || d.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::contract("UNetConfig", format!("bad config tensor {:?}", d)));
        }
        let cfg = UNetConfig {
            depth: d[0] as usize,
            base_channels: d[1] as usize,
            num_classes: d[2] as usize,
            input_channels: d[3] as usize,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub const CONFIG_ENTRY: &str = "__config__.unet";

#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    cfg: UNetConfig,
    params: ParamSet,
}

impl UNet {
    /// Xavier-uniform conv weights, zero biases.
    pub fn build<R: Rng + ?Sized>(cfg: &UNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut conv = |name: String, c_in: usize, c_out: usize, k: usize| {
            params.push(format!("{name}.weight"), xavier_conv(c_out, c_in, k, rng));
            params.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        };
        let mut c_in = cfg.input_channels;
        for s in 0..cfg.depth {
            conv(format!("enc{s}.conv0"), c_in, cfg.width(s), 3);
            conv(format!("enc{s}.conv1"), cfg.width(s), cfg.width(s), 3);
            c_in = cfg.width(s);
        }
        conv("mid.conv0".into(), c_in, cfg.width(cfg.depth), 3);
        conv("mid.conv1".into(), cfg.width(cfg.depth), cfg.width(cfg.depth), 3);
        for s in (0..cfg.depth).rev() {
            conv(format!("up{s}.conv"), cfg.width(s + 1), cfg.width(s), 1);
            conv(format!("dec{s}.conv0"), 2 * cfg.width(s), cfg.width(s), 3);
            conv(format!("dec{s}.conv1"), cfg.width(s), cfg.width(s), 3);
        }
        conv("head".into(), cfg.base_channels, cfg.num_classes, 1);
        Ok(UNet { cfg: cfg.clone(), params })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `[N, in, H, W]` → `[N, C, H, W]` logits. `vars` come from binding
    /// [`UNet::params`] on `g`.
    pub fn forward(&self, g: &Graph, vars: &[Var], x: Var) -> Result<Var> {
        let shape = g.shape(x);
        let m = self.cfg.size_multiple();
        if shape.len() != 4 || shape[1] != self.cfg.input_channels || shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(Error::contract(
                "unet_forward",
                format!(
                    "expected [N, {}, H, W] with H, W multiples of {m}, got {shape:?}",
                    self.cfg.input_channels
                ),
            ));
        }
        let mut next = vars.iter().copied();
        let mut conv = |x: Var, pad: usize| -> Result<Var> {
            let (w, b) = (next.next().expect("weight"), next.next().expect("bias"));
            g.conv2d(x, w, b, 1, pad)
        };
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut h = x;
        for _ in 0..self.cfg.depth {
            h = g.relu(conv(h, 1)?);
            h = g.relu(conv(h, 1)?);
            skips.push(h);
            h = g.max_pool2(h)?;
        }
        h = g.relu(conv(h, 1)?);
        h = g.relu(conv(h, 1)?);
        while let Some(skip) = skips.pop() {
            // a 1×1 conv commutes with nearest upsampling; run it at low resolution
            h = g.upsample_nearest2(conv(h, 0)?)?;
            h = g.concat_channels(h, skip)?;
            h = g.relu(conv(h, 1)?);
            h = g.relu(conv(h, 1)?);
        }
        conv(h, 0)
    }

    /// Logits for a batch of normalized single-channel images.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let vars = self.params.bind(&g, false);
        let out = self.forward(&g, &vars, g.constant(images.clone()))?;
        Ok(g.value(out))
    }

    /// Checkpoint entries including the embedded config.
    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let mut e = vec![(CONFIG_ENTRY.to_owned(), self.cfg.to_tensor())];
        e.extend(self.params.entries("unet"));
        e
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let cfg_t = entries
            .iter()
            .find(|(k, _)| k == CONFIG_ENTRY)
            .ok_or_else(|| Error::contract("load_checkpoint", "checkpoint has no network config"))?;
        let cfg = UNetConfig::from_tensor(&cfg_t.1)?;
        let mut net = UNet::build(&cfg, &mut crate::rng::seeded(0))?;
        net.params.load_entries("unet", entries)?;
        Ok(net)
    }
}

/// Channel-wise argmax; the lowest index wins ties.
pub fn argmax_channels(t: &Tensor) -> Result<Vec<LabelMask>> {
    let (n, c, h, w) = t.dims4("argmax_channels")?;
    let hw = h * w;
    (0..n)
        .map(|b| {
            let plane = |k: usize, i: usize| t.data()[(b * c + k) * hw + i];
            let labels = (0..hw)
                .map(|i| (1..c).fold(0, |best, k| if plane(k, i) > plane(best, i) { k } else { best }) as u8)
                .collect();
            LabelMask::new(h, w, labels)
        })
        .collect()
}

/// Stacks normalized images into `[N, 1, H, W]`.
pub fn image_batch(images: &[&ThermalImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::contract("image_batch", "empty batch"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::contract(
                "image_batch",
                format!("image is {:?}, expected {:?}", img.dims(), (h, w)),
            ));
        }
        data.extend_from_slice(img.values());
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn output_matches_input_size() {
        let net = UNet::build(&UNetConfig::default(), &mut rng::seeded(0)).unwrap();
        let x = Tensor::from_fn(&[1, 1, 64, 64], |i| (i % 7) as f64 / 7.0);
        let a = net.logits(&x).unwrap();
        assert_eq!(a.shape(), &[1, 6, 64, 64]);
        assert_eq!(a, net.logits(&x).unwrap());
        assert!(net.logits(&Tensor::zeros(&[1, 1, 20, 20])).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = UNetConfig::default();
        let a = UNet::build(&cfg, &mut rng::seeded(4)).unwrap();
        let b = UNet::build(&cfg, &mut rng::seeded(4)).unwrap();
        let c = UNet::build(&cfg, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let t = Tensor::new(&[1, 4, 1, 2], vec![0.0, 0.0, 1.0, 5.0, 1.0, 0.0, 0.5, 5.0]).unwrap();
        assert_eq!(argmax_channels(&t).unwrap()[0].labels(), &[1, 1]);
        let all3 = Tensor::from_fn(&[1, 4, 2, 2], |i| if i / 4 == 3 { 1.0 } else { 0.0 });
        assert!(argmax_channels(&all3).unwrap()[0].labels().iter().all(|&l| l == 3));
    }

    #[test]
    fn checkpoint_entries_rebuild_the_network() {
        let cfg = UNetConfig {
            depth: 2,
            base_channels: 4,
            num_classes: 3,
            input_channels: 1,
        };
        let net = UNet::build(&cfg, &mut rng::seeded(2)).unwrap();
        assert_eq!(UNet::from_entries(&net.entries()).unwrap(), net);
    }
}
