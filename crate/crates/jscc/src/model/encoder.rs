//! Image-to-code encoder: five convolutions, PReLU activations except after
//! the last (linear before power normalization), then complex packing and
//! the average-power constraint.

use candle_core::Tensor;
use rand_chacha::ChaCha12Rng;

use super::layers::{Conv2d, PReLU, ParamStore};
use super::{Activation, ModelConfig};
use crate::channel::tensor::{normalize_power_tensor, pack_tensor};
use crate::channel::DEFAULT_POWER;
use crate::data::{IMG_CHANNELS, IMG_HEIGHT, IMG_WIDTH};
use crate::error::{Error, Result};

pub struct Encoder {
    convs: Vec<Conv2d>,
    prelus: Vec<Option<PReLU>>,
    c_out: usize,
    power: f64,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha12Rng) -> Result<Self> {
        let mut convs = Vec::new();
        let mut prelus = Vec::new();
        let mut in_ch = IMG_CHANNELS;
        for (i, spec) in cfg.encoder_specs.iter().enumerate() {
            let padding = spec.kernel / 2;
            convs.push(Conv2d::init(
                store,
                rng,
                &format!("encoder.conv{i}"),
                in_ch,
                spec.filters,
                spec.kernel,
                spec.stride,
                padding,
                spec.dilation,
            )?);
            prelus.push(match spec.activation {
                Activation::PReLU => Some(PReLU::init(store, &format!("encoder.act{i}"), spec.filters)?),
                _ => None,
            });
            in_ch = spec.filters;
        }
        Ok(Encoder {
            convs,
            prelus,
            c_out: cfg.c,
            power: DEFAULT_POWER,
        })
    }

    /// Raw `(N, C, 8, 8)` feature map before packing.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let (_n, c, h, w) = x
            .dims4()
            .map_err(|_| Error::shape(format!("encoder: expected (N,3,32,32), got {:?}", x.dims())))?;
        if (c, h, w) != (IMG_CHANNELS, IMG_HEIGHT, IMG_WIDTH) {
            return Err(Error::shape(format!(
                "encoder: expected (N,{IMG_CHANNELS},{IMG_HEIGHT},{IMG_WIDTH}), got {:?}",
                x.dims()
            )));
        }
        let mut h = x.clone();
        for (conv, act) in self.convs.iter().zip(self.prelus.iter()) {
            h = conv.forward(&h)?;
            if let Some(act) = act {
                h = act.forward(&h)?;
            }
        }
        Ok(h)
    }

    /// Power-normalized `(N, k, 2)` code batch.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let feats = self.features(x)?;
        let packed = pack_tensor(&feats)?;
        normalize_power_tensor(&packed, self.power)
    }

    pub fn output_channels(&self) -> usize {
        self.c_out
    }
}
