//! The learnable architecture.
//!
//! A five-layer convolutional encoder maps `32×32×3` images to `8×8×C`
//! features, whose channel pairs become `k = 32·C` complex symbols under the
//! average-power constraint. Two decoders consume the channel output:
//!
//! - [`decoder::AdaptiveDecoder`] additionally receives the estimated noise
//!   variance, expands it to an SNR map, fuses map and received features
//!   through per-input convolutions, optionally runs the two-branch
//!   denoising module, and deconvolves back to the image with two
//!   short-circuit connections.
//! - [`decoder::BaselineDecoder`] is the fixed-SNR comparison model: the
//!   mirror deconvolution stack with no SNR input, denoising module or
//!   short-circuit connections.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod layers;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{IMG_CHANNELS, IMG_DIM, IMG_HEIGHT, IMG_WIDTH};
use crate::error::{Error, Result};

pub use decoder::{build_snr_map, fuse_inputs, AdaptiveDecoder, BaselineDecoder, DenoisingModule};
pub use encoder::Encoder;
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, PReLU, ParamStore};

/// Latent spatial size after the encoder's two stride-2 layers.
pub const LATENT_H: usize = IMG_HEIGHT / 4;
pub const LATENT_W: usize = IMG_WIDTH / 4;

/// Activation attached to a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    PReLU,
    Sigmoid,
    None,
}

/// One convolutional (or deconvolutional) layer in `K*F*F/S` notation,
/// optionally dilated (`K*F*F/S;D`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub transposed: bool,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec {
            filters,
            kernel,
            stride,
            dilation: 1,
            activation,
            batch_norm: false,
            transposed: false,
        }
    }

    pub fn deconv(filters: usize, kernel: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec {
            transposed: true,
            ..Self::conv(filters, kernel, stride, activation)
        }
    }

    pub fn dilated(filters: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        LayerSpec {
            dilation,
            ..Self::conv(filters, kernel, stride, Activation::PReLU)
        }
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    /// `K*F*F/S` notation; dilation rate appended as `;D` when above 1.
    pub fn notation(&self) -> String {
        if self.dilation > 1 {
            format!("{}*{}*{}/{};{}", self.filters, self.kernel, self.kernel, self.stride, self.dilation)
        } else {
            format!("{}*{}*{}/{}", self.filters, self.kernel, self.kernel, self.stride)
        }
    }

    /// Parse `K*F*F/S` / `K*F*F/S;D` notation. Activation, batch-norm and
    /// transposition are not part of the notation and default to
    /// `None`/off/false.
    pub fn parse_notation(s: &str) -> Result<Self> {
        let err = || Error::config(format!("invalid layer notation '{s}' (want K*F*F/S or K*F*F/S;D)"));
        let (head, dilation) = match s.split_once(';') {
            Some((h, d)) => (h, d.trim().parse::<usize>().map_err(|_| err())?),
            None => (s, 1),
        };
        let (kff, stride) = head.split_once('/').ok_or_else(err)?;
        let parts: Vec<&str> = kff.split('*').collect();
        if parts.len() != 3 {
            return Err(err());
        }
        let filters = parts[0].trim().parse::<usize>().map_err(|_| err())?;
        let f1 = parts[1].trim().parse::<usize>().map_err(|_| err())?;
        let f2 = parts[2].trim().parse::<usize>().map_err(|_| err())?;
        if f1 != f2 {
            return Err(Error::config(format!("non-square kernel in '{s}'")));
        }
        let stride = stride.trim().parse::<usize>().map_err(|_| err())?;
        if filters == 0 || f1 == 0 || stride == 0 || dilation == 0 {
            return Err(err());
        }
        Ok(LayerSpec {
            filters,
            kernel: f1,
            stride,
            dilation,
            activation: Activation::None,
            batch_norm: false,
            transposed: false,
        })
    }
}

/// Which decoder the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Adaptive,
    Baseline,
}

/// Full architecture description. Constructed through [`ModelConfig::adaptive`]
/// or [`ModelConfig::baseline`]; the layer lists are derived from the scalar
/// knobs and revalidated when a checkpoint is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Filters in the encoder's last layer; channel pairs become complex
    /// symbols, so `c` must be even and `k = 32·c` for 32×32 inputs.
    pub c: usize,
    pub dm_enabled: bool,
    /// Filter count subtracted from every decoder capacity conv when the
    /// denoising module is off.
    pub dm_filter_reduction: usize,
    /// Decoder capacity width with the denoising module on.
    pub base_width: usize,
    /// Fill the SNR map with the estimated SNR in dB instead of the noise
    /// variance (ablation flag; default off = variance fill).
    pub snr_map_db: bool,
    pub encoder_specs: Vec<LayerSpec>,
    pub decoder_specs: Vec<LayerSpec>,
}

impl ModelConfig {
    pub fn adaptive(c: usize, dm_enabled: bool) -> Result<Self> {
        let mut cfg = ModelConfig {
            kind: ModelKind::Adaptive,
            c,
            dm_enabled,
            dm_filter_reduction: 16,
            base_width: 32,
            snr_map_db: false,
            encoder_specs: vec![],
            decoder_specs: vec![],
        };
        cfg.rebuild_specs();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn baseline(c: usize) -> Result<Self> {
        let mut cfg = ModelConfig {
            kind: ModelKind::Baseline,
            c,
            dm_enabled: false,
            dm_filter_reduction: 16,
            base_width: 32,
            snr_map_db: false,
            encoder_specs: vec![],
            decoder_specs: vec![],
        };
        cfg.rebuild_specs();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Decoder capacity width under the current DM setting.
    pub fn decoder_width(&self) -> usize {
        match self.kind {
            ModelKind::Baseline => self.base_width,
            ModelKind::Adaptive => {
                if self.dm_enabled {
                    self.base_width
                } else {
                    self.base_width.saturating_sub(self.dm_filter_reduction)
                }
            }
        }
    }

    /// Regenerate the layer lists from the scalar knobs.
    pub fn rebuild_specs(&mut self) {
        use Activation::{None as ActNone, PReLU, Sigmoid};
        self.encoder_specs = vec![
            LayerSpec::conv(16, 5, 2, PReLU),
            LayerSpec::conv(32, 5, 2, PReLU),
            LayerSpec::conv(32, 5, 1, PReLU),
            LayerSpec::conv(32, 5, 1, PReLU),
            LayerSpec::conv(self.c, 5, 1, ActNone),
        ];
        self.decoder_specs = match self.kind {
            ModelKind::Adaptive => {
                let w = self.decoder_width();
                let mut specs = vec![
                    // Fusion convs: one on the received features, one on the
                    // SNR map; their outputs are summed.
                    LayerSpec::conv(w, 5, 1, ActNone),
                    LayerSpec::conv(w, 5, 1, ActNone),
                ];
                if self.dm_enabled {
                    specs.push(LayerSpec::dilated(w, 5, 1, 1).with_batch_norm());
                    specs.push(LayerSpec::dilated(w, 5, 1, 2).with_batch_norm());
                }
                specs.extend([
                    LayerSpec::deconv(w, 5, 1, PReLU),
                    LayerSpec::deconv(w, 5, 1, PReLU),
                    LayerSpec::deconv(w, 5, 2, PReLU),
                    LayerSpec::deconv(w, 5, 2, PReLU),
                    LayerSpec::deconv(IMG_CHANNELS, 5, 1, Sigmoid),
                ]);
                specs
            }
            ModelKind::Baseline => vec![
                LayerSpec::deconv(32, 5, 1, PReLU),
                LayerSpec::deconv(32, 5, 1, PReLU),
                LayerSpec::deconv(32, 5, 2, PReLU),
                LayerSpec::deconv(16, 5, 2, PReLU),
                LayerSpec::deconv(IMG_CHANNELS, 5, 1, Sigmoid),
            ],
        };
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.c % 2 != 0 {
            return Err(Error::config(format!(
                "encoder output channels c must be a positive even number, got {}",
                self.c
            )));
        }
        if self.kind == ModelKind::Adaptive && !self.dm_enabled && self.base_width <= self.dm_filter_reduction {
            return Err(Error::config(format!(
                "decoder width {} does not survive a filter reduction of {}",
                self.base_width, self.dm_filter_reduction
            )));
        }
        let mut expected = self.clone();
        expected.rebuild_specs();
        if expected.encoder_specs != self.encoder_specs || expected.decoder_specs != self.decoder_specs {
            return Err(Error::config("layer specs disagree with the scalar configuration"));
        }
        Ok(())
    }

    /// Channel uses per 32×32×3 image: `8·8·c/2 = 32·c`.
    pub fn k(&self) -> usize {
        LATENT_H * LATENT_W * self.c / 2
    }

    /// `k/n` for 32×32×3 images.
    pub fn bandwidth_ratio(&self) -> f64 {
        self.k() as f64 / IMG_DIM as f64
    }

    /// Filter counts of the decoder convs that scale with capacity (the
    /// fixed 3-filter output projection is pinned by the image format and
    /// excluded).
    pub fn decoder_capacity_filters(&self) -> Vec<usize> {
        self.decoder_specs
            .iter()
            .take(self.decoder_specs.len() - 1)
            .map(|s| s.filters)
            .collect()
    }
}

/// A constructed model: encoder plus one of the two decoders, with all
/// parameters registered in a [`ParamStore`].
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    decoder: DecoderKind,
}

enum DecoderKind {
    Adaptive(AdaptiveDecoder),
    Baseline(BaselineDecoder),
}

impl Model {
    /// Build a model with fan-based uniform initialization drawn from
    /// `init_seed`.
    pub fn new(cfg: &ModelConfig, dtype: DType, device: &Device, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(device.clone(), dtype);
        let mut rng = layers::init_rng(init_seed);
        let encoder = Encoder::new(cfg, &mut store, &mut rng)?;
        let decoder = match cfg.kind {
            ModelKind::Adaptive => DecoderKind::Adaptive(AdaptiveDecoder::new(cfg, &mut store, &mut rng)?),
            ModelKind::Baseline => DecoderKind::Baseline(BaselineDecoder::new(cfg, &mut store, &mut rng)?),
        };
        Ok(Model {
            cfg: cfg.clone(),
            store,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Encode a `(N, 3, 32, 32)` image batch to a power-normalized
    /// `(N, k, 2)` code batch.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.encode(x)
    }

    /// Decode a `(N, k, 2)` channel-output batch. `sigma2_hat` holds the
    /// estimated noise variance per image (singleton slice to share one
    /// value); the baseline decoder ignores it.
    pub fn decode(&self, z: &Tensor, sigma2_hat: &[f64], train: bool) -> Result<Tensor> {
        match &self.decoder {
            DecoderKind::Adaptive(d) => d.forward(z, sigma2_hat, train),
            DecoderKind::Baseline(d) => d.forward(z),
        }
    }

    /// Number of trainable scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notation_roundtrip() {
        for s in ["16*5*5/2", "32*5*5/1", "8*3*3/1;2", "64*5*5/2;4"] {
            let spec = LayerSpec::parse_notation(s).unwrap();
            assert_eq!(spec.notation(), s);
        }
        let spec = LayerSpec::dilated(32, 5, 1, 2);
        assert_eq!(
            LayerSpec::parse_notation(&spec.notation()).unwrap().notation(),
            spec.notation()
        );
    }

    #[test]
    fn notation_rejects_garbage() {
        for s in ["", "16*5/2", "16*5*4/2", "a*5*5/2", "16*5*5", "16*5*5/0"] {
            assert!(LayerSpec::parse_notation(s).is_err(), "accepted '{s}'");
        }
    }

    #[test]
    fn bandwidth_ratios_for_paper_settings() {
        let r12 = ModelConfig::adaptive(8, true).unwrap();
        assert_eq!(r12.k(), 256);
        assert!((r12.bandwidth_ratio() - 1.0 / 12.0).abs() < 1e-12);
        let r6 = ModelConfig::adaptive(16, true).unwrap();
        assert_eq!(r6.k(), 512);
        assert!((r6.bandwidth_ratio() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn k_is_32c() {
        for c in [2usize, 4, 8, 16, 32] {
            assert_eq!(ModelConfig::adaptive(c, true).unwrap().k(), 32 * c);
        }
    }

    #[test]
    fn odd_c_rejected() {
        assert!(ModelConfig::adaptive(7, true).is_err());
        assert!(ModelConfig::baseline(0).is_err());
    }

    #[test]
    fn dm_off_reduces_every_capacity_conv_by_16() {
        let on = ModelConfig::adaptive(8, true).unwrap();
        let off = ModelConfig::adaptive(8, false).unwrap();
        let on_common: Vec<usize> = on
            .decoder_specs
            .iter()
            .filter(|s| s.dilation == 1 && !s.batch_norm)
            .take_while(|s| s.filters != IMG_CHANNELS)
            .map(|s| s.filters)
            .collect();
        let off_all = off.decoder_capacity_filters();
        assert_eq!(on_common.len(), off_all.len());
        for (a, b) in on_common.iter().zip(off_all.iter()) {
            assert_eq!(*b, *a - 16);
        }
        // Output projection stays pinned to the image channel count.
        assert_eq!(off.decoder_specs.last().unwrap().filters, IMG_CHANNELS);
    }

    #[test]
    fn dilation_only_in_dm_branch() {
        let cfg = ModelConfig::adaptive(8, true).unwrap();
        for spec in cfg.encoder_specs.iter() {
            assert_eq!(spec.dilation, 1);
        }
        let dilated: Vec<&LayerSpec> = cfg.decoder_specs.iter().filter(|s| s.dilation > 1).collect();
        assert_eq!(dilated.len(), 1);
        assert!(dilated[0].batch_norm);
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = ModelConfig::adaptive(8, true).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        back.validate().unwrap();
    }
}
