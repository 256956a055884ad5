//! The SNR-adaptive decoder and the fixed-SNR baseline decoder.
//!
//! Adaptive path: unpack the received symbols to the `8×8×C` feature layout,
//! expand the estimated noise variance to an SNR map of the same shape, pass
//! each input through its own convolution and sum the results element-wise,
//! optionally run the two-branch denoising module, then deconvolve back to
//! the image. Two short-circuit connections are placed around the denoising
//! module and around the pair of stride-1 deconvolutions.

use candle_core::{DType, Tensor};
use candle_nn::ops::sigmoid;
use rand_chacha::ChaCha12Rng;

use super::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, PReLU, ParamStore};
use super::{ModelConfig, LATENT_H, LATENT_W};
use crate::channel::tensor::unpack_tensor;
use crate::channel::{variance_to_snr, DEFAULT_POWER, VARIANCE_CLAMP};
use crate::data::IMG_CHANNELS;
use crate::error::{Error, Result};

/// Expand per-image noise-variance estimates to a constant feature map with
/// the same layout as the unpacked channel output. Estimates are clamped to
/// [`VARIANCE_CLAMP`] so a wild pilot estimate cannot saturate the decoder.
/// With `fill_db` the map carries the estimated SNR in dB instead of the
/// variance (ablation option).
pub fn build_snr_map(
    sigma2_hat: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    fill_db: bool,
    device: &candle_core::Device,
    dtype: DType,
) -> Result<Tensor> {
    if sigma2_hat.is_empty() || (sigma2_hat.len() != 1 && sigma2_hat.len() != n) {
        return Err(Error::shape(format!(
            "build_snr_map: got {} estimates for batch of {n}",
            sigma2_hat.len()
        )));
    }
    if let Some(v) = sigma2_hat.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
        return Err(Error::domain(format!("build_snr_map: noise variance must be positive and finite, got {v}")));
    }
    let fills: Vec<f64> = sigma2_hat
        .iter()
        .map(|&v| {
            let clamped = v.clamp(VARIANCE_CLAMP.0, VARIANCE_CLAMP.1);
            if fill_db {
                variance_to_snr(clamped, DEFAULT_POWER).expect("clamped variance is positive")
            } else {
                clamped
            }
        })
        .collect();
    let per_image = if fills.len() == 1 { vec![fills[0]; n] } else { fills };
    let t = Tensor::from_vec(per_image, (n, 1, 1, 1), device)?.to_dtype(dtype)?;
    expand_snr_map(&t, c, h, w)
}

/// Broadcast `(N, 1, 1, 1)` fill values to a `(N, C, H, W)` map. Kept as a
/// tensor op so the map is differentiable with respect to the fill value.
pub fn expand_snr_map(fill: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let (n, one, _, _) = fill
        .dims4()
        .map_err(|_| Error::shape(format!("expand_snr_map: expected (N,1,1,1), got {:?}", fill.dims())))?;
    if one != 1 {
        return Err(Error::shape(format!("expand_snr_map: expected (N,1,1,1), got {:?}", fill.dims())));
    }
    Ok(fill.broadcast_as((n, c, h, w))?.contiguous()?)
}

/// Element-wise sum of the two inputs after each passes through its own
/// convolution. Both convolutions must produce identical shapes.
pub fn fuse_inputs(conv_features: &Conv2d, conv_map: &Conv2d, features: &Tensor, snr_map: &Tensor) -> Result<Tensor> {
    let a = conv_features.forward(features)?;
    let b = conv_map.forward(snr_map)?;
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "fuse_inputs: conv outputs disagree, {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a + b)?)
}

/// Two-branch residual denoising module. Each branch is `h + f(h)` where `f`
/// is conv → PReLU → batch-norm; the second branch's convolution is dilated.
/// The module output is the mean of the two branch outputs.
pub struct DenoisingModule {
    conv_plain: Conv2d,
    act_plain: PReLU,
    bn_plain: BatchNorm2d,
    conv_dilated: Conv2d,
    act_dilated: PReLU,
    bn_dilated: BatchNorm2d,
}

impl DenoisingModule {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, channels: usize, kernel: usize, dilation: usize) -> Result<Self> {
        let pad_plain = kernel / 2;
        let pad_dilated = dilation * (kernel - 1) / 2;
        Ok(DenoisingModule {
            conv_plain: Conv2d::init(store, rng, &format!("{name}.plain.conv"), channels, channels, kernel, 1, pad_plain, 1)?,
            act_plain: PReLU::init(store, &format!("{name}.plain.act"), channels)?,
            bn_plain: BatchNorm2d::init(store, &format!("{name}.plain.bn"), channels)?,
            conv_dilated: Conv2d::init(store, rng, &format!("{name}.dilated.conv"), channels, channels, kernel, 1, pad_dilated, dilation)?,
            act_dilated: PReLU::init(store, &format!("{name}.dilated.act"), channels)?,
            bn_dilated: BatchNorm2d::init(store, &format!("{name}.dilated.bn"), channels)?,
        })
    }

    fn branch(
        h: &Tensor,
        conv: &Conv2d,
        act: &PReLU,
        bn: &BatchNorm2d,
        train: bool,
    ) -> Result<Tensor> {
        let f = bn.forward(&act.forward(&conv.forward(h)?)?, train)?;
        if f.dims() != h.dims() {
            return Err(Error::shape(format!(
                "denoising branch changed shape {:?} -> {:?}",
                h.dims(),
                f.dims()
            )));
        }
        Ok((h + f)?)
    }

    pub fn forward(&self, h: &Tensor, train: bool) -> Result<Tensor> {
        let b1 = Self::branch(h, &self.conv_plain, &self.act_plain, &self.bn_plain, train)?;
        let b2 = Self::branch(h, &self.conv_dilated, &self.act_dilated, &self.bn_dilated, train)?;
        Ok(((b1 + b2)? * 0.5)?)
    }
}

/// The SNR-adaptive decoder.
pub struct AdaptiveDecoder {
    c: usize,
    width: usize,
    snr_map_db: bool,
    fuse_features: Conv2d,
    fuse_map: Conv2d,
    fuse_act: PReLU,
    dm: Option<DenoisingModule>,
    deconv1: ConvTranspose2d,
    act1: PReLU,
    deconv2: ConvTranspose2d,
    act2: PReLU,
    deconv3: ConvTranspose2d,
    act3: PReLU,
    deconv4: ConvTranspose2d,
    act4: PReLU,
    out: ConvTranspose2d,
}

impl AdaptiveDecoder {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha12Rng) -> Result<Self> {
        let c = cfg.c;
        let w = cfg.decoder_width();
        let k = 5;
        let pad = k / 2;
        let fuse_features = Conv2d::init(store, rng, "decoder.fuse_features", c, w, k, 1, pad, 1)?;
        let fuse_map = Conv2d::init(store, rng, "decoder.fuse_map", c, w, k, 1, pad, 1)?;
        let fuse_act = PReLU::init(store, "decoder.fuse_act", w)?;
        let dm = if cfg.dm_enabled {
            Some(DenoisingModule::new(store, rng, "decoder.dm", w, k, 2)?)
        } else {
            None
        };
        Ok(AdaptiveDecoder {
            c,
            width: w,
            snr_map_db: cfg.snr_map_db,
            fuse_features,
            fuse_map,
            fuse_act,
            dm,
            deconv1: ConvTranspose2d::init(store, rng, "decoder.deconv1", w, w, k, 1, pad, 0)?,
            act1: PReLU::init(store, "decoder.deconv1_act", w)?,
            deconv2: ConvTranspose2d::init(store, rng, "decoder.deconv2", w, w, k, 1, pad, 0)?,
            act2: PReLU::init(store, "decoder.deconv2_act", w)?,
            deconv3: ConvTranspose2d::init(store, rng, "decoder.deconv3", w, w, k, 2, pad, 1)?,
            act3: PReLU::init(store, "decoder.deconv3_act", w)?,
            deconv4: ConvTranspose2d::init(store, rng, "decoder.deconv4", w, w, k, 2, pad, 1)?,
            act4: PReLU::init(store, "decoder.deconv4_act", w)?,
            out: ConvTranspose2d::init(store, rng, "decoder.out", w, IMG_CHANNELS, k, 1, pad, 0)?,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Decode `(N, k, 2)` received symbols with per-image noise-variance
    /// estimates (singleton slice shares one estimate across the batch).
    pub fn forward(&self, z: &Tensor, sigma2_hat: &[f64], train: bool) -> Result<Tensor> {
        let (n, _k, _two) = z
            .dims3()
            .map_err(|_| Error::shape(format!("decoder: expected (N,k,2), got {:?}", z.dims())))?;
        let feats = unpack_tensor(z, self.c, LATENT_H, LATENT_W)?;
        let map = build_snr_map(
            sigma2_hat,
            n,
            self.c,
            LATENT_H,
            LATENT_W,
            self.snr_map_db,
            feats.device(),
            feats.dtype(),
        )?;
        let fused = self.fuse_act.forward(&fuse_inputs(&self.fuse_features, &self.fuse_map, &feats, &map)?)?;
        // Short-circuit #1 wraps the denoising module.
        let denoised = match &self.dm {
            Some(dm) => (dm.forward(&fused, train)? + &fused)?,
            None => fused,
        };
        let h1 = self.act1.forward(&self.deconv1.forward(&denoised)?)?;
        let h2 = self.act2.forward(&self.deconv2.forward(&h1)?)?;
        // Short-circuit #2 wraps the two stride-1 deconvolutions.
        let h2 = (h2 + &denoised)?;
        let h3 = self.act3.forward(&self.deconv3.forward(&h2)?)?;
        let h4 = self.act4.forward(&self.deconv4.forward(&h3)?)?;
        Ok(sigmoid(&self.out.forward(&h4)?)?)
    }

    pub(crate) fn fuse_convs(&self) -> (&Conv2d, &Conv2d) {
        (&self.fuse_features, &self.fuse_map)
    }

    pub(crate) fn denoising(&self) -> Option<&DenoisingModule> {
        self.dm.as_ref()
    }
}

/// The fixed-SNR baseline decoder: the mirror deconvolution stack with no
/// SNR input, denoising module or short-circuit connections.
pub struct BaselineDecoder {
    c: usize,
    deconvs: Vec<ConvTranspose2d>,
    acts: Vec<Option<PReLU>>,
}

impl BaselineDecoder {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha12Rng) -> Result<Self> {
        let mut deconvs = Vec::new();
        let mut acts = Vec::new();
        let mut in_ch = cfg.c;
        for (i, spec) in cfg.decoder_specs.iter().enumerate() {
            let pad = spec.kernel / 2;
            let output_padding = spec.stride - 1;
            deconvs.push(ConvTranspose2d::init(
                store,
                rng,
                &format!("decoder.deconv{i}"),
                in_ch,
                spec.filters,
                spec.kernel,
                spec.stride,
                pad,
                output_padding,
            )?);
            acts.push(match spec.activation {
                super::Activation::PReLU => Some(PReLU::init(store, &format!("decoder.act{i}"), spec.filters)?),
                _ => None,
            });
            in_ch = spec.filters;
        }
        Ok(BaselineDecoder { c: cfg.c, deconvs, acts })
    }

    /// Decode `(N, k, 2)` received symbols. The baseline has no SNR input.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = unpack_tensor(z, self.c, LATENT_H, LATENT_W)?;
        for (deconv, act) in self.deconvs.iter().zip(self.acts.iter()) {
            h = deconv.forward(&h)?;
            if let Some(act) = act {
                h = act.forward(&h)?;
            }
        }
        Ok(sigmoid(&h)?)
    }
}
