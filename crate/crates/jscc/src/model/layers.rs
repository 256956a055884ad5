//! Parameter registry and the layer primitives the models are built from.
//!
//! Layers hold [`Var`]s registered in a [`ParamStore`], which keeps a stable
//! (insertion-ordered) list of named parameters. All initialization is drawn
//! from a caller-provided ChaCha stream so building the same config from the
//! same seed yields bit-identical parameters on any platform — the CPU
//! backend's own RNG is never used.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

pub fn init_rng(init_seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed::derive(init_seed, Stream::Init, &[]))
}

/// One named parameter. Non-trainable entries (batch-norm running stats)
/// are checkpointed but skipped by the optimizer.
pub struct ParamEntry {
    pub name: String,
    pub var: Var,
    pub trainable: bool,
}

/// Insertion-ordered registry of model parameters.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        ParamStore {
            device,
            dtype,
            entries: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize], trainable: bool) -> Result<Var> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::config(format!("duplicate parameter name '{name}'")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.entries.push(ParamEntry {
            name: name.to_string(),
            var: var.clone(),
            trainable,
        });
        Ok(var)
    }

    /// Trainable parameter initialized uniformly in `±bound`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha12Rng) -> Result<Var> {
        let count: usize = shape.iter().product();
        let values: Vec<f64> = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
        self.register(name, values, shape, true)
    }

    /// Constant-filled parameter.
    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, trainable: bool) -> Result<Var> {
        let count: usize = shape.iter().product();
        self.register(name, vec![value; count], shape, trainable)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.as_tensor().elem_count())
            .sum()
    }

    /// Overwrite parameter values from named tensors, validating that names
    /// and shapes agree exactly with the registered set.
    pub fn load_values(&mut self, mut values: std::collections::HashMap<String, Tensor>) -> Result<()> {
        for entry in &self.entries {
            let t = values.remove(&entry.name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter '{}' in checkpoint", entry.name))
            })?;
            if t.dims() != entry.var.as_tensor().dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?} in checkpoint but {:?} in config",
                    entry.name,
                    t.dims(),
                    entry.var.as_tensor().dims()
                )));
            }
            entry.var.set(&t.to_dtype(self.dtype)?)?;
        }
        if let Some(name) = values.keys().next() {
            return Err(Error::Checkpoint(format!(
                "checkpoint contains parameter '{name}' not present in the configured model"
            )));
        }
        Ok(())
    }
}

/// 2-d convolution with bias.
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    dilation: usize,
    out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.uniform(&format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel], bound, rng)?;
        let bias = store.uniform(&format!("{name}.bias"), &[out_channels], bound, rng)?;
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
            dilation,
            out_channels,
        })
    }

    /// Build directly from existing vars (used by tests that need tied or
    /// hand-set weights).
    pub fn from_vars(weight: Var, bias: Var, stride: usize, padding: usize, dilation: usize) -> Self {
        let out_channels = weight.as_tensor().dims()[0];
        Conv2d {
            weight,
            bias,
            stride,
            padding,
            dilation,
            out_channels,
        }
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, self.out_channels, 1, 1))?)?)
    }
}

/// 2-d transposed convolution with bias.
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    output_padding: usize,
    out_channels: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let fan_in = out_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.uniform(&format!("{name}.weight"), &[in_channels, out_channels, kernel, kernel], bound, rng)?;
        let bias = store.uniform(&format!("{name}.bias"), &[out_channels], bound, rng)?;
        Ok(ConvTranspose2d {
            weight,
            bias,
            stride,
            padding,
            output_padding,
            out_channels,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(
            self.weight.as_tensor(),
            self.padding,
            self.output_padding,
            self.stride,
            1,
        )?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, self.out_channels, 1, 1))?)?)
    }
}

/// Per-channel parametric ReLU, slopes initialized at 0.25.
pub struct PReLU {
    alpha: Var,
    channels: usize,
}

impl PReLU {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let alpha = store.constant(&format!("{name}.alpha"), &[channels], 0.25, true)?;
        Ok(PReLU { alpha, channels })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // prelu(x) = relu(x) - alpha * relu(-x)
        let alpha = self.alpha.as_tensor().reshape((1, self.channels, 1, 1))?;
        let neg = x.neg()?.relu()?.broadcast_mul(&alpha)?;
        Ok((x.relu()? - neg)?)
    }
}

/// Batch normalization over `(N, H, W)` per channel, with running statistics
/// for evaluation mode.
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    channels: usize,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.constant(&format!("{name}.gamma"), &[channels], 1.0, true)?,
            beta: store.constant(&format!("{name}.beta"), &[channels], 0.0, true)?,
            running_mean: store.constant(&format!("{name}.running_mean"), &[channels], 0.0, false)?,
            running_var: store.constant(&format!("{name}.running_var"), &[channels], 1.0, false)?,
            channels,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4().map_err(|_| Error::shape("BatchNorm2d: expected 4-d input"))?;
        if c != self.channels {
            return Err(Error::shape(format!(
                "BatchNorm2d: {c} channels, layer built for {}",
                self.channels
            )));
        }
        let shape = (1, self.channels, 1, 1);
        let normalized = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            // Update running stats outside the autodiff graph; running_var
            // stores the unbiased estimate, matching common practice.
            let count = (n * h * w) as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let batch_mean = mean.detach().reshape(self.channels)?;
            let batch_var = (var.detach().reshape(self.channels)? * unbias)?;
            self.running_mean.set(
                &((self.running_mean.as_tensor() * (1.0 - self.momentum))? + (batch_mean * self.momentum)?)?,
            )?;
            self.running_var.set(
                &((self.running_var.as_tensor() * (1.0 - self.momentum))? + (batch_var * self.momentum)?)?,
            )?;
            centered.broadcast_div(&(var + self.eps)?.sqrt()?)?
        } else {
            let mean = self.running_mean.as_tensor().reshape(shape)?;
            let var = self.running_var.as_tensor().reshape(shape)?;
            x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?
        };
        let scaled = normalized.broadcast_mul(&self.gamma.as_tensor().reshape(shape)?)?;
        Ok(scaled.broadcast_add(&self.beta.as_tensor().reshape(shape)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn store() -> (ParamStore, ChaCha12Rng) {
        (ParamStore::new(Device::Cpu, DType::F64), init_rng(1))
    }

    #[test]
    fn store_rejects_duplicate_names() {
        let (mut s, mut rng) = store();
        s.uniform("w", &[2, 2], 0.1, &mut rng).unwrap();
        assert!(s.uniform("w", &[2, 2], 0.1, &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let build = |seed| {
            let mut s = ParamStore::new(Device::Cpu, DType::F64);
            let mut rng = init_rng(seed);
            let v = s.uniform("w", &[32], 0.5, &mut rng).unwrap();
            v.as_tensor().to_vec1::<f64>().unwrap()
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }

    #[test]
    fn conv_same_padding_shapes() {
        let (mut s, mut rng) = store();
        let conv = Conv2d::init(&mut s, &mut rng, "c", 3, 8, 5, 1, 2, 1).unwrap();
        let x = Tensor::zeros((2, 3, 8, 8), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 8, 8, 8]);

        let strided = Conv2d::init(&mut s, &mut rng, "s", 3, 8, 5, 2, 2, 1).unwrap();
        let x32 = Tensor::zeros((1, 3, 32, 32), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(strided.forward(&x32).unwrap().dims(), &[1, 8, 16, 16]);
    }

    #[test]
    fn dilated_conv_keeps_spatial_size() {
        let (mut s, mut rng) = store();
        let conv = Conv2d::init(&mut s, &mut rng, "d", 4, 4, 5, 1, 4, 2).unwrap();
        let x = Tensor::zeros((1, 4, 8, 8), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[1, 4, 8, 8]);
    }

    #[test]
    fn deconv_upsamples_by_stride() {
        let (mut s, mut rng) = store();
        let up = ConvTranspose2d::init(&mut s, &mut rng, "u", 4, 4, 5, 2, 2, 1).unwrap();
        let x = Tensor::zeros((1, 4, 8, 8), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(up.forward(&x).unwrap().dims(), &[1, 4, 16, 16]);

        let same = ConvTranspose2d::init(&mut s, &mut rng, "v", 4, 4, 5, 1, 2, 0).unwrap();
        assert_eq!(same.forward(&x).unwrap().dims(), &[1, 4, 8, 8]);
    }

    #[test]
    fn prelu_matches_definition() {
        let (mut s, _) = store();
        let act = PReLU::init(&mut s, "p", 2).unwrap();
        let x = Tensor::from_vec(vec![-2.0f64, 3.0, -4.0, 5.0], (1, 2, 1, 2), &Device::Cpu).unwrap();
        let y = act.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(y, vec![-0.5, 3.0, -1.0, 5.0]);
    }

    #[test]
    fn batchnorm_normalizes_in_train_mode() {
        let (mut s, _) = store();
        let bn = BatchNorm2d::init(&mut s, "bn", 1).unwrap();
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], (4, 1, 1, 1), &Device::Cpu).unwrap();
        let y = bn.forward(&x, true).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_zero_input_stays_zero() {
        let (mut s, _) = store();
        let bn = BatchNorm2d::init(&mut s, "bn", 2).unwrap();
        let x = Tensor::zeros((2, 2, 3, 3), DType::F64, &Device::Cpu).unwrap();
        for train in [true, false] {
            let y = bn.forward(&x, train).unwrap().abs().unwrap().max_all().unwrap().to_vec0::<f64>().unwrap();
            assert_eq!(y, 0.0, "train={train}");
        }
    }

    #[test]
    fn batchnorm_running_stats_track_batches() {
        let (mut s, _) = store();
        let bn = BatchNorm2d::init(&mut s, "bn", 1).unwrap();
        let x = Tensor::full(5.0f64, (2, 1, 2, 2), &Device::Cpu).unwrap();
        for _ in 0..200 {
            bn.forward(&x, true).unwrap();
        }
        let rm = s.get("bn.running_mean").unwrap().var.as_tensor().to_vec1::<f64>().unwrap();
        assert!((rm[0] - 5.0).abs() < 1e-6, "running mean {rm:?}");
    }
}
