//! Differentiable tensor mirror of the channel layer.
//!
//! Batched codes live in `(N, k, 2)` tensors whose last axis holds the
//! (real, imaginary) parts of each complex symbol, in the same symbol order
//! as the value-level API — a fixed seed therefore injects identical noise on
//! both paths. Power normalization and noise addition are expressed as
//! tensor ops so gradients flow through them; the noise itself is treated as
//! a constant.

use candle_core::{Tensor, D};

use super::{sample_complex_noise, unpack_complex};
use crate::error::{Error, Result};

/// Pair the channels of a `(N, C, H, W)` feature map into complex symbols:
/// channels `2p` and `2p+1` become the real and imaginary parts of symbol
/// block `p`. Returns `(N, k, 2)` with `k = C·H·W/2`, symbols ordered by
/// `(pair, row, col)`.
pub fn pack_tensor(features: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = features
        .dims4()
        .map_err(|_| Error::shape(format!("pack_tensor: expected 4-d input, got {:?}", features.dims())))?;
    if c % 2 != 0 {
        return Err(Error::shape(format!("pack_tensor: channel count {c} is odd")));
    }
    let k = c / 2 * h * w;
    let paired = features
        .reshape((n, c / 2, 2, h, w))?
        .permute((0, 1, 3, 4, 2))?
        .reshape((n, k, 2))?;
    Ok(paired.contiguous()?)
}

/// Inverse of [`pack_tensor`]: rebuild the `(N, C, H, W)` feature layout.
pub fn unpack_tensor(code: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let (n, k, two) = code
        .dims3()
        .map_err(|_| Error::shape(format!("unpack_tensor: expected 3-d input, got {:?}", code.dims())))?;
    if two != 2 {
        return Err(Error::shape(format!("unpack_tensor: last axis must be 2, got {two}")));
    }
    if c % 2 != 0 || k != c / 2 * h * w {
        return Err(Error::shape(format!(
            "unpack_tensor: k={k} does not match layout {c}x{h}x{w}"
        )));
    }
    let features = code
        .reshape((n, c / 2, h, w, 2))?
        .permute((0, 1, 4, 2, 3))?
        .reshape((n, c, h, w))?;
    Ok(features.contiguous()?)
}

/// Per-image average-power normalization of a `(N, k, 2)` code batch:
/// every image's code is scaled so `(1/k) Σ |y_j|² = power` exactly.
/// Differentiable with respect to the input.
pub fn normalize_power_tensor(raw: &Tensor, power: f64) -> Result<Tensor> {
    let (_n, k, two) = raw
        .dims3()
        .map_err(|_| Error::shape(format!("normalize_power_tensor: expected (N,k,2), got {:?}", raw.dims())))?;
    if two != 2 {
        return Err(Error::shape(format!("normalize_power_tensor: last axis must be 2, got {two}")));
    }
    if power <= 0.0 {
        return Err(Error::domain(format!("normalize_power_tensor: power must be positive, got {power}")));
    }
    let sum_sq = raw.sqr()?.sum_keepdim((1, 2))?; // (N,1,1)
    let min_sum = sum_sq.flatten_all()?.min(0)?.to_dtype(candle_core::DType::F64)?.to_vec0::<f64>()?;
    if min_sum <= 0.0 {
        return Err(Error::DegenerateCode("normalize_power_tensor: an image produced an all-zero code".into()));
    }
    let scale = (sum_sq.recip()? * (k as f64 * power))?.sqrt()?;
    Ok(raw.broadcast_mul(&scale)?)
}

/// Add circularly symmetric complex Gaussian noise to a `(N, k, 2)` code
/// batch. Image `i` gets noise with per-symbol variance `variances[i]` drawn
/// from `seeds[i]`; pass singleton slices to share one variance/seed across
/// the batch (noise is then still drawn independently per symbol from the
/// single stream). Differentiable with respect to `y`.
pub fn awgn_tensor(y: &Tensor, variances: &[f64], seeds: &[u64]) -> Result<Tensor> {
    let (n, k, two) = y
        .dims3()
        .map_err(|_| Error::shape(format!("awgn_tensor: expected (N,k,2), got {:?}", y.dims())))?;
    if two != 2 {
        return Err(Error::shape(format!("awgn_tensor: last axis must be 2, got {two}")));
    }
    if let Some(v) = variances.iter().find(|v| **v < 0.0) {
        return Err(Error::domain(format!("awgn_tensor: negative noise variance {v}")));
    }
    let mut noise = Vec::with_capacity(n * k * 2);
    match (variances, seeds) {
        ([v], [s]) => {
            // One stream covers the whole batch.
            noise.extend(unpack_complex(&sample_complex_noise(*s, n * k, *v)));
        }
        _ => {
            if variances.len() != n || seeds.len() != n {
                return Err(Error::shape(format!(
                    "awgn_tensor: got {} variances / {} seeds for batch of {n}",
                    variances.len(),
                    seeds.len()
                )));
            }
            for i in 0..n {
                noise.extend(unpack_complex(&sample_complex_noise(seeds[i], k, variances[i])));
            }
        }
    }
    let noise = Tensor::from_vec(noise, (n, k, 2), y.device())?.to_dtype(y.dtype())?;
    Ok(y.broadcast_add(&noise.reshape((n, k, 2))?)?)
}

/// Average power of each image's code in a `(N, k, 2)` batch.
pub fn per_image_power(code: &Tensor) -> Result<Vec<f64>> {
    let (_n, k, _two) = code.dims3().map_err(|_| Error::shape("per_image_power: expected (N,k,2)"))?;
    let p = (code.sqr()?.sum(D::Minus1)?.sum(D::Minus1)? / k as f64)?;
    Ok(p.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{normalize_power, pack_complex};
    use candle_core::{DType, Device};

    #[test]
    fn pack_tensor_matches_value_path() {
        // 1 image, 4 channels, 2x2 spatial: channel pairs (0,1) and (2,3).
        let dev = Device::Cpu;
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let t = Tensor::from_vec(vals, (1, 4, 2, 2), &dev).unwrap();
        let packed = pack_tensor(&t).unwrap();
        let flat = packed.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let symbols = pack_complex(&flat).unwrap();
        // Symbol 0 pairs feature (ch0, 0, 0) with (ch1, 0, 0).
        assert_eq!(symbols[0].re, 0.0);
        assert_eq!(symbols[0].im, 4.0);
        // Symbol 4 starts the second channel pair.
        assert_eq!(symbols[4].re, 8.0);
        assert_eq!(symbols[4].im, 12.0);
    }

    #[test]
    fn unpack_inverts_pack() {
        let dev = Device::Cpu;
        let t = Tensor::rand(-1f32, 1f32, (3, 8, 4, 4), &dev).unwrap();
        let packed = pack_tensor(&t).unwrap();
        let back = unpack_tensor(&packed, 8, 4, 4).unwrap();
        let diff = (back - &t).unwrap().abs().unwrap().max(2).unwrap().max(2).unwrap().max(1).unwrap().max(0).unwrap();
        assert_eq!(diff.to_vec0::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn tensor_normalization_agrees_with_value_path() {
        let dev = Device::Cpu;
        let raw: Vec<f64> = crate::channel::unpack_complex(&crate::channel::sample_complex_noise(11, 32, 3.0));
        let t = Tensor::from_vec(raw.clone(), (1, 32, 2), &dev).unwrap();
        let yt = normalize_power_tensor(&t, 1.0).unwrap();
        let y_val = normalize_power(&pack_complex(&raw).unwrap(), 1.0).unwrap();
        let yt_flat = yt.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let y_ref = crate::channel::unpack_complex(&y_val.symbols);
        for (a, b) in yt_flat.iter().zip(y_ref.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_awgn_matches_value_path_noise() {
        let dev = Device::Cpu;
        let y = Tensor::zeros((2, 16, 2), DType::F64, &dev).unwrap();
        let z = awgn_tensor(&y, &[0.5, 0.5], &[100, 101]).unwrap();
        let flat = z.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let n0 = crate::channel::sample_complex_noise(100, 16, 0.5);
        let n1 = crate::channel::sample_complex_noise(101, 16, 0.5);
        assert_eq!(flat[0], n0[0].re);
        assert_eq!(flat[1], n0[0].im);
        assert_eq!(flat[32], n1[0].re);
    }

    #[test]
    fn per_image_power_after_normalization() {
        let dev = Device::Cpu;
        let t = Tensor::rand(-2f32, 2f32, (5, 64, 2), &dev).unwrap();
        let y = normalize_power_tensor(&t, 1.0).unwrap();
        for p in per_image_power(&y).unwrap() {
            assert!((p - 1.0).abs() < 1e-5, "per-image power {p}");
        }
    }

    #[test]
    fn degenerate_image_rejected() {
        let dev = Device::Cpu;
        let mut vals = vec![1f32; 2 * 8 * 2];
        for v in vals.iter_mut().take(16) {
            *v = 0.0;
        }
        let t = Tensor::from_vec(vals, (2, 8, 2), &dev).unwrap();
        assert!(matches!(
            normalize_power_tensor(&t, 1.0),
            Err(crate::Error::DegenerateCode(_))
        ));
    }
}
