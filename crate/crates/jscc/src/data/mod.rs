//! Image data: CIFAR-10 acquisition and parsing, pixel normalization,
//! deterministic splits and batch iteration.
//!
//! Images are stored channel-major (3×32×32 per image, the native CIFAR-10
//! record layout) with pixel values normalized to `[0, 1]`. Labels are
//! discarded at load time; this is a reconstruction task.

pub mod cifar;
pub mod synthetic;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Image geometry is fixed at CIFAR scale.
pub const IMG_CHANNELS: usize = 3;
pub const IMG_HEIGHT: usize = 32;
pub const IMG_WIDTH: usize = 32;
/// Real source dimension per image.
pub const IMG_DIM: usize = IMG_CHANNELS * IMG_HEIGHT * IMG_WIDTH;

/// A batch of normalized images with the global dataset indices they came
/// from. Pixels are `[0, 1]` floats, one contiguous `3*32*32` block per
/// image.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pixels: Vec<f32>,
    ids: Vec<u32>,
}

impl ImageBatch {
    pub fn new(pixels: Vec<f32>, ids: Vec<u32>) -> Result<Self> {
        if pixels.len() != ids.len() * IMG_DIM {
            return Err(Error::shape(format!(
                "ImageBatch: {} pixel values for {} images (want {} per image)",
                pixels.len(),
                ids.len(),
                IMG_DIM
            )));
        }
        Ok(ImageBatch { pixels, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// View as a `(N, 3, 32, 32)` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(
            &self.pixels,
            (self.len(), IMG_CHANNELS, IMG_HEIGHT, IMG_WIDTH),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Rebuild from a `(N, 3, 32, 32)` tensor, keeping the given ids.
    pub fn from_tensor(t: &Tensor, ids: Vec<u32>) -> Result<Self> {
        let (n, c, h, w) = t.dims4().map_err(|_| Error::shape("ImageBatch::from_tensor: expected 4-d"))?;
        if (c, h, w) != (IMG_CHANNELS, IMG_HEIGHT, IMG_WIDTH) || n != ids.len() {
            return Err(Error::shape(format!(
                "ImageBatch::from_tensor: tensor {:?} vs {} ids",
                t.dims(),
                ids.len()
            )));
        }
        let pixels = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        ImageBatch::new(pixels, ids)
    }
}

/// An in-memory image set (train or test split).
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<f32>,
    ids: Vec<u32>,
}

impl Dataset {
    pub fn from_pixels(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() % IMG_DIM != 0 {
            return Err(Error::shape(format!(
                "Dataset: {} pixel values is not a multiple of {IMG_DIM}",
                pixels.len()
            )));
        }
        let count = pixels.len() / IMG_DIM;
        Ok(Dataset {
            pixels,
            ids: (0..count as u32).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Deterministic prefix subset (ids are preserved).
    pub fn subset(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        Dataset {
            pixels: self.pixels[..count * IMG_DIM].to_vec(),
            ids: self.ids[..count].to_vec(),
        }
    }

    pub fn image(&self, index: usize) -> &[f32] {
        &self.pixels[index * IMG_DIM..(index + 1) * IMG_DIM]
    }

    fn gather(&self, indices: &[usize]) -> ImageBatch {
        let mut pixels = Vec::with_capacity(indices.len() * IMG_DIM);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            ids.push(self.ids[i]);
        }
        ImageBatch { pixels, ids }
    }

    /// Iterate one epoch of batches. With `shuffle = Some((seed, epoch))` the
    /// visit order is a deterministic permutation of the whole set and the
    /// final partial batch is dropped (training mode); with `None` the order
    /// is sequential and the partial batch is kept (evaluation mode).
    pub fn batches(&self, batch_size: usize, shuffle: Option<(u64, u64)>) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let drop_last = match shuffle {
            Some((seed, epoch)) => {
                let mut rng = ChaCha12Rng::seed_from_u64(seed::derive(seed, Stream::Shuffle, &[epoch]));
                order.shuffle(&mut rng);
                true
            }
            None => false,
        };
        Ok(BatchIter {
            set: self,
            order,
            batch_size,
            drop_last,
            cursor: 0,
        })
    }
}

pub struct BatchIter<'a> {
    set: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    cursor: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = ImageBatch;

    fn next(&mut self) -> Option<ImageBatch> {
        let remaining = self.order.len() - self.cursor;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let take = remaining.min(self.batch_size);
        let idx = &self.order[self.cursor..self.cursor + take];
        self.cursor += take;
        Some(self.set.gather(idx))
    }
}

/// Convert raw `[0, 255]` pixel bytes to `[0, 1]` floats: `v → v/255`.
pub fn normalize(raw: &[u8]) -> Vec<f32> {
    raw.iter().map(|&v| v as f32 / 255.0).collect()
}

/// Inverse of [`normalize`] with round-to-nearest.
pub fn denormalize(pixels: &[f32]) -> Vec<u8> {
    pixels
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(count: usize) -> Dataset {
        let pixels = (0..count * IMG_DIM).map(|i| (i % 256) as f32 / 255.0).collect();
        Dataset::from_pixels(pixels).unwrap()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let v = normalize(&[0, 128, 255]);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 128.0 / 255.0).abs() < 1e-7);
        assert_eq!(v[2], 1.0);
    }

    #[test]
    fn denormalize_roundtrips_every_byte() {
        let raw: Vec<u8> = (0..=255).collect();
        assert_eq!(denormalize(&normalize(&raw)), raw);
    }

    #[test]
    fn train_batching_drops_last_and_covers_epoch() {
        let set = toy_set(130);
        let batches: Vec<_> = set.batches(64, Some((1, 0))).unwrap().collect();
        assert_eq!(batches.len(), 2);
        let mut seen: Vec<u32> = batches.iter().flat_map(|b| b.ids().to_vec()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 128); // each retained image exactly once
    }

    #[test]
    fn eval_batching_keeps_partial_batch() {
        let set = toy_set(130);
        let batches: Vec<_> = set.batches(64, None).unwrap().collect();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[2].len(), 2);
        assert_eq!(batches[0].ids()[0], 0); // sequential order
    }

    #[test]
    fn shuffle_is_deterministic_per_seed_and_epoch() {
        let set = toy_set(100);
        let a: Vec<u32> = set.batches(10, Some((7, 3))).unwrap().flat_map(|b| b.ids().to_vec()).collect();
        let b: Vec<u32> = set.batches(10, Some((7, 3))).unwrap().flat_map(|b| b.ids().to_vec()).collect();
        let c: Vec<u32> = set.batches(10, Some((7, 4))).unwrap().flat_map(|b| b.ids().to_vec()).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn epoch_partition_visits_each_image_once() {
        let set = toy_set(96);
        let mut seen: Vec<u32> = set.batches(32, Some((5, 1))).unwrap().flat_map(|b| b.ids().to_vec()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..96).collect::<Vec<u32>>());
    }

    #[test]
    fn batch_tensor_roundtrip() {
        let set = toy_set(4);
        let batch = set.batches(4, None).unwrap().next().unwrap();
        let t = batch.to_tensor(&candle_core::Device::Cpu, DType::F32).unwrap();
        assert_eq!(t.dims(), &[4, 3, 32, 32]);
        let back = ImageBatch::from_tensor(&t, batch.ids().to_vec()).unwrap();
        assert_eq!(back.pixels(), batch.pixels());
    }
}
