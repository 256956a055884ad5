//! Channel-layer mathematics.
//!
//! Complex symbol packing, average-power normalization, AWGN injection,
//! SNR/variance conversion and SNR-estimation simulation. Everything here is
//! a pure function of its inputs plus an explicit seed, so concurrent callers
//! only need to own their seed streams.
//!
//! Two parallel surfaces exist: the value-level functions in this module
//! operate on `Complex64` sequences and are the reference semantics, while
//! [`tensor`] mirrors the differentiable subset on batched tensors for use
//! inside the model graph. Both consume the same noise sampler, so a fixed
//! seed produces identical noise on either path.

pub mod tensor;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Average transmit power constraint used throughout the experiments.
pub const DEFAULT_POWER: f64 = 1.0;

/// Clamp range applied to noise-variance estimates before they reach the
/// decoder, so a wild pilot estimate cannot blow up the SNR map.
pub const VARIANCE_CLAMP: (f64, f64) = (1e-6, 1e3);

/// Encoder output after power normalization: `k` complex channel symbols
/// whose average power equals the budget exactly.
#[derive(Debug, Clone)]
pub struct LatentCode {
    pub symbols: Vec<Complex64>,
    pub power_budget: f64,
}

impl LatentCode {
    /// Number of channel uses.
    pub fn k(&self) -> usize {
        self.symbols.len()
    }

    /// Measured average power `(1/k) Σ |y_j|²`.
    pub fn average_power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Received symbols `z = y + n` together with the true noise variance that
/// produced them and the seed of the noise draw.
#[derive(Debug, Clone)]
pub struct ChannelOutput {
    pub received: Vec<Complex64>,
    pub noise_variance: f64,
    pub rng_seed: u64,
}

/// True and estimated SNR of a transmission, plus the noise-variance value
/// the decoder derives from the estimate.
#[derive(Debug, Clone, Copy)]
pub struct SnrEstimate {
    /// True SNR `S` in dB.
    pub true_snr_db: f64,
    /// Estimated SNR `Ŝ = S + E` in dB.
    pub estimated_snr_db: f64,
    /// Variance of the estimation noise `E`, in dB².
    pub estimation_noise_variance: f64,
    /// `P · 10^(−Ŝ/10)` — what the decoder consumes.
    pub derived_variance: f64,
}

/// Pilot symbols known to both ends and the corresponding received symbols.
#[derive(Debug, Clone)]
pub struct PilotBlock {
    pub pilots: Vec<Complex64>,
    pub received: Vec<Complex64>,
}

impl PilotBlock {
    /// Generate `m` QPSK-like pilot symbols of power `power` each. The
    /// sequence is a pure function of `(seed, m)`, so transmitter and
    /// receiver regenerate identical pilots.
    pub fn pilot_symbols(seed: u64, m: usize, power: f64) -> Vec<Complex64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let amp = (power / 2.0).sqrt();
        (0..m)
            .map(|_| {
                let bits: u8 = rand::Rng::random::<u8>(&mut rng) & 0b11;
                let re = if bits & 1 == 0 { amp } else { -amp };
                let im = if bits & 2 == 0 { amp } else { -amp };
                Complex64::new(re, im)
            })
            .collect()
    }

    /// Transmit freshly generated pilots through an AWGN channel.
    pub fn transmit(pilot_seed: u64, m: usize, power: f64, variance: f64, noise_seed: u64) -> Result<Self> {
        let pilots = Self::pilot_symbols(pilot_seed, m, power);
        let code = LatentCode {
            symbols: pilots.clone(),
            power_budget: power,
        };
        let out = awgn(&code, variance, noise_seed)?;
        Ok(PilotBlock {
            pilots,
            received: out.received,
        })
    }
}

/// Sample `k` i.i.d. circularly symmetric complex Gaussian noise values with
/// total per-symbol variance `variance` (each quadrature gets `variance/2`).
pub fn sample_complex_noise(seed: u64, k: usize, variance: f64) -> Vec<Complex64> {
    if variance == 0.0 {
        return vec![Complex64::new(0.0, 0.0); k];
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let sigma = (variance / 2.0).sqrt();
    (0..k)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * sigma, im * sigma)
        })
        .collect()
}

/// Scale a raw code so its average power equals `power` exactly:
/// `y = raw · sqrt(k·P / Σ|raw_j|²)`.
pub fn normalize_power(raw: &[Complex64], power: f64) -> Result<LatentCode> {
    if raw.is_empty() {
        return Err(Error::shape("normalize_power: empty code"));
    }
    if power <= 0.0 {
        return Err(Error::domain(format!("normalize_power: power budget must be positive, got {power}")));
    }
    let sum_sq: f64 = raw.iter().map(|s| s.norm_sqr()).sum();
    if sum_sq == 0.0 {
        return Err(Error::DegenerateCode("normalize_power: all-zero code".into()));
    }
    let scale = (raw.len() as f64 * power / sum_sq).sqrt();
    Ok(LatentCode {
        symbols: raw.iter().map(|s| s * scale).collect(),
        power_budget: power,
    })
}

/// Pair a real sequence into complex symbols: element `j` is
/// `rf[2j] + i·rf[2j+1]`.
pub fn pack_complex(real_features: &[f64]) -> Result<Vec<Complex64>> {
    if real_features.len() % 2 != 0 {
        return Err(Error::shape(format!(
            "pack_complex: length {} is odd",
            real_features.len()
        )));
    }
    Ok(real_features
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect())
}

/// Inverse of [`pack_complex`]; reproduces the real sequence bit-exactly.
pub fn unpack_complex(symbols: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(symbols.len() * 2);
    for s in symbols {
        out.push(s.re);
        out.push(s.im);
    }
    out
}

/// Transmit a code over an AWGN channel: `z_j = y_j + n_j` with
/// `n_j ~ CN(0, σ²)`, drawn deterministically from `seed`. `variance == 0`
/// is the noiseless pass-through.
pub fn awgn(code: &LatentCode, variance: f64, seed: u64) -> Result<ChannelOutput> {
    if variance < 0.0 {
        return Err(Error::domain(format!("awgn: negative noise variance {variance}")));
    }
    let noise = sample_complex_noise(seed, code.symbols.len(), variance);
    let received = code
        .symbols
        .iter()
        .zip(noise.iter())
        .map(|(y, n)| y + n)
        .collect();
    Ok(ChannelOutput {
        received,
        noise_variance: variance,
        rng_seed: seed,
    })
}

/// `σ² = P · 10^(−snr_db/10)`.
pub fn snr_to_variance(snr_db: f64, power: f64) -> Result<f64> {
    if power <= 0.0 {
        return Err(Error::domain(format!("snr_to_variance: power must be positive, got {power}")));
    }
    Ok(power * 10f64.powf(-snr_db / 10.0))
}

/// `SNR = 10·log10(P/σ²)`; exact inverse of [`snr_to_variance`].
pub fn variance_to_snr(variance: f64, power: f64) -> Result<f64> {
    if power <= 0.0 {
        return Err(Error::domain(format!("variance_to_snr: power must be positive, got {power}")));
    }
    if variance <= 0.0 {
        return Err(Error::domain(format!("variance_to_snr: variance must be positive, got {variance}")));
    }
    Ok(10.0 * (power / variance).log10())
}

/// Simulate a noisy SNR estimate `Ŝ = S + E`, `E ~ N(0, σ²_S)` in the dB
/// domain, and derive the noise variance the decoder will consume from the
/// noisy dB value. `est_noise_variance == 0` returns the exact oracle.
pub fn perturb_snr_estimate(
    true_snr_db: f64,
    est_noise_variance: f64,
    seed: u64,
    power: f64,
) -> Result<SnrEstimate> {
    if est_noise_variance < 0.0 {
        return Err(Error::domain(format!(
            "perturb_snr_estimate: negative estimation-noise variance {est_noise_variance}"
        )));
    }
    let estimated = if est_noise_variance == 0.0 {
        true_snr_db
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let e: f64 = StandardNormal.sample(&mut rng);
        true_snr_db + e * est_noise_variance.sqrt()
    };
    Ok(SnrEstimate {
        true_snr_db,
        estimated_snr_db: estimated,
        estimation_noise_variance: est_noise_variance,
        derived_variance: snr_to_variance(estimated, power)?,
    })
}

/// Maximum-likelihood noise-variance estimate from known pilots:
/// `(1/m) Σ |received_j − p_j|²`.
pub fn estimate_variance_from_pilots(block: &PilotBlock) -> Result<f64> {
    if block.pilots.is_empty() {
        return Err(Error::domain("estimate_variance_from_pilots: empty pilot block"));
    }
    if block.pilots.len() != block.received.len() {
        return Err(Error::shape(format!(
            "estimate_variance_from_pilots: {} pilots vs {} received",
            block.pilots.len(),
            block.received.len()
        )));
    }
    let m = block.pilots.len() as f64;
    Ok(block
        .pilots
        .iter()
        .zip(block.received.iter())
        .map(|(p, r)| (r - p).norm_sqr())
        .sum::<f64>()
        / m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn normalize_power_unit_input_unchanged() {
        let y = normalize_power(&[c(1.0, 0.0), c(1.0, 0.0)], 1.0).unwrap();
        assert!((y.symbols[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((y.symbols[1] - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn normalize_power_uniform_scaling() {
        // Σ|raw|² = 8 over k = 2 symbols, so the scale is sqrt(2/8) = 0.5.
        let y = normalize_power(&[c(2.0, 0.0), c(0.0, 2.0)], 1.0).unwrap();
        assert!((y.symbols[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((y.symbols[1] - c(0.0, 1.0)).norm() < 1e-12);
        assert!((y.average_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_power_random_vector_hits_budget() {
        let noise = sample_complex_noise(42, 256, 2.0);
        let y = normalize_power(&noise, 1.0).unwrap();
        assert!((y.average_power() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_power_rejects_zero_code() {
        let e = normalize_power(&[c(0.0, 0.0); 4], 1.0).unwrap_err();
        assert!(matches!(e, Error::DegenerateCode(_)));
    }

    #[test]
    fn pack_complex_matches_definition() {
        let symbols = pack_complex(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(symbols, vec![c(1.0, 2.0), c(3.0, 4.0)]);
    }

    #[test]
    fn pack_complex_rejects_odd_length() {
        assert!(matches!(pack_complex(&[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..512).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(unpack_complex(&pack_complex(&v).unwrap()), v);
    }

    #[test]
    fn awgn_noiseless_is_identity() {
        let code = normalize_power(&sample_complex_noise(1, 64, 1.0), 1.0).unwrap();
        let out = awgn(&code, 0.0, 99).unwrap();
        assert_eq!(out.received, code.symbols);
    }

    #[test]
    fn awgn_rejects_negative_variance() {
        let code = normalize_power(&[c(1.0, 0.0)], 1.0).unwrap();
        assert!(matches!(awgn(&code, -0.1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn awgn_deterministic_given_seed() {
        let code = normalize_power(&sample_complex_noise(2, 128, 1.0), 1.0).unwrap();
        let a = awgn(&code, 0.5, 7).unwrap();
        let b = awgn(&code, 0.5, 7).unwrap();
        assert_eq!(a.received, b.received);
    }

    #[test]
    fn snr_conversions_known_values() {
        assert!((snr_to_variance(0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((snr_to_variance(10.0, 1.0).unwrap() - 0.1).abs() < 1e-15);
        for s in [0.0, 5.0, 10.0, 15.0, 20.0, 25.0] {
            let back = variance_to_snr(snr_to_variance(s, 1.0).unwrap(), 1.0).unwrap();
            assert!((back - s).abs() < 1e-9, "roundtrip failed at {s} dB");
        }
    }

    #[test]
    fn snr_conversion_rejects_bad_domain() {
        assert!(snr_to_variance(0.0, 0.0).is_err());
        assert!(variance_to_snr(0.0, 1.0).is_err());
        assert!(variance_to_snr(1.0, -1.0).is_err());
    }

    #[test]
    fn perturb_zero_variance_is_oracle() {
        let est = perturb_snr_estimate(10.0, 0.0, 3, 1.0).unwrap();
        assert_eq!(est.estimated_snr_db, 10.0);
        assert!((est.derived_variance - 0.1).abs() < 1e-15);
    }

    #[test]
    fn perturb_matches_seeded_draw() {
        // Recompute the expected draw from the same generator definition.
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let e: f64 = StandardNormal.sample(&mut rng);
        let est = perturb_snr_estimate(10.0, 1.0, 1234, 1.0).unwrap();
        assert!((est.estimated_snr_db - (10.0 + e)).abs() < 1e-15);
        let expected_var = snr_to_variance(10.0 + e, 1.0).unwrap();
        assert!((est.derived_variance - expected_var).abs() < 1e-15);
    }

    #[test]
    fn pilot_symbols_are_deterministic_and_unit_power() {
        let a = PilotBlock::pilot_symbols(9, 64, 1.0);
        let b = PilotBlock::pilot_symbols(9, 64, 1.0);
        assert_eq!(a, b);
        for p in &a {
            assert!((p.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pilot_estimate_noiseless_is_zero() {
        let pilots = PilotBlock::pilot_symbols(3, 16, 1.0);
        let block = PilotBlock {
            received: pilots.clone(),
            pilots,
        };
        assert_eq!(estimate_variance_from_pilots(&block).unwrap(), 0.0);
    }

    #[test]
    fn pilot_estimate_rejects_empty_block() {
        let block = PilotBlock {
            pilots: vec![],
            received: vec![],
        };
        assert!(matches!(estimate_variance_from_pilots(&block), Err(Error::Domain(_))));
    }
}
