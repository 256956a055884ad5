//! Experiment reproduction: PSNR-vs-SNR sweeps, baseline comparison tables
//! and plots, noisy-SNR-estimation robustness sweeps and multi-user
//! broadcast evaluation.
//!
//! Every transmission's randomness is keyed by `(seed, image id, SNR,
//! realization)`, so a report is a pure function of `(checkpoint, seed,
//! options)` and reruns are byte-identical. Sweeps and multi-user runs share
//! one evaluation kernel, which makes a single-user run at SNR `S` literally
//! the same computation as a sweep point at `S`.

pub mod plot;
pub mod report;

use candle_core::Tensor;

use crate::channel::tensor::awgn_tensor;
use crate::channel::{
    estimate_variance_from_pilots, perturb_snr_estimate, snr_to_variance, PilotBlock, DEFAULT_POWER,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed::{self, Stream};

pub use report::{EvalReport, EvalRow, ReportMeta};

/// PSNR values above this are clamped; identical images report exactly this.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Per-image PSNR in dB: `10·log10(max_value² / MSE_i)`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr_from_tensors(x: &Tensor, xhat: &Tensor, max_value: f64) -> Result<Vec<f64>> {
    if x.dims() != xhat.dims() {
        return Err(Error::shape(format!(
            "psnr: {:?} vs {:?}",
            x.dims(),
            xhat.dims()
        )));
    }
    if max_value <= 0.0 {
        return Err(Error::domain(format!("psnr: max_value must be positive, got {max_value}")));
    }
    let n = x.dims()[0];
    let per_image_mse = (x - xhat)?
        .sqr()?
        .reshape((n, x.elem_count() / n))?
        .mean(1)?
        .to_dtype(candle_core::DType::F64)?
        .to_vec1::<f64>()?;
    Ok(per_image_mse.into_iter().map(|mse| psnr_from_mse(mse, max_value)).collect())
}

/// Scalar PSNR from a mean squared error.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB)
}

/// How the decoder obtains its noise-variance estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// `Ŝ = S + E`, `E ~ N(0, var_db2)`; `var_db2 = 0` is the exact oracle.
    NoisyOracle { var_db2: f64 },
    /// Maximum-likelihood estimate from a transmitted pilot block.
    Pilot { len: usize },
}

impl Estimator {
    /// The `estimation_noise_variance` column value for report rows.
    fn report_var(&self) -> f64 {
        match self {
            Estimator::NoisyOracle { var_db2 } => *var_db2,
            Estimator::Pilot { .. } => 0.0,
        }
    }

    fn describe(&self) -> String {
        match self {
            Estimator::NoisyOracle { var_db2 } if *var_db2 == 0.0 => "oracle".to_string(),
            Estimator::NoisyOracle { var_db2 } => format!("noisy_oracle(var={var_db2})"),
            Estimator::Pilot { len } => format!("pilot(m={len})"),
        }
    }
}

/// Options shared by sweeps and multi-user runs.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub seed: u64,
    pub batch_size: usize,
    /// Noise realizations averaged per (image, SNR) point.
    pub noise_realizations: usize,
    /// Test hook: transmit without channel noise while the decoder still
    /// receives the estimate for the claimed SNR.
    pub noiseless_channel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 7,
            batch_size: 64,
            noise_realizations: 1,
            noiseless_channel: false,
        }
    }
}

/// Provenance stamped into every report.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub model_id: String,
    pub checkpoint_hash: String,
    pub config_hash: String,
}

/// Mean/std/num accumulator output for one evaluation point.
struct PointStats {
    mean: f64,
    std: f64,
    num_images: usize,
}

/// Evaluate one (test SNR, estimator) point over the whole set.
fn evaluate_point(
    model: &Model,
    test: &Dataset,
    snr_db: f64,
    estimator: Estimator,
    opts: &EvalOptions,
) -> Result<PointStats> {
    if opts.noise_realizations == 0 {
        return Err(Error::config("noise_realizations must be >= 1"));
    }
    let store = model.store();
    let sigma2 = snr_to_variance(snr_db, DEFAULT_POWER)?;
    let mdb = seed::millidb(snr_db);
    let pilot_symbols_seed = seed::derive(opts.seed, Stream::PilotSymbols, &[]);
    let mut per_image_psnr: Vec<f64> = Vec::with_capacity(test.len());

    for batch in test.batches(opts.batch_size, None)? {
        let x = batch.to_tensor(store.device(), store.dtype())?;
        let y = model.encode(&x)?;
        let mut psnr_acc = vec![0.0f64; batch.len()];
        for r in 0..opts.noise_realizations {
            let r = r as u64;
            let channel_vars = vec![if opts.noiseless_channel { 0.0 } else { sigma2 }; batch.len()];
            let channel_seeds: Vec<u64> = batch
                .ids()
                .iter()
                .map(|&id| seed::derive(opts.seed, Stream::EvalNoise, &[id as u64, mdb, r]))
                .collect();
            let z = awgn_tensor(&y, &channel_vars, &channel_seeds)?;

            let mut sigma2_hat = Vec::with_capacity(batch.len());
            for &id in batch.ids() {
                let est = match estimator {
                    Estimator::NoisyOracle { var_db2 } => {
                        let est_seed = seed::derive(opts.seed, Stream::EstNoise, &[id as u64, mdb, r]);
                        perturb_snr_estimate(snr_db, var_db2, est_seed, DEFAULT_POWER)?.derived_variance
                    }
                    Estimator::Pilot { len } => {
                        let noise_seed = seed::derive(opts.seed, Stream::PilotNoise, &[id as u64, mdb, r]);
                        let block = PilotBlock::transmit(pilot_symbols_seed, len, DEFAULT_POWER, sigma2, noise_seed)?;
                        estimate_variance_from_pilots(&block)?
                    }
                };
                sigma2_hat.push(est);
            }
            let xhat = model.decode(&z, &sigma2_hat, false)?;
            for (acc, p) in psnr_acc.iter_mut().zip(psnr_from_tensors(&x, &xhat, 1.0)?) {
                *acc += p;
            }
        }
        per_image_psnr.extend(psnr_acc.into_iter().map(|p| p / opts.noise_realizations as f64));
    }

    let n = per_image_psnr.len();
    let mean = per_image_psnr.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        per_image_psnr.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(PointStats {
        mean,
        std: var.sqrt(),
        num_images: n,
    })
}

/// PSNR-vs-SNR sweep: transmit every test image at each SNR in `snr_list`;
/// the decoder consumes an estimate with dB-domain Gaussian noise of
/// variance `est_noise_var` (0 = exact oracle).
pub fn sweep_snr(
    model: &Model,
    test: &Dataset,
    snr_list: &[f64],
    est_noise_var: f64,
    opts: &EvalOptions,
    prov: &Provenance,
) -> Result<EvalReport> {
    if est_noise_var < 0.0 {
        return Err(Error::domain(format!("est_noise_var must be >= 0, got {est_noise_var}")));
    }
    let estimator = Estimator::NoisyOracle { var_db2: est_noise_var };
    let mut rows = Vec::with_capacity(snr_list.len());
    for &snr in snr_list {
        let stats = evaluate_point(model, test, snr, estimator, opts)?;
        rows.push(EvalRow {
            model_id: prov.model_id.clone(),
            bandwidth_ratio: model.config().bandwidth_ratio(),
            test_snr_db: snr,
            est_noise_var,
            mean_psnr_db: stats.mean,
            std_psnr_db: stats.std,
            num_images: stats.num_images,
            seed: opts.seed,
        });
    }
    Ok(EvalReport {
        rows,
        meta: report_meta(prov, opts, &estimator.describe()),
    })
}

/// Multi-user broadcast evaluation: the encoder runs once per image, each
/// user receives through an independent channel at its own SNR, estimates
/// the noise variance per `estimator`, and decodes with the shared decoder.
/// One report row per user.
pub fn multiuser_eval(
    model: &Model,
    test: &Dataset,
    user_snrs: &[f64],
    estimator: Estimator,
    opts: &EvalOptions,
    prov: &Provenance,
) -> Result<EvalReport> {
    if user_snrs.is_empty() {
        return Err(Error::config("multiuser_eval: need at least one user"));
    }
    if let Estimator::Pilot { len: 0 } = estimator {
        return Err(Error::config("multiuser_eval: pilot length must be >= 1"));
    }
    let mut rows = Vec::with_capacity(user_snrs.len());
    for &snr in user_snrs {
        let stats = evaluate_point(model, test, snr, estimator, opts)?;
        rows.push(EvalRow {
            model_id: prov.model_id.clone(),
            bandwidth_ratio: model.config().bandwidth_ratio(),
            test_snr_db: snr,
            est_noise_var: estimator.report_var(),
            mean_psnr_db: stats.mean,
            std_psnr_db: stats.std,
            num_images: stats.num_images,
            seed: opts.seed,
        });
    }
    Ok(EvalReport {
        rows,
        meta: report_meta(prov, opts, &estimator.describe()),
    })
}

fn report_meta(prov: &Provenance, opts: &EvalOptions, estimator: &str) -> ReportMeta {
    let mut meta = ReportMeta::new();
    meta.insert("model_id", &prov.model_id);
    meta.insert("checkpoint_hash", &prov.checkpoint_hash);
    meta.insert("config_hash", &prov.config_hash);
    meta.insert("estimator", estimator);
    meta.insert("seed", &opts.seed.to_string());
    meta.insert("noise_realizations", &opts.noise_realizations.to_string());
    meta.insert("noiseless_channel", &opts.noiseless_channel.to_string());
    meta
}

/// Merged comparison of several reports over a shared SNR grid.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub snr_grid: Vec<f64>,
    /// `(model label, mean PSNR per grid point)`.
    pub curves: Vec<(String, Vec<f64>)>,
}

impl ComparisonTable {
    /// Rows as `(model, snr, mean_psnr)` — models × SNR points.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model_id\ttest_snr_db\tmean_psnr_db\n");
        for (model, psnrs) in &self.curves {
            for (snr, p) in self.snr_grid.iter().zip(psnrs) {
                out.push_str(&format!("{model}\t{snr}\t{p:.6}\n"));
            }
        }
        out
    }

    /// PSNR-vs-SNR line chart, one curve per model.
    pub fn to_svg(&self) -> String {
        let series: Vec<plot::Series> = self
            .curves
            .iter()
            .map(|(name, psnrs)| plot::Series {
                name: name.clone(),
                points: self.snr_grid.iter().cloned().zip(psnrs.iter().cloned()).collect(),
            })
            .collect();
        plot::line_chart("PSNR vs test SNR", "test SNR (dB)", "PSNR (dB)", &series)
    }
}

/// Merge reports into a comparison table. All reports must share the same
/// testing SNR grid.
pub fn compare_models(reports: &[EvalReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::config("compare_models: no reports given"));
    }
    let grid_of = |r: &EvalReport| -> Vec<f64> {
        let mut g: Vec<f64> = r.rows.iter().map(|row| row.test_snr_db).collect();
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        g
    };
    let grid = grid_of(&reports[0]);
    let mut curves = Vec::with_capacity(reports.len());
    for (i, r) in reports.iter().enumerate() {
        if grid_of(r) != grid {
            return Err(Error::Alignment(format!(
                "report {i} has SNR grid {:?}, expected {:?}",
                grid_of(r),
                grid
            )));
        }
        let label = r
            .rows
            .first()
            .map(|row| row.model_id.clone())
            .unwrap_or_else(|| format!("report{i}"));
        let label = if r.meta.get("estimator").map(|e| e != "oracle").unwrap_or(false) {
            format!("{label} [{}]", r.meta.get("estimator").unwrap())
        } else {
            label
        };
        let mut points = Vec::with_capacity(grid.len());
        for &snr in &grid {
            let row = r
                .rows
                .iter()
                .find(|row| row.test_snr_db == snr)
                .ok_or_else(|| Error::Alignment(format!("report {i} missing SNR {snr}")))?;
            points.push(row.mean_psnr_db);
        }
        curves.push((label, points));
    }
    Ok(ComparisonTable { snr_grid: grid, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn psnr_known_values() {
        assert_eq!(psnr_from_mse(0.0, 1.0), 100.0);
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(0.1, 1.0) - 10.0).abs() < 1e-12);
        // Tiny MSE clamps at the cap.
        assert_eq!(psnr_from_mse(1e-30, 1.0), 100.0);
    }

    #[test]
    fn psnr_tensor_matches_brute_force() {
        let dev = Device::Cpu;
        let n = 3 * 32 * 32;
        let a: Vec<f64> = (0..2 * n).map(|i| ((i * 31 % 97) as f64) / 97.0).collect();
        let b: Vec<f64> = (0..2 * n).map(|i| ((i * 41 % 83) as f64) / 83.0).collect();
        let x = Tensor::from_vec(a.clone(), (2, 3, 32, 32), &dev).unwrap();
        let y = Tensor::from_vec(b.clone(), (2, 3, 32, 32), &dev).unwrap();
        let fast = psnr_from_tensors(&x, &y, 1.0).unwrap();
        for img in 0..2 {
            let mut acc = 0.0;
            for j in 0..n {
                let d = a[img * n + j] - b[img * n + j];
                acc += d * d;
            }
            let slow = 10.0 * (1.0 / (acc / n as f64)).log10();
            assert!((fast[img] - slow).abs() < 1e-9, "{} vs {}", fast[img], slow);
        }
    }

    #[test]
    fn identical_images_hit_cap() {
        let dev = Device::Cpu;
        let x = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &dev).unwrap();
        let p = psnr_from_tensors(&x, &x, 1.0).unwrap();
        assert_eq!(p, vec![100.0, 100.0]);
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let dev = Device::Cpu;
        let x = Tensor::zeros((1, 3, 32, 32), candle_core::DType::F32, &dev).unwrap();
        let y = Tensor::zeros((2, 3, 32, 32), candle_core::DType::F32, &dev).unwrap();
        assert!(matches!(psnr_from_tensors(&x, &y, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn psnr_mse_duality() {
        // PSNR = 10·log10(1/MSE) for max value 1.
        for mse in [0.5, 0.1, 0.01, 3e-4] {
            let direct = psnr_from_mse(mse, 1.0);
            let dual = 10.0 * (1.0 / mse).log10();
            assert!((direct - dual).abs() < 1e-9);
        }
    }

    #[test]
    fn compare_rejects_disjoint_grids() {
        let mk = |snrs: &[f64]| EvalReport {
            rows: snrs
                .iter()
                .map(|&s| EvalRow {
                    model_id: "m".into(),
                    bandwidth_ratio: 1.0 / 12.0,
                    test_snr_db: s,
                    est_noise_var: 0.0,
                    mean_psnr_db: 20.0,
                    std_psnr_db: 1.0,
                    num_images: 10,
                    seed: 1,
                })
                .collect(),
            meta: ReportMeta::new(),
        };
        let a = mk(&[0.0, 5.0]);
        let b = mk(&[0.0, 10.0]);
        assert!(matches!(compare_models(&[a.clone(), b]), Err(Error::Alignment(_))));
        let table = compare_models(&[a]).unwrap();
        assert_eq!(table.snr_grid, vec![0.0, 5.0]);
        assert_eq!(table.curves.len(), 1);
    }

    #[test]
    fn comparison_table_row_count_is_cross_product() {
        let mk = |id: &str| EvalReport {
            rows: [0.0, 5.0, 10.0]
                .iter()
                .map(|&s| EvalRow {
                    model_id: id.into(),
                    bandwidth_ratio: 1.0 / 12.0,
                    test_snr_db: s,
                    est_noise_var: 0.0,
                    mean_psnr_db: 20.0 + s,
                    std_psnr_db: 1.0,
                    num_images: 10,
                    seed: 1,
                })
                .collect(),
            meta: ReportMeta::new(),
        };
        let table = compare_models(&[mk("a"), mk("b"), mk("c"), mk("d")]).unwrap();
        let tsv = table.to_tsv();
        assert_eq!(tsv.lines().count(), 1 + 4 * 3);
    }
}
