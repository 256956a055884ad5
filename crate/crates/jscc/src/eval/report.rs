//! Evaluation report persistence: a delimited text table with a header row,
//! plus a sidecar `key = value` metadata file carrying provenance (hashes,
//! seeds, estimator). No timestamps — rerunning a sweep with the same seeds
//! must reproduce both files byte-identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One evaluated (model, SNR) point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model_id: String,
    pub bandwidth_ratio: f64,
    pub test_snr_db: f64,
    /// Variance of the dB-domain estimation noise (0 for oracle and pilot
    /// estimators; the estimator itself is recorded in the metadata).
    pub est_noise_var: f64,
    pub mean_psnr_db: f64,
    pub std_psnr_db: f64,
    pub num_images: usize,
    pub seed: u64,
}

/// Sorted string metadata (sorted so serialization is deterministic).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportMeta(BTreeMap<String, String>);

impl ReportMeta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&String> {
        self.0.get(&key.to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("metadata line {} has no '='", lineno + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ReportMeta(map))
    }
}

const HEADER: &str = "model_id\tbandwidth_ratio\ttest_snr_db\test_noise_var_db2\tmean_psnr_db\tstd_psnr_db\tnum_images\tseed";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub meta: ReportMeta,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.8}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
                r.model_id,
                r.bandwidth_ratio,
                r.test_snr_db,
                r.est_noise_var,
                r.mean_psnr_db,
                r.std_psnr_db,
                r.num_images,
                r.seed
            ));
        }
        out
    }

    pub fn from_tsv(text: &str, meta: ReportMeta) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::config("empty report file"))?;
        if header != HEADER {
            return Err(Error::config(format!("unexpected report header '{header}'")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 8 {
                return Err(Error::config(format!(
                    "report line {} has {} columns, expected 8",
                    lineno + 2,
                    cols.len()
                )));
            }
            let parse_f = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::config(format!("bad {what} '{s}' on line {}", lineno + 2)))
            };
            rows.push(EvalRow {
                model_id: cols[0].to_string(),
                bandwidth_ratio: parse_f(cols[1], "bandwidth_ratio")?,
                test_snr_db: parse_f(cols[2], "test_snr_db")?,
                est_noise_var: parse_f(cols[3], "est_noise_var")?,
                mean_psnr_db: parse_f(cols[4], "mean_psnr_db")?,
                std_psnr_db: parse_f(cols[5], "std_psnr_db")?,
                num_images: cols[6]
                    .parse()
                    .map_err(|_| Error::config(format!("bad num_images on line {}", lineno + 2)))?,
                seed: cols[7]
                    .parse()
                    .map_err(|_| Error::config(format!("bad seed on line {}", lineno + 2)))?,
            });
        }
        Ok(EvalReport { rows, meta })
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut os = path.as_os_str().to_owned();
        os.push(".meta");
        PathBuf::from(os)
    }

    /// Write the table to `path` and metadata to `path.meta`.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_tsv())?;
        std::fs::write(Self::sidecar_path(path), self.meta.to_text())?;
        Ok(())
    }

    /// Read a table and (if present) its sidecar metadata.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let meta_path = Self::sidecar_path(path);
        let meta = if meta_path.is_file() {
            ReportMeta::from_text(&std::fs::read_to_string(meta_path)?)?
        } else {
            ReportMeta::new()
        };
        Self::from_tsv(&text, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let mut meta = ReportMeta::new();
        meta.insert("checkpoint_hash", "abc123");
        meta.insert("estimator", "oracle");
        EvalReport {
            rows: vec![
                EvalRow {
                    model_id: "adaptive_r12".into(),
                    bandwidth_ratio: 1.0 / 12.0,
                    test_snr_db: 0.0,
                    est_noise_var: 0.0,
                    mean_psnr_db: 21.123456,
                    std_psnr_db: 1.5,
                    num_images: 1000,
                    seed: 7,
                },
                EvalRow {
                    model_id: "adaptive_r12".into(),
                    bandwidth_ratio: 1.0 / 12.0,
                    test_snr_db: 10.0,
                    est_noise_var: 0.0,
                    mean_psnr_db: 25.0,
                    std_psnr_db: 1.25,
                    num_images: 1000,
                    seed: 7,
                },
            ],
            meta,
        }
    }

    #[test]
    fn tsv_roundtrip() {
        let report = sample();
        let back = EvalReport::from_tsv(&report.to_tsv(), report.meta.clone()).unwrap();
        assert_eq!(report.rows.len(), back.rows.len());
        for (a, b) in report.rows.iter().zip(back.rows.iter()) {
            assert_eq!(a.model_id, b.model_id);
            assert!((a.mean_psnr_db - b.mean_psnr_db).abs() < 1e-6);
            assert_eq!(a.num_images, b.num_images);
        }
    }

    #[test]
    fn file_roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.tsv");
        let report = sample();
        report.write(&path).unwrap();
        let back = EvalReport::read(&path).unwrap();
        assert_eq!(back.meta.get("checkpoint_hash").unwrap(), "abc123");
        assert_eq!(back.rows[1].test_snr_db, 10.0);
    }

    #[test]
    fn serialization_is_deterministic() {
        let report = sample();
        assert_eq!(report.to_tsv(), report.to_tsv());
        assert_eq!(report.meta.to_text(), report.meta.to_text());
        // No volatile fields: two writes produce identical bytes.
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.tsv");
        let p2 = dir.path().join("b.tsv");
        report.write(&p1).unwrap();
        report.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(EvalReport::from_tsv("bogus header\n", ReportMeta::new()).is_err());
        let bad = format!("{HEADER}\nonly\tthree\tcols\n");
        assert!(EvalReport::from_tsv(&bad, ReportMeta::new()).is_err());
    }
}
