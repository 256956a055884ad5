//! CIFAR-10 binary archive parsing and cache handling.
//!
//! The canonical distribution is `cifar-10-binary.tar.gz` (md5 pinned
//! below). The cache directory may hold either the archive itself or the
//! extracted `cifar-10-batches-bin/` directory; loading is idempotent and
//! byte-validated either way.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};

use super::{normalize, Dataset, IMG_DIM};
use crate::error::{Error, Result};

/// Canonical download location.
pub const CIFAR10_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
/// md5 of `cifar-10-binary.tar.gz` as published on the dataset page.
pub const CIFAR10_ARCHIVE_MD5: &str = "c32a1d4ab5d03f1284b67883e8d87530";
/// Directory name inside the archive.
pub const BATCHES_DIR: &str = "cifar-10-batches-bin";

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";
/// Each record is 1 label byte + 3072 channel-major pixel bytes.
const RECORD_LEN: usize = 1 + IMG_DIM;
const RECORDS_PER_FILE: usize = 10_000;
const FILE_LEN: usize = RECORD_LEN * RECORDS_PER_FILE;

/// Hex md5 of a byte slice.
pub fn md5_hex(bytes: &[u8]) -> String {
    let mut hasher = Md5::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse one CIFAR-10 batch file into normalized pixels, dropping labels.
pub fn parse_batch_file(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() != FILE_LEN {
        return Err(Error::Integrity(format!(
            "batch file has {} bytes, expected {FILE_LEN}",
            bytes.len()
        )));
    }
    let mut pixels = Vec::with_capacity(RECORDS_PER_FILE * IMG_DIM);
    for record in bytes.chunks_exact(RECORD_LEN) {
        let label = record[0];
        if label > 9 {
            return Err(Error::Integrity(format!("record label {label} out of range 0..=9")));
        }
        pixels.extend(normalize(&record[1..]));
    }
    Ok(pixels)
}

/// Verify an archive's md5 against the pinned value (or an override) and
/// extract it into `cache_dir`.
pub fn ingest_archive(archive: &Path, cache_dir: &Path, expected_md5: Option<&str>) -> Result<PathBuf> {
    let bytes = fs::read(archive)?;
    let digest = md5_hex(&bytes);
    let expected = expected_md5.unwrap_or(CIFAR10_ARCHIVE_MD5);
    if digest != expected {
        return Err(Error::Integrity(format!(
            "archive md5 {digest} does not match expected {expected}"
        )));
    }
    extract_archive(&bytes, cache_dir)?;
    Ok(cache_dir.join(BATCHES_DIR))
}

fn extract_archive(bytes: &[u8], cache_dir: &Path) -> Result<()> {
    fs::create_dir_all(cache_dir)?;
    let gz = flate2::read::GzDecoder::new(bytes);
    let mut tar = tar::Archive::new(gz);
    for entry in tar.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        // Only take the expected .bin payload; ignore metadata files.
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
            continue;
        };
        if name.ends_with(".bin") {
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf)?;
            let dir = cache_dir.join(BATCHES_DIR);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(name), buf)?;
        }
    }
    Ok(())
}

/// Build a CIFAR-10-format `.tar.gz` archive from raw batch-file contents.
/// Used by `fetch-data` tests and for constructing small fixture archives.
pub fn build_archive(files: &[(&str, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut tar_bytes = Vec::new();
    {
        let mut builder = tar::Builder::new(&mut tar_bytes);
        for (name, content) in files {
            let mut header = tar::Header::new_gnu();
            header.set_size(content.len() as u64);
            header.set_mode(0o644);
            header.set_cksum();
            builder.append_data(&mut header, format!("{BATCHES_DIR}/{name}"), content.as_slice())?;
        }
        builder.finish()?;
    }
    let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    std::io::Write::write_all(&mut gz, &tar_bytes)?;
    Ok(gz.finish()?)
}

/// Load the train and test splits from `cache_dir`.
///
/// Resolution order: an already-extracted `cifar-10-batches-bin/` directory,
/// then `cifar-10-binary.tar.gz` (md5-verified, then extracted). With
/// neither present this returns a fetch error telling the caller to run
/// `fetch-data`.
pub fn load_cifar10(cache_dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = cache_dir.join(BATCHES_DIR);
    if !dir.is_dir() {
        let archive = cache_dir.join("cifar-10-binary.tar.gz");
        if archive.is_file() {
            ingest_archive(&archive, cache_dir, None)?;
        } else {
            return Err(Error::Fetch(format!(
                "CIFAR-10 not found under {} (expected {BATCHES_DIR}/ or cifar-10-binary.tar.gz); run `jscc fetch-data` or place the archive there",
                cache_dir.display()
            )));
        }
    }
    let mut train_pixels = Vec::with_capacity(5 * RECORDS_PER_FILE * IMG_DIM);
    for file in TRAIN_FILES {
        let bytes = fs::read(dir.join(file))?;
        train_pixels.extend(parse_batch_file(&bytes)?);
    }
    let test_pixels = parse_batch_file(&fs::read(dir.join(TEST_FILE))?)?;
    Ok((Dataset::from_pixels(train_pixels)?, Dataset::from_pixels(test_pixels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_batch(fill: u8) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(FILE_LEN);
        for r in 0..RECORDS_PER_FILE {
            bytes.push((r % 10) as u8);
            bytes.extend(std::iter::repeat(fill).take(IMG_DIM));
        }
        bytes
    }

    #[test]
    fn parse_rejects_truncated_file() {
        assert!(matches!(parse_batch_file(&[0u8; 100]), Err(Error::Integrity(_))));
    }

    #[test]
    fn parse_rejects_bad_label() {
        let mut bytes = fake_batch(0);
        bytes[0] = 17;
        assert!(matches!(parse_batch_file(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn parse_normalizes_pixels() {
        let pixels = parse_batch_file(&fake_batch(255)).unwrap();
        assert_eq!(pixels.len(), RECORDS_PER_FILE * IMG_DIM);
        assert!(pixels.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn archive_roundtrip_with_checksum() {
        let tmp = tempfile::tempdir().unwrap();
        let files: Vec<(&str, Vec<u8>)> = TRAIN_FILES
            .iter()
            .map(|n| (*n, fake_batch(7)))
            .chain(std::iter::once((TEST_FILE, fake_batch(9))))
            .collect();
        let archive_bytes = build_archive(&files).unwrap();
        let md5 = md5_hex(&archive_bytes);
        let archive_path = tmp.path().join("cifar-10-binary.tar.gz");
        fs::write(&archive_path, &archive_bytes).unwrap();

        // Wrong checksum is rejected.
        let err = ingest_archive(&archive_path, tmp.path(), Some("0000")).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));

        // Correct checksum extracts and loads.
        ingest_archive(&archive_path, tmp.path(), Some(&md5)).unwrap();
        let (train, test) = load_cifar10(tmp.path()).unwrap();
        assert_eq!(train.len(), 50_000);
        assert_eq!(test.len(), 10_000);
        assert!((train.image(0)[0] - 7.0 / 255.0).abs() < 1e-7);
        assert!((test.image(0)[0] - 9.0 / 255.0).abs() < 1e-7);

        // Re-load from the extracted cache is idempotent.
        let (train2, _) = load_cifar10(tmp.path()).unwrap();
        assert_eq!(train.image(123), train2.image(123));
    }

    #[test]
    fn missing_cache_is_a_fetch_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10(tmp.path()), Err(Error::Fetch(_))));
    }
}
