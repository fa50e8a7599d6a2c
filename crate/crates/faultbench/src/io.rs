//! File access: IDX datasets (raw or gzip) and FBN1 models.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use faultbench_core::data::{dataset_from_idx, Dataset, IdxPart};
use faultbench_core::nn::{decode_fbn1, encode_fbn1};
use faultbench_core::Network;
use flate2::read::GzDecoder;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

fn read_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Read { path: path.to_path_buf(), source }
}

/// File contents, transparently gunzipped when the gzip magic is present.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IoError> {
    let bytes = fs::read(path).map_err(read_err(path))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out).map_err(read_err(path))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Loads an image/label IDX pair; format errors name the offending file.
pub fn load_idx(images: &Path, labels: &Path, name: &str) -> Result<Dataset, IoError> {
    let img = read_maybe_gz(images)?;
    let lab = read_maybe_gz(labels)?;
    dataset_from_idx(&img, &lab, name).map_err(|e| {
        let path = match e.part {
            IdxPart::Images => images,
            IdxPart::Labels => labels,
        };
        IoError::Format { path: path.to_path_buf(), message: e.error.to_string() }
    })
}

pub fn save_model(path: &Path, net: &Network) -> Result<(), IoError> {
    fs::write(path, encode_fbn1(net)).map_err(read_err(path))
}

pub fn load_model(path: &Path) -> Result<Network, IoError> {
    let bytes = fs::read(path).map_err(read_err(path))?;
    decode_fbn1(&bytes).map_err(|e| IoError::Format { path: path.to_path_buf(), message: e.to_string() })
}
