//! FashionMNIST download with SHA-256 verification.
//!
//! `http(s)://` mirrors are fetched over the network; `file://` mirrors are
//! copied from disk, which is what the offline tests use.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FILES: [&str; 4] = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
];

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("{url}: {message}")]
    Download { url: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: sha256 {actual} does not match pinned {expected}")]
    Digest { file: String, expected: String, actual: String },
    #[error("unsupported mirror scheme in {0:?} (expected http, https or file)")]
    Scheme(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub file: String,
    pub sha256: String,
    /// Whether the digest was checked against a pinned value.
    pub verified: bool,
    /// The file was already present with the pinned digest.
    pub cached: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn join_url(mirror: &str, file: &str) -> String {
    if mirror.ends_with('/') {
        format!("{mirror}{file}")
    } else {
        format!("{mirror}/{file}")
    }
}

fn download(url: &str) -> Result<Vec<u8>, FetchError> {
    if let Some(path) = url.strip_prefix("file://") {
        return fs::read(path).map_err(|source| FetchError::Io { path: path.into(), source });
    }
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Err(FetchError::Scheme(url.into()));
    }
    let fail = |message: String| FetchError::Download { url: url.into(), message };
    let resp = ureq::get(url).call().map_err(|e| fail(e.to_string()))?;
    let mut buf = Vec::new();
    resp.into_reader().read_to_end(&mut buf).map_err(|e| fail(e.to_string()))?;
    Ok(buf)
}

/// Fetches the four archives into `dir`. Files already present with a
/// matching pinned digest are kept. Unpinned downloads are accepted and
/// reported with their computed digest so they can be pinned.
pub fn fetch(mirror: &str, dir: &Path, pinned: &BTreeMap<String, String>) -> Result<Vec<Fetched>, FetchError> {
    fs::create_dir_all(dir).map_err(|source| FetchError::Io { path: dir.into(), source })?;
    let mut out = Vec::new();
    for file in FILES {
        let target = dir.join(file);
        let expected = pinned.get(file).map(|s| s.to_ascii_lowercase());
        if let (Some(exp), Ok(existing)) = (&expected, fs::read(&target)) {
            if &sha256_hex(&existing) == exp {
                out.push(Fetched { file: file.into(), sha256: exp.clone(), verified: true, cached: true });
                continue;
            }
        }
        let bytes = download(&join_url(mirror, file))?;
        let actual = sha256_hex(&bytes);
        if let Some(exp) = &expected {
            if &actual != exp {
                return Err(FetchError::Digest { file: file.into(), expected: exp.clone(), actual });
            }
        } else {
            log::warn!("{file}: no pinned sha256; downloaded digest is {actual}");
        }
        let tmp = dir.join(format!(".{file}.part"));
        fs::write(&tmp, &bytes).map_err(|source| FetchError::Io { path: tmp.clone(), source })?;
        fs::rename(&tmp, &target).map_err(|source| FetchError::Io { path: target.clone(), source })?;
        out.push(Fetched { file: file.into(), sha256: actual, verified: expected.is_some(), cached: false });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn url_joining() {
        assert_eq!(join_url("https://m/x", "a.gz"), "https://m/x/a.gz");
        assert_eq!(join_url("https://m/x/", "a.gz"), "https://m/x/a.gz");
        assert!(matches!(download("ftp://m/a.gz"), Err(FetchError::Scheme(_))));
    }
}
