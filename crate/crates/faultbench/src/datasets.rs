//! Dataset resolution: data directory lookup, cached FashionMNIST loading,
//! per-seed subsets and named datasets for the evaluation subcommands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use faultbench_core::data::{subset, two_circles, Dataset};
use faultbench_core::StreamRng;

use crate::config::{DataName, DataSpec};
use crate::fetch::FILES;
use crate::io::load_idx;
use crate::Error;

pub const DATA_DIR_ENV: &str = "FAULTBENCH_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/fashion-mnist";

/// `data.cache_dir`, then `FAULTBENCH_DATA_DIR`, then `data/fashion-mnist`.
pub fn data_dir(spec: &DataSpec) -> PathBuf {
    spec.cache_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

type Split = Arc<(Dataset, Dataset)>;

fn cache() -> &'static Mutex<HashMap<PathBuf, Split>> {
    static CACHE: OnceLock<Mutex<HashMap<PathBuf, Split>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// The full train and test splits from `dir`, loaded once per process.
pub fn fashion_mnist(dir: &Path) -> Result<Split, Error> {
    let mut guard = cache().lock().expect("dataset cache poisoned");
    if let Some(s) = guard.get(dir) {
        return Ok(s.clone());
    }
    let missing: Vec<&str> = FILES.iter().copied().filter(|f| !dir.join(f).exists()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingData(format!(
            "FashionMNIST files {missing:?} not found in {}; run `faultbench fetch --dir {}` or point {DATA_DIR_ENV} at a directory holding them",
            dir.display(),
            dir.display()
        )));
    }
    let train = load_idx(&dir.join(FILES[0]), &dir.join(FILES[1]), "fashion_mnist-train")?;
    let test = load_idx(&dir.join(FILES[2]), &dir.join(FILES[3]), "fashion_mnist-test")?;
    let split = Arc::new((train, test));
    guard.insert(dir.to_path_buf(), split.clone());
    Ok(split)
}

/// Training and test sets for one seed.
///
/// Two-circles data is regenerated from the seed (`data` stream) and split.
/// FashionMNIST training data is a stratified subset drawn from the `subset`
/// stream; the test set is the full split unless `test_size` is set.
pub fn prepare(spec: &DataSpec, seed: u64) -> Result<(Dataset, Dataset), Error> {
    match spec.name {
        DataName::TwoCircles => {
            let test = spec.test_size.unwrap_or(200);
            let mut rng = StreamRng::new(seed, "data");
            let all = two_circles(spec.train_size + test, spec.noise, spec.factor, &mut rng)?;
            let (tr, te) = all.split(spec.train_size, &mut rng)?;
            Ok((tr.with_name("two_circles-train"), te.with_name("two_circles-test")))
        }
        DataName::FashionMnist => {
            let full = fashion_mnist(&data_dir(spec))?;
            let (train, test) = (&full.0, &full.1);
            let tr = if spec.train_size == train.len() {
                train.clone()
            } else {
                subset(train, spec.train_size, &mut StreamRng::new(seed, "subset"))?
            };
            let te = match spec.test_size {
                Some(n) if n != test.len() => subset(test, n, &mut StreamRng::new(seed, "subset-test"))?,
                _ => test.clone(),
            };
            Ok((tr, te))
        }
    }
}

/// Resolves `[dataset:]part[@seed]`, e.g. `fashion_mnist:test`,
/// `two_circles:train@3` or `test`. The dataset defaults to the one in
/// `spec`; the seed defaults to 0 and selects the subset or draw.
pub fn named(name: &str, spec: &DataSpec) -> Result<Dataset, Error> {
    let bad = || Error::Usage(format!("bad dataset name {name:?} (expected [two_circles:|fashion_mnist:]train|test[@seed])"));
    let (data, rest) = match name.split_once(':') {
        Some((d, r)) => (Some(d), r),
        None => (None, name),
    };
    let (part, seed) = match rest.split_once('@') {
        Some((p, s)) => (p, s.parse::<u64>().map_err(|_| bad())?),
        None => (rest, 0),
    };
    let mut spec = spec.clone();
    if let Some(d) = data {
        let parsed = match d {
            "two_circles" => DataName::TwoCircles,
            "fashion_mnist" => DataName::FashionMnist,
            _ => return Err(bad()),
        };
        if parsed != spec.name {
            spec.name = parsed;
            let (tr, te) = match parsed {
                DataName::TwoCircles => (300, Some(200)),
                DataName::FashionMnist => (10_000, None),
            };
            spec.train_size = tr;
            spec.test_size = te;
        }
    }
    let (tr, te) = prepare(&spec, seed)?;
    match part {
        "train" => Ok(tr),
        "test" => Ok(te),
        _ => Err(bad()),
    }
}
