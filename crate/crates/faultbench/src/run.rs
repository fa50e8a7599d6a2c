//! Training runs, the per-process run cache and the worker pool.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use faultbench_core::metrics::{MetricsReport, PrivacyFields};
use faultbench_core::privacy::check_bound;
use faultbench_core::training::{train, TrainingRecord};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::datasets::prepare;
use crate::io::save_model;
use crate::report::{record_csv, report_json};
use crate::Error;

pub const THREADS_ENV: &str = "FAULTBENCH_THREADS";

/// Worker count from `FAULTBENCH_THREADS`, else the available parallelism.
pub fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on the worker pool; results keep input order.
pub fn map_ordered<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads()).build().expect("building worker pool");
    pool.install(|| items.into_par_iter().map(f).collect())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub record: TrainingRecord,
    pub report: MetricsReport,
}

/// Trains one seed of `cfg` and measures the final model.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, Error> {
    let (tr, te) = prepare(&cfg.data, seed)?;
    let record = train(&cfg.train_config(seed), &tr, &te)?;
    let last = record.last();
    let mut report = MetricsReport {
        tag: format!("{}-seed{seed}", cfg.regime.as_str()),
        train_acc: last.train_acc,
        test_acc: last.test_acc,
        gen_err: last.train_acc - last.test_acc,
        param_std: faultbench_core::metrics::param_dispersion(&record.network, cfg.dispersion),
        privacy: None,
    };
    if let Some(spend) = record.privacy() {
        if spend.is_private() {
            let check = check_bound(last.train_acc, last.test_acc, spend)?;
            report.privacy = Some(PrivacyFields {
                eps_dp: spend.eps_dp,
                delta_dp: spend.delta_dp,
                bound: check.rhs,
                bound_holds: check.holds(),
            });
        }
    }
    Ok(RunOutput { seed, record, report })
}

/// Writes `config.resolved`, `record.csv`, `model.fbn1` and `report.json`.
pub fn write_run_dir(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::Write { path: dir.to_path_buf(), source: e };
    fs::create_dir_all(dir).map_err(io)?;
    let mut single = cfg.clone();
    single.seeds = vec![out.seed];
    fs::write(dir.join("config.resolved"), single.resolved()).map_err(io)?;
    fs::write(dir.join("record.csv"), record_csv(&out.record)).map_err(io)?;
    fs::write(dir.join("report.json"), report_json(&out.report)?).map_err(io)?;
    save_model(&dir.join("model.fbn1"), &out.record.network)?;
    Ok(())
}

/// Identity of a run: everything that influences training, nothing else.
pub fn run_key(cfg: &ExperimentConfig, seed: u64) -> String {
    let d = &cfg.data;
    format!(
        "{:?}|{}|{}|{:?}|{}|{}|{:?}",
        cfg.train_config(seed),
        d.name.as_str(),
        d.train_size,
        d.test_size,
        d.noise,
        d.factor,
        cfg.dispersion
    )
}

type Slot = Arc<OnceLock<Result<Arc<RunOutput>, String>>>;

/// Memoizes runs by [`run_key`], so studies sharing a cell train it once.
#[derive(Default)]
pub struct RunCache {
    slots: Mutex<HashMap<String, Slot>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Arc<RunOutput>, Error> {
        let slot = {
            let mut slots = self.slots.lock().expect("run cache poisoned");
            slots.entry(run_key(cfg, seed)).or_default().clone()
        };
        slot.get_or_init(|| {
            log::info!("training {} seed {seed}", cfg.regime.as_str());
            run_seed(cfg, seed).map(Arc::new).map_err(|e| e.to_string())
        })
        .clone()
        .map_err(Error::Run)
    }

    /// Runs every `(cfg, seed)` job on the worker pool, in order.
    pub fn get_all(&self, jobs: Vec<(ExperimentConfig, u64)>) -> Result<Vec<Arc<RunOutput>>, Error> {
        map_ordered(jobs, |(cfg, seed)| self.get(&cfg, seed)).into_iter().collect()
    }
}
