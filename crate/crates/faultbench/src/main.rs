use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use faultbench::config::{parse_number, parse_seeds, ExperimentConfig, DEFAULT_MIRROR};
use faultbench::datasets::{named, DEFAULT_DATA_DIR};
use faultbench::fetch::fetch;
use faultbench::io::load_model;
use faultbench::report::{num, report_json, sweep_csvs, AccountJson, CsvDoc, ATTACK};
use faultbench::run::{run_seed, write_run_dir, RunCache};
use faultbench::studies::{run_study, write_study, Study};
use faultbench::Error;
use faultbench_core::attacks::{robust_accuracy, AttackConfig, AttackObjective};
use faultbench_core::faults::{fault_sweep, FaultKind, SweepOptions};
use faultbench_core::metrics::{accuracy, param_stddev, MetricsReport, PrivacyFields};
use faultbench_core::privacy::{account_gaussian, check_bound, PrivacySpend, DEFAULT_ORDERS};
use faultbench_core::StreamRng;

/// Fault tolerance, robustness and privacy experiments on small MLPs.
#[derive(Parser)]
#[command(name = "faultbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download the FashionMNIST archives and check their digests.
    Fetch {
        #[arg(long, default_value = DEFAULT_MIRROR)]
        mirror: String,
        #[arg(long, default_value = DEFAULT_DATA_DIR)]
        dir: PathBuf,
        /// Pinned digest, `FILE=HEX`; repeatable.
        #[arg(long = "sha256", value_name = "FILE=HEX")]
        sha256: Vec<String>,
    },
    /// Train every seed of a config; one run directory per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seeds`.
        #[arg(long)]
        seeds: Option<String>,
        /// Overrides the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy, generalization error and parameter spread of a model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// `[dataset:]train|test[@seed]`
        #[arg(long)]
        train: String,
        #[arg(long)]
        test: String,
        /// Config supplying the data settings (sizes, cache dir).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Privacy spend of the training run, to check the DP bound.
        #[arg(long, requires = "delta_dp")]
        eps_dp: Option<String>,
        #[arg(long, requires = "eps_dp")]
        delta_dp: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean and robust accuracy under an l∞ PGD attack.
    AttackEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Radius, e.g. `8/255`; a comma list evaluates several.
        #[arg(long)]
        eps: String,
        #[arg(long, default_value_t = AttackConfig::DEFAULT_STEPS)]
        steps: usize,
        /// Defaults to `2.5 · eps / steps`, capped at eps.
        #[arg(long)]
        step_size: Option<String>,
        /// `ce` or `kl`.
        #[arg(long, default_value = "ce")]
        objective: String,
        #[arg(long)]
        random_start: bool,
        #[arg(long)]
        allow_large_step: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy under random stuck-at-0 faults.
    FaultSweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// `node` or `param`.
        #[arg(long, default_value = "param")]
        kind: String,
        #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.95")]
        fractions: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leave biases out of the parameter fault sites.
        #[arg(long)]
        exclude_bias: bool,
        /// Per-trial CSV; the summary goes next to it as `<stem>_summary.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Privacy spend of the Gaussian mechanism composed over `steps`.
    Account {
        #[arg(long)]
        sigma: String,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value = "1e-5")]
        delta: String,
        #[arg(long)]
        json: bool,
    },
    /// Run a frozen study and check its trends. Exits 2 when a trend fails.
    Reproduce {
        /// table3, table5_mlp, table6, table8_mlp or fig3_mlp
        study: String,
        /// A seed count `N` (seeds 0..N) or a list `0,4,9`.
        #[arg(long)]
        seeds: Option<String>,
        /// Replaces the frozen fixture.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)
        .map_err(|source| faultbench::io::IoError::Read { path: path.to_path_buf(), source })?;
    Ok(ExperimentConfig::parse(&text)?)
}

/// Data settings for the evaluation subcommands: from `--config` if given,
/// else the FashionMNIST defaults.
fn data_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => read_config(p),
        None => Ok(ExperimentConfig::parse("regime=natural\n")?),
    }
}

fn number(flag: &str, v: &str) -> Result<f64, Error> {
    parse_number(v).map_err(|e| Error::Usage(format!("--{flag}: {e}")))
}

fn numbers(flag: &str, v: &str) -> Result<Vec<f64>, Error> {
    v.split(',').map(|s| number(flag, s)).collect()
}

fn write(path: &Path, body: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Write { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, body).map_err(|source| Error::Write { path: path.to_path_buf(), source })
}

/// `N` means seeds `0..N`; anything else is a seed list or range.
fn seeds_arg(v: &str) -> Result<Vec<u64>, Error> {
    let parsed = match v.parse::<u64>() {
        Ok(0) => Err("need at least one seed".to_string()),
        Ok(n) => Ok((0..n).collect()),
        Err(_) => parse_seeds(v),
    };
    parsed.map_err(|e| Error::Usage(format!("--seeds: {e}")))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Fetch { mirror, dir, sha256 } => {
            let mut pinned = BTreeMap::new();
            for p in &sha256 {
                let (f, h) = p
                    .split_once('=')
                    .ok_or_else(|| Error::Usage(format!("--sha256 expects FILE=HEX, got {p:?}")))?;
                pinned.insert(f.to_string(), h.to_string());
            }
            for f in fetch(&mirror, &dir, &pinned)? {
                let state = match (f.cached, f.verified) {
                    (true, _) => "cached",
                    (false, true) => "verified",
                    (false, false) => "unpinned",
                };
                println!("{}  {}  {state}", f.sha256, f.file);
            }
            println!("data in {}", dir.display());
        }
        Command::Train { config, seeds, out } => {
            let mut cfg = read_config(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = seeds_arg(&s)?;
            }
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            for &seed in &cfg.seeds {
                let r = run_seed(&cfg, seed)?;
                let dir = out.join(format!("{}-seed{seed}", cfg.regime.as_str()));
                write_run_dir(&dir, &cfg, &r)?;
                println!(
                    "{}: train_acc {} test_acc {} gen_err {}",
                    dir.display(),
                    r.report.train_acc,
                    r.report.test_acc,
                    r.report.gen_err
                );
            }
        }
        Command::Evaluate { model, train, test, config, eps_dp, delta_dp, out } => {
            let cfg = data_config(config.as_deref())?;
            let net = load_model(&model)?;
            let tr = named(&train, &cfg.data)?;
            let te = named(&test, &cfg.data)?;
            let (train_acc, test_acc) = (accuracy(&net, &tr)?, accuracy(&net, &te)?);
            let mut report = MetricsReport {
                tag: model.display().to_string(),
                train_acc,
                test_acc,
                gen_err: train_acc - test_acc,
                param_std: param_stddev(&net),
                privacy: None,
            };
            if let (Some(e), Some(d)) = (eps_dp, delta_dp) {
                let spend = PrivacySpend {
                    eps_dp: number("eps-dp", &e)?,
                    delta_dp: number("delta-dp", &d)?,
                    ..PrivacySpend::non_private(0, 0.0)
                };
                let check = check_bound(train_acc, test_acc, &spend)?;
                report.privacy = Some(PrivacyFields {
                    eps_dp: spend.eps_dp,
                    delta_dp: spend.delta_dp,
                    bound: check.rhs,
                    bound_holds: check.holds(),
                });
            }
            let body = report_json(&report)?;
            write(&out, &body)?;
            print!("{body}");
        }
        Command::AttackEval {
            model,
            data,
            config,
            eps,
            steps,
            step_size,
            objective,
            random_start,
            allow_large_step,
            seed,
            out,
        } => {
            let cfg = data_config(config.as_deref())?;
            let net = load_model(&model)?;
            let d = named(&data, &cfg.data)?;
            let objective: AttackObjective = objective.parse()?;
            let clean = accuracy(&net, &d)?;
            let mut doc = CsvDoc::new(&ATTACK);
            for (i, e) in numbers("eps", &eps)?.into_iter().enumerate() {
                let mut a = AttackConfig::new(e).with_steps(steps).with_objective(objective);
                if let Some(s) = &step_size {
                    a.step_size = number("step-size", s)?;
                }
                a.random_start = random_start;
                a.allow_large_step = allow_large_step;
                let robust = robust_accuracy(&net, &d, &a, &mut StreamRng::with_index(seed, "attack", i as u64))?;
                println!("eps {e}: clean {clean} robust {robust}");
                doc.row([num(e), steps.to_string(), num(a.step_size), num(clean), num(robust)]);
            }
            write(&out, &doc.finish())?;
        }
        Command::FaultSweep { model, data, config, kind, fractions, trials, seed, exclude_bias, out } => {
            let cfg = data_config(config.as_deref())?;
            let net = load_model(&model)?;
            let d = named(&data, &cfg.data)?;
            let kind: FaultKind = kind.parse()?;
            let opts = SweepOptions { trials, seed, include_bias: !exclude_bias };
            let sweep = fault_sweep(&net, &d, kind, &numbers("fractions", &fractions)?, opts)?;
            let (trials_csv, summary_csv) = sweep_csvs(&sweep);
            write(&out, &trials_csv)?;
            let stem = out.file_stem().map_or("sweep".into(), |s| s.to_string_lossy().into_owned());
            write(&out.with_file_name(format!("{stem}_summary.csv")), &summary_csv)?;
            print!("{summary_csv}");
        }
        Command::Account { sigma, steps, delta, json } => {
            let sigma = number("sigma", &sigma)?;
            let delta = number("delta", &delta)?;
            let s = account_gaussian(sigma, steps, delta, &DEFAULT_ORDERS)?;
            if json {
                let body = AccountJson {
                    eps: s.eps_dp,
                    delta: s.delta_dp,
                    alpha_star: s.alpha_star,
                    bound: s.generalization_bound(),
                    steps: s.steps,
                    sigma: s.sigma,
                    subsampling_amplification: s.subsampling_amplification,
                };
                println!("{}", serde_json::to_string_pretty(&body)?);
            } else {
                println!("eps        {}", s.eps_dp);
                println!("delta      {}", s.delta_dp);
                println!("alpha_star {}", s.alpha_star);
                println!("bound      {}", s.generalization_bound());
                println!("(no subsampling amplification)");
            }
        }
        Command::Reproduce { study, seeds, config, out } => {
            let study: Study = study.parse()?;
            let mut cfg = match config {
                Some(p) => read_config(&p)?,
                None => study.config()?,
            };
            if let Some(s) = seeds {
                cfg.seeds = seeds_arg(&s)?;
            }
            let out = out.unwrap_or_else(|| cfg.out_dir.join(study.name()));
            let report = run_study(study, &cfg, &RunCache::new())?;
            write_study(&out, &report)?;
            print!("{}", report.summary_csv);
            print!("{}", report.verdict_text());
            if !report.passed() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // exit code 2 is reserved for failed trends
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
