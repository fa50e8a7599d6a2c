//! The `reproduce` studies.
//!
//! Each study expands a frozen base config into cells (one config per grid
//! point), trains every `(cell, seed)` through the shared [`RunCache`],
//! aggregates medians over seeds and evaluates its directional trend checks.
//! Study grids and verdict thresholds come from `study.*` keys, so the
//! fixture files under `studies/` hold every setting a study uses.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use faultbench_core::attacks::AttackConfig;
use faultbench_core::faults::{fault_sweep, FaultSweep, SweepOptions};
use faultbench_core::training::NoiseKind;

use crate::config::{ExperimentConfig, RegimeTag};
use crate::datasets::prepare;
use crate::report::{num, CsvDoc, Schema};
use crate::run::{map_ordered, write_run_dir, RunCache, RunOutput};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Table3,
    Table5Mlp,
    Table6,
    Table8Mlp,
    Fig3Mlp,
}

impl Study {
    pub const ALL: [Study; 5] = [Self::Table3, Self::Table5Mlp, Self::Table6, Self::Table8Mlp, Self::Fig3Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Table3 => "table3",
            Self::Table5Mlp => "table5_mlp",
            Self::Table6 => "table6",
            Self::Table8Mlp => "table8_mlp",
            Self::Fig3Mlp => "fig3_mlp",
        }
    }

    /// The frozen fixture text for this study.
    pub fn frozen_config(self) -> &'static str {
        match self {
            Self::Table3 => include_str!("../studies/table3.cfg"),
            Self::Table5Mlp => include_str!("../studies/table5_mlp.cfg"),
            Self::Table6 => include_str!("../studies/table6.cfg"),
            Self::Table8Mlp => include_str!("../studies/table8_mlp.cfg"),
            Self::Fig3Mlp => include_str!("../studies/fig3_mlp.cfg"),
        }
    }

    pub fn config(self) -> Result<ExperimentConfig, Error> {
        Ok(ExperimentConfig::parse(self.frozen_config())?)
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|s| s.name()).collect();
            Error::Usage(format!("unknown study {s:?} (expected one of {})", names.join(", ")))
        })
    }
}

/// One directional check.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("trend_verdict {} {} ({})", self.name, if self.pass { "pass" } else { "fail" }, self.detail)
    }
}

/// A trained `(cell, seed)` pair.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: String,
    pub config: ExperimentConfig,
    pub run: Arc<RunOutput>,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub study: Study,
    pub config: ExperimentConfig,
    /// Per-cell medians, ending in a `# trend_verdict=` line.
    pub summary_csv: String,
    /// One row per `(cell, seed)`.
    pub runs_csv: String,
    /// Further `(file name, contents)` pairs, e.g. per-trial fault accuracies.
    pub extra: Vec<(String, String)>,
    pub verdicts: Vec<Verdict>,
    pub runs: Vec<CellRun>,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict_text(&self) -> String {
        let mut s: String = self.verdicts.iter().map(|v| v.line() + "\n").collect();
        s.push_str(&format!("trend_verdict {} {}\n", self.study, if self.passed() { "pass" } else { "fail" }));
        s
    }
}

const RUNS: Schema = Schema {
    name: "study_runs",
    version: 1,
    header: &[
        "cell", "seed", "train_acc", "test_acc", "gen_err", "param_std", "eps_dp", "bound", "bound_holds",
    ],
};

const TABLE3: Schema =
    Schema { name: "table3", version: 1, header: &["noise", "sigma", "train_acc", "test_acc", "gen_err"] };

const TABLE5: Schema = Schema {
    name: "table5_mlp",
    version: 1,
    header: &["regime", "train_acc", "test_acc", "gen_err", "param_std"],
};

const TABLE6: Schema =
    Schema { name: "table6", version: 1, header: &["eps_adv", "train_acc", "test_acc", "gen_err", "param_std"] };

const TABLE8: Schema = Schema {
    name: "table8_mlp",
    version: 1,
    header: &["sigma", "eps_dp", "train_acc", "test_acc", "gen_err", "bound", "bound_holds"],
};

const FIG3: Schema =
    Schema { name: "fig3_mlp", version: 1, header: &["regime", "fraction", "mean_acc", "sd", "drop"] };

const FIG3_TRIALS: Schema = Schema {
    name: "fig3_mlp_trials",
    version: 1,
    header: &["regime", "seed", "fraction", "trial", "accuracy"],
};

/// Median; the mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Cell {
    name: String,
    config: ExperimentConfig,
}

struct Trained {
    cell: Cell,
    runs: Vec<Arc<RunOutput>>,
}

impl Trained {
    fn med(&self, f: impl Fn(&RunOutput) -> f64) -> f64 {
        median(&self.runs.iter().map(|r| f(r)).collect::<Vec<_>>())
    }

    fn gen_err(&self) -> f64 {
        self.med(|r| r.report.gen_err)
    }
}

fn train_cells(cells: Vec<Cell>, seeds: &[u64], cache: &RunCache) -> Result<Vec<Trained>, Error> {
    let jobs = cells.iter().flat_map(|c| seeds.iter().map(|&s| (c.config.clone(), s))).collect();
    let mut runs = cache.get_all(jobs)?.into_iter();
    Ok(cells.into_iter().map(|cell| Trained { cell, runs: runs.by_ref().take(seeds.len()).collect() }).collect())
}

fn numbers(cfg: &ExperimentConfig, key: &str) -> Result<Vec<f64>, Error> {
    cfg.study_numbers(key)?
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Error::Usage(format!("study config needs study.{key}")))
}

fn number(cfg: &ExperimentConfig, key: &str) -> Result<f64, Error> {
    match numbers(cfg, key)?.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Usage(format!("study.{key} must be a single number"))),
    }
}

fn with_regime(base: &ExperimentConfig, regime: RegimeTag) -> ExperimentConfig {
    let mut c = base.clone();
    c.regime = regime;
    c
}

fn find<'a>(cells: &'a [Trained], name: &str) -> Result<&'a Trained, Error> {
    cells
        .iter()
        .find(|t| t.cell.name == name)
        .ok_or_else(|| Error::Usage(format!("study grid has no cell {name:?}")))
}

fn runs_csv(cells: &[Trained]) -> String {
    let mut doc = CsvDoc::new(&RUNS);
    for t in cells {
        for r in &t.runs {
            let p = r.report.privacy.as_ref();
            doc.row([
                t.cell.name.clone(),
                r.seed.to_string(),
                num(r.report.train_acc),
                num(r.report.test_acc),
                num(r.report.gen_err),
                num(r.report.param_std),
                p.map_or(String::new(), |p| num(p.eps_dp)),
                p.map_or(String::new(), |p| num(p.bound)),
                p.map_or(String::new(), |p| p.bound_holds.to_string()),
            ]);
        }
    }
    doc.finish()
}

fn finish(
    study: Study,
    config: &ExperimentConfig,
    summary: CsvDoc,
    cells: Vec<Trained>,
    verdicts: Vec<Verdict>,
    extra: Vec<(String, String)>,
) -> StudyReport {
    let pass = verdicts.iter().all(|v| v.pass);
    let mut summary_csv = summary.finish();
    summary_csv.push_str(&format!("# trend_verdict={}\n", if pass { "pass" } else { "fail" }));
    let runs_csv = runs_csv(&cells);
    let runs = cells
        .into_iter()
        .flat_map(|t| {
            let (name, config) = (t.cell.name, t.cell.config);
            t.runs.into_iter().map(move |run| CellRun { cell: name.clone(), config: config.clone(), run })
        })
        .collect();
    StudyReport { study, config: config.clone(), summary_csv, runs_csv, extra, verdicts, runs }
}

/// Runs `study` on `cfg` (normally [`Study::config`] with the seeds
/// overridden).
pub fn run_study(study: Study, cfg: &ExperimentConfig, cache: &RunCache) -> Result<StudyReport, Error> {
    match study {
        Study::Table3 => table3(cfg, cache),
        Study::Table5Mlp => table5(cfg, cache),
        Study::Table6 => table6(cfg, cache),
        Study::Table8Mlp => table8(cfg, cache),
        Study::Fig3Mlp => fig3(cfg, cache),
    }
}

fn noise_cell_name(kind: NoiseKind, sigma: f64) -> String {
    format!("{kind}-sigma{sigma}")
}

/// Input-noise grid over `study.kinds` × `study.sigmas`. Checks that small
/// additive noise does not raise the median gap while large additive noise
/// raises it and costs at least `study.min_acc_drop` test accuracy.
fn table3(cfg: &ExperimentConfig, cache: &RunCache) -> Result<StudyReport, Error> {
    let sigmas = numbers(cfg, "sigmas")?;
    let kinds: Vec<NoiseKind> = cfg
        .study_value("kinds")
        .unwrap_or("additive,multiplicative")
        .split(',')
        .map(|k| k.trim().parse())
        .collect::<Result<_, _>>()?;
    let small = number(cfg, "sigma_small")?;
    let large = number(cfg, "sigma_large")?;
    let min_drop = number(cfg, "min_acc_drop")?;

    let mut cells = Vec::new();
    for &kind in &kinds {
        for &sigma in &sigmas {
            // without noise the kind is irrelevant; both rows share one run
            let kind = if sigma == 0.0 { NoiseKind::Additive } else { kind };
            let name = noise_cell_name(kind, sigma);
            if cells.iter().any(|c: &Cell| c.name == name) {
                continue;
            }
            let mut c = with_regime(cfg, RegimeTag::InputNoise);
            c.noise_kind = kind;
            c.noise_sigma = sigma;
            cells.push(Cell { name, config: c });
        }
    }
    let trained = train_cells(cells, &cfg.seeds, cache)?;

    let mut summary = CsvDoc::new(&TABLE3);
    for &kind in &kinds {
        for &sigma in &sigmas {
            let k = if sigma == 0.0 { NoiseKind::Additive } else { kind };
            let t = find(&trained, &noise_cell_name(k, sigma))?;
            summary.row([
                kind.to_string(),
                num(sigma),
                num(t.med(|r| r.report.train_acc)),
                num(t.med(|r| r.report.test_acc)),
                num(t.gen_err()),
            ]);
        }
    }

    let clean = find(&trained, &noise_cell_name(NoiseKind::Additive, 0.0))?;
    let lo = find(&trained, &noise_cell_name(NoiseKind::Additive, small))?;
    let hi = find(&trained, &noise_cell_name(NoiseKind::Additive, large))?;
    let (g0, g_lo, g_hi) = (clean.gen_err(), lo.gen_err(), hi.gen_err());
    let (a0, a_hi) = (clean.med(|r| r.report.test_acc), hi.med(|r| r.report.test_acc));
    let verdicts = vec![
        Verdict::new("small_noise_gen_err", g_lo <= g0, format!("sigma {small}: {g_lo} <= {g0}")),
        Verdict::new("large_noise_gen_err", g_hi >= g0, format!("sigma {large}: {g_hi} >= {g0}")),
        Verdict::new(
            "large_noise_test_acc",
            a_hi <= a0 - min_drop,
            format!("sigma {large}: {a_hi} <= {a0} - {min_drop}"),
        ),
    ];
    Ok(finish(Study::Table3, cfg, summary, trained, verdicts, Vec::new()))
}

const MLP_REGIMES: [RegimeTag; 3] = [RegimeTag::Natural, RegimeTag::Tikhonov, RegimeTag::Trades];

/// Natural, Tikhonov and TRADES on one architecture. Tikhonov must have the
/// smallest median gap, and TRADES the larger parameter spread in at least
/// `study.std_min_share` of the seeds.
fn table5(cfg: &ExperimentConfig, cache: &RunCache) -> Result<StudyReport, Error> {
    let share = number(cfg, "std_min_share")?;
    let cells = MLP_REGIMES
        .iter()
        .map(|&r| Cell { name: r.as_str().into(), config: with_regime(cfg, r) })
        .collect();
    let trained = train_cells(cells, &cfg.seeds, cache)?;

    let mut summary = CsvDoc::new(&TABLE5);
    for t in &trained {
        summary.row([
            t.cell.name.clone(),
            num(t.med(|r| r.report.train_acc)),
            num(t.med(|r| r.report.test_acc)),
            num(t.gen_err()),
            num(t.med(|r| r.report.param_std)),
        ]);
    }

    let nat = find(&trained, "natural")?;
    let tik = find(&trained, "tikhonov")?;
    let trades = find(&trained, "trades")?;
    let (gn, gt, gr) = (nat.gen_err(), tik.gen_err(), trades.gen_err());
    let wins = tik.runs.iter().zip(&trades.runs).filter(|(a, b)| b.report.param_std > a.report.param_std).count();
    let n = cfg.seeds.len();
    let verdicts = vec![
        Verdict::new("tikhonov_lt_natural", gt < gn, format!("{gt} < {gn}")),
        Verdict::new("tikhonov_lt_trades", gt < gr, format!("{gt} < {gr}")),
        Verdict::new(
            "trades_std_gt_tikhonov",
            wins as f64 >= share * n as f64,
            format!("{wins} of {n} seeds, need {share} of them"),
        ),
    ];
    Ok(finish(Study::Table5Mlp, cfg, summary, trained, verdicts, Vec::new()))
}

/// TRADES over the radii in `study.eps`, each with the default step size
/// for `attack.steps`. The median gap must not decrease with the radius.
fn table6(cfg: &ExperimentConfig, cache: &RunCache) -> Result<StudyReport, Error> {
    let radii = numbers(cfg, "eps")?;
    let cells = radii
        .iter()
        .map(|&e| {
            let mut c = with_regime(cfg, RegimeTag::Trades);
            c.attack.eps = e;
            c.attack.step_size = AttackConfig::default_step_size(e, c.attack.steps);
            Cell { name: format!("trades-eps{e}"), config: c }
        })
        .collect();
    let trained = train_cells(cells, &cfg.seeds, cache)?;

    let mut summary = CsvDoc::new(&TABLE6);
    for (t, e) in trained.iter().zip(&radii) {
        summary.row([
            num(*e),
            num(t.med(|r| r.report.train_acc)),
            num(t.med(|r| r.report.test_acc)),
            num(t.gen_err()),
            num(t.med(|r| r.report.param_std)),
        ]);
    }
    let gaps: Vec<f64> = trained.iter().map(Trained::gen_err).collect();
    let verdicts = vec![Verdict::new(
        "gen_err_non_decreasing_in_eps",
        gaps.windows(2).all(|w| w[0] <= w[1]),
        format!("{gaps:?}"),
    )];
    Ok(finish(Study::Table6, cfg, summary, trained, verdicts, Vec::new()))
}

/// DP-SGD over the noise multipliers in `study.sigmas` (listed from most to
/// least noise). The accounted ε must increase strictly along the list, the
/// median gap must not decrease with ε, and at `study.bound_sigma` the spend
/// must be at most `study.bound_eps_max` with the bound holding on every
/// seed.
fn table8(cfg: &ExperimentConfig, cache: &RunCache) -> Result<StudyReport, Error> {
    let sigmas = numbers(cfg, "sigmas")?;
    let bound_sigma = number(cfg, "bound_sigma")?;
    let eps_max = number(cfg, "bound_eps_max")?;
    let cells = sigmas
        .iter()
        .map(|&s| {
            let mut c = with_regime(cfg, RegimeTag::DpSgd);
            c.dp.noise_multiplier = s;
            Cell { name: format!("dpsgd-sigma{s}"), config: c }
        })
        .collect();
    let trained = train_cells(cells, &cfg.seeds, cache)?;

    // ε depends only on σ, steps and δ, so every seed of a cell agrees
    let eps_of = |t: &Trained| t.runs[0].report.privacy.map_or(f64::INFINITY, |p| p.eps_dp);
    let holds_all = |t: &Trained| t.runs.iter().all(|r| r.report.privacy.is_some_and(|p| p.bound_holds));

    let mut summary = CsvDoc::new(&TABLE8);
    for (t, s) in trained.iter().zip(&sigmas) {
        summary.row([
            num(*s),
            num(eps_of(t)),
            num(t.med(|r| r.report.train_acc)),
            num(t.med(|r| r.report.test_acc)),
            num(t.gen_err()),
            num(t.runs[0].report.privacy.map_or(f64::INFINITY, |p| p.bound)),
            holds_all(t).to_string(),
        ]);
    }

    let eps: Vec<f64> = trained.iter().map(eps_of).collect();
    let mut by_eps: Vec<(f64, f64)> = trained.iter().map(|t| (eps_of(t), t.gen_err())).collect();
    by_eps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gaps: Vec<f64> = by_eps.iter().map(|p| p.1).collect();
    let anchor = find(&trained, &format!("dpsgd-sigma{bound_sigma}"))?;
    let anchor_eps = eps_of(anchor);
    let lhs: Vec<f64> = anchor.runs.iter().map(|r| r.report.gen_err.abs()).collect();
    let rhs = anchor.runs[0].report.privacy.map_or(f64::INFINITY, |p| p.bound);
    let verdicts = vec![
        Verdict::new("eps_increasing", eps.windows(2).all(|w| w[0] < w[1]), format!("{eps:?}")),
        Verdict::new(
            "gen_err_non_decreasing_in_eps",
            gaps.windows(2).all(|w| w[0] <= w[1]),
            format!("{gaps:?}"),
        ),
        Verdict::new(
            "dp_bound",
            anchor_eps <= eps_max && holds_all(anchor),
            format!("sigma {bound_sigma}: eps {anchor_eps} <= {eps_max}, |gap| {lhs:?} <= {rhs}"),
        ),
    ];
    Ok(finish(Study::Table8Mlp, cfg, summary, trained, verdicts, Vec::new()))
}

/// Parameter-fault sweeps of the Tikhonov and TRADES models. The drop at a
/// fraction is the model's clean test accuracy minus its mean accuracy over
/// the trials; rows report medians over seeds. The Tikhonov model must lose
/// strictly less at `study.verdict_fraction`.
fn fig3(cfg: &ExperimentConfig, cache: &RunCache) -> Result<StudyReport, Error> {
    let at = number(cfg, "verdict_fraction")?;
    if !cfg.faults.fractions.contains(&at) {
        return Err(Error::Usage(format!("faults.fractions must include study.verdict_fraction {at}")));
    }
    let regimes = [RegimeTag::Tikhonov, RegimeTag::Trades];
    let cells = regimes.iter().map(|&r| Cell { name: r.as_str().into(), config: with_regime(cfg, r) }).collect();
    let trained = train_cells(cells, &cfg.seeds, cache)?;

    let jobs: Vec<(usize, Arc<RunOutput>)> =
        trained.iter().enumerate().flat_map(|(i, t)| t.runs.iter().map(move |r| (i, r.clone()))).collect();
    let sweeps: Vec<Result<FaultSweep, Error>> = map_ordered(jobs, |(i, run)| {
        let c = &trained[i].cell.config;
        let (_, test) = prepare(&c.data, run.seed)?;
        let opts = SweepOptions { trials: c.faults.trials, seed: run.seed, include_bias: c.faults.include_bias };
        log::info!("fault sweep {} seed {}", trained[i].cell.name, run.seed);
        Ok(fault_sweep(&run.record.network, &test, c.faults.kind, &c.faults.fractions, opts)?)
    });
    let sweeps = sweeps.into_iter().collect::<Result<Vec<_>, _>>()?;
    let per_cell: Vec<&[FaultSweep]> = sweeps.chunks(cfg.seeds.len()).collect();

    let mut summary = CsvDoc::new(&FIG3);
    let mut trials = CsvDoc::new(&FIG3_TRIALS);
    let mut drop_at = Vec::new();
    for (t, sw) in trained.iter().zip(&per_cell) {
        for (fi, &fraction) in cfg.faults.fractions.iter().enumerate() {
            let rows: Vec<_> = sw.iter().map(|s| &s.rows[fi]).collect();
            let drops: Vec<f64> = rows.iter().zip(&t.runs).map(|(row, r)| r.report.test_acc - row.mean).collect();
            summary.row([
                t.cell.name.clone(),
                num(fraction),
                num(median(&rows.iter().map(|r| r.mean).collect::<Vec<_>>())),
                num(median(&rows.iter().map(|r| r.sd).collect::<Vec<_>>())),
                num(median(&drops)),
            ]);
            if fraction == at {
                drop_at.push(median(&drops));
            }
        }
        for (s, r) in sw.iter().zip(&t.runs) {
            for row in &s.rows {
                for (k, a) in row.accuracies.iter().enumerate() {
                    trials.row([t.cell.name.clone(), r.seed.to_string(), num(row.fraction), k.to_string(), num(*a)]);
                }
            }
        }
    }
    let verdicts = vec![Verdict::new(
        "tikhonov_drop_lt_trades",
        drop_at[0] < drop_at[1],
        format!("fraction {at}: {} < {}", drop_at[0], drop_at[1]),
    )];
    let extra = vec![("fig3_mlp_trials.csv".to_string(), trials.finish())];
    Ok(finish(Study::Fig3Mlp, cfg, summary, trained, verdicts, extra))
}

/// Writes `<study>.csv`, `<study>_runs.csv`, any extra files,
/// `verdict.txt`, the study's `config.resolved` and one run directory per
/// `(cell, seed)` under `runs/`.
pub fn write_study(dir: &Path, report: &StudyReport) -> Result<(), Error> {
    let put = |name: &str, body: &str| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| Error::Write { path, source })
    };
    fs::create_dir_all(dir).map_err(|source| Error::Write { path: dir.to_path_buf(), source })?;
    let name = report.study.name();
    put(&format!("{name}.csv"), &report.summary_csv)?;
    put(&format!("{name}_runs.csv"), &report.runs_csv)?;
    for (file, body) in &report.extra {
        put(file, body)?;
    }
    put("verdict.txt", &report.verdict_text())?;
    put("config.resolved", &report.config.resolved())?;
    for cr in &report.runs {
        write_run_dir(&dir.join("runs").join(&cr.cell).join(format!("seed{}", cr.run.seed)), &cr.config, &cr.run)?;
    }
    Ok(())
}
