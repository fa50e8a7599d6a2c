//! The five training regimes: natural SGD, Tikhonov (L2), input noise,
//! TRADES and DP-SGD.
//!
//! Every run draws from fixed named streams of its seed (`init`, `batch`,
//! `noise`, `attack`, `dp-noise`), so a regime whose noise parameter is zero
//! follows the natural trajectory exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::attacks::{kl_pgd_batch_with_reference, AttackConfig};
use crate::data::{batches, Dataset};
use crate::error::{input_err, shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::metrics::evaluate;
use crate::nn::{
    backward, backward_from_output_delta, ce_output_delta, clipped_gradient_sum, floored_ln, kl_rows,
    loss_cross_entropy, per_example_gradients, sgd_step, Gradients, Network,
};
use crate::privacy::{account_gaussian, PrivacySpend, DEFAULT_ORDERS};
use crate::rng::StreamRng;

/// Tolerance on clipped norms in audit mode.
pub const CLIP_AUDIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// `x + n`
    Additive,
    /// `x ⊙ (1 + n)`
    Multiplicative,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Self::Additive),
            "multiplicative" => Ok(Self::Multiplicative),
            other => Err(input_err!("unknown noise kind {other:?} (expected additive or multiplicative)")),
        }
    }
}

impl core::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Additive => "additive",
            Self::Multiplicative => "multiplicative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub clip_norm: f64,
    /// Noise multiplier; the noise sd is `noise_multiplier · clip_norm`.
    pub noise_multiplier: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    Natural,
    Tikhonov { lambda: f64 },
    InputNoise { kind: NoiseKind, sigma: f64 },
    Trades { attack: AttackConfig, beta: f64 },
    DpSgd(DpConfig),
}

impl Regime {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Natural => "natural",
            Self::Tikhonov { .. } => "tikhonov",
            Self::InputNoise { .. } => "input_noise",
            Self::Trades { .. } => "trades",
            Self::DpSgd(_) => "dpsgd",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Natural => Ok(()),
            Self::Tikhonov { lambda } => {
                if !(*lambda >= 0.0) || !lambda.is_finite() {
                    return Err(input_err!("tikhonov lambda must be finite and non-negative, got {lambda}"));
                }
                Ok(())
            }
            Self::InputNoise { sigma, .. } => {
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(input_err!("input noise sd must be finite and non-negative, got {sigma}"));
                }
                Ok(())
            }
            Self::Trades { attack, beta } => {
                attack.validate()?;
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(input_err!("trades beta must be positive, got {beta}"));
                }
                Ok(())
            }
            Self::DpSgd(dp) => {
                if !(dp.clip_norm > 0.0) || !dp.clip_norm.is_finite() {
                    return Err(input_err!("clip norm must be positive, got {}", dp.clip_norm));
                }
                if !(dp.noise_multiplier >= 0.0) || !dp.noise_multiplier.is_finite() {
                    return Err(input_err!("noise multiplier must be non-negative, got {}", dp.noise_multiplier));
                }
                if !(dp.delta > 0.0 && dp.delta < 1.0) {
                    return Err(input_err!("dp delta must lie in (0, 1), got {}", dp.delta));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub regime: Regime,
    /// DP-SGD only: materialize per-example gradients and check every
    /// clipped norm against the clip bound.
    pub audit: bool,
}

impl TrainConfig {
    pub fn new(hidden: Vec<usize>, regime: Regime) -> Self {
        Self { hidden, epochs: 20, batch_size: 128, lr: 0.1, seed: 0, regime, audit: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(input_err!("hidden layer widths must be positive"));
        }
        if self.epochs == 0 {
            return Err(input_err!("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(input_err!("batch size must be at least 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(input_err!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        self.regime.validate()
    }

    pub fn widths(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(num_classes);
        w
    }
}

/// Batch-averaged TRADES objective terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradesTerms {
    pub ce: f64,
    pub kl: f64,
    /// `ce + β · kl`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean cross-entropy on the clean training set after the epoch.
    pub train_loss: f64,
    pub test_loss: f64,
    /// DP-SGD runs only: spend accounted after this epoch.
    pub privacy: Option<PrivacySpend>,
    pub trades: Option<TradesTerms>,
}

impl EpochStats {
    pub fn gen_err(&self) -> f64 {
        self.train_acc - self.test_acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub regime: String,
    pub epochs: Vec<EpochStats>,
    pub network: Network,
}

impl TrainingRecord {
    pub fn last(&self) -> &EpochStats {
        self.epochs.last().expect("a record holds at least one epoch")
    }

    pub fn gen_err(&self) -> f64 {
        self.last().gen_err()
    }

    pub fn privacy(&self) -> Option<&PrivacySpend> {
        self.last().privacy.as_ref()
    }
}

/// Reported after every parameter update.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub epoch: usize,
    /// Update index within the run.
    pub step: usize,
    pub network: &'a Network,
    /// DP-SGD only: per-example gradient norms after clipping.
    pub clipped_norms: Option<&'a [f64]>,
}

struct Streams {
    batch: StreamRng,
    noise: StreamRng,
    attack: StreamRng,
    dp: StreamRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            batch: StreamRng::new(seed, "batch"),
            noise: StreamRng::new(seed, "noise"),
            attack: StreamRng::new(seed, "attack"),
            dp: StreamRng::new(seed, "dp-noise"),
        }
    }
}

pub fn train(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainingRecord> {
    train_observed(cfg, train, test, &mut |_| {})
}

/// As [`train`], calling `observer` after every update.
pub fn train_observed(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<TrainingRecord> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(input_err!("training and test sets must be non-empty"));
    }
    if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
        return Err(shape_err!("training and test sets disagree on input width or class count"));
    }
    let widths = cfg.widths(train.dim(), train.num_classes());
    let net = Network::init(&widths, &mut StreamRng::new(cfg.seed, "init"))?;
    run(cfg, net, train, test, observer)
}

fn run(
    cfg: &TrainConfig,
    mut net: Network,
    train: &Dataset,
    test: &Dataset,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<TrainingRecord> {
    let mut streams = Streams::new(cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let at_epoch = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("training diverged in epoch {epoch}: {m}")),
            other => other,
        };
        let order = batches(train.len(), cfg.batch_size, &mut streams.batch);
        let mut trades_acc = (0.0, 0.0, 0.0);
        for idx in &order {
            let x = train.inputs().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
            let update = batch_update(cfg, &net, x, &y, &mut streams).map_err(at_epoch)?;
            if let Some(t) = update.trades {
                let w = idx.len() as f64;
                trades_acc.0 += w * t.ce;
                trades_acc.1 += w * t.kl;
                trades_acc.2 += w * t.total;
            }
            net = sgd_step(net, &update.grads, cfg.lr).map_err(at_epoch)?;
            observer(&StepEvent {
                epoch,
                step,
                network: &net,
                clipped_norms: update.clipped_norms.as_deref(),
            });
            step += 1;
        }
        let tr = evaluate(&net, train)?;
        let te = evaluate(&net, test)?;
        let privacy = match &cfg.regime {
            Regime::DpSgd(dp) => {
                Some(account_gaussian(dp.noise_multiplier, step as u64, dp.delta, &DEFAULT_ORDERS)?)
            }
            _ => None,
        };
        let trades = matches!(cfg.regime, Regime::Trades { .. }).then(|| {
            let n = train.len() as f64;
            TradesTerms { ce: trades_acc.0 / n, kl: trades_acc.1 / n, total: trades_acc.2 / n }
        });
        epochs.push(EpochStats {
            epoch,
            train_acc: tr.accuracy,
            test_acc: te.accuracy,
            train_loss: tr.loss,
            test_loss: te.loss,
            privacy,
            trades,
        });
    }
    Ok(TrainingRecord { regime: cfg.regime.tag().into(), epochs, network: net })
}

struct BatchUpdate {
    grads: Gradients,
    trades: Option<TradesTerms>,
    clipped_norms: Option<Vec<f64>>,
}

impl BatchUpdate {
    fn plain(grads: Gradients) -> Self {
        Self { grads, trades: None, clipped_norms: None }
    }
}

fn check_probs(probs: &Matrix) -> Result<()> {
    if probs.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite network output".into()))
    }
}

fn batch_update(
    cfg: &TrainConfig,
    net: &Network,
    x: Matrix,
    y: &[usize],
    streams: &mut Streams,
) -> Result<BatchUpdate> {
    match &cfg.regime {
        Regime::Natural => natural_grads(net, &x, y).map(BatchUpdate::plain),
        Regime::Tikhonov { lambda } => {
            let mut g = natural_grads(net, &x, y)?;
            g.add_scaled_params(2.0 * lambda, net)?;
            Ok(BatchUpdate::plain(g))
        }
        Regime::InputNoise { kind, sigma } => {
            let x = noisy_inputs(x, *kind, *sigma, &mut streams.noise);
            natural_grads(net, &x, y).map(BatchUpdate::plain)
        }
        Regime::Trades { attack, beta } => trades_grads(net, &x, y, attack, *beta, &mut streams.attack),
        Regime::DpSgd(dp) => dp_grads(net, &x, y, dp, cfg.audit, &mut streams.dp),
    }
}

fn natural_grads(net: &Network, x: &Matrix, y: &[usize]) -> Result<Gradients> {
    let trace = net.forward(x)?;
    check_probs(trace.probs())?;
    backward(net, &trace, y)
}

/// Fresh per-example Gaussian input noise, clipped back into `[0, 1]`.
pub fn noisy_inputs(mut x: Matrix, kind: NoiseKind, sigma: f64, rng: &mut StreamRng) -> Matrix {
    if sigma == 0.0 {
        return x;
    }
    for v in x.as_mut_slice() {
        let n = sigma * rng.normal();
        let noisy = match kind {
            NoiseKind::Additive => *v + n,
            NoiseKind::Multiplicative => *v * (1.0 + n),
        };
        *v = noisy.clamp(0.0, 1.0);
    }
    x
}

/// TRADES gradient with `x_adv` held fixed. With `P = F(x)`, `Q = F(x_adv)`
/// and `B` the batch size, the logit gradients of `CE(P, y) + β·KL(P‖Q)` are
/// `(P − Y)/B + β·P ⊙ (ln P − ln Q − KL)/B` on the clean pass and
/// `β(Q − P)/B` on the adversarial pass.
fn trades_grads(
    net: &Network,
    x: &Matrix,
    y: &[usize],
    attack: &AttackConfig,
    beta: f64,
    rng: &mut StreamRng,
) -> Result<BatchUpdate> {
    let clean = net.forward(x)?;
    check_probs(clean.probs())?;
    let p = clean.probs();
    let x_adv = kl_pgd_batch_with_reference(net, x, p, attack, rng)?;
    let adv = net.forward(&x_adv)?;
    check_probs(adv.probs())?;
    let q = adv.probs();
    let kl = kl_rows(p, q)?;
    let b = x.rows() as f64;

    let mut d_clean = ce_output_delta(p, y, 1.0 / b)?;
    let mut d_adv = q.clone();
    for (i, &kl_i) in kl.iter().enumerate() {
        let (pr, qr) = (p.row(i), q.row(i));
        for (c, v) in d_clean.row_mut(i).iter_mut().enumerate() {
            if pr[c] > 0.0 {
                *v += beta / b * pr[c] * (floored_ln(pr[c]) - floored_ln(qr[c]) - kl_i);
            }
        }
        for (v, &pc) in d_adv.row_mut(i).iter_mut().zip(pr) {
            *v = beta / b * (*v - pc);
        }
    }
    let mut grads = backward_from_output_delta(net, &clean, d_clean)?;
    grads.add_scaled(1.0, &backward_from_output_delta(net, &adv, d_adv)?)?;

    let ce = loss_cross_entropy(p, y)?;
    let kl_mean = kl.iter().sum::<f64>() / b;
    Ok(BatchUpdate {
        grads,
        trades: Some(TradesTerms { ce, kl: kl_mean, total: ce + beta * kl_mean }),
        clipped_norms: None,
    })
}

/// `(Σ_i clip(g_i) + N(0, σ²C²I)) / L`.
fn dp_grads(
    net: &Network,
    x: &Matrix,
    y: &[usize],
    dp: &DpConfig,
    audit: bool,
    rng: &mut StreamRng,
) -> Result<BatchUpdate> {
    let (mut sum, norms) = if audit {
        audited_clipped_sum(net, x, y, dp.clip_norm)?
    } else {
        let trace = net.forward(x)?;
        check_probs(trace.probs())?;
        let clipped = clipped_gradient_sum(net, &trace, y, dp.clip_norm)?;
        let norms = clipped.clipped_norms();
        (clipped.sum, norms)
    };
    if dp.noise_multiplier > 0.0 {
        let sd = dp.noise_multiplier * dp.clip_norm;
        sum.add_each(|| sd * rng.normal());
    }
    sum.scale(1.0 / x.rows() as f64);
    Ok(BatchUpdate { grads: sum, trades: None, clipped_norms: Some(norms) })
}

// Reference path: one explicit gradient per example, each clipped and
// measured after clipping.
fn audited_clipped_sum(net: &Network, x: &Matrix, y: &[usize], clip: f64) -> Result<(Gradients, Vec<f64>)> {
    let mut sum = Gradients::zeros_like(net);
    let mut norms = Vec::with_capacity(x.rows());
    for (i, mut g) in per_example_gradients(net, x, y)?.into_iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for example {i} of the batch")));
        }
        let raw = g.l2_norm();
        if raw > clip {
            g.scale(clip / raw);
        }
        let clipped = g.l2_norm();
        if clipped > clip + CLIP_AUDIT_TOL {
            return Err(Error::Numeric(format!("clipped gradient norm {clipped} exceeds clip norm {clip}")));
        }
        norms.push(clipped);
        sum.add_scaled(1.0, &g)?;
    }
    Ok((sum, norms))
}
