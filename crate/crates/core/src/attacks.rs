//! l∞-bounded projected gradient attacks.
//!
//! Every iteration takes a signed gradient step on the attack objective and
//! projects back onto the intersection of the ε-ball around the clean input
//! and the `[0, 1]` input box. The search returns, per example, the best
//! iterate seen (the starting point included), so the attacked objective
//! never falls below its value at the start.

use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{input_err, shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::metrics::argmax;
use crate::nn::{
    ce_output_delta, floored_ln, input_gradients_from_output_delta, kl_reference_delta, kl_rows,
    Network,
};
use crate::rng::StreamRng;

/// Standard deviation of the Gaussian start used by [`kl_pgd`] when no
/// uniform random start is requested; at the clean point the KL gradient is
/// exactly zero.
pub const KL_START_SD: f64 = 1e-3;

/// Inputs live in this box.
pub const INPUT_BOX: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackObjective {
    CrossEntropy,
    Kl,
}

impl FromStr for AttackObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" | "cross_entropy" | "cross-entropy" => Ok(Self::CrossEntropy),
            "kl" => Ok(Self::Kl),
            other => Err(input_err!("unknown attack objective {other:?} (expected ce or kl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l∞ radius in input units.
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
    pub objective: AttackObjective,
    /// Start from a uniform draw inside the ball instead of the clean input.
    pub random_start: bool,
    /// Accept `step_size > eps` for multi-step attacks.
    pub allow_large_step: bool,
}

impl AttackConfig {
    pub const DEFAULT_STEPS: usize = 10;

    /// Cross-entropy attack with the default schedule.
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            steps: Self::DEFAULT_STEPS,
            step_size: Self::default_step_size(eps, Self::DEFAULT_STEPS),
            objective: AttackObjective::CrossEntropy,
            random_start: false,
            allow_large_step: false,
        }
    }

    /// Sets `steps` and re-derives the default step size.
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self.step_size = Self::default_step_size(self.eps, steps);
        self
    }

    pub fn with_objective(mut self, objective: AttackObjective) -> Self {
        self.objective = objective;
        self
    }

    /// `2.5 · eps / steps`, capped at `eps` for multi-step attacks.
    pub fn default_step_size(eps: f64, steps: usize) -> f64 {
        let s = 2.5 * eps / steps.max(1) as f64;
        if steps > 1 {
            s.min(eps)
        } else {
            s
        }
    }

    /// True when a multi-step attack takes steps larger than its radius.
    pub fn step_exceeds_radius(&self) -> bool {
        self.steps > 1 && self.step_size > self.eps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(input_err!("attack radius must be finite and non-negative, got {}", self.eps));
        }
        if self.steps == 0 {
            return Err(input_err!("attack needs at least one step"));
        }
        if self.eps == 0.0 {
            // the ball is a single point; step settings are irrelevant
            return Ok(());
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(input_err!("attack step size must be positive, got {}", self.step_size));
        }
        if self.step_exceeds_radius() && !self.allow_large_step {
            return Err(input_err!(
                "step size {} exceeds radius {} for a {}-step attack",
                self.step_size,
                self.eps,
                self.steps
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Target<'a> {
    Labels(&'a [usize]),
    Reference(&'a Matrix),
}

impl Target<'_> {
    fn values(&self, probs: &Matrix) -> Result<Vec<f64>> {
        match *self {
            Target::Labels(y) => Ok(y.iter().enumerate().map(|(i, &c)| -floored_ln(probs.get(i, c))).collect()),
            Target::Reference(r) => kl_rows(r, probs),
        }
    }

    fn output_delta(&self, probs: &Matrix) -> Result<Matrix> {
        match *self {
            Target::Labels(y) => ce_output_delta(probs, y, 1.0),
            Target::Reference(r) => kl_reference_delta(r, probs),
        }
    }
}

/// Adversarial batch plus, per example, whether any evaluated iterate was
/// misclassified (only tracked when labels are known).
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub adversarial: Matrix,
    pub fooled: Vec<bool>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The l∞ ball around `x` intersected with the input box. `x ± eps` can
/// round outward by an ulp, so each end is pulled in until its distance
/// from `x`, as computed in floating point, is at most `eps`.
pub fn linf_bounds(x: f64, eps: f64) -> (f64, f64) {
    let mut lo = x - eps;
    while x - lo > eps {
        lo = lo.next_up();
    }
    let mut hi = x + eps;
    while hi - x > eps {
        hi = hi.next_down();
    }
    (lo.max(INPUT_BOX.0), hi.min(INPUT_BOX.1))
}

fn project(v: &mut [f64], clean: &[f64], eps: f64) {
    for (a, &x) in v.iter_mut().zip(clean) {
        let (lo, hi) = linf_bounds(x, eps);
        *a = a.clamp(lo, hi);
    }
}

fn check_batch(net: &Network, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != net.input_dim() {
        return Err(shape_err!(
            "inputs have {} features, network expects {}",
            inputs.cols(),
            net.input_dim()
        ));
    }
    if inputs.as_slice().iter().any(|v| !(INPUT_BOX.0..=INPUT_BOX.1).contains(v)) {
        return Err(input_err!("attack inputs must lie in [0, 1]"));
    }
    Ok(())
}

fn search(
    net: &Network,
    clean: &Matrix,
    start: Matrix,
    cfg: &AttackConfig,
    target: Target<'_>,
    labels: Option<&[usize]>,
) -> Result<AttackOutcome> {
    let n = clean.rows();
    let mut fooled = alloc::vec![false; n];
    let track = |probs: &Matrix, fooled: &mut [bool]| {
        if let Some(y) = labels {
            for (i, f) in fooled.iter_mut().enumerate() {
                *f |= argmax(probs.row(i)) != y[i];
            }
        }
    };
    let mut current = start;
    let mut trace = net.forward(&current)?;
    let mut best = current.clone();
    let mut best_value = target.values(trace.probs())?;
    track(trace.probs(), &mut fooled);
    for _ in 0..cfg.steps {
        let delta = target.output_delta(trace.probs())?;
        let grad = input_gradients_from_output_delta(net, &trace, delta)?;
        for i in 0..n {
            let row = current.row_mut(i);
            for (v, g) in row.iter_mut().zip(grad.row(i)) {
                *v += cfg.step_size * sign(*g);
            }
            project(row, clean.row(i), cfg.eps);
        }
        trace = net.forward(&current)?;
        let values = target.values(trace.probs())?;
        track(trace.probs(), &mut fooled);
        for i in 0..n {
            if values[i] >= best_value[i] {
                best_value[i] = values[i];
                best.row_mut(i).copy_from_slice(current.row(i));
            }
        }
    }
    Ok(AttackOutcome { adversarial: best, fooled })
}

fn uniform_start(clean: &Matrix, eps: f64, rng: &mut StreamRng) -> Matrix {
    let mut start = clean.clone();
    for i in 0..start.rows() {
        let row = start.row_mut(i);
        row.iter_mut().for_each(|v| *v += rng.uniform_in(-eps, eps));
        project(row, clean.row(i), eps);
    }
    start
}

/// Batched l∞ PGD against `labels` (CE objective) or against the clean
/// predictions (KL objective).
pub fn pgd_linf_batch(
    net: &Network,
    inputs: &Matrix,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut StreamRng,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_batch(net, inputs)?;
    if labels.len() != inputs.rows() {
        return Err(shape_err!("{} labels for {} inputs", labels.len(), inputs.rows()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= net.num_classes()) {
        return Err(input_err!("label {bad} out of range"));
    }
    if cfg.eps == 0.0 {
        let probs = net.predict(inputs)?;
        let fooled = labels.iter().enumerate().map(|(i, &y)| argmax(probs.row(i)) != y).collect();
        return Ok(AttackOutcome { adversarial: inputs.clone(), fooled });
    }
    let start = if cfg.random_start { uniform_start(inputs, cfg.eps, rng) } else { inputs.clone() };
    match cfg.objective {
        AttackObjective::CrossEntropy => {
            search(net, inputs, start, cfg, Target::Labels(labels), Some(labels))
        }
        AttackObjective::Kl => {
            let reference = net.predict(inputs)?;
            search(net, inputs, start, cfg, Target::Reference(&reference), Some(labels))
        }
    }
}

/// Single-example l∞ PGD.
pub fn pgd_linf(
    net: &Network,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    Ok(pgd_linf_batch(net, &Matrix::row_vector(x), &[y], cfg, rng)?.adversarial.into_vec())
}

/// Batched KL attack: maximizes `KL(F(x) || F(x_adv))` with the clean
/// prediction `F(x)` held fixed.
pub fn kl_pgd_batch(
    net: &Network,
    inputs: &Matrix,
    cfg: &AttackConfig,
    rng: &mut StreamRng,
) -> Result<Matrix> {
    let reference = net.predict(inputs)?;
    kl_pgd_batch_with_reference(net, inputs, &reference, cfg, rng)
}

/// As [`kl_pgd_batch`] with precomputed clean probabilities.
pub fn kl_pgd_batch_with_reference(
    net: &Network,
    inputs: &Matrix,
    reference: &Matrix,
    cfg: &AttackConfig,
    rng: &mut StreamRng,
) -> Result<Matrix> {
    cfg.validate()?;
    check_batch(net, inputs)?;
    if reference.rows() != inputs.rows() || reference.cols() != net.num_classes() {
        return Err(shape_err!("reference probabilities do not match the batch"));
    }
    if cfg.eps == 0.0 {
        return Ok(inputs.clone());
    }
    let start = if cfg.random_start {
        uniform_start(inputs, cfg.eps, rng)
    } else {
        let mut s = inputs.clone();
        for i in 0..s.rows() {
            let row = s.row_mut(i);
            row.iter_mut().for_each(|v| *v += KL_START_SD * rng.normal());
            project(row, inputs.row(i), cfg.eps);
        }
        s
    };
    Ok(search(net, inputs, start, cfg, Target::Reference(reference), None)?.adversarial)
}

/// Single-example KL attack.
pub fn kl_pgd(net: &Network, x: &[f64], cfg: &AttackConfig, rng: &mut StreamRng) -> Result<Vec<f64>> {
    Ok(kl_pgd_batch(net, &Matrix::row_vector(x), cfg, rng)?.into_vec())
}

const EVAL_CHUNK: usize = 500;

/// Fraction of examples that stay correctly classified at every point the
/// attack evaluates, the clean input included.
pub fn robust_accuracy(
    net: &Network,
    data: &crate::data::Dataset,
    cfg: &AttackConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(input_err!("empty dataset"));
    }
    let mut robust = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let x = data.inputs().slice_rows(start, end);
        let y = &data.labels()[start..end];
        let clean = net.predict(&x)?;
        let out = pgd_linf_batch(net, &x, y, cfg, rng)?;
        robust += out
            .fooled
            .iter()
            .enumerate()
            .filter(|&(i, &f)| !f && argmax(clean.row(i)) == y[i])
            .count();
        start = end;
    }
    Ok(robust as f64 / data.len() as f64)
}
