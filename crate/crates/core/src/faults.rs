//! Stuck-at-0 fault injection.
//!
//! A node fault forces a hidden unit's post-activation output to zero for
//! every input. It is realized by zeroing the unit's outgoing weights, which
//! is equivalent because the next layer only sees the unit through those
//! weights ([`forward_with_stuck_nodes`] computes the direct form). A
//! parameter fault sets one weight or bias to zero. Output units are never
//! node-fault sites.

use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::index;

use crate::data::Dataset;
use crate::error::{input_err, shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::metrics::accuracy;
use crate::nn::{softmax_rows, Network};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    Node,
    Parameter,
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" | "nodes" => Ok(Self::Node),
            "param" | "parameter" | "parameters" => Ok(Self::Parameter),
            other => Err(input_err!("unknown fault kind {other:?} (expected node or param)")),
        }
    }
}

impl core::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Node => "node",
            Self::Parameter => "param",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultSite {
    /// Hidden unit `unit` of layer `layer`.
    Node { layer: usize, unit: usize },
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultMask {
    kind: FaultKind,
    sites: Vec<FaultSite>,
    fraction: f64,
    include_bias: bool,
}

impl FaultMask {
    pub fn empty(kind: FaultKind) -> Self {
        Self { kind, sites: Vec::new(), fraction: 0.0, include_bias: true }
    }

    /// Mask over explicit sites; duplicates are removed.
    pub fn from_sites(kind: FaultKind, mut sites: Vec<FaultSite>) -> Result<Self> {
        let node_site = |s: &FaultSite| matches!(s, FaultSite::Node { .. });
        if sites.iter().any(|s| node_site(s) != (kind == FaultKind::Node)) {
            return Err(input_err!("site kinds do not match a {kind} mask"));
        }
        sites.sort_unstable();
        sites.dedup();
        Ok(Self { kind, sites, fraction: f64::NAN, include_bias: true })
    }

    pub fn kind(&self) -> FaultKind {
        self.kind
    }

    pub fn sites(&self) -> &[FaultSite] {
        &self.sites
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Number of sites a mask of `kind` may draw from.
pub fn eligible_count(net: &Network, kind: FaultKind, include_bias: bool) -> usize {
    match kind {
        FaultKind::Node => net.layers()[..net.depth() - 1].iter().map(|l| l.out_dim()).sum(),
        FaultKind::Parameter => net
            .layers()
            .iter()
            .map(|l| l.out_dim() * l.in_dim() + if include_bias { l.out_dim() } else { 0 })
            .sum(),
    }
}

// Maps an eligible-site ordinal to its site, in the order of `Network::params`.
fn site_at(net: &Network, kind: FaultKind, include_bias: bool, mut i: usize) -> FaultSite {
    for (layer, l) in net.layers().iter().enumerate() {
        match kind {
            FaultKind::Node => {
                if i < l.out_dim() {
                    return FaultSite::Node { layer, unit: i };
                }
                i -= l.out_dim();
            }
            FaultKind::Parameter => {
                let nw = l.out_dim() * l.in_dim();
                if i < nw {
                    return FaultSite::Weight { layer, row: i / l.in_dim(), col: i % l.in_dim() };
                }
                i -= nw;
                if include_bias {
                    if i < l.out_dim() {
                        return FaultSite::Bias { layer, index: i };
                    }
                    i -= l.out_dim();
                }
            }
        }
    }
    unreachable!("site ordinal beyond eligible count")
}

/// Draws `round(fraction · eligible)` distinct sites uniformly.
pub fn sample_faults(
    net: &Network,
    kind: FaultKind,
    fraction: f64,
    include_bias: bool,
    rng: &mut StreamRng,
) -> Result<FaultMask> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(input_err!("fault fraction must lie in [0, 1], got {fraction}"));
    }
    let eligible = eligible_count(net, kind, include_bias);
    let count = (math::round(fraction * eligible as f64) as usize).min(eligible);
    let mut sites: Vec<FaultSite> = index::sample(rng, eligible, count)
        .into_iter()
        .map(|i| site_at(net, kind, include_bias, i))
        .collect();
    sites.sort_unstable();
    Ok(FaultMask { kind, sites, fraction, include_bias })
}

/// Copy of `net` with every site of `mask` stuck at zero.
pub fn apply_faults(net: &Network, mask: &FaultMask) -> Result<Network> {
    let mut out = net.clone();
    let depth = net.depth();
    for &site in &mask.sites {
        let oob = || shape_err!("fault site {site:?} is outside the network");
        match site {
            FaultSite::Node { layer, unit } => {
                if layer + 1 >= depth || unit >= net.layers()[layer].out_dim() {
                    return Err(oob());
                }
                let next = out.layers_mut()[layer + 1].weights_mut();
                for r in 0..next.rows() {
                    next.set(r, unit, 0.0);
                }
            }
            FaultSite::Weight { layer, row, col } => {
                let l = out.layers_mut().get_mut(layer).ok_or_else(oob)?;
                if row >= l.out_dim() || col >= l.in_dim() {
                    return Err(oob());
                }
                l.weights_mut().set(row, col, 0.0);
            }
            FaultSite::Bias { layer, index } => {
                let l = out.layers_mut().get_mut(layer).ok_or_else(oob)?;
                *l.biases_mut().get_mut(index).ok_or_else(oob)? = 0.0;
            }
        }
    }
    Ok(out)
}

/// Forward pass that overwrites the listed hidden units' outputs with 0.
pub fn forward_with_stuck_nodes(net: &Network, mask: &FaultMask, inputs: &Matrix) -> Result<Matrix> {
    if mask.kind != FaultKind::Node {
        return Err(input_err!("expected a node mask"));
    }
    let depth = net.depth();
    let mut a = inputs.clone();
    for (k, layer) in net.layers().iter().enumerate() {
        let mut z = crate::linalg::matmul_nt(&a, layer.weights())?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(layer.biases()) {
                *v += b;
            }
        }
        if k + 1 == depth {
            return Ok(softmax_rows(&z));
        }
        z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        for site in &mask.sites {
            if let FaultSite::Node { layer, unit } = *site {
                if layer == k {
                    for r in 0..z.rows() {
                        z.set(r, unit, 0.0);
                    }
                }
            }
        }
        a = z;
    }
    unreachable!("network has at least one layer")
}

/// Accuracy statistics for one fault fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    /// Accuracy of each trial, in trial order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSweep {
    pub kind: FaultKind,
    pub rows: Vec<SweepRow>,
}

impl FaultSweep {
    pub fn row(&self, fraction: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.fraction == fraction)
    }
}

/// Settings shared by the trials of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    pub seed: u64,
    pub include_bias: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { trials: 20, seed: 0, include_bias: true }
    }
}

/// Test accuracy under `trials` independent masks per fraction. Trial `t`
/// of fraction `i` draws from its own stream, so rows are reproducible in
/// isolation.
pub fn fault_sweep(
    net: &Network,
    test: &Dataset,
    kind: FaultKind,
    fractions: &[f64],
    opts: SweepOptions,
) -> Result<FaultSweep> {
    if opts.trials == 0 {
        return Err(input_err!("a sweep needs at least one trial"));
    }
    let mut clean = None;
    let mut rows = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        let mut accuracies = Vec::with_capacity(opts.trials);
        for t in 0..opts.trials {
            let mut rng = StreamRng::with_index(opts.seed, "faults", ((fi as u64) << 32) | t as u64);
            let mask = sample_faults(net, kind, fraction, opts.include_bias, &mut rng)?;
            let acc = if mask.is_empty() {
                // an empty mask is the identity; evaluate the clean net once
                match clean {
                    Some(a) => a,
                    None => *clean.insert(accuracy(net, test)?),
                }
            } else {
                accuracy(&apply_faults(net, &mask)?, test)?
            };
            accuracies.push(acc);
        }
        let (mean, sd) = mean_sd(&accuracies);
        rows.push(SweepRow { fraction, accuracies, mean, sd });
    }
    Ok(FaultSweep { kind, rows })
}

pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Largest L2 distance between clean and faulty output distributions over
/// the dataset.
pub fn eps_ft(net: &Network, faulty: &Network, data: &Dataset) -> Result<f64> {
    if net.input_dim() != faulty.input_dim() || net.num_classes() != faulty.num_classes() {
        return Err(shape_err!("networks disagree on input or output width"));
    }
    let mut worst = 0.0f64;
    let mut start = 0;
    while start < data.len() {
        let end = (start + 1000).min(data.len());
        let x = data.inputs().slice_rows(start, end);
        let p = net.predict(&x)?;
        let q = faulty.predict(&x)?;
        for (a, b) in p.iter_rows().zip(q.iter_rows()) {
            let d: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            worst = worst.max(math::sqrt(d));
        }
        start = end;
    }
    Ok(worst)
}
