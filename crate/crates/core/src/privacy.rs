//! Rényi-DP accounting for the Gaussian mechanism and the DP
//! generalization bound `e^ε − 1 + δ`.
//!
//! Each DP-SGD step releases a sum of gradients clipped to norm `C` plus
//! `N(0, σ²C²I)` noise, so after normalizing by `C` it is a Gaussian
//! mechanism with unit sensitivity and noise multiplier `σ`. Steps compose
//! additively in RDP. No subsampling amplification is applied, so the
//! reported ε over-estimates the spend of a run that samples batches.

use alloc::vec::Vec;

use crate::error::{input_err, Error, Result};
use crate::math;

/// RDP orders used for conversion to (ε, δ).
pub const DEFAULT_ORDERS: [f64; 11] = [1.25, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0];

/// RDP of order `alpha` for one unit-sensitivity Gaussian release with noise
/// multiplier `sigma`: `α / (2σ²)`.
pub fn rdp_gaussian_step(sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(input_err!("noise multiplier must be positive for a private release, got {sigma}"));
    }
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(input_err!("RDP order must exceed 1, got {alpha}"));
    }
    Ok(alpha / (2.0 * sigma * sigma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdpPoint {
    pub order: f64,
    pub epsilon: f64,
}

/// RDP guarantees over a grid of orders, with the mechanism they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    points: Vec<RdpPoint>,
    sigma: f64,
    steps: u64,
}

impl RdpCurve {
    pub fn new(points: Vec<RdpPoint>, sigma: f64, steps: u64) -> Result<Self> {
        if points.windows(2).any(|w| !(w[0].order < w[1].order)) {
            return Err(input_err!("RDP orders must be strictly increasing"));
        }
        for p in &points {
            if !(p.order > 1.0) {
                return Err(input_err!("RDP order {} must exceed 1", p.order));
            }
            if !(p.epsilon >= 0.0) || !p.epsilon.is_finite() {
                return Err(input_err!("RDP epsilon {} must be finite and non-negative", p.epsilon));
            }
        }
        Ok(Self { points, sigma, steps })
    }

    /// One Gaussian step evaluated at each order.
    pub fn gaussian(sigma: f64, orders: &[f64]) -> Result<Self> {
        let points = orders
            .iter()
            .map(|&order| Ok(RdpPoint { order, epsilon: rdp_gaussian_step(sigma, order)? }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, sigma, 1)
    }

    pub fn points(&self) -> &[RdpPoint] {
        &self.points
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Additive composition of `steps` runs of the same mechanism.
pub fn compose(per_step: &RdpCurve, steps: u64) -> Result<RdpCurve> {
    if steps == 0 {
        return Err(input_err!("composition needs at least one step"));
    }
    let points = per_step
        .points
        .iter()
        .map(|p| RdpPoint { order: p.order, epsilon: p.epsilon * steps as f64 })
        .collect();
    RdpCurve::new(points, per_step.sigma, per_step.steps * steps)
}

/// An (ε, δ) guarantee and where it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpend {
    /// `+∞` for a non-private run.
    pub eps_dp: f64,
    pub delta_dp: f64,
    pub steps: u64,
    pub sigma: f64,
    /// Order attaining the minimum in the conversion; `NaN` when non-private.
    pub alpha_star: f64,
    /// Always false: the accountant does not use subsampling amplification.
    pub subsampling_amplification: bool,
}

impl PrivacySpend {
    pub fn non_private(steps: u64, delta: f64) -> Self {
        Self {
            eps_dp: f64::INFINITY,
            delta_dp: delta,
            steps,
            sigma: 0.0,
            alpha_star: f64::NAN,
            subsampling_amplification: false,
        }
    }

    pub fn is_private(&self) -> bool {
        self.eps_dp.is_finite()
    }

    /// `e^ε − 1 + δ`.
    pub fn generalization_bound(&self) -> f64 {
        dp_generalization_bound(self.eps_dp, self.delta_dp)
    }
}

/// `ε = min_α [ε_rdp(α) + ln(1/δ) / (α − 1)]`.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<PrivacySpend> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(input_err!("delta must lie in (0, 1), got {delta}"));
    }
    if curve.points.is_empty() {
        return Err(input_err!("cannot convert an empty RDP curve"));
    }
    let log_inv_delta = -math::ln(delta);
    let (eps, alpha) = curve
        .points
        .iter()
        .map(|p| (p.epsilon + log_inv_delta / (p.order - 1.0), p.order))
        .fold((f64::INFINITY, f64::NAN), |best, cand| if cand.0 < best.0 { cand } else { best });
    Ok(PrivacySpend {
        eps_dp: eps,
        delta_dp: delta,
        steps: curve.steps,
        sigma: curve.sigma,
        alpha_star: alpha,
        subsampling_amplification: false,
    })
}

/// Spend of `steps` Gaussian releases with noise multiplier `sigma`;
/// `sigma == 0` yields a non-private spend.
pub fn account_gaussian(sigma: f64, steps: u64, delta: f64, orders: &[f64]) -> Result<PrivacySpend> {
    if sigma == 0.0 {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(input_err!("delta must lie in (0, 1), got {delta}"));
        }
        return Ok(PrivacySpend::non_private(steps, delta));
    }
    rdp_to_dp(&compose(&RdpCurve::gaussian(sigma, orders)?, steps)?, delta)
}

/// `e^ε − 1 + δ`.
pub fn dp_generalization_bound(eps: f64, delta: f64) -> f64 {
    math::expm1(eps) + delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    Holds,
    Violated,
    /// The run was not differentially private; nothing to check.
    SkippedNonPrivate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub status: BoundStatus,
    /// `|err_train − err_test|` under 0-1 loss.
    pub lhs: f64,
    /// `e^ε − 1 + δ`.
    pub rhs: f64,
    pub slack: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.status == BoundStatus::Holds
    }
}

/// Compares the observed 0-1 generalization gap with the DP bound.
pub fn check_bound(train_acc: f64, test_acc: f64, spend: &PrivacySpend) -> Result<BoundCheck> {
    if !(0.0..=1.0).contains(&train_acc) || !(0.0..=1.0).contains(&test_acc) {
        return Err(Error::Input("accuracies must lie in [0, 1]".into()));
    }
    let lhs = ((1.0 - train_acc) - (1.0 - test_acc)).abs();
    if !spend.is_private() {
        return Ok(BoundCheck {
            status: BoundStatus::SkippedNonPrivate,
            lhs,
            rhs: f64::INFINITY,
            slack: f64::INFINITY,
        });
    }
    let rhs = spend.generalization_bound();
    let status = if lhs <= rhs { BoundStatus::Holds } else { BoundStatus::Violated };
    Ok(BoundCheck { status, lhs, rhs, slack: rhs - lhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gaussian_step_closed_forms() {
        assert_eq!(rdp_gaussian_step(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(rdp_gaussian_step(2.0, 2.0).unwrap(), 0.25);
        assert!(rdp_gaussian_step(0.0, 2.0).is_err());
        assert!(rdp_gaussian_step(1.0, 1.0).is_err());
        let near_one = rdp_gaussian_step(1.0, 1.0 + 1e-9).unwrap();
        assert!(near_one.is_finite() && near_one < rdp_gaussian_step(1.0, 1.5).unwrap());
    }

    #[test]
    fn composition_examples() {
        let c = RdpCurve::gaussian(1.0, &[2.0]).unwrap();
        assert_eq!(compose(&c, 1).unwrap(), c);
        assert_eq!(compose(&c, 100).unwrap().points()[0].epsilon, 100.0);
        let c = RdpCurve::gaussian(1.3, &DEFAULT_ORDERS).unwrap();
        assert_eq!(compose(&compose(&c, 6).unwrap(), 7).unwrap(), compose(&c, 42).unwrap());
    }

    #[test]
    fn conversion_examples() {
        let c = RdpCurve::new(vec![RdpPoint { order: 2.0, epsilon: 1.0 }], 1.0, 1).unwrap();
        let s = rdp_to_dp(&c, 1e-5).unwrap();
        assert!((s.eps_dp - (1.0 + libm::log(1e5))).abs() < 1e-9);
        assert!((s.eps_dp - 12.512925464970229).abs() < 1e-9);
        assert_eq!(s.alpha_star, 2.0);
        let near = rdp_to_dp(&c, 1.0 - 1e-15).unwrap();
        assert!((near.eps_dp - 1.0).abs() < 1e-12);
        let empty = RdpCurve::new(vec![], 1.0, 1).unwrap();
        assert!(rdp_to_dp(&empty, 1e-5).is_err());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(dp_generalization_bound(0.0, 0.0), 0.0);
        let b = dp_generalization_bound(0.49, 1e-5);
        assert!((b - 0.6323262199553789).abs() < 1e-12, "{b}");
        let tiny = dp_generalization_bound(1e-4, 1e-6);
        assert!((tiny - (1e-4 + 1e-6)).abs() < 1e-8);
    }

    #[test]
    fn non_private_check_is_skipped() {
        let s = account_gaussian(0.0, 100, 1e-5, &DEFAULT_ORDERS).unwrap();
        assert!(!s.is_private());
        let c = check_bound(0.9, 0.8, &s).unwrap();
        assert_eq!(c.status, BoundStatus::SkippedNonPrivate);
    }

    #[test]
    fn equal_accuracies_always_hold() {
        let s = account_gaussian(50.0, 1, 1e-5, &DEFAULT_ORDERS).unwrap();
        let c = check_bound(0.7, 0.7, &s).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert!(c.holds());
    }

    #[test]
    fn spend_monotone_over_sweep() {
        let sigmas = [0.7, 1.1, 2.0, 4.0, 8.0];
        let steps = [1u64, 10, 100, 1000, 10000];
        for &sigma in &sigmas {
            let eps: Vec<f64> = steps
                .iter()
                .map(|&t| account_gaussian(sigma, t, 1e-5, &DEFAULT_ORDERS).unwrap().eps_dp)
                .collect();
            assert!(eps.windows(2).all(|w| w[0] <= w[1]));
        }
        for &t in &steps {
            let eps: Vec<f64> = sigmas
                .iter()
                .map(|&s| account_gaussian(s, t, 1e-5, &DEFAULT_ORDERS).unwrap().eps_dp)
                .collect();
            assert!(eps.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn more_orders_never_increase_eps() {
        let coarse = account_gaussian(1.1, 500, 1e-5, &[2.0, 8.0, 64.0]).unwrap();
        let fine = account_gaussian(1.1, 500, 1e-5, &DEFAULT_ORDERS).unwrap();
        assert!(fine.eps_dp <= coarse.eps_dp);
        assert!(!fine.subsampling_amplification);
    }
}
