//! Closed-form transfer bounds linking the contrastive loss to the
//! supervised loss, and a numerical check that the improved bound holds.

use crate::error::{Error, Result};
use crate::latent::ClassDistribution;
use serde::Serialize;

/// Probability that a set of `k` independent class draws misses at least one
/// class other than the anchor, under the uniform distribution:
/// `1 - (1 - 1/C)^k`.
pub fn tau(c: usize, k: usize) -> Result<f64> {
    if c < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(1.0 - (1.0 - 1.0 / c as f64).powi(k as i32))
}

/// The earlier transfer coefficient `4 ln(C) (C-1) eta^k / k` with
/// `eta = 1 + 1/(C-1)`; grows exponentially in `k`.
pub fn alpha_saunshi(c: usize, k: usize) -> Result<f64> {
    if c < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let cf = c as f64;
    let eta = 1.0 + 1.0 / (cf - 1.0);
    Ok(4.0 * cf.ln() * (cf - 1.0) * eta.powi(k as i32) / k as f64)
}

/// The improved transfer coefficient
/// `4 max(1, 2 (1 - rho_min) ln(C) / (k (1 - rho_max) rho_min))`.
///
/// Requires `k >= ceil(1 / rho_max)` so that the expected collision count is
/// at least one; smaller `k` is rejected.
pub fn beta_improved(rho: &ClassDistribution, k: usize) -> Result<f64> {
    let rho_min = rho.rho_min();
    let rho_max = rho.rho_max();
    let k_min = (1.0 / rho_max).ceil() as usize;
    if k < k_min {
        return Err(Error::InvalidArgument(format!(
            "improved bound needs k >= ceil(1/rho_max) = {k_min}, got {k}"
        )));
    }
    if rho_max >= 1.0 {
        return Err(Error::InvalidArgument(
            "improved bound is vacuous when one class has all the mass".into(),
        ));
    }
    let c = rho.len() as f64;
    let raw = 2.0 * (1.0 - rho_min) * c.ln() / (k as f64 * (1.0 - rho_max) * rho_min);
    Ok(4.0 * raw.max(1.0))
}

/// Outcome of checking `sup_loss <= beta * nce_loss` on concrete values.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub c: usize,
    pub k: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub beta: f64,
    pub sup_loss: f64,
    pub nce_loss: f64,
    pub bound_value: f64,
    pub slack: f64,
    pub holds: bool,
    /// Supervised loss divided by `ln C`.
    pub sup_normalized: f64,
    /// Contrastive loss divided by `ln(1 + k)`.
    pub nce_normalized: f64,
    pub notes: Vec<String>,
}

/// Checks the improved transfer bound on a measured `(sup, nce)` pair.
///
/// `holds` uses an absolute tolerance of `1e-9` on the slack so that
/// equality-at-optimum cases do not flicker.
pub fn validate_improved_bound(
    rho: &ClassDistribution,
    k: usize,
    sup_loss: f64,
    nce_loss: f64,
) -> Result<BoundReport> {
    if !sup_loss.is_finite() || !nce_loss.is_finite() {
        return Err(Error::InvalidArgument(
            "bound check needs finite loss values".into(),
        ));
    }
    if sup_loss < -1e-12 || nce_loss < -1e-12 {
        return Err(Error::InvalidArgument(
            "bound check needs nonnegative loss values".into(),
        ));
    }
    let beta = beta_improved(rho, k)?;
    let c = rho.len();
    let bound_value = beta * nce_loss;
    let slack = bound_value - sup_loss;
    let mut notes = Vec::new();
    let k_rho_max = k as f64 * rho.rho_max();
    if (k_rho_max - k_rho_max.round()).abs() > 1e-9 {
        notes.push(format!(
            "k * rho_max = {k_rho_max} is not an integer; the coefficient uses the continuous form"
        ));
    }
    Ok(BoundReport {
        c,
        k,
        rho_min: rho.rho_min(),
        rho_max: rho.rho_max(),
        beta,
        sup_loss,
        nce_loss,
        bound_value,
        slack,
        holds: slack >= -1e-9,
        sup_normalized: sup_loss / (c as f64).ln(),
        nce_normalized: nce_loss / (1.0 + k as f64).ln(),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tau_values() {
        assert_relative_eq!(tau(2, 1).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(tau(10, 1).unwrap(), 0.1, epsilon = 1e-12);
        // 1 - (0.9)^10
        assert_relative_eq!(tau(10, 10).unwrap(), 1.0 - 0.9f64.powi(10), epsilon = 1e-12);
        assert_relative_eq!(tau(10, 10).unwrap(), 0.6513215599, epsilon = 1e-9);
    }

    #[test]
    fn tau_monotone_in_k() {
        let mut prev = 0.0;
        for k in 1..=64 {
            let t = tau(7, k).unwrap();
            assert!(t > prev && t < 1.0);
            prev = t;
        }
    }

    #[test]
    fn alpha_saunshi_c2_k1() {
        // 4 ln2 * 1 * 2^1 / 1 = 8 ln 2
        assert_relative_eq!(alpha_saunshi(2, 1).unwrap(), 8.0 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn alpha_saunshi_eventually_grows() {
        // eta^k / k diverges, so the coefficient blows up in k.
        let a8 = alpha_saunshi(5, 8).unwrap();
        let a64 = alpha_saunshi(5, 64).unwrap();
        assert!(a64 > 100.0 * a8);
    }

    #[test]
    fn beta_improved_floor_at_four() {
        // Large k drives the raw term below 1, flooring the coefficient at 4.
        let rho = ClassDistribution::uniform(3).unwrap();
        let b = beta_improved(&rho, 1000).unwrap();
        assert_relative_eq!(b, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn beta_improved_uniform_c3_k3() {
        let rho = ClassDistribution::uniform(3).unwrap();
        // raw = 2 * (2/3) * ln3 / (3 * (2/3) * (1/3)) = 2 ln 3
        let b = beta_improved(&rho, 3).unwrap();
        assert_relative_eq!(b, 4.0 * 2.0 * 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn beta_improved_rejects_small_k() {
        let rho = ClassDistribution::new(vec![0.25, 0.25, 0.5]).unwrap();
        // ceil(1/0.5) = 2
        assert!(beta_improved(&rho, 1).is_err());
        assert!(beta_improved(&rho, 2).is_ok());
    }

    #[test]
    fn beta_improved_bounded_vs_alpha_for_large_k() {
        // The improved coefficient stays bounded while the older one diverges.
        let rho = ClassDistribution::uniform(6).unwrap();
        for k in [8usize, 16, 32, 64] {
            assert!(beta_improved(&rho, k).unwrap() <= beta_improved(&rho, 8).unwrap());
        }
        assert!(alpha_saunshi(6, 64).unwrap() > beta_improved(&rho, 64).unwrap());
    }

    #[test]
    fn validate_reports_slack_and_flags() {
        let rho = ClassDistribution::uniform(3).unwrap();
        let rep = validate_improved_bound(&rho, 3, 0.5, 1.0).unwrap();
        assert!(rep.holds);
        assert_relative_eq!(rep.bound_value, rep.beta, epsilon = 1e-12);
        assert_relative_eq!(rep.slack, rep.beta - 0.5, epsilon = 1e-12);
        assert_relative_eq!(rep.sup_normalized, 0.5 / 3.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(rep.nce_normalized, 1.0 / 4.0f64.ln(), epsilon = 1e-12);
        assert!(rep.notes.is_empty());

        let bad = validate_improved_bound(&rho, 3, 1e6, 1e-3).unwrap();
        assert!(!bad.holds);
        assert!(bad.slack < 0.0);
    }

    #[test]
    fn validate_notes_non_integer_k_rho_max() {
        let rho = ClassDistribution::new(vec![0.3, 0.3, 0.4]).unwrap();
        let rep = validate_improved_bound(&rho, 3, 0.1, 0.5).unwrap();
        // k * rho_max = 1.2
        assert_eq!(rep.notes.len(), 1);
        let rep5 = validate_improved_bound(&rho, 5, 0.1, 0.5).unwrap();
        // k * rho_max = 2 exactly
        assert!(rep5.notes.is_empty());
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(tau(1, 1).is_err());
        assert!(tau(3, 0).is_err());
        assert!(alpha_saunshi(1, 1).is_err());
        assert!(alpha_saunshi(3, 0).is_err());
        let rho = ClassDistribution::uniform(3).unwrap();
        assert!(validate_improved_bound(&rho, 3, f64::NAN, 1.0).is_err());
        assert!(validate_improved_bound(&rho, 3, -1.0, 1.0).is_err());
    }
}
