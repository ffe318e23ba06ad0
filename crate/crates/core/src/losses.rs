//! Scalar loss functions shared by the contrastive and supervised objectives,
//! their (sub)gradients, and the coordinate-substitution machinery used to
//! test sub-additivity.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which loss family to evaluate.
///
/// `SquareSumTest` is `(sum_i v_i)^2`: a convex loss that fails the
/// sub-additivity property. It exists only as a negative test for
/// [`check_sub_additivity`] and is rejected by the contrastive and supervised
/// evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Hinge,
    SquareSumTest,
}

/// A loss family together with its inverse-temperature scale `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub beta: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta must be a positive finite real, got {beta}"
            )));
        }
        Ok(LossSpec { kind, beta })
    }

    pub fn logistic(beta: f64) -> Result<Self> {
        Self::new(LossKind::Logistic, beta)
    }

    pub fn hinge(beta: f64) -> Result<Self> {
        Self::new(LossKind::Hinge, beta)
    }

    pub fn square_sum_test() -> Self {
        LossSpec {
            kind: LossKind::SquareSumTest,
            beta: 1.0,
        }
    }

    /// Rejects the test-only loss kind; the contrastive and supervised
    /// evaluators call this first.
    pub fn require_objective_kind(&self) -> Result<()> {
        if self.kind == LossKind::SquareSumTest {
            return Err(Error::InvalidArgument(
                "square_sum_test is a sub-additivity counterexample, not an objective loss".into(),
            ));
        }
        Ok(())
    }
}

fn check_args(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("loss argument vector is empty".into()));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "loss argument contains non-finite entry {x}"
        )));
    }
    Ok(())
}

/// Evaluates the loss at `v`.
///
/// The logistic loss `ln(1 + sum_i exp(-beta v_i))` is computed with a
/// max-shifted log-sum-exp over the implicit zero term and the `-beta v_i`
/// terms, so large `beta` and long `v` do not overflow.
pub fn eval(spec: &LossSpec, v: &[f64]) -> Result<f64> {
    check_args(v)?;
    Ok(match spec.kind {
        LossKind::Logistic => {
            let mut m = 0.0f64; // the implicit exp(0) term
            for &x in v {
                m = m.max(-spec.beta * x);
            }
            let sum: f64 = (-m).exp() + v.iter().map(|&x| (-spec.beta * x - m).exp()).sum::<f64>();
            m + sum.ln()
        }
        LossKind::Hinge => {
            let worst = v.iter().map(|&x| 1.0 - spec.beta * x).fold(f64::MIN, f64::max);
            worst.max(0.0)
        }
        LossKind::SquareSumTest => {
            let s: f64 = v.iter().sum();
            s * s
        }
    })
}

/// Gradient of [`eval`] with respect to `v`.
///
/// For the hinge loss at a kink the full subgradient is attributed to the
/// lowest-index coordinate attaining the max, so repeated runs are
/// deterministic.
pub fn grad(spec: &LossSpec, v: &[f64]) -> Result<Vec<f64>> {
    check_args(v)?;
    Ok(match spec.kind {
        LossKind::Logistic => {
            let mut m = 0.0f64;
            for &x in v {
                m = m.max(-spec.beta * x);
            }
            let terms: Vec<f64> = v.iter().map(|&x| (-spec.beta * x - m).exp()).collect();
            let denom: f64 = (-m).exp() + terms.iter().sum::<f64>();
            terms.iter().map(|t| -spec.beta * t / denom).collect()
        }
        LossKind::Hinge => {
            let mut g = vec![0.0; v.len()];
            let mut best = 0.0f64;
            let mut best_idx = None;
            for (i, &x) in v.iter().enumerate() {
                let margin = 1.0 - spec.beta * x;
                if margin > best {
                    best = margin;
                    best_idx = Some(i);
                }
            }
            if let Some(i) = best_idx {
                g[i] = -spec.beta;
            }
            g
        }
        LossKind::SquareSumTest => {
            let s: f64 = v.iter().sum();
            vec![2.0 * s; v.len()]
        }
    })
}

/// Replaces every coordinate in `subset` by `v[j]`, leaving the rest intact.
pub fn substitute(v: &[f64], subset: &[usize], j: usize) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("substitution subset is empty".into()));
    }
    if !subset.contains(&j) {
        return Err(Error::InvalidArgument(format!(
            "substitution source index {j} is not in the subset"
        )));
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= v.len()) {
        return Err(Error::InvalidArgument(format!(
            "subset index {i} out of bounds for vector of length {}",
            v.len()
        )));
    }
    let mut out = v.to_vec();
    for &i in subset {
        out[i] = v[j];
    }
    Ok(out)
}

/// Sub-additivity margin `l(v) - (1/|S|) sum_{j in S} l(v^{S<-j})`.
///
/// A nonnegative margin means the instance satisfies the sub-additivity
/// property; logistic and hinge always do, `SquareSumTest` does not.
pub fn check_sub_additivity(spec: &LossSpec, v: &[f64], subset: &[usize]) -> Result<f64> {
    let base = eval(spec, v)?;
    let mut avg = 0.0;
    for &j in subset {
        avg += eval(spec, &substitute(v, subset, j)?)?;
    }
    avg /= subset.len() as f64;
    Ok(base - avg)
}
