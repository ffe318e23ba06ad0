//! Downstream supervised loss of a class-collapsed representation with
//! norm-bounded linear heads, and its convex minimization over the heads.

use crate::error::{Error, Result};
use crate::latent::{ClassDistribution, CorrelationMatrix, Representation};
use crate::losses::{self, LossKind, LossSpec};
use nalgebra::DMatrix;

/// Linear classification heads, one row per class, each of norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamWeights {
    w: DMatrix<f64>,
}

impl DownstreamWeights {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        for r in 0..w.nrows() {
            let norm = w.row(r).norm();
            if norm > 1.0 + 1e-9 {
                return Err(Error::InvariantViolation(format!(
                    "head row {r} has norm {norm}, exceeding the unit ball"
                )));
            }
        }
        Ok(DownstreamWeights { w })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// All-zero heads; feasible, and yields the `ln C` logistic anchor.
    pub fn zeros(c: usize, d: usize) -> Self {
        DownstreamWeights {
            w: DMatrix::zeros(c, d),
        }
    }

    /// Heads equal to the class embeddings themselves.
    pub fn from_representation(u: &Representation) -> Self {
        DownstreamWeights {
            w: u.matrix().clone(),
        }
    }
}

/// The class-weighted supervised loss
/// `sum_c rho_c * l(<u_c . (w_c - w_c')>_{c' != c})`.
pub fn sup_loss(
    u: &Representation,
    w: &DownstreamWeights,
    rho: &ClassDistribution,
    loss: &LossSpec,
) -> Result<f64> {
    loss.require_objective_kind()?;
    let c = check_dims(u, w, rho)?;
    let um = u.matrix();
    let wm = w.matrix();
    let mut total = 0.0;
    let mut args = Vec::with_capacity(c - 1);
    for anchor in 0..c {
        args.clear();
        let u_row = um.row(anchor);
        let w_row = wm.row(anchor);
        for other in 0..c {
            if other != anchor {
                args.push(u_row.dot(&w_row) - u_row.dot(&wm.row(other)));
            }
        }
        total += rho.prob(anchor) * losses::eval(loss, &args)?;
    }
    Ok(total)
}

fn check_dims(u: &Representation, w: &DownstreamWeights, rho: &ClassDistribution) -> Result<usize> {
    let c = u.num_classes();
    if c < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if w.matrix().nrows() != c || rho.len() != c {
        return Err(Error::InvalidArgument(format!(
            "class counts disagree: U has {c}, W has {}, rho has {}",
            w.matrix().nrows(),
            rho.len()
        )));
    }
    if w.matrix().ncols() != u.dim() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: U is {}-dimensional, W is {}-dimensional",
            u.dim(),
            w.matrix().ncols()
        )));
    }
    Ok(c)
}

/// Gradient of [`sup_loss`] with respect to the head matrix.
fn sup_loss_grad(
    u: &Representation,
    w: &DMatrix<f64>,
    rho: &ClassDistribution,
    loss: &LossSpec,
) -> Result<DMatrix<f64>> {
    let c = u.num_classes();
    let d = u.dim();
    let um = u.matrix();
    let mut g = DMatrix::zeros(c, d);
    let mut args = Vec::with_capacity(c - 1);
    let mut others = Vec::with_capacity(c - 1);
    for anchor in 0..c {
        args.clear();
        others.clear();
        let u_row = um.row(anchor);
        let self_score = u_row.dot(&w.row(anchor));
        for other in 0..c {
            if other != anchor {
                args.push(self_score - u_row.dot(&w.row(other)));
                others.push(other);
            }
        }
        let lg = losses::grad(loss, &args)?;
        let p = rho.prob(anchor);
        for (gi, &other) in lg.iter().zip(&others) {
            let coeff = p * gi;
            for j in 0..d {
                g[(anchor, j)] += coeff * u_row[j];
                g[(other, j)] -= coeff * u_row[j];
            }
        }
    }
    if g.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::Numeric("non-finite supervised-loss gradient".into()));
    }
    Ok(g)
}

fn project_rows_unit_ball(w: &mut DMatrix<f64>) {
    for mut row in w.row_iter_mut() {
        let norm = row.norm();
        if norm > 1.0 {
            row /= norm;
        }
    }
}

/// Settings for [`optimize_sup`].
#[derive(Debug, Clone, Copy)]
pub struct SupOptConfig {
    pub iters: usize,
    pub eta: f64,
    pub tol: f64,
}

impl Default for SupOptConfig {
    fn default() -> Self {
        SupOptConfig {
            iters: 5000,
            eta: 1.0,
            tol: 1e-10,
        }
    }
}

const STALL_WINDOW: usize = 50;

/// Minimizes [`sup_loss`] over the heads by projected gradient descent,
/// initialized at `W = U`.
///
/// Logistic: full gradients with backtracking line search (halve the step
/// until the objective decreases), stopping when the best value improves by
/// less than `tol` over 50 iterations. Hinge: subgradient steps with a
/// diminishing schedule and averaged iterates. The returned value is the best
/// objective seen, so it never exceeds the feasible starting value.
pub fn optimize_sup(
    u: &Representation,
    rho: &ClassDistribution,
    loss: &LossSpec,
    cfg: &SupOptConfig,
) -> Result<(DownstreamWeights, f64)> {
    loss.require_objective_kind()?;
    if cfg.iters < 1 {
        return Err(Error::InvalidArgument("iters must be at least 1".into()));
    }
    let start = DownstreamWeights::from_representation(u);
    check_dims(u, &start, rho)?;

    let mut w = start.matrix().clone();
    let mut f = sup_loss(u, &start, rho, loss)?;
    let mut best_w = w.clone();
    let mut best_f = f;
    let mut last_improvement = 0usize;

    // Running average for the nonsmooth case.
    let mut avg_w = w.clone();

    for iter in 0..cfg.iters {
        let g = sup_loss_grad(u, &w, rho, loss)?;
        match loss.kind {
            LossKind::Logistic => {
                let mut step = cfg.eta;
                let mut accepted = false;
                while step > 1e-14 {
                    let mut cand = &w - &g * step;
                    project_rows_unit_ball(&mut cand);
                    let fc = sup_loss(u, &DownstreamWeights { w: cand.clone() }, rho, loss)?;
                    if fc < f {
                        w = cand;
                        f = fc;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break; // stationary within line-search resolution
                }
            }
            LossKind::Hinge => {
                let step = cfg.eta / (iter as f64 + 1.0);
                w -= &g * step;
                project_rows_unit_ball(&mut w);
                f = sup_loss(u, &DownstreamWeights { w: w.clone() }, rho, loss)?;
                let t = (iter + 1) as f64;
                avg_w = &avg_w * (t / (t + 1.0)) + &w * (1.0 / (t + 1.0));
                let fa = sup_loss(u, &DownstreamWeights { w: avg_w.clone() }, rho, loss)?;
                if fa < best_f {
                    best_f = fa;
                    best_w = avg_w.clone();
                    last_improvement = iter;
                }
            }
            LossKind::SquareSumTest => unreachable!(),
        }
        if f < best_f - 0.0 {
            if best_f - f >= cfg.tol {
                last_improvement = iter;
            }
            best_f = f;
            best_w = w.clone();
        }
        if iter - last_improvement >= STALL_WINDOW {
            break;
        }
    }
    Ok((DownstreamWeights::new(best_w)?, best_f))
}

/// Supervised loss of a Gram matrix: extract embeddings, then optimize the
/// heads. The quantity plotted against `k` in the sweep.
pub fn sup_loss_of_z(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    loss: &LossSpec,
    cfg: &SupOptConfig,
) -> Result<f64> {
    let u = z.factor()?;
    Ok(optimize_sup(&u, rho, loss, cfg)?.1)
}
