//! Projected (stochastic) gradient descent over the set of correlation
//! matrices: the nearest-correlation-matrix projection with Dykstra's
//! correction, single optimization runs, multi-run aggregation, and the
//! end-to-end solver that extracts class embeddings from the mean iterate.

use crate::error::{Error, Result};
use crate::latent::{
    normal_sample, ClassDistribution, CorrelationMatrix, Representation,
};
use crate::losses::LossSpec;
use crate::nce::{
    enumeration_size, exact_nce_grad, exact_nce_loss, mc_nce_grad, mc_nce_loss, EvalMode,
    NCEConfig, EXACT_TERM_CAP,
};
use crate::parallel::map_chunks;
use crate::seeding::{derive, Stream};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

/// Gradient source for each descent step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Mini-batch Monte Carlo gradients.
    Stochastic,
    /// Deterministic full-expectation gradients (small problems only).
    ExactGradient,
}

/// Starting point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Identity Gram: orthonormal embeddings, maximally spread and feasible.
    Identity,
    /// Gram of random unit vectors, for robustness experiments.
    RandomFeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub batch: usize,
    pub eta0: f64,
    pub runs: usize,
    pub mode: GradientMode,
    pub seed: u64,
    pub projection_tol: f64,
    pub projection_max_iter: usize,
    pub init: InitStrategy,
    /// When set, each run writes a `run_<index>.csv` trace file here.
    pub trace_dir: Option<PathBuf>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: 1000,
            batch: 10_000,
            eta0: 50.0,
            runs: 400,
            mode: GradientMode::Stochastic,
            seed: 0,
            projection_tol: 1e-8,
            projection_max_iter: 200,
            init: InitStrategy::Identity,
            trace_dir: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || self.runs < 1 {
            return Err(Error::InvalidArgument(
                "steps and runs must be at least 1".into(),
            ));
        }
        if !(self.eta0 > 0.0) {
            return Err(Error::InvalidArgument("eta0 must be positive".into()));
        }
        if self.batch < 1 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of the alternating-projection iteration, including the raw final
/// iterate for callers that want to continue after a convergence failure.
#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    pub matrix: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn psd_clip(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > 0.0 {
            let col = eig.eigenvectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += lam * col[i] * col[j];
                }
            }
        }
    }
    // Clean rounding asymmetry from the accumulation.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Alternating projections with Dykstra's correction between the PSD cone
/// (eigenvalue clipping at zero) and the unit-diagonal symmetric matrices,
/// iterated until the successive-iterate Frobenius change drops below `tol`.
///
/// The input must be symmetric; asymmetry up to 1e-9 is symmetrized away,
/// anything larger is rejected.
pub fn project_correlation_outcome(
    a: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ProjectionOutcome> {
    if a.nrows() != a.ncols() || a.nrows() < 1 {
        return Err(Error::InvalidArgument(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if max_asym > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "input asymmetry {max_asym:.3e} exceeds 1e-9"
        )));
    }
    let mut y = (a + a.transpose()) * 0.5;
    let mut ds = DMatrix::zeros(n, n);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let r = &y - &ds;
        let x = psd_clip(&r);
        ds = &x - &r;
        let mut y_new = x;
        for i in 0..n {
            y_new[(i, i)] = 1.0;
        }
        residual = (&y_new - &y).norm();
        y = y_new;
        if residual <= tol {
            return Ok(ProjectionOutcome {
                matrix: y,
                residual,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(ProjectionOutcome {
        matrix: y,
        residual,
        iterations: max_iter,
        converged: false,
    })
}

/// Nearest correlation matrix to `a` (Higham's alternating projections with
/// Dykstra's correction). Errors when `max_iter` is exhausted with the
/// successive change still above `10 * tol`; use
/// [`project_correlation_outcome`] to inspect the last iterate in that case.
pub fn project_correlation(
    a: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<CorrelationMatrix> {
    let outcome = project_correlation_outcome(a, tol, max_iter)?;
    if !outcome.converged && outcome.residual > 10.0 * tol {
        return Err(Error::Convergence {
            residual: outcome.residual,
            message: format!(
                "nearest-correlation projection stopped after {max_iter} iterations"
            ),
        });
    }
    CorrelationMatrix::new(outcome.matrix)
}

/// One recorded point of a run's loss trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub eta: f64,
    pub loss: f64,
}

/// Result of a single projected-gradient run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_z: CorrelationMatrix,
    pub loss_trace: Vec<TracePoint>,
    pub seed_used: u64,
    /// Steps at which the projection failed to converge; the run kept the
    /// last feasible iterate at those steps.
    pub projection_failures: usize,
}

const TRACE_EVERY: usize = 50;
const TRACE_EXACT_CAP: u128 = 200_000;
const TRACE_MC_SAMPLES: usize = 20_000;

fn trace_loss(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    seed: u64,
) -> Result<f64> {
    if enumeration_size(rho.len(), k) <= TRACE_EXACT_CAP {
        exact_nce_loss(z, rho, k, loss)
    } else {
        let cfg = NCEConfig {
            k,
            mode: EvalMode::MonteCarlo,
            mc_samples: TRACE_MC_SAMPLES,
            seed,
        };
        Ok(mc_nce_loss(z, rho, k, loss, &cfg)?.0)
    }
}

fn initial_iterate(c: usize, init: InitStrategy, seed: u64) -> Result<CorrelationMatrix> {
    match init {
        InitStrategy::Identity => CorrelationMatrix::identity(c),
        InitStrategy::RandomFeasible => {
            let mut rng = Stream::new(derive(seed, &[0xf00d]));
            let mut u = DMatrix::zeros(c, c);
            for i in 0..c {
                loop {
                    let mut norm2 = 0.0;
                    for j in 0..c {
                        let v = normal_sample(&mut rng);
                        u[(i, j)] = v;
                        norm2 += v * v;
                    }
                    if norm2 > 1e-12 {
                        let norm = norm2.sqrt();
                        for j in 0..c {
                            u[(i, j)] /= norm;
                        }
                        break;
                    }
                }
            }
            Ok(Representation::new(u)?.gram())
        }
    }
}

/// One run of projected gradient descent from the identity Gram with the
/// harmonic step schedule `eta_t = eta0 / (t + 1)`.
///
/// Deterministic given `(cfg.seed, run_index)`: the run derives its own
/// substream, and each step derives a fresh gradient substream from it.
/// Projection convergence failures are non-fatal; the run keeps the last
/// feasible iterate and counts the failure.
pub fn psgd_run(
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    cfg: &OptimizerConfig,
    run_index: usize,
) -> Result<RunResult> {
    loss.require_objective_kind()?;
    cfg.validate()?;
    let c = rho.len();
    let run_seed = derive(cfg.seed, &[run_index as u64]);
    let mut z = initial_iterate(c, cfg.init, run_seed)?;
    let mut trace = Vec::new();
    let mut projection_failures = 0usize;

    for t in 0..cfg.steps {
        let eta = cfg.eta0 / (t as f64 + 1.0);
        if t % TRACE_EVERY == 0 {
            let l = trace_loss(&z, rho, k, loss, derive(run_seed, &[1, t as u64]))?;
            trace.push(TracePoint { step: t, eta, loss: l });
        }
        let g = match cfg.mode {
            GradientMode::Stochastic => {
                mc_nce_grad(&z, rho, k, loss, cfg.batch, derive(run_seed, &[0, t as u64]))?
            }
            GradientMode::ExactGradient => exact_nce_grad(&z, rho, k, loss)?,
        };
        let candidate = z.matrix() - g * eta;
        let outcome =
            project_correlation_outcome(&candidate, cfg.projection_tol, cfg.projection_max_iter)?;
        if outcome.converged || outcome.residual <= 10.0 * cfg.projection_tol {
            match CorrelationMatrix::new(outcome.matrix) {
                Ok(next) => z = next,
                Err(_) => projection_failures += 1,
            }
        } else {
            projection_failures += 1;
        }
    }
    let final_loss = trace_loss(&z, rho, k, loss, derive(run_seed, &[1, cfg.steps as u64]))?;
    trace.push(TracePoint {
        step: cfg.steps,
        eta: cfg.eta0 / (cfg.steps as f64 + 1.0),
        loss: final_loss,
    });

    if let Some(dir) = &cfg.trace_dir {
        write_trace(dir, run_index, &trace)?;
    }

    Ok(RunResult {
        final_z: z,
        loss_trace: trace,
        seed_used: run_seed,
        projection_failures,
    })
}

fn write_trace(dir: &std::path::Path, run_index: usize, trace: &[TracePoint]) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Numeric(format!("cannot create trace dir: {e}")))?;
    let path = dir.join(format!("run_{run_index}.csv"));
    let mut f = std::fs::File::create(&path)
        .map_err(|e| Error::Numeric(format!("cannot create {}: {e}", path.display())))?;
    writeln!(f, "step,eta,mc_loss_estimate")
        .and_then(|_| {
            for p in trace {
                writeln!(f, "{},{},{}", p.step, p.eta, p.loss)?;
            }
            Ok(())
        })
        .map_err(|e| Error::Numeric(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Entrywise mean of the runs' final iterates, re-projected onto the
/// correlation matrices (the mean of feasible points can lose positive
/// semidefiniteness at rounding scale).
pub fn aggregate_runs(results: &[RunResult]) -> Result<CorrelationMatrix> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no runs to aggregate".into()));
    }
    let c = results[0].final_z.size();
    for r in results {
        if r.final_z.size() != c {
            return Err(Error::InvalidArgument(
                "runs disagree on the number of classes".into(),
            ));
        }
    }
    let mut mean = DMatrix::zeros(c, c);
    for r in results {
        mean += r.final_z.matrix();
    }
    mean /= results.len() as f64;
    project_correlation(&mean, 1e-8, 200)
}

/// Output of [`solve_nce_optimal`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z: CorrelationMatrix,
    pub representation: Representation,
    /// Contrastive loss of `z`; exact when the enumeration fits the capacity
    /// cap, otherwise a 1e6-sample Monte Carlo estimate.
    pub nce_loss: f64,
    pub loss_is_exact: bool,
    pub projection_failures: usize,
}

const SOLVE_MC_SAMPLES: usize = 1_000_000;

/// Full pipeline: `cfg.runs` independent projected-gradient runs on
/// substream seeds, mean aggregation, projection, and embedding extraction.
/// Runs execute concurrently under the `parallel` feature; results are
/// combined in run-index order so the output does not depend on scheduling.
pub fn solve_nce_optimal(
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    cfg: &OptimizerConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    let results: Vec<Result<RunResult>> =
        map_chunks(cfg.runs, |run_index| psgd_run(rho, k, loss, cfg, run_index));
    let mut runs = Vec::with_capacity(cfg.runs);
    for r in results {
        runs.push(r?);
    }
    let projection_failures = runs.iter().map(|r| r.projection_failures).sum();
    let z = aggregate_runs(&runs)?;
    let representation = z.factor()?;
    let (nce_loss, loss_is_exact) = if enumeration_size(rho.len(), k) <= EXACT_TERM_CAP {
        (exact_nce_loss(&z, rho, k, loss)?, true)
    } else {
        let mc = NCEConfig {
            k,
            mode: EvalMode::MonteCarlo,
            mc_samples: SOLVE_MC_SAMPLES,
            seed: derive(cfg.seed, &[0xeba1]),
        };
        (mc_nce_loss(&z, rho, k, loss, &mc)?.0, false)
    };
    Ok(SolveResult {
        z,
        representation,
        nce_loss,
        loss_is_exact,
        projection_failures,
    })
}
