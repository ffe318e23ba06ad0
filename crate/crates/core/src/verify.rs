//! Cross-module self-checks: structural theorems, oracle agreements, and
//! property suites, packaged as named pass/fail results for the CLI.

use crate::bounds::{beta_improved, validate_improved_bound};
use crate::error::Result;
use crate::latent::{random_correlation, simplex_etf, ClassDistribution, CorrelationMatrix};
use crate::losses::{self, LossSpec};
use crate::metrics::angle_proxy;
use crate::nce::{
    collapse_check, exact_nce_grad, exact_nce_loss, mc_nce_loss, AtomizedModel, EvalMode,
    NCEConfig,
};
use crate::opt::{project_correlation, solve_nce_optimal, OptimizerConfig};
use crate::seeding::{derive, Stream};
use nalgebra::DMatrix;

/// How much work the suite does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    /// Everything in `Quick` plus the 400-run optimization pipeline smoke
    /// test at C = 3.
    Full,
}

/// One named check with its outcome and a human-readable detail line. A
/// failing check's detail carries the counterexample.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckResult {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        CheckResult {
            name,
            passed: false,
            detail,
        }
    }

    fn from_err(name: &'static str, e: &crate::error::Error) -> Self {
        CheckResult::fail(name, format!("errored: {e}"))
    }
}

/// Runs the suite at the given level. All randomness is derived from `seed`,
/// so reruns are identical.
pub fn run_suite(level: VerifyLevel, seed: u64) -> Vec<CheckResult> {
    let mut out = vec![
        check_sub_additivity_random(derive(seed, &[1]), 10_000),
        check_sub_additivity_counterexample(),
        check_etf_dominance(derive(seed, &[2]), 100),
        check_collapse(derive(seed, &[3]), 50),
        check_grad_finite_difference(derive(seed, &[4]), 20),
        check_mc_exact_agreement(derive(seed, &[5]), 100_000),
        check_factor_roundtrip(derive(seed, &[6]), 50),
        check_projection_minimality(derive(seed, &[7]), 30, 50),
        check_bound_coefficients(),
        check_structure_anchors(),
    ];
    if level == VerifyLevel::Full {
        out.push(check_pipeline_smoke(derive(seed, &[8])));
    }
    out
}

fn random_args(rng: &mut Stream, len: usize) -> Vec<f64> {
    (0..len).map(|_| 6.0 * rng.next_f64() - 3.0).collect()
}

/// Sub-additivity margin nonnegative for logistic and hinge over random
/// `(v, S, beta)` instances.
pub fn check_sub_additivity_random(seed: u64, instances: usize) -> CheckResult {
    const NAME: &str = "sub_additivity_random";
    let mut rng = Stream::new(seed);
    let betas = [0.5, 1.0, 2.0, 5.0];
    for t in 0..instances {
        let len = 1 + (rng.next_u64() % 8) as usize;
        let v = random_args(&mut rng, len);
        let mut subset: Vec<usize> =
            (0..len).filter(|_| rng.next_f64() < 0.5).collect();
        if subset.is_empty() {
            subset.push((rng.next_u64() % len as u64) as usize);
        }
        let beta = betas[(rng.next_u64() % 4) as usize];
        for spec in [LossSpec::logistic(beta).unwrap(), LossSpec::hinge(beta).unwrap()] {
            match losses::check_sub_additivity(&spec, &v, &subset) {
                Ok(margin) if margin >= -1e-9 => {}
                Ok(margin) => {
                    return CheckResult::fail(
                        NAME,
                        format!(
                            "instance {t}: margin {margin} < -1e-9 for {:?} beta {beta}, v {v:?}, subset {subset:?}",
                            spec.kind
                        ),
                    )
                }
                Err(e) => return CheckResult::from_err(NAME, &e),
            }
        }
    }
    CheckResult::pass(NAME, format!("{instances} instances, no violations"))
}

/// The square-sum loss violates sub-additivity with margin exactly -1 on
/// `v = (0, 1)`, `S = {1, 2}`; seeing the violation is the pass condition.
pub fn check_sub_additivity_counterexample() -> CheckResult {
    const NAME: &str = "sub_additivity_counterexample";
    match losses::check_sub_additivity(&LossSpec::square_sum_test(), &[0.0, 1.0], &[0, 1]) {
        Ok(margin) if margin == -1.0 => {
            CheckResult::pass(NAME, "square_sum margin is -1 exactly, as expected".into())
        }
        Ok(margin) => CheckResult::fail(NAME, format!("expected margin -1, got {margin}")),
        Err(e) => CheckResult::from_err(NAME, &e),
    }
}

/// The ETF Gram's exact loss is never beaten by random correlation matrices.
pub fn check_etf_dominance(seed: u64, per_config: usize) -> CheckResult {
    const NAME: &str = "etf_dominance";
    let mut tried = 0usize;
    for c in [3usize, 5] {
        let rho = match ClassDistribution::uniform(c) {
            Ok(r) => r,
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        let etf = match simplex_etf(c) {
            Ok(u) => u.gram(),
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        for k in [1usize, 2] {
            for spec in [LossSpec::logistic(1.0).unwrap(), LossSpec::hinge(1.0).unwrap()] {
                let etf_loss = match exact_nce_loss(&etf, &rho, k, &spec) {
                    Ok(l) => l,
                    Err(e) => return CheckResult::from_err(NAME, &e),
                };
                for i in 0..per_config {
                    let z = match random_correlation(
                        c,
                        derive(seed, &[c as u64, k as u64, i as u64]),
                    ) {
                        Ok(z) => z,
                        Err(e) => return CheckResult::from_err(NAME, &e),
                    };
                    let l = match exact_nce_loss(&z, &rho, k, &spec) {
                        Ok(l) => l,
                        Err(e) => return CheckResult::from_err(NAME, &e),
                    };
                    tried += 1;
                    if etf_loss > l + 1e-9 {
                        return CheckResult::fail(
                            NAME,
                            format!(
                                "C={c} k={k} {:?}: random Z beat ETF ({l} < {etf_loss}), Z = {:?}",
                                spec.kind,
                                z.matrix()
                            ),
                        );
                    }
                }
            }
        }
    }
    CheckResult::pass(NAME, format!("{tried} random matrices, ETF never beaten"))
}

/// Builds a random atomized model; the fine Gram is the Gram of random unit
/// vectors, so it is strictly positive definite with probability one.
pub fn random_atomized_model(seed: u64) -> Result<AtomizedModel> {
    let mut rng = Stream::new(seed);
    let c = 2 + (rng.next_u64() % 2) as usize;
    let atoms_per: Vec<usize> = (0..c).map(|_| 1 + (rng.next_u64() % 3) as usize).collect();
    let total: usize = atoms_per.iter().sum();
    let zfine = random_correlation(total, rng.next_u64())?;
    let mut class_of = Vec::with_capacity(total);
    for (cl, &n) in atoms_per.iter().enumerate() {
        class_of.extend(std::iter::repeat_n(cl, n));
    }
    let mut within = Vec::with_capacity(c);
    for &n in &atoms_per {
        let mut w: Vec<f64> = (0..n).map(|_| 0.1 + rng.next_f64()).collect();
        let s: f64 = w.iter().sum();
        for x in &mut w {
            *x /= s;
        }
        let partial: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - partial;
        within.push(w);
    }
    let rho = ClassDistribution::dirichlet(c, 2.0, rng.next_u64())?;
    AtomizedModel::new(zfine, class_of, within, rho)
}

/// Collapsing each class to one representative never increases the loss, and
/// strictly decreases it whenever some class is not already collapsed.
pub fn check_collapse(seed: u64, models: usize) -> CheckResult {
    const NAME: &str = "collapse_improves";
    let spec = LossSpec::logistic(1.0).unwrap();
    for i in 0..models {
        let model = match random_atomized_model(derive(seed, &[i as u64])) {
            Ok(m) => m,
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        let k = 1 + (i % 3);
        let report = match collapse_check(&model, k, &spec) {
            Ok(r) => r,
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        if report.best_collapsed_loss > report.atomized_loss + 1e-9 {
            return CheckResult::fail(
                NAME,
                format!(
                    "model {i} k={k}: best collapsed {} > atomized {}",
                    report.best_collapsed_loss, report.atomized_loss
                ),
            );
        }
        if !model.is_class_collapsed(1e-9)
            && report.atomized_loss - report.best_collapsed_loss <= 1e-6
        {
            return CheckResult::fail(
                NAME,
                format!(
                    "model {i} k={k}: expected strict improvement, got {} vs {}",
                    report.best_collapsed_loss, report.atomized_loss
                ),
            );
        }
    }
    CheckResult::pass(NAME, format!("{models} random atomized models"))
}

/// Strictly positive definite random correlation matrix: a blend of a random
/// one with the identity, so finite-difference perturbations stay feasible.
fn random_pd_correlation(c: usize, seed: u64) -> Result<CorrelationMatrix> {
    let z = random_correlation(c, seed)?;
    let blended = z.matrix() * 0.9 + DMatrix::identity(c, c) * 0.1;
    CorrelationMatrix::new(blended)
}

fn fd_check_impl<G>(seed: u64, instances: usize, name: &'static str, grad_fn: G) -> CheckResult
where
    G: Fn(&CorrelationMatrix, &ClassDistribution, usize, &LossSpec) -> Result<DMatrix<f64>>,
{
    let h = 1e-6;
    let mut rng = Stream::new(seed);
    for t in 0..instances {
        let c = 2 + (rng.next_u64() % 3) as usize;
        let k = 1 + (rng.next_u64() % 3) as usize;
        let beta = [0.5, 1.0, 2.0][(rng.next_u64() % 3) as usize];
        let spec = LossSpec::logistic(beta).unwrap();
        let rho = match ClassDistribution::dirichlet(c, 3.0, rng.next_u64()) {
            Ok(r) => r,
            Err(e) => return CheckResult::from_err(name, &e),
        };
        let z = match random_pd_correlation(c, rng.next_u64()) {
            Ok(z) => z,
            Err(e) => return CheckResult::from_err(name, &e),
        };
        let g = match grad_fn(&z, &rho, k, &spec) {
            Ok(g) => g,
            Err(e) => return CheckResult::from_err(name, &e),
        };
        for i in 0..c {
            for j in (i + 1)..c {
                // Perturb (i, j) and (j, i) together: the symmetric pair is
                // one coordinate of the feasible set, so the finite
                // difference equals twice the symmetrized gradient entry.
                let mut plus = z.matrix().clone();
                plus[(i, j)] += h;
                plus[(j, i)] += h;
                let mut minus = z.matrix().clone();
                minus[(i, j)] -= h;
                minus[(j, i)] -= h;
                let lp = CorrelationMatrix::new(plus)
                    .and_then(|m| exact_nce_loss(&m, &rho, k, &spec));
                let lm = CorrelationMatrix::new(minus)
                    .and_then(|m| exact_nce_loss(&m, &rho, k, &spec));
                let (lp, lm) = match (lp, lm) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) => return CheckResult::from_err(name, &e),
                };
                let fd = (lp - lm) / (2.0 * h);
                let analytic = 2.0 * g[(i, j)];
                let scale = fd.abs().max(analytic.abs()).max(1e-8);
                if (fd - analytic).abs() / scale > 1e-5 {
                    return CheckResult::fail(
                        name,
                        format!(
                            "instance {t} entry ({i},{j}): finite difference {fd} vs analytic {analytic} (C={c}, k={k}, beta={beta})"
                        ),
                    );
                }
            }
        }
    }
    CheckResult::pass(name, format!("{instances} random instances within 1e-5"))
}

/// Exact gradient matches central finite differences of the exact loss.
pub fn check_grad_finite_difference(seed: u64, instances: usize) -> CheckResult {
    fd_check_impl(seed, instances, "grad_finite_difference", |z, rho, k, spec| {
        exact_nce_grad(z, rho, k, spec)
    })
}

/// Monte Carlo estimate agrees with the exact loss within sampling error.
pub fn check_mc_exact_agreement(seed: u64, samples: usize) -> CheckResult {
    const NAME: &str = "mc_exact_agreement";
    let c = 5;
    let k = 3;
    let spec = LossSpec::logistic(1.0).unwrap();
    let rho = match ClassDistribution::uniform(c) {
        Ok(r) => r,
        Err(e) => return CheckResult::from_err(NAME, &e),
    };
    let z = match random_correlation(c, derive(seed, &[0])) {
        Ok(z) => z,
        Err(e) => return CheckResult::from_err(NAME, &e),
    };
    let exact = match exact_nce_loss(&z, &rho, k, &spec) {
        Ok(l) => l,
        Err(e) => return CheckResult::from_err(NAME, &e),
    };
    let cfg = NCEConfig {
        k,
        mode: EvalMode::MonteCarlo,
        mc_samples: samples,
        seed: derive(seed, &[1]),
    };
    match mc_nce_loss(&z, &rho, k, &spec, &cfg) {
        Ok((est, stderr)) => {
            let dev = (est - exact).abs();
            if dev <= 4.0 * stderr && dev <= 0.01 {
                CheckResult::pass(
                    NAME,
                    format!("|mc - exact| = {dev:.2e} with stderr {stderr:.2e} over {samples} samples"),
                )
            } else {
                CheckResult::fail(
                    NAME,
                    format!("mc {est} vs exact {exact}: deviation {dev:.2e}, stderr {stderr:.2e}"),
                )
            }
        }
        Err(e) => CheckResult::from_err(NAME, &e),
    }
}

/// `gram(factor(Z))` returns `Z` up to Frobenius error 1e-8.
pub fn check_factor_roundtrip(seed: u64, instances: usize) -> CheckResult {
    const NAME: &str = "factor_gram_roundtrip";
    for i in 0..instances {
        let c = 2 + (i % 7);
        let z = match random_correlation(c, derive(seed, &[i as u64])) {
            Ok(z) => z,
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        let back = match z.factor() {
            Ok(u) => u.gram(),
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        let err = (back.matrix() - z.matrix()).norm();
        if err > 1e-8 {
            return CheckResult::fail(
                NAME,
                format!("instance {i} (C={c}): roundtrip Frobenius error {err:.2e}"),
            );
        }
    }
    CheckResult::pass(NAME, format!("{instances} random matrices within 1e-8"))
}

/// Random symmetric unit-diagonal matrix with off-diagonals in `[-1, 1]`;
/// typically indefinite for larger sizes.
pub fn random_symmetric_unit_diag(c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = Stream::new(seed);
    let mut m = DMatrix::identity(c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let v = 2.0 * rng.next_f64() - 1.0;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// The projection output is feasible and at least as close to the input as
/// random feasible points.
pub fn check_projection_minimality(seed: u64, inputs: usize, competitors: usize) -> CheckResult {
    const NAME: &str = "projection_minimality";
    for i in 0..inputs {
        let c = [3usize, 5, 8][i % 3];
        let a = random_symmetric_unit_diag(c, derive(seed, &[i as u64, 0]));
        let p = match project_correlation(&a, 1e-8, 200) {
            Ok(p) => p,
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        if p.min_eigenvalue() < -1e-8 {
            return CheckResult::fail(
                NAME,
                format!("input {i}: projection min eigenvalue {}", p.min_eigenvalue()),
            );
        }
        let dist = (p.matrix() - &a).norm();
        for j in 0..competitors {
            let q = match random_correlation(c, derive(seed, &[i as u64, 1, j as u64])) {
                Ok(q) => q,
                Err(e) => return CheckResult::from_err(NAME, &e),
            };
            let qd = (q.matrix() - &a).norm();
            if dist > qd + 1e-6 {
                return CheckResult::fail(
                    NAME,
                    format!(
                        "input {i}: random feasible point is closer ({qd} < {dist}), input = {a:?}"
                    ),
                );
            }
        }
    }
    CheckResult::pass(
        NAME,
        format!("{inputs} indefinite inputs vs {competitors} feasible competitors each"),
    )
}

/// Closed-form coefficient facts: the improved coefficient floors at 4 for
/// large k and is non-increasing, and the bound holds on sampled losses.
pub fn check_bound_coefficients() -> CheckResult {
    const NAME: &str = "bound_coefficients";
    let rho10 = match ClassDistribution::uniform(10) {
        Ok(r) => r,
        Err(e) => return CheckResult::from_err(NAME, &e),
    };
    let mut prev = f64::INFINITY;
    for k in 10..=200 {
        let b = match beta_improved(&rho10, k) {
            Ok(b) => b,
            Err(e) => return CheckResult::from_err(NAME, &e),
        };
        if b > prev + 1e-12 {
            return CheckResult::fail(NAME, format!("coefficient increased at k={k}: {b} > {prev}"));
        }
        if k >= 47 && (b - 4.0).abs() > 1e-12 {
            return CheckResult::fail(NAME, format!("expected coefficient 4 at k={k}, got {b}"));
        }
        prev = b;
    }
    let rho4 = ClassDistribution::uniform(4).unwrap();
    let etf = simplex_etf(4).unwrap().gram();
    let spec = LossSpec::logistic(1.0).unwrap();
    let nce = match exact_nce_loss(&etf, &rho4, 8, &spec) {
        Ok(l) => l,
        Err(e) => return CheckResult::from_err(NAME, &e),
    };
    match validate_improved_bound(&rho4, 8, (4.0f64).ln(), nce) {
        Ok(rep) if rep.holds => {
            CheckResult::pass(NAME, "floor at 4, non-increasing over 10..=200, bound holds".into())
        }
        Ok(rep) => CheckResult::fail(NAME, format!("bound violated: slack {}", rep.slack)),
        Err(e) => CheckResult::from_err(NAME, &e),
    }
}

/// Analytic geometry anchors: ETF off-diagonals and the angle proxy.
pub fn check_structure_anchors() -> CheckResult {
    const NAME: &str = "structure_anchors";
    let etf5 = match simplex_etf(5) {
        Ok(u) => u.gram(),
        Err(e) => return CheckResult::from_err(NAME, &e),
    };
    let (mean5, std5) = etf5.offdiag_stats();
    if (mean5 + 0.25).abs() > 1e-9 || std5 > 1e-9 {
        return CheckResult::fail(NAME, format!("ETF(5) off-diagonals: mean {mean5}, std {std5}"));
    }
    let etf100 = match simplex_etf(100) {
        Ok(u) => u.gram(),
        Err(e) => return CheckResult::from_err(NAME, &e),
    };
    let (mean100, _) = etf100.offdiag_stats();
    if (mean100 + 1.0 / 99.0).abs() > 1e-9 {
        return CheckResult::fail(NAME, format!("ETF(100) off-diagonal mean {mean100}"));
    }
    match angle_proxy(0.52) {
        Ok(deg) if (deg - 42.268).abs() < 0.05 => CheckResult::pass(
            NAME,
            format!("ETF(5) -0.25, ETF(100) -1/99, angle(0.52) = {deg:.2} deg"),
        ),
        Ok(deg) => CheckResult::fail(NAME, format!("angle_proxy(0.52) = {deg}")),
        Err(e) => CheckResult::from_err(NAME, &e),
    }
}

/// Full-level only: the default 400-run stochastic pipeline at C = 3 with
/// uniform classes recovers the ETF geometry.
pub fn check_pipeline_smoke(seed: u64) -> CheckResult {
    const NAME: &str = "pipeline_smoke_c3";
    let rho = ClassDistribution::uniform(3).unwrap();
    let spec = LossSpec::logistic(1.0).unwrap();
    let cfg = OptimizerConfig {
        seed,
        ..OptimizerConfig::default()
    };
    match solve_nce_optimal(&rho, 2, &spec, &cfg) {
        Ok(res) => {
            let (mean, std) = res.z.offdiag_stats();
            if (mean + 0.5).abs() <= 0.05 && std <= 0.05 {
                CheckResult::pass(
                    NAME,
                    format!(
                        "400-run aggregate off-diagonals: mean {mean:.4} (target -0.5), std {std:.4}"
                    ),
                )
            } else {
                CheckResult::fail(
                    NAME,
                    format!("aggregate off-diagonals: mean {mean}, std {std}, target -0.5"),
                )
            }
        }
        Err(e) => CheckResult::from_err(NAME, &e),
    }
}
