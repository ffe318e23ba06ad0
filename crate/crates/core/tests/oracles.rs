//! Independent oracles: every derived quantity is recomputed here by a
//! different algorithm (ordered-tuple brute force, finite differences, grid
//! search) and compared against the library's implementation.

use approx::assert_relative_eq;
use contragram::downstream::{optimize_sup, sup_loss, DownstreamWeights, SupOptConfig};
use contragram::latent::{random_correlation, simplex_etf, CorrelationMatrix};
use contragram::losses;
use contragram::nce::{
    exact_nce_grad, exact_nce_loss, exact_nce_loss_atomized, mc_nce_loss, AtomizedModel, EvalMode,
    NCEConfig,
};
use contragram::opt::project_correlation;
use contragram::seeding::derive;
use contragram::{ClassDistribution, LossSpec};
use nalgebra::DMatrix;

/// Brute-force population NCE loss: enumerate every ordered tuple of k
/// negative classes and feed the full k-vector of margins to the scalar
/// loss. No compositions, no count expansion.
fn brute_force_nce(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    spec: &LossSpec,
) -> f64 {
    let c = rho.len();
    let mut total = 0.0;
    for anchor in 0..c {
        let mut tuple = vec![0usize; k];
        'tuples: loop {
            let p: f64 = tuple.iter().map(|&j| rho.prob(j)).product();
            let v: Vec<f64> = tuple
                .iter()
                .map(|&j| z.entry(anchor, anchor) - z.entry(anchor, j))
                .collect();
            total += rho.prob(anchor) * p * losses::eval(spec, &v).unwrap();
            for slot in tuple.iter_mut() {
                *slot += 1;
                if *slot < c {
                    continue 'tuples;
                }
                *slot = 0;
            }
            break;
        }
    }
    total
}

#[test]
fn exact_loss_matches_ordered_tuple_enumeration() {
    for (i, &(c, k)) in [(2usize, 1usize), (3, 2), (3, 3), (4, 2)].iter().enumerate() {
        let rho = ClassDistribution::dirichlet(c, 2.0, 100 + i as u64).unwrap();
        let z = random_correlation(c, 200 + i as u64).unwrap();
        for spec in [LossSpec::logistic(1.5).unwrap(), LossSpec::hinge(0.75).unwrap()] {
            let fast = exact_nce_loss(&z, &rho, k, &spec).unwrap();
            let slow = brute_force_nce(&z, &rho, k, &spec);
            assert_relative_eq!(fast, slow, epsilon = 1e-10);
        }
    }
}

#[test]
fn etf_c2_k1_logistic_value() {
    // Half the draws collide (argument 0, loss ln 2); the other half see the
    // antipodal class (argument 2).
    let z = simplex_etf(2).unwrap().gram();
    let rho = ClassDistribution::uniform(2).unwrap();
    let spec = LossSpec::logistic(1.0).unwrap();
    let l = exact_nce_loss(&z, &rho, 1, &spec).unwrap();
    let expect = 0.5 * 2.0f64.ln() + 0.5 * (1.0 + (-2.0f64).exp()).ln();
    assert_relative_eq!(l, expect, epsilon = 1e-12);
    assert_relative_eq!(l, 0.410038, epsilon = 1e-6);
}

#[test]
fn all_ones_z_gives_ln_1_plus_k() {
    let z = CorrelationMatrix::all_ones(5).unwrap();
    let rho = ClassDistribution::uniform(5).unwrap();
    let spec = LossSpec::logistic(1.0).unwrap();
    let l = exact_nce_loss(&z, &rho, 7, &spec).unwrap();
    assert_relative_eq!(l, 8.0f64.ln(), epsilon = 1e-12);
}

/// Strictly positive definite random correlation matrix so that small
/// perturbations stay inside the feasible set.
fn random_pd(c: usize, seed: u64) -> CorrelationMatrix {
    let z = random_correlation(c, seed).unwrap();
    CorrelationMatrix::new(z.matrix() * 0.9 + DMatrix::identity(c, c) * 0.1).unwrap()
}

#[test]
fn exact_grad_matches_finite_differences() {
    // The feasible coordinate is the symmetric pair (i, j) + (j, i), so the
    // finite difference along it equals twice the symmetrized gradient.
    let h = 1e-6;
    let mut checked = 0;
    for t in 0..100u64 {
        let c = 2 + (t % 3) as usize;
        let k = 1 + (t % 3) as usize;
        let rho = ClassDistribution::dirichlet(c, 3.0, derive(1, &[t])).unwrap();
        let z = random_pd(c, derive(2, &[t]));
        let spec = LossSpec::logistic([0.5, 1.0, 2.0][(t % 3) as usize]).unwrap();
        let g = exact_nce_grad(&z, &rho, k, &spec).unwrap();
        for i in 0..c {
            for j in (i + 1)..c {
                let mut plus = z.matrix().clone();
                plus[(i, j)] += h;
                plus[(j, i)] += h;
                let mut minus = z.matrix().clone();
                minus[(i, j)] -= h;
                minus[(j, i)] -= h;
                let lp =
                    exact_nce_loss(&CorrelationMatrix::new(plus).unwrap(), &rho, k, &spec).unwrap();
                let lm =
                    exact_nce_loss(&CorrelationMatrix::new(minus).unwrap(), &rho, k, &spec)
                        .unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let analytic = 2.0 * g[(i, j)];
                assert!(
                    (fd - analytic).abs() <= 1e-5 * fd.abs().max(analytic.abs()).max(1e-8),
                    "instance {t} entry ({i},{j}): fd {fd} vs analytic {analytic}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn c2_analytic_gradient() {
    // C=2 uniform, k=1, logistic: only the collision-free draws depend on z,
    // so dL/dz = -1/2 d/dz ln(1 + e^{-beta(1-z)}) per ordered pair, and the
    // symmetrized entry is half the total derivative.
    let beta = 1.3;
    let z_off = -0.4;
    let spec = LossSpec::logistic(beta).unwrap();
    let rho = ClassDistribution::uniform(2).unwrap();
    let m = DMatrix::from_row_slice(2, 2, &[1.0, z_off, z_off, 1.0]);
    let z = CorrelationMatrix::new(m).unwrap();
    let g = exact_nce_grad(&z, &rho, 1, &spec).unwrap();
    let e = (-beta * (1.0 - z_off)).exp();
    let total_derivative = 0.5 * beta * e / (1.0 + e);
    assert_relative_eq!(2.0 * g[(0, 1)], total_derivative, epsilon = 1e-12);
}

#[test]
fn mc_agrees_with_exact_within_sampling_error() {
    let c = 4;
    let k = 2;
    let rho = ClassDistribution::dirichlet(c, 2.0, 31).unwrap();
    let z = random_correlation(c, 32).unwrap();
    let spec = LossSpec::logistic(1.0).unwrap();
    let exact = exact_nce_loss(&z, &rho, k, &spec).unwrap();
    let cfg = NCEConfig {
        k,
        mode: EvalMode::MonteCarlo,
        mc_samples: 200_000,
        seed: 33,
    };
    let (est, se) = mc_nce_loss(&z, &rho, k, &spec, &cfg).unwrap();
    assert!(
        (est - exact).abs() <= 4.0 * se,
        "mc {est} vs exact {exact}, stderr {se}"
    );
}

/// Brute-force atomized loss over ordered atom tuples.
fn brute_force_atomized(model: &AtomizedModel, k: usize, spec: &LossSpec) -> f64 {
    let zf = model.zfine().matrix();
    let marginal = model.atom_marginal();
    let atoms = model.num_atoms();
    let mut total = 0.0;
    for c in 0..model.num_classes() {
        let class_atoms = model.atoms_of_class(c);
        for (ai, &a) in class_atoms.iter().enumerate() {
            for (bi, &b) in class_atoms.iter().enumerate() {
                let pair_w = model.rho().prob(c)
                    * model.within_prob(c, ai)
                    * model.within_prob(c, bi);
                let mut tuple = vec![0usize; k];
                'tuples: loop {
                    let p: f64 = tuple.iter().map(|&n| marginal[n]).product();
                    let v: Vec<f64> =
                        tuple.iter().map(|&n| zf[(a, b)] - zf[(a, n)]).collect();
                    total += pair_w * p * losses::eval(spec, &v).unwrap();
                    for slot in tuple.iter_mut() {
                        *slot += 1;
                        if *slot < atoms {
                            continue 'tuples;
                        }
                        *slot = 0;
                    }
                    break;
                }
            }
        }
    }
    total
}

#[test]
fn atomized_loss_matches_ordered_tuple_enumeration() {
    for seed in 0..6u64 {
        let model = contragram::verify::random_atomized_model(derive(77, &[seed])).unwrap();
        for k in [1usize, 2] {
            let spec = LossSpec::logistic(1.0).unwrap();
            let fast = exact_nce_loss_atomized(&model, k, &spec).unwrap();
            let slow = brute_force_atomized(&model, k, &spec);
            assert_relative_eq!(fast, slow, epsilon = 1e-10);
        }
    }
}

#[test]
fn downstream_optimum_matches_grid_search_c2() {
    // C=2, d=2, unit-norm heads: the logistic objective decreases along every
    // ray, so the optimum lies on the unit circle and a fine angular grid
    // brackets it.
    let u = simplex_etf(2).unwrap();
    let rho = ClassDistribution::uniform(2).unwrap();
    let spec = LossSpec::logistic(1.0).unwrap();
    let (_, opt) = optimize_sup(&u, &rho, &spec, &SupOptConfig::default()).unwrap();

    let steps = 720;
    let mut best = f64::INFINITY;
    for i in 0..steps {
        let t0 = 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
        for j in 0..steps {
            let t1 = 2.0 * std::f64::consts::PI * j as f64 / steps as f64;
            let w = DMatrix::from_row_slice(2, 2, &[t0.cos(), t0.sin(), t1.cos(), t1.sin()]);
            let w = DownstreamWeights::new(w).unwrap();
            let v = sup_loss(&u, &w, &rho, &spec).unwrap();
            if v < best {
                best = v;
            }
        }
    }
    assert!(
        opt <= best + 1e-6,
        "optimizer {opt} worse than grid minimum {best}"
    );
    assert!(
        opt >= best - 1e-3,
        "optimizer {opt} suspiciously below grid minimum {best}"
    );
}

#[test]
fn projection_of_supercorrelated_2x2_saturates() {
    // Nearest correlation matrix to [[1, 1.5], [1.5, 1]] clamps the
    // off-diagonal to 1.
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
    let p = project_correlation(&a, 1e-10, 500).unwrap();
    assert_relative_eq!(p.entry(0, 1), 1.0, epsilon = 1e-6);
}

#[test]
fn projection_not_beaten_by_perturbed_feasible_points() {
    // Local optimality probe: nudging the projection toward other feasible
    // points never gets closer to the input.
    let a = contragram::verify::random_symmetric_unit_diag(4, 99);
    let p = project_correlation(&a, 1e-9, 500).unwrap();
    let dist = (p.matrix() - &a).norm();
    for s in 0..50u64 {
        let q = random_correlation(4, derive(98, &[s])).unwrap();
        for t in [0.01, 0.05, 0.2] {
            let blend = p.matrix() * (1.0 - t) + q.matrix() * t;
            let blend = CorrelationMatrix::new(blend).unwrap();
            let d = (blend.matrix() - &a).norm();
            assert!(
                d >= dist - 1e-9,
                "blend toward competitor {s} at t={t} is closer: {d} < {dist}"
            );
        }
    }
}
