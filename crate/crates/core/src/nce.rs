//! Population contrastive loss and gradient in Gram-matrix form, both exact
//! (enumeration over negative-class compositions) and Monte Carlo, plus the
//! atomized within-class model used to check numerically that collapsing each
//! class onto one representative never increases the loss.

use crate::error::{Error, Result};
use crate::latent::{sample_class, ClassDistribution, CorrelationMatrix};
use crate::losses::{LossKind, LossSpec};
use crate::parallel::{chunk_len, map_chunks, n_chunks, MC_CHUNK};
use crate::seeding::{derive, Stream};
use nalgebra::DMatrix;

/// Maximum number of evaluated terms an exact enumeration may touch.
pub const EXACT_TERM_CAP: u128 = 10_000_000;

/// How the contrastive loss should be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Exact,
    MonteCarlo,
}

/// Configuration for the contrastive objective evaluators.
#[derive(Debug, Clone, Copy)]
pub struct NCEConfig {
    /// Number of negative samples per anchor.
    pub k: usize,
    pub mode: EvalMode,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Number of terms an exact evaluation enumerates: `C * binom(k+C-1, C-1)`.
pub fn enumeration_size(c: usize, k: usize) -> u128 {
    compositions_count(k, c).saturating_mul(c as u128)
}

/// `binom(k + parts - 1, parts - 1)`: weak compositions of `k` into `parts`.
pub fn compositions_count(k: usize, parts: usize) -> u128 {
    if parts == 0 {
        return 0;
    }
    let n = (k + parts - 1) as u128;
    let r = (parts - 1) as u128;
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Visits every weak composition of `k` into `parts` parts, in lexicographic
/// order of the leading coordinates.
pub fn for_each_composition<F: FnMut(&[u32])>(k: usize, parts: usize, f: &mut F) {
    fn rec<F: FnMut(&[u32])>(buf: &mut Vec<u32>, rem: u32, left: usize, f: &mut F) {
        if left == 1 {
            buf.push(rem);
            f(buf);
            buf.pop();
            return;
        }
        for v in 0..=rem {
            buf.push(v);
            rec(buf, rem - v, left - 1, f);
            buf.pop();
        }
    }
    if parts == 0 {
        return;
    }
    rec(&mut Vec::with_capacity(parts), k as u32, parts, f);
}

/// ln(i!) for i in 0..=k.
fn log_factorials(k: usize) -> Vec<f64> {
    let mut lf = vec![0.0; k + 1];
    for i in 1..=k {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    lf
}

/// Loss of the count-expanded argument vector `<1 - Z_{c,j}>` with class `j`
/// repeated `n_j` times. O(C) per call; no k-length vector is materialized.
///
/// `w` is the precomputed row `exp(-beta (1 - Z_{c,j}))` for the logistic
/// loss (ignored for hinge).
#[inline]
fn count_loss(spec: &LossSpec, z_row: &[f64], w_row: &[f64], counts: &[u32]) -> f64 {
    match spec.kind {
        LossKind::Logistic => {
            let mut s = 1.0;
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 {
                    s += n as f64 * w_row[j];
                }
            }
            s.ln()
        }
        LossKind::Hinge => {
            let mut worst = 0.0f64;
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 {
                    worst = worst.max(1.0 - spec.beta * (1.0 - z_row[j]));
                }
            }
            worst
        }
        LossKind::SquareSumTest => unreachable!("rejected by evaluators"),
    }
}

/// Accumulates the gradient of [`count_loss`] with respect to `Z_{c,j}` into
/// `g_row`, scaled by `weight`.
#[inline]
fn count_loss_grad(
    spec: &LossSpec,
    z_row: &[f64],
    w_row: &[f64],
    counts: &[u32],
    weight: f64,
    g_row: &mut [f64],
) {
    match spec.kind {
        LossKind::Logistic => {
            let mut denom = 1.0;
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 {
                    denom += n as f64 * w_row[j];
                }
            }
            let coef = weight * spec.beta / denom;
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 {
                    g_row[j] += coef * n as f64 * w_row[j];
                }
            }
        }
        LossKind::Hinge => {
            // Subgradient goes to the lowest-index class attaining the max.
            let mut worst = 0.0f64;
            let mut arg = None;
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 {
                    let m = 1.0 - spec.beta * (1.0 - z_row[j]);
                    if m > worst {
                        worst = m;
                        arg = Some(j);
                    }
                }
            }
            if let Some(j) = arg {
                g_row[j] += weight * spec.beta;
            }
        }
        LossKind::SquareSumTest => unreachable!("rejected by evaluators"),
    }
}

fn exp_weights(z: &CorrelationMatrix, beta: f64) -> DMatrix<f64> {
    z.matrix().map(|v| (-beta * (1.0 - v)).exp())
}

fn check_exact_capacity(c: usize, k: usize) -> Result<()> {
    let size = enumeration_size(c, k);
    if size > EXACT_TERM_CAP {
        return Err(Error::Capacity(format!(
            "exact enumeration needs {size} terms (cap {EXACT_TERM_CAP}); use the Monte Carlo \
             evaluator instead"
        )));
    }
    Ok(())
}

/// Exact population contrastive loss
/// `E_{c, c_1..c_k ~ rho} [ l(<1 - Z_{c,c_i}>_i) ]`,
/// computed by enumerating, for each anchor class, the multiset of negative
/// classes (compositions of k) with multinomial weights in log space.
pub fn exact_nce_loss(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
) -> Result<f64> {
    loss.require_objective_kind()?;
    let c = check_dims(z, rho)?;
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    check_exact_capacity(c, k)?;

    let lf = log_factorials(k);
    let log_rho: Vec<f64> = rho.probs().iter().map(|p| p.ln()).collect();
    let w = exp_weights(z, loss.beta);
    let zm = z.matrix();

    let mut total = 0.0;
    for anchor in 0..c {
        let z_row: Vec<f64> = (0..c).map(|j| zm[(anchor, j)]).collect();
        let w_row: Vec<f64> = (0..c).map(|j| w[(anchor, j)]).collect();
        let mut acc = 0.0;
        for_each_composition(k, c, &mut |counts| {
            let mut logw = lf[k];
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 {
                    logw += n as f64 * log_rho[j] - lf[n as usize];
                }
            }
            acc += logw.exp() * count_loss(loss, &z_row, &w_row, counts);
        });
        total += rho.prob(anchor) * acc;
    }
    Ok(total)
}

/// Gradient of [`exact_nce_loss`] with respect to the entries of `Z`,
/// symmetrized as `(G + G^T)/2` with the diagonal forced to zero (the
/// diagonal is pinned to one by the feasible set).
pub fn exact_nce_grad(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
) -> Result<DMatrix<f64>> {
    loss.require_objective_kind()?;
    let c = check_dims(z, rho)?;
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    check_exact_capacity(c, k)?;

    let lf = log_factorials(k);
    let log_rho: Vec<f64> = rho.probs().iter().map(|p| p.ln()).collect();
    let w = exp_weights(z, loss.beta);
    let zm = z.matrix();

    let mut g = DMatrix::zeros(c, c);
    for anchor in 0..c {
        let z_row: Vec<f64> = (0..c).map(|j| zm[(anchor, j)]).collect();
        let w_row: Vec<f64> = (0..c).map(|j| w[(anchor, j)]).collect();
        let mut g_row = vec![0.0; c];
        let anchor_p = rho.prob(anchor);
        for_each_composition(k, c, &mut |counts| {
            let mut logw = lf[k];
            for (j, &n) in counts.iter().enumerate() {
                if n > 0 {
                    logw += n as f64 * log_rho[j] - lf[n as usize];
                }
            }
            count_loss_grad(loss, &z_row, &w_row, counts, anchor_p * logw.exp(), &mut g_row);
        });
        for j in 0..c {
            g[(anchor, j)] = g_row[j];
        }
    }
    Ok(symmetrize_zero_diag(&g))
}

fn symmetrize_zero_diag(g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = (g + g.transpose()) * 0.5;
    for i in 0..out.nrows() {
        out[(i, i)] = 0.0;
    }
    out
}

fn check_dims(z: &CorrelationMatrix, rho: &ClassDistribution) -> Result<usize> {
    let c = z.size();
    if rho.len() != c {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} classes but Z is {c}x{c}",
            rho.len()
        )));
    }
    Ok(c)
}

/// Monte Carlo estimate of the population contrastive loss over
/// `cfg.mc_samples` i.i.d. draws of `(c, c_1..c_k)`.
///
/// Returns `(estimate, standard_error)`. Samples are generated in fixed-size
/// chunks, each chunk on its own substream of `cfg.seed`, and the chunk sums
/// are combined in index order, so the result is bit-identical at any worker
/// count, with or without the `parallel` feature.
pub fn mc_nce_loss(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    cfg: &NCEConfig,
) -> Result<(f64, f64)> {
    if cfg.mode != EvalMode::MonteCarlo {
        return Err(Error::InvalidArgument(
            "mc_nce_loss requires monte_carlo mode".into(),
        ));
    }
    if cfg.mc_samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "mc_samples must be at least 100, got {}",
            cfg.mc_samples
        )));
    }
    mc_loss_impl(z, rho, k, loss, cfg.mc_samples, cfg.seed, true)
}

/// Single-threaded reference path for [`mc_nce_loss`]; same chunking, same
/// result. Exposed for the benchmark suite and for fallback comparisons.
pub fn mc_nce_loss_seq(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    cfg: &NCEConfig,
) -> Result<(f64, f64)> {
    if cfg.mode != EvalMode::MonteCarlo {
        return Err(Error::InvalidArgument(
            "mc_nce_loss requires monte_carlo mode".into(),
        ));
    }
    mc_loss_impl(z, rho, k, loss, cfg.mc_samples, cfg.seed, false)
}

/// Draws multinomial count vectors `(n_1, ..., n_C) ~ Multinomial(k, rho)` by
/// sampling each class count as a conditional binomial via inversion. Tables
/// of `(1 - p)^n` and reciprocals are precomputed once, so a draw costs one
/// uniform per class plus O(k) multiplies, independent of how the k trials
/// land. Used by the Monte Carlo kernels, where per-trial category sampling
/// would cost k CDF scans per draw instead.
struct MultinomialSampler {
    /// Conditional success probability of class j given classes before j missed.
    cond: Vec<f64>,
    /// `cond / (1 - cond)`, the pmf ratio used during inversion.
    ratio: Vec<f64>,
    /// `pow[j][n] = (1 - cond[j])^n` for n in 0..=k.
    pow: Vec<Vec<f64>>,
    /// `recip[x] = 1 / x` for x in 1..=k.
    recip: Vec<f64>,
    k: usize,
}

impl MultinomialSampler {
    fn new(rho: &ClassDistribution, k: usize) -> Self {
        let c = rho.len();
        let mut cond = vec![1.0f64; c];
        let mut rem = 1.0f64;
        for (j, slot) in cond.iter_mut().enumerate().take(c - 1) {
            *slot = if rem > 0.0 {
                (rho.prob(j) / rem).clamp(0.0, 1.0)
            } else {
                1.0
            };
            rem -= rho.prob(j);
        }
        let ratio = cond
            .iter()
            .map(|&p| if p < 1.0 { p / (1.0 - p) } else { 0.0 })
            .collect();
        let pow = cond
            .iter()
            .map(|&p| {
                let q = 1.0 - p;
                let mut table = vec![1.0f64; k + 1];
                for n in 1..=k {
                    table[n] = table[n - 1] * q;
                }
                table
            })
            .collect();
        let recip = (0..=k)
            .map(|x| if x == 0 { 0.0 } else { 1.0 / x as f64 })
            .collect();
        MultinomialSampler {
            cond,
            ratio,
            pow,
            recip,
            k,
        }
    }

    #[inline]
    fn sample(&self, rng: &mut Stream, counts: &mut [u32]) {
        let mut rem = self.k;
        for (j, slot) in counts.iter_mut().enumerate() {
            if rem == 0 {
                *slot = 0;
                continue;
            }
            if self.cond[j] >= 1.0 {
                *slot = rem as u32;
                rem = 0;
                continue;
            }
            let mut u = rng.next_f64();
            let mut pmf = self.pow[j][rem];
            let mut x = 0usize;
            while u > pmf && x < rem {
                u -= pmf;
                pmf *= self.ratio[j] * (rem - x) as f64 * self.recip[x + 1];
                x += 1;
            }
            *slot = x as u32;
            rem -= x;
        }
    }
}

fn mc_loss_impl(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    samples: usize,
    seed: u64,
    parallel: bool,
) -> Result<(f64, f64)> {
    loss.require_objective_kind()?;
    let c = check_dims(z, rho)?;
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let cdf = rho.cdf();
    let w = exp_weights(z, loss.beta);
    let zm = z.matrix();
    let z_rows: Vec<Vec<f64>> = (0..c).map(|i| (0..c).map(|j| zm[(i, j)]).collect()).collect();
    let w_rows: Vec<Vec<f64>> = (0..c).map(|i| (0..c).map(|j| w[(i, j)]).collect()).collect();

    let sampler = MultinomialSampler::new(rho, k);
    let chunks = n_chunks(samples, MC_CHUNK);
    let body = |i: usize| -> (f64, f64) {
        let mut rng = Stream::new(derive(seed, &[i as u64]));
        let mut counts = vec![0u32; c];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..chunk_len(samples, MC_CHUNK, i) {
            let anchor = sample_class(&cdf, rng.next_f64());
            sampler.sample(&mut rng, &mut counts);
            let l = count_loss(loss, &z_rows[anchor], &w_rows[anchor], &counts);
            s += l;
            s2 += l * l;
        }
        (s, s2)
    };
    let partials = if parallel {
        map_chunks(chunks, body)
    } else {
        crate::parallel::map_chunks_seq(chunks, body)
    };
    let (sum, sumsq) = partials
        .iter()
        .fold((0.0, 0.0), |(a, b), &(s, s2)| (a + s, b + s2));
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sumsq / n - mean * mean).max(0.0)) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Monte Carlo estimate of [`exact_nce_grad`] over `batch` samples.
/// Symmetrized with zero diagonal; deterministic given `seed` (same chunked
/// substream scheme as [`mc_nce_loss`]).
pub fn mc_nce_grad(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    batch: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    mc_grad_impl(z, rho, k, loss, batch, seed, true)
}

/// Single-threaded reference path for [`mc_nce_grad`]; same result.
pub fn mc_nce_grad_seq(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    batch: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    mc_grad_impl(z, rho, k, loss, batch, seed, false)
}

fn mc_grad_impl(
    z: &CorrelationMatrix,
    rho: &ClassDistribution,
    k: usize,
    loss: &LossSpec,
    batch: usize,
    seed: u64,
    parallel: bool,
) -> Result<DMatrix<f64>> {
    loss.require_objective_kind()?;
    let c = check_dims(z, rho)?;
    if batch < 1 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let cdf = rho.cdf();
    let w = exp_weights(z, loss.beta);
    let zm = z.matrix();
    let z_rows: Vec<Vec<f64>> = (0..c).map(|i| (0..c).map(|j| zm[(i, j)]).collect()).collect();
    let w_rows: Vec<Vec<f64>> = (0..c).map(|i| (0..c).map(|j| w[(i, j)]).collect()).collect();

    let sampler = MultinomialSampler::new(rho, k);
    let chunks = n_chunks(batch, MC_CHUNK);
    let body = |i: usize| -> Vec<f64> {
        let mut rng = Stream::new(derive(seed, &[i as u64]));
        let mut counts = vec![0u32; c];
        let mut g = vec![0.0f64; c * c];
        for _ in 0..chunk_len(batch, MC_CHUNK, i) {
            let anchor = sample_class(&cdf, rng.next_f64());
            sampler.sample(&mut rng, &mut counts);
            count_loss_grad(
                loss,
                &z_rows[anchor],
                &w_rows[anchor],
                &counts,
                1.0,
                &mut g[anchor * c..(anchor + 1) * c],
            );
        }
        g
    };
    let partials = if parallel {
        map_chunks(chunks, body)
    } else {
        crate::parallel::map_chunks_seq(chunks, body)
    };
    let mut g = DMatrix::zeros(c, c);
    for part in &partials {
        for i in 0..c {
            for j in 0..c {
                g[(i, j)] += part[i * c + j];
            }
        }
    }
    g /= batch as f64;
    Ok(symmetrize_zero_diag(&g))
}

/// A within-class refinement of the latent model: each class is a mixture of
/// finitely many atoms, and the fine Gram matrix lives on atoms rather than
/// classes. Models representations that are not class-collapsed.
#[derive(Debug, Clone)]
pub struct AtomizedModel {
    zfine: CorrelationMatrix,
    class_of: Vec<usize>,
    atoms_of: Vec<Vec<usize>>,
    within: Vec<Vec<f64>>,
    rho: ClassDistribution,
}

impl AtomizedModel {
    /// `class_of[a]` assigns atom `a` to a class; `within[c]` is the
    /// within-class distribution over that class's atoms, in atom-index order.
    pub fn new(
        zfine: CorrelationMatrix,
        class_of: Vec<usize>,
        within: Vec<Vec<f64>>,
        rho: ClassDistribution,
    ) -> Result<Self> {
        let atoms = zfine.size();
        let c = rho.len();
        if class_of.len() != atoms {
            return Err(Error::InvalidArgument(format!(
                "class_of has {} entries but the fine Gram has {atoms} atoms",
                class_of.len()
            )));
        }
        if within.len() != c {
            return Err(Error::InvalidArgument(format!(
                "within has {} entries but there are {c} classes",
                within.len()
            )));
        }
        let mut atoms_of = vec![Vec::new(); c];
        for (a, &cl) in class_of.iter().enumerate() {
            if cl >= c {
                return Err(Error::InvalidArgument(format!(
                    "atom {a} assigned to class {cl}, but there are only {c} classes"
                )));
            }
            atoms_of[cl].push(a);
        }
        for (cl, w) in within.iter().enumerate() {
            if w.len() != atoms_of[cl].len() {
                return Err(Error::InvalidArgument(format!(
                    "class {cl} has {} atoms but its within vector has {} entries",
                    atoms_of[cl].len(),
                    w.len()
                )));
            }
            if w.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "class {cl} has no atoms"
                )));
            }
            if w.iter().any(|&p| !(p > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "class {cl} within-class probabilities must be strictly positive"
                )));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "class {cl} within-class probabilities sum to {s}"
                )));
            }
        }
        Ok(AtomizedModel {
            zfine,
            class_of,
            atoms_of,
            within,
            rho,
        })
    }

    pub fn zfine(&self) -> &CorrelationMatrix {
        &self.zfine
    }

    pub fn num_atoms(&self) -> usize {
        self.class_of.len()
    }

    pub fn num_classes(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &ClassDistribution {
        &self.rho
    }

    pub fn atoms_of_class(&self, c: usize) -> &[usize] {
        &self.atoms_of[c]
    }

    /// Within-class probability of the `pos`-th atom of class `c`, in the
    /// order of [`Self::atoms_of_class`].
    pub fn within_prob(&self, c: usize, pos: usize) -> f64 {
        self.within[c][pos]
    }

    /// Marginal distribution over atoms: class prior times within-class mass.
    pub fn atom_marginal(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.num_atoms()];
        for (cl, atoms) in self.atoms_of.iter().enumerate() {
            for (pos, &a) in atoms.iter().enumerate() {
                q[a] = self.rho.prob(cl) * self.within[cl][pos];
            }
        }
        q
    }

    /// True when every class's atoms are mutually collapsed (within-class
    /// fine Gram entries all one).
    pub fn is_class_collapsed(&self, tol: f64) -> bool {
        for atoms in &self.atoms_of {
            for (i, &a) in atoms.iter().enumerate() {
                for &b in &atoms[i + 1..] {
                    if (self.zfine.entry(a, b) - 1.0).abs() > tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Exact population contrastive loss of an atomized model: the expectation
/// over anchor/positive atoms from the within-class distribution and negative
/// atoms from the marginal, of
/// `l(<Zf[a,a+] - Zf[a,b_i]>_i)`.
pub fn exact_nce_loss_atomized(model: &AtomizedModel, k: usize, loss: &LossSpec) -> Result<f64> {
    loss.require_objective_kind()?;
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let atoms = model.num_atoms();
    let pairs: u128 = model
        .atoms_of
        .iter()
        .map(|a| (a.len() * a.len()) as u128)
        .sum();
    let terms = pairs.saturating_mul(compositions_count(k, atoms));
    if terms > EXACT_TERM_CAP {
        return Err(Error::Capacity(format!(
            "atomized enumeration needs {terms} terms (cap {EXACT_TERM_CAP})"
        )));
    }

    let q = model.atom_marginal();
    let log_q: Vec<f64> = q.iter().map(|&p| p.ln()).collect();
    let lf = log_factorials(k);
    let zf = model.zfine.matrix();

    let mut total = 0.0;
    for (cl, class_atoms) in model.atoms_of.iter().enumerate() {
        let class_p = model.rho.prob(cl);
        for (pa, &a) in class_atoms.iter().enumerate() {
            // Row weights for anchor atom a: exp(beta * Zf[a,b]).
            let ew: Vec<f64> = (0..atoms).map(|b| (loss.beta * zf[(a, b)]).exp()).collect();
            for (pp, &ap) in class_atoms.iter().enumerate() {
                let base = zf[(a, ap)];
                let pair_w = class_p * model.within[cl][pa] * model.within[cl][pp];
                let base_factor = (-loss.beta * base).exp();
                let mut acc = 0.0;
                for_each_composition(k, atoms, &mut |counts| {
                    let mut logw = lf[k];
                    for (b, &n) in counts.iter().enumerate() {
                        if n > 0 {
                            logw += n as f64 * log_q[b] - lf[n as usize];
                        }
                    }
                    let l = match loss.kind {
                        LossKind::Logistic => {
                            let mut s = 1.0;
                            for (b, &n) in counts.iter().enumerate() {
                                if n > 0 {
                                    s += n as f64 * base_factor * ew[b];
                                }
                            }
                            s.ln()
                        }
                        LossKind::Hinge => {
                            let mut worst = 0.0f64;
                            for (b, &n) in counts.iter().enumerate() {
                                if n > 0 {
                                    worst = worst.max(1.0 - loss.beta * (base - zf[(a, b)]));
                                }
                            }
                            worst
                        }
                        LossKind::SquareSumTest => unreachable!(),
                    };
                    acc += logw.exp() * l;
                });
                total += pair_w * acc;
            }
        }
    }
    Ok(total)
}

/// Result of the collapse enumeration: the atomized loss, the best loss over
/// all one-representative-per-class collapses, and a minimizing witness
/// (one atom index per class).
#[derive(Debug, Clone)]
pub struct CollapseReport {
    pub atomized_loss: f64,
    pub best_collapsed_loss: f64,
    pub witness: Vec<usize>,
}

/// Enumerates every choice of one representative atom per class, evaluates
/// the exact contrastive loss of each collapsed Gram matrix, and returns the
/// best one together with the atomized loss.
pub fn collapse_check(model: &AtomizedModel, k: usize, loss: &LossSpec) -> Result<CollapseReport> {
    let c = model.num_classes();
    let combos: u128 = model
        .atoms_of
        .iter()
        .map(|a| a.len() as u128)
        .product();
    if combos > 10_000 {
        return Err(Error::Capacity(format!(
            "collapse enumeration needs {combos} representative combinations (cap 10000)"
        )));
    }
    let atomized_loss = exact_nce_loss_atomized(model, k, loss)?;
    let zf = model.zfine.matrix();

    let mut best = f64::INFINITY;
    let mut witness = vec![0usize; c];
    let mut choice = vec![0usize; c];
    loop {
        let picks: Vec<usize> = (0..c).map(|cl| model.atoms_of[cl][choice[cl]]).collect();
        let mut zc = DMatrix::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                zc[(i, j)] = zf[(picks[i], picks[j])];
            }
        }
        // Force an exact unit diagonal; principal submatrices stay PSD.
        for i in 0..c {
            zc[(i, i)] = 1.0;
        }
        let zc = CorrelationMatrix::new(zc)?;
        let l = exact_nce_loss(&zc, model.rho(), k, loss)?;
        if l < best {
            best = l;
            witness = picks;
        }
        // Advance the mixed-radix counter.
        let mut pos = 0;
        loop {
            if pos == c {
                return Ok(CollapseReport {
                    atomized_loss,
                    best_collapsed_loss: best,
                    witness,
                });
            }
            choice[pos] += 1;
            if choice[pos] < model.atoms_of[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}
