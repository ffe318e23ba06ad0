//! Latent-class distributions, simplex ETF constructions, and conversion
//! between the Gram (correlation-matrix) and embedding forms of a
//! class-collapsed representation.

use crate::error::{Error, Result};
use crate::seeding::{derive, Stream};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};

pub const SYMMETRY_TOL: f64 = 1e-9;
pub const DIAGONAL_TOL: f64 = 1e-9;
pub const EIGENVALUE_TOL: f64 = 1e-8;

/// A probability vector over `C >= 2` latent classes. All entries are strictly
/// positive and sum to one within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "class probabilities must be strictly positive and finite".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "class probabilities sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(ClassDistribution { probs })
    }

    /// Uniform distribution over `c` classes.
    pub fn uniform(c: usize) -> Result<Self> {
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {c}"
            )));
        }
        // Build so entries sum to exactly 1 even when 1/c is inexact.
        let mut probs = vec![1.0 / c as f64; c];
        let sum: f64 = probs.iter().sum();
        probs[c - 1] += 1.0 - sum;
        ClassDistribution::new(probs)
    }

    /// A draw from the symmetric Dirichlet with concentration `alpha`,
    /// via normalized Gamma(alpha, 1) variates. Deterministic given `seed`;
    /// each coordinate uses its own substream of the seed.
    pub fn dirichlet(c: usize, alpha: f64, seed: u64) -> Result<Self> {
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {c}"
            )));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Dirichlet concentration must be positive, got {alpha}"
            )));
        }
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| Error::InvalidArgument(format!("gamma setup: {e}")))?;
        let mut draws = vec![0.0f64; c];
        for (i, d) in draws.iter_mut().enumerate() {
            let mut rng = Stream::new(derive(seed, &[i as u64]));
            *d = gamma.sample(&mut rng);
        }
        let total: f64 = draws.iter().sum();
        let mut probs: Vec<f64> = draws.iter().map(|&g| g / total).collect();
        // Gamma draws can underflow to 0 for tiny alpha; retry on a shifted
        // substream rather than return a degenerate vector.
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Self::dirichlet(c, alpha, derive(seed, &[u64::MAX]));
        }
        let sum: f64 = probs.iter().sum();
        probs[c - 1] += 1.0 - sum;
        ClassDistribution::new(probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, c: usize) -> f64 {
        self.probs[c]
    }

    pub fn rho_min(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn rho_max(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cumulative distribution, for inverse-CDF sampling of class indices.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.probs.len());
        for &p in &self.probs {
            acc += p;
            out.push(acc);
        }
        let last = out.len() - 1;
        out[last] = 1.0;
        out
    }
}

/// Samples a class index from a cumulative distribution by linear scan.
#[inline]
pub fn sample_class(cdf: &[f64], u: f64) -> usize {
    for (i, &edge) in cdf.iter().enumerate() {
        if u < edge {
            return i;
        }
    }
    cdf.len() - 1
}

/// A `C x d` matrix whose rows are unit-norm class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    u: DMatrix<f64>,
}

impl Representation {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if u.ncols() < 1 || u.nrows() < 1 {
            return Err(Error::InvalidArgument("representation must be non-empty".into()));
        }
        for r in 0..u.nrows() {
            let norm = u.row(r).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvariantViolation(format!(
                    "row {r} has norm {norm}, expected 1 within 1e-9"
                )));
            }
        }
        Ok(Representation { u })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn num_classes(&self) -> usize {
        self.u.nrows()
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn embedding(&self, c: usize) -> DVector<f64> {
        self.u.row(c).transpose()
    }

    /// The Gram matrix `U U^T` of the embeddings, as a correlation matrix.
    pub fn gram(&self) -> CorrelationMatrix {
        let z = &self.u * self.u.transpose();
        // Gram of unit rows is symmetric PSD with unit diagonal by
        // construction; revalidate to catch accumulated rounding.
        CorrelationMatrix::new(z).expect("Gram of unit rows is a correlation matrix")
    }
}

/// The simplex equiangular tight frame on `c` classes, embedded in `d = c`
/// dimensions: rows `sqrt(c/(c-1)) (e_i - (1/c) 1)`. All pairwise inner
/// products are exactly `-1/(c-1)`.
pub fn simplex_etf(c: usize) -> Result<Representation> {
    if c < 2 {
        return Err(Error::InvalidArgument(format!(
            "simplex ETF needs at least 2 classes, got {c}"
        )));
    }
    let cf = c as f64;
    let scale = (cf / (cf - 1.0)).sqrt();
    let mut u = DMatrix::from_element(c, c, -scale / cf);
    for i in 0..c {
        u[(i, i)] = scale * (1.0 - 1.0 / cf);
    }
    // Scrub rounding so row norms pass the 1e-9 invariant exactly.
    for mut row in u.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    Representation::new(u)
}

/// A symmetric positive-semidefinite matrix with unit diagonal; the Gram of a
/// class-collapsed representation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    z: DMatrix<f64>,
    min_eig: f64,
}

impl CorrelationMatrix {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != z.ncols() || z.nrows() < 1 {
            return Err(Error::InvalidArgument(format!(
                "expected a square matrix, got {}x{}",
                z.nrows(),
                z.ncols()
            )));
        }
        let n = z.nrows();
        for i in 0..n {
            if (z[(i, i)] - 1.0).abs() > DIAGONAL_TOL {
                return Err(Error::InvariantViolation(format!(
                    "diagonal entry ({i},{i}) = {}, expected 1 within {DIAGONAL_TOL:e}",
                    z[(i, i)]
                )));
            }
            for j in (i + 1)..n {
                if (z[(i, j)] - z[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvariantViolation(format!(
                        "asymmetry at ({i},{j}): {} vs {}",
                        z[(i, j)],
                        z[(j, i)]
                    )));
                }
            }
        }
        let min_eig = min_eigenvalue(&z);
        if min_eig < -EIGENVALUE_TOL {
            return Err(Error::InvariantViolation(format!(
                "minimum eigenvalue {min_eig:.3e} below -{EIGENVALUE_TOL:e}"
            )));
        }
        Ok(CorrelationMatrix { z, min_eig })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn size(&self) -> usize {
        self.z.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.z[(i, j)]
    }

    /// Identity Gram: orthonormal embeddings.
    pub fn identity(c: usize) -> Result<Self> {
        if c < 1 {
            return Err(Error::InvalidArgument("size must be positive".into()));
        }
        CorrelationMatrix::new(DMatrix::identity(c, c))
    }

    /// All-ones Gram: every class collapsed onto one vector.
    pub fn all_ones(c: usize) -> Result<Self> {
        if c < 1 {
            return Err(Error::InvalidArgument("size must be positive".into()));
        }
        CorrelationMatrix::new(DMatrix::from_element(c, c, 1.0))
    }

    /// Mean and standard deviation of the off-diagonal entries.
    pub fn offdiag_stats(&self) -> (f64, f64) {
        let n = self.size();
        let mut vals = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    vals.push(self.z[(i, j)]);
                }
            }
        }
        if vals.is_empty() {
            return (0.0, 0.0);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    }

    /// Returns the common off-diagonal value when all off-diagonals lie within
    /// `tol` of their mean, otherwise `None`.
    pub fn equiangular_value(&self, tol: f64) -> Option<f64> {
        let n = self.size();
        if n < 2 {
            return None;
        }
        let (mean, _) = self.offdiag_stats();
        for i in 0..n {
            for j in 0..n {
                if i != j && (self.z[(i, j)] - mean).abs() > tol {
                    return None;
                }
            }
        }
        Some(mean)
    }

    /// Extracts unit-norm embeddings `U` with `U U^T = Z`.
    ///
    /// Uses a Cholesky factor when the matrix is strictly positive definite
    /// (minimum eigenvalue above 1e-10). Rank-deficient inputs fall back to an
    /// eigendecomposition with negative eigenvalues clipped to zero, followed
    /// by row re-normalization so the unit-norm invariant holds exactly.
    pub fn factor(&self) -> Result<Representation> {
        let n = self.size();
        if self.min_eig > 1e-10 {
            if let Some(chol) = nalgebra::Cholesky::new(self.z.clone()) {
                let l = chol.l();
                let mut u = l.clone_owned();
                for mut row in u.row_iter_mut() {
                    let norm = row.norm();
                    row /= norm;
                }
                return Representation::new(u);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(self.z.clone());
        let mut u = DMatrix::zeros(n, n);
        for k in 0..n {
            let lam = eig.eigenvalues[k].max(0.0);
            let s = lam.sqrt();
            for i in 0..n {
                u[(i, k)] = eig.eigenvectors[(i, k)] * s;
            }
        }
        for mut row in u.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
        Representation::new(u)
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Random correlation matrix built as the Gram of `c` random unit vectors in
/// `c` dimensions. Always feasible; used throughout the test and verification
/// suites.
pub fn random_correlation(c: usize, seed: u64) -> Result<CorrelationMatrix> {
    if c < 1 {
        return Err(Error::InvalidArgument("size must be positive".into()));
    }
    let mut rng = Stream::new(seed);
    let mut u = DMatrix::zeros(c, c);
    for i in 0..c {
        loop {
            let mut norm2 = 0.0;
            for j in 0..c {
                // Box-Muller-free approximate normal: sum of uniforms is fine
                // for direction sampling, but use a proper normal for isotropy.
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

/// Standard normal via Box-Muller on the stream.
#[inline]
pub fn normal_sample(rng: &mut Stream) -> f64 {
    let u1 = loop {
        let u = rng.next_f64();
        if u > 0.0 {
            break u;
        }
    };
    let u2 = rng.next_f64();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
