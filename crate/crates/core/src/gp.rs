//! Gaussian-process regression over multi-hot concept-set encodings.
//!
//! The default kernel is the homogeneous dot product k(x, x') = x^T x' plus
//! white observation noise: on binary encodings the dot product is the raw
//! overlap |S ∩ S'|, which matches failure driven by co-occurring concepts.
//! With that kernel the posterior is exactly Bayesian linear regression with
//! unit prior weight covariance, which the tests use as an independent
//! oracle. An RBF variant is kept for comparison runs.
//!
//! Fitting caches the Cholesky factor of K + sigma^2 I. Factorization
//! failures escalate a diagonal jitter from 1e-10 to 1e-4 before giving up;
//! with sigma^2 = 0 no jitter is applied, so an exactly singular kernel is
//! reported rather than silently regularized.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, ConceptSet};

/// Binary design vector in canonical (lexicographic) concept order.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub values: Vec<f64>,
}

impl Encoding {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn popcount(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn dot(&self, other: &Encoding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Multi-hot encoding of a set: entry 1 where the concept is present.
pub fn encode(set: &ConceptSet, catalog: &Catalog) -> Result<Encoding, CatalogError> {
    for id in set.iter() {
        catalog.get(id)?;
    }
    let values = catalog
        .ids()
        .map(|id| if set.contains(id) { 1.0 } else { 0.0 })
        .collect();
    Ok(Encoding { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    DotProduct,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub noise_variance: f64,
    pub rbf_lengthscale: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        // Noise default 0.05: the worst-case Bernoulli variance of a 5-sample
        // failure-rate estimate, attributing residual scatter to the
        // evaluator rather than forcing interpolation.
        KernelSpec {
            family: KernelFamily::DotProduct,
            noise_variance: 0.05,
            rbf_lengthscale: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn dot_product(noise_variance: f64) -> Self {
        KernelSpec {
            family: KernelFamily::DotProduct,
            noise_variance,
            rbf_lengthscale: 1.0,
        }
    }

    pub fn rbf(noise_variance: f64, lengthscale: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Rbf,
            noise_variance,
            rbf_lengthscale: lengthscale,
        }
    }

    pub fn value(&self, a: &Encoding, b: &Encoding) -> f64 {
        match self.family {
            KernelFamily::DotProduct => a.dot(b),
            KernelFamily::Rbf => {
                let sq: f64 = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (-sq / (2.0 * self.rbf_lengthscale * self.rbf_lengthscale)).exp()
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GpError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("x has {x} rows but y has {y} entries")]
    LengthMismatch { x: usize, y: usize },
    #[error("query dimension {actual} does not match training dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("kernel matrix factorization failed (max jitter {max_jitter:e})")]
    Factorization { max_jitter: f64 },
}

const JITTERS: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

fn cholesky_with_jitter(
    base: &DMatrix<f64>,
    allow_jitter: bool,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let attempts: &[f64] = if allow_jitter { &JITTERS } else { &JITTERS[..1] };
    for &jitter in attempts {
        let mut mat = base.clone();
        if jitter > 0.0 {
            for i in 0..mat.nrows() {
                mat[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(mat) {
            return Ok((chol, jitter));
        }
    }
    Err(GpError::Factorization { max_jitter: 1e-4 })
}

/// Fitted GP: binary design, targets, kernel, and the cached factorization
/// of K(X, X) + sigma^2 I. Immutable after fit.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Encoding>,
    y: DVector<f64>,
    kernel: KernelSpec,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

/// Fit on observed (encoding, failure-rate) pairs.
pub fn fit(x: &[Encoding], y: &[f64], kernel: KernelSpec) -> Result<GpModel, GpError> {
    if x.is_empty() {
        return Err(GpError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    let n = x.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.value(&x[i], &x[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
        gram[(i, i)] += kernel.noise_variance;
    }
    let (chol, jitter) = cholesky_with_jitter(&gram, kernel.noise_variance > 0.0)?;
    Ok(GpModel {
        x: x.to_vec(),
        y: DVector::from_column_slice(y),
        kernel,
        chol,
        jitter,
    })
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check_dims(&self, xstar: &[Encoding]) -> Result<(), GpError> {
        let expected = self.x[0].dimension();
        for q in xstar {
            if q.dimension() != expected {
                return Err(GpError::DimensionMismatch {
                    expected,
                    actual: q.dimension(),
                });
            }
        }
        Ok(())
    }

    /// Standard GP conditionals: mean K*^T (K + s^2 I)^-1 y and covariance
    /// K** - K*^T (K + s^2 I)^-1 K*. The covariance is symmetrized and its
    /// diagonal clamped at zero.
    pub fn posterior(&self, xstar: &[Encoding]) -> Result<(Vec<f64>, DMatrix<f64>), GpError> {
        self.check_dims(xstar)?;
        let n = self.x.len();
        let s = xstar.len();

        let mut kstar = DMatrix::zeros(n, s);
        for i in 0..n {
            for j in 0..s {
                kstar[(i, j)] = self.kernel.value(&self.x[i], &xstar[j]);
            }
        }
        let mut kss = DMatrix::zeros(s, s);
        for i in 0..s {
            for j in i..s {
                let v = self.kernel.value(&xstar[i], &xstar[j]);
                kss[(i, j)] = v;
                kss[(j, i)] = v;
            }
        }

        let alpha = self.chol.solve(&self.y);
        let mean = kstar.transpose() * &alpha;

        // V = L^-1 K*; cov = K** - V^T V
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("lower-triangular solve with positive diagonal");
        let mut cov = kss - v.transpose() * &v;

        for i in 0..s {
            for j in (i + 1)..s {
                let sym = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = sym;
                cov[(j, i)] = sym;
            }
        }
        for i in 0..s {
            debug_assert!(cov[(i, i)] >= -1e-8, "posterior variance {}", cov[(i, i)]);
            if cov[(i, i)] < 0.0 {
                cov[(i, i)] = 0.0;
            }
        }

        Ok((mean.iter().copied().collect(), cov))
    }

    /// One joint posterior draw mu + L z with z standard normal. A zero
    /// covariance returns the mean exactly.
    pub fn sample_posterior<R: Rng>(
        &self,
        xstar: &[Encoding],
        rng: &mut R,
    ) -> Result<Vec<f64>, GpError> {
        let (mean, cov) = self.posterior(xstar)?;
        sample_gaussian(&mean, &cov, rng)
    }
}

/// One draw from the kernel prior (zero mean) at the query points. Used when
/// no observations exist yet.
pub fn sample_prior<R: Rng>(
    kernel: KernelSpec,
    xstar: &[Encoding],
    rng: &mut R,
) -> Result<Vec<f64>, GpError> {
    let s = xstar.len();
    let mut kss = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let v = kernel.value(&xstar[i], &xstar[j]);
            kss[(i, j)] = v;
            kss[(j, i)] = v;
        }
    }
    sample_gaussian(&vec![0.0; s], &kss, rng)
}

fn sample_gaussian<R: Rng>(
    mean: &[f64],
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<f64>, GpError> {
    let s = mean.len();
    if cov.amax() == 0.0 {
        return Ok(mean.to_vec());
    }
    let (chol, _) = cholesky_with_jitter(cov, true)?;
    let z = DVector::from_iterator(s, (0..s).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let draw = DVector::from_column_slice(mean) + chol.l_dirty().lower_triangle() * z;
    Ok(draw.iter().copied().collect())
}
