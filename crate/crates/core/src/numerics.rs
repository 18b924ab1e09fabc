//! Seeded random streams, Gaussian distribution functions and the small
//! dense linear-algebra kernels used throughout the crate.
//!
//! Every random draw in the crate goes through [`RngStream`]. A stream is a
//! ChaCha12 keystream whose 256-bit key is a SHA-256 digest of the root seed
//! and the chain of labels used to derive it, so the value of the `n`-th draw
//! is a pure function of `(seed, labels, n)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Pivots at or below this value reject a covariance matrix.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Deterministic counter-based random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    key: [u8; 32],
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"genvendor.root");
        hasher.update(seed.to_le_bytes());
        Self::from_key(seed, hasher.finalize().into())
    }

    fn from_key(seed: u64, key: [u8; 32]) -> Self {
        Self {
            seed,
            key,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Child stream keyed by `label`. Derivation depends only on the parent's
    /// key, never on how many values the parent has produced.
    pub fn derive(&self, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        Self::from_key(self.seed, hasher.finalize().into())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random bits, shifted off zero by half a unit in the last place.
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn derive_stream(parent: &RngStream, label: &str) -> RngStream {
    parent.derive(label)
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`std_normal_cdf`]: Acklam's rational approximation followed by
/// one Halley step against the erfc-based CDF.
pub fn std_normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs a probability in (0, 1), got {u}"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let mut x = if u < P_LOW {
        tail((-2.0 * u.ln()).sqrt())
    } else if u <= 1.0 - P_LOW {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - u).ln()).sqrt())
    };

    let e = std_normal_cdf(x) - u;
    let step = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x -= step / (1.0 + 0.5 * x * step);
    Ok(x)
}

/// Symmetric positive-definite covariance matrix with its Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    dim: usize,
    matrix: Vec<f64>,
    lower: Vec<f64>,
}

impl Covariance {
    /// Row-major `dim × dim` matrix. Rejects asymmetric or non-PD input.
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::Shape {
                expected: dim * dim,
                actual: matrix.len(),
            });
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (matrix[i * dim + j], matrix[j * dim + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Domain(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let lower = cholesky(&matrix, dim, PD_TOLERANCE)?;
        Ok(Self { dim, matrix, lower })
    }

    pub fn identity(dim: usize) -> Self {
        Self::equicorrelated(dim, 1.0, 0.0).expect("identity is positive definite")
    }

    /// Constant diagonal `var` and constant off-diagonal `cov`.
    pub fn equicorrelated(dim: usize, var: f64, cov: f64) -> Result<Self> {
        let mut m = vec![cov; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = var;
        }
        Self::new(dim, m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`, row-major.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.lower
    }
}

/// Cholesky factorization of a row-major symmetric matrix. Fails when a pivot
/// is not above `tol`.
pub fn cholesky(a: &[f64], n: usize, tol: f64) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > tol) {
                    return Err(Error::NotPositiveDefinite { row: i, pivot: sum });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(lower: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= lower[i * n + k] * y[k];
        }
        y[i] = sum / lower[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= lower[k * n + i] * x[k];
        }
        x[i] = sum / lower[i * n + i];
    }
    x
}

/// Ordinary least squares via the normal equations. `design` is row-major
/// `rows × cols`. Returns the coefficient vector.
pub fn least_squares(design: &[f64], rows: usize, cols: usize, target: &[f64]) -> Result<Vec<f64>> {
    ridge_least_squares(design, rows, cols, target, 0.0)
}

/// Least squares with `ridge · max diag(XᵀX)` added to the Gram diagonal.
pub fn ridge_least_squares(
    design: &[f64],
    rows: usize,
    cols: usize,
    target: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    if design.len() != rows * cols {
        return Err(Error::Shape {
            expected: rows * cols,
            actual: design.len(),
        });
    }
    if target.len() != rows {
        return Err(Error::Shape {
            expected: rows,
            actual: target.len(),
        });
    }
    let mut gram = vec![0.0; cols * cols];
    let mut rhs = vec![0.0; cols];
    for r in 0..rows {
        let row = &design[r * cols..(r + 1) * cols];
        for i in 0..cols {
            rhs[i] += row[i] * target[r];
            for j in 0..=i {
                gram[i * cols + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..cols {
        for j in 0..i {
            gram[j * cols + i] = gram[i * cols + j];
        }
    }
    let scale = (0..cols).map(|i| gram[i * cols + i]).fold(0.0, f64::max);
    for i in 0..cols {
        gram[i * cols + i] += ridge * scale;
    }
    let lower =
        cholesky(&gram, cols, 1e-12 * scale.max(f64::MIN_POSITIVE)).map_err(|_| Error::Singular)?;
    Ok(cholesky_solve(&lower, cols, &rhs))
}

/// One draw from `N(mean, cov)` as `mean + L z`.
pub fn sample_mvn(mean: &[f64], cov: &Covariance, rng: &mut RngStream) -> Result<Vec<f64>> {
    let k = cov.dim();
    if mean.len() != k {
        return Err(Error::Shape {
            expected: k,
            actual: mean.len(),
        });
    }
    let mut z = vec![0.0; k];
    rng.fill_standard_normal(&mut z);
    let l = cov.cholesky_factor();
    Ok((0..k)
        .map(|i| mean[i] + (0..=i).map(|j| l[i * k + j] * z[j]).sum::<f64>())
        .collect())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); `None` below two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Sorts floats ascending; NaNs are not expected.
pub fn sort_floats(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf by its Maclaurin series, summed until terms vanish.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn quantile_by_bisection(u: f64) -> f64 {
        let cdf = |z: f64| 0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2));
        let (mut lo, mut hi) = (-8.0, 8.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_matches_bisection_oracle() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        let oracle = quantile_by_bisection(0.8);
        assert!((oracle - 0.841621).abs() < 1e-6);
        assert!((std_normal_quantile(0.8).unwrap() - oracle).abs() < 1e-9);
        for &u in &[0.001, 0.02, 0.1, 0.3, 0.7, 0.95, 0.999] {
            let z = std_normal_quantile(u).unwrap();
            assert!((z - quantile_by_bisection(u)).abs() < 1e-9, "u = {u}");
        }
    }

    #[test]
    fn quantile_and_cdf_are_inverses() {
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let back = std_normal_cdf(std_normal_quantile(u).unwrap());
            assert!((back - u).abs() < 1e-8);
        }
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            assert!((std_normal_cdf(std_normal_quantile(u).unwrap()) - u).abs() < 1e-8);
        }
    }

    #[test]
    fn quantile_rejects_out_of_domain() {
        for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(std_normal_quantile(u), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn derived_streams_are_deterministic_and_separated() {
        let root = RngStream::new(7);
        let mut a = root.derive("train");
        let mut b = root.derive("train");
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);

        let mut test = root.derive("test");
        assert_ne!(root.derive("train").next_u64(), test.next_u64());

        let mut other_seed = RngStream::new(8).derive("x");
        assert_ne!(root.derive("x").next_u64(), other_seed.next_u64());
    }

    #[test]
    fn derivation_ignores_parent_position() {
        let mut root = RngStream::new(3);
        let before = root.derive("child").next_u64();
        for _ in 0..10 {
            root.next_u64();
        }
        assert_eq!(root.derive("child").next_u64(), before);
        assert_eq!(root.counter(), 20);
    }

    #[test]
    fn uniform_stays_open() {
        let mut rng = RngStream::new(1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn mvn_identity_moments() {
        let cov = Covariance::identity(3);
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sample_mvn(&[0.0; 3], &cov, &mut rng).unwrap())
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let c = draws.iter().map(|d| d[i] * d[j]).sum::<f64>() / n as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 0.05, "cov[{i}][{j}] = {c}");
            }
        }
    }

    #[test]
    fn mvn_equicorrelated_moments() {
        let cov = Covariance::equicorrelated(5, 1.0, 0.5).unwrap();
        let mut rng = RngStream::new(12);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sample_mvn(&[0.0; 5], &cov, &mut rng).unwrap())
            .collect();
        for i in 0..5 {
            for j in 0..i {
                let c = draws.iter().map(|d| d[i] * d[j]).sum::<f64>() / n as f64;
                let vi = draws.iter().map(|d| d[i] * d[i]).sum::<f64>() / n as f64;
                let vj = draws.iter().map(|d| d[j] * d[j]).sum::<f64>() / n as f64;
                let corr = c / (vi * vj).sqrt();
                assert!((corr - 0.5).abs() < 0.03, "corr[{i}][{j}] = {corr}");
            }
        }
    }

    #[test]
    fn covariance_rejects_tiny_and_asymmetric() {
        assert!(matches!(
            Covariance::equicorrelated(3, 1e-12, 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(Covariance::new(2, vec![1.0, 0.2, 0.3, 1.0]).is_err());
        assert!(Covariance::new(2, vec![1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(Covariance::new(2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn least_squares_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let design: Vec<f64> = xs.iter().flat_map(|&x| [x, 1.0]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 3.0 * x - 2.0).collect();
        let beta = least_squares(&design, 10, 2, &y).unwrap();
        assert!((beta[0] - 3.0).abs() < 1e-10 && (beta[1] + 2.0).abs() < 1e-10);

        let collinear: Vec<f64> = xs.iter().flat_map(|&x| [x, 2.0 * x]).collect();
        assert!(matches!(
            least_squares(&collinear, 10, 2, &y),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn std_is_absent_below_two_values() {
        assert_eq!(sample_std(&[1.0]), None);
        assert!((sample_std(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }
}
