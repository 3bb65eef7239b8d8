//! Dense matrices and the spectral kernels used by the estimator.
//!
//! The SVD is delegated to faer's bidiagonal divide-and-conquer routine, run
//! sequentially so results never depend on the size of a thread pool. Power
//! iteration for the operator norm is implemented here and serves as an
//! independent check on the SVD's leading singular value.

use std::ops::{Index, IndexMut};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{self as faer_svd, ComputeSvdVectors};
use faer::{Mat, MatRef, Par};

use crate::error::{Error, Result};

/// Row-major real matrix with strictly positive dimensions and finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::EntryCount {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
                value: data[pos],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// On zero dimensions.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// # Panics
    /// On zero dimensions or if `f` produces a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry {v} at ({i}, {j})");
                data.push(v);
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let mut out = Mat::<f64>::zeros(self.rows, other.cols);
        faer::linalg::matmul::matmul(
            out.as_mut(),
            faer::Accum::Replace,
            self.as_faer(),
            other.as_faer(),
            1.0,
            Par::Seq,
        );
        Ok(Self::from_faer(out.as_ref()))
    }

    /// Frobenius inner product `tr(AᵀB)`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub(crate) fn as_faer(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.data, self.rows, self.cols)
    }

    pub(crate) fn from_faer(m: MatRef<'_, f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD `A = U diag(Λ) Vᵀ` with `r = min(n, p)` components.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `Σ_j w_j u_j v_jᵀ` over components with non-zero weight.
    pub fn recompose(&self, weights: &[f64]) -> DenseMatrix {
        assert_eq!(weights.len(), self.rank());
        let n = self.u.rows();
        let p = self.v.rows();
        let active: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] != 0.0).collect();
        if active.is_empty() {
            return DenseMatrix::zeros(n, p);
        }
        let k = active.len();
        let us = Mat::<f64>::from_fn(n, k, |i, c| self.u[(i, active[c])] * weights[active[c]]);
        let vt = Mat::<f64>::from_fn(k, p, |c, j| self.v[(j, active[c])]);
        let mut out = Mat::<f64>::zeros(n, p);
        faer::linalg::matmul::matmul(
            out.as_mut(),
            faer::Accum::Replace,
            us.as_ref(),
            vt.as_ref(),
            1.0,
            Par::Seq,
        );
        DenseMatrix::from_faer(out.as_ref())
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.recompose(&self.singular_values)
    }

    /// Soft-thresholded recomposition `Σ_j (Λ_j − τ)₊ u_j v_jᵀ`.
    pub fn shrink(&self, tau: f64) -> DenseMatrix {
        self.recompose(&shrink_values(&self.singular_values, tau))
    }
}

pub fn shrink_values(values: &[f64], tau: f64) -> Vec<f64> {
    values.iter().map(|&s| (s - tau).max(0.0)).collect()
}

/// Thin SVD of `a`, singular values sorted non-increasing.
///
/// The bidiagonal QR sweeps are capped at `30·r²` iterations; exceeding the
/// cap is reported as [`Error::SvdNoConvergence`].
pub fn svd(a: &DenseMatrix) -> Result<SvdFactors> {
    let (s, u, v) = faer_decompose(a, true)?;
    Ok(SvdFactors {
        u: u.expect("vectors requested"),
        singular_values: s,
        v: v.expect("vectors requested"),
    })
}

/// Singular values only, non-increasing.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(faer_decompose(a, false)?.0)
}

type Decomposition = (Vec<f64>, Option<DenseMatrix>, Option<DenseMatrix>);

fn faer_decompose(a: &DenseMatrix, vectors: bool) -> Result<Decomposition> {
    let (n, p) = a.shape();
    let r = n.min(p);
    let (cols, mode) = if vectors {
        (r, ComputeSvdVectors::Thin)
    } else {
        (0, ComputeSvdVectors::No)
    };
    let mut s = Mat::<f64>::zeros(r, 1);
    let mut u = Mat::<f64>::zeros(n, cols);
    let mut v = Mat::<f64>::zeros(p, cols);
    let params = Default::default();
    let mut mem = MemBuffer::new(faer_svd::svd_scratch::<f64>(n, p, mode, mode, Par::Seq, params));
    let stack = MemStack::new(&mut mem);
    faer_svd::svd(
        a.as_faer(),
        s.as_mut().col_mut(0).as_diagonal_mut(),
        vectors.then_some(u.as_mut()),
        vectors.then_some(v.as_mut()),
        Par::Seq,
        stack,
        params,
    )
    .map_err(|_| Error::SvdNoConvergence {
        max_iterations: 30 * r * r,
    })?;
    Ok((
        (0..r).map(|j| s[(j, 0)].max(0.0)).collect(),
        vectors.then(|| DenseMatrix::from_faer(u.as_ref())),
        vectors.then(|| DenseMatrix::from_faer(v.as_ref())),
    ))
}

pub fn soft_threshold_svd(a: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "threshold must be finite and non-negative, got {tau}"
        )));
    }
    Ok(svd(a)?.shrink(tau))
}

pub fn nuclear_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// `(1/(np)) Σ (a_ij − b_ij)²`.
pub fn frobenius_mse(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / (a.rows() * a.cols()) as f64)
}

/// Number of singular values above `rel_tol · Λ_max`.
pub fn numerical_rank(a: &DenseMatrix, rel_tol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let cutoff = rel_tol * s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&x| x > cutoff && x > 0.0).count())
}

const POWER_MAX_ITERATIONS: usize = 100_000;

/// Largest singular value by power iteration on `AᵀA`.
///
/// Starts from the normalized all-ones vector. If that vector lies in the null
/// space of `A` the iteration restarts from the transpose of A's largest row.
/// Iteration stops once the Rayleigh quotient's geometric tail estimate
/// `δ_k · q/(1 − q)`, with `q = δ_k/δ_{k−1}` the observed contraction, falls
/// below `tol` relative to the current estimate.
pub fn operator_norm(a: &DenseMatrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let (n, p) = a.shape();
    let scale = a.max_abs();
    if scale == 0.0 {
        return Ok(0.0);
    }

    let apply = |x: &[f64], ax: &mut Vec<f64>, atax: &mut Vec<f64>| {
        ax.clear();
        ax.extend((0..n).map(|i| a.row(i).iter().zip(x).map(|(r, v)| r * v).sum::<f64>()));
        atax.clear();
        atax.resize(p, 0.0);
        for (i, &axi) in ax.iter().enumerate() {
            for (out, &aij) in atax.iter_mut().zip(a.row(i)) {
                *out += aij * axi;
            }
        }
    };

    let mut x = vec![1.0 / (p as f64).sqrt(); p];
    let mut ax = Vec::with_capacity(n);
    let mut atax = Vec::with_capacity(p);
    apply(&x, &mut ax, &mut atax);
    let frob_sq = a.frobenius_norm_sq();
    if norm(&atax) <= 1e-14 * frob_sq {
        let best = (0..n)
            .max_by(|&i, &k| {
                norm(a.row(i))
                    .partial_cmp(&norm(a.row(k)))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        x = a.row(best).to_vec();
        normalize(&mut x);
        apply(&x, &mut ax, &mut atax);
    }

    let mut rayleigh = dot(&ax, &ax);
    let mut prev_step = f64::INFINITY;
    for iteration in 1..=POWER_MAX_ITERATIONS {
        x.clone_from(&atax);
        if normalize(&mut x) == 0.0 {
            return Ok(rayleigh.sqrt());
        }
        apply(&x, &mut ax, &mut atax);
        let next = dot(&ax, &ax);
        let step = (next - rayleigh).abs();
        rayleigh = next;
        let q = step / prev_step;
        prev_step = step;
        let tail = if q < 1.0 { step * q / (1.0 - q) } else { f64::INFINITY };
        // relative error of sqrt(ρ) is half the relative error of ρ
        if step <= tol * rayleigh && tail <= tol * rayleigh {
            return Ok(rayleigh.sqrt());
        }
        if step == 0.0 && iteration > 1 {
            return Ok(rayleigh.sqrt());
        }
    }
    Err(Error::PowerIterationNoConvergence {
        iterations: POWER_MAX_ITERATIONS,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(x: &mut [f64]) -> f64 {
    let len = norm(x);
    if len > 0.0 {
        x.iter_mut().for_each(|v| *v /= len);
    }
    len
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gaussian())
    }

    fn orthonormality_residual(q: &DenseMatrix) -> f64 {
        let gram = q.transpose().matmul(q).unwrap();
        gram.sub(&DenseMatrix::identity(q.cols())).unwrap().frobenius_norm()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            DenseMatrix::new(0, 2, vec![]),
            Err(Error::EmptyMatrix { .. })
        ));
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0; 3]),
            Err(Error::EntryCount { .. })
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn svd_of_diagonal() {
        let a = DenseMatrix::from_diag(&[3.0, 1.0]);
        let f = svd(&a).unwrap();
        assert_eq!(f.singular_values, vec![3.0, 1.0]);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((f.u[(i, j)].abs() - expect).abs() < 1e-12);
                assert!((f.v[(i, j)].abs() - expect).abs() < 1e-12);
            }
        }
        assert!(f.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn svd_of_zero_matrix() {
        let f = svd(&DenseMatrix::zeros(3, 2)).unwrap();
        assert_eq!(f.singular_values, vec![0.0, 0.0]);
        assert!(orthonormality_residual(&f.u) < 1e-8 * 2.0);
        assert!(orthonormality_residual(&f.v) < 1e-8 * 2.0);
    }

    #[test]
    fn svd_of_scalar() {
        let f = svd(&DenseMatrix::new(1, 1, vec![-4.0]).unwrap()).unwrap();
        assert_eq!(f.singular_values, vec![4.0]);
        assert!((f.u[(0, 0)] * f.v[(0, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn svd_reconstructs_random_6x4() {
        let mut rng = Rng::new(2024);
        let a = random_matrix(6, 4, &mut rng);
        let f = svd(&a).unwrap();
        assert_eq!(f.rank(), 4);
        assert!(f.reconstruct().sub(&a).unwrap().frobenius_norm() <= 1e-8);
        assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn soft_threshold_diagonal() {
        let a = DenseMatrix::from_diag(&[3.0, 1.0]);
        let out = soft_threshold_svd(&a, 1.0).unwrap();
        let expect = DenseMatrix::from_diag(&[2.0, 0.0]);
        assert!(out.sub(&expect).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn soft_threshold_extremes() {
        let mut rng = Rng::new(5);
        let a = random_matrix(5, 7, &mut rng);
        let same = soft_threshold_svd(&a, 0.0).unwrap();
        assert!(same.sub(&a).unwrap().frobenius_norm() <= 1e-8);
        let top = svd(&a).unwrap().singular_values[0];
        let gone = soft_threshold_svd(&a, top).unwrap();
        assert_eq!(gone.max_abs(), 0.0);
        assert!(soft_threshold_svd(&a, -1.0).is_err());
    }

    #[test]
    fn soft_threshold_rank() {
        let a = DenseMatrix::from_diag(&[5.0, 3.0, 1.0, 0.5]);
        let out = soft_threshold_svd(&a, 0.9).unwrap();
        assert_eq!(numerical_rank(&out, 1e-10).unwrap(), 3);
        let s = svd(&out).unwrap().singular_values;
        for (got, want) in s.iter().zip([4.1, 2.1, 0.1, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_norm_simple_cases() {
        let a = DenseMatrix::from_diag(&[3.0, 1.0]);
        assert!((operator_norm(&a, 1e-10).unwrap() - 3.0).abs() < 3e-10);

        let u = [0.6, 0.8];
        let v = [1.0 / 3.0_f64.sqrt(); 3];
        let r1 = DenseMatrix::from_fn(2, 3, |i, j| u[i] * v[j]);
        assert!((operator_norm(&r1, 1e-10).unwrap() - 1.0).abs() < 1e-10);

        assert_eq!(operator_norm(&DenseMatrix::zeros(3, 3), 1e-8).unwrap(), 0.0);
        assert!(operator_norm(&a, 0.0).is_err());
    }

    #[test]
    fn operator_norm_when_ones_is_in_null_space() {
        let a = DenseMatrix::new(2, 2, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let got = operator_norm(&a, 1e-10).unwrap();
        assert!((got - 2.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn operator_norm_matches_svd_on_random_8x5() {
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let a = random_matrix(8, 5, &mut rng);
            let tol = 1e-8;
            let power = operator_norm(&a, tol).unwrap();
            let exact = svd(&a).unwrap().singular_values[0];
            assert!((power - exact).abs() <= tol * exact, "{power} vs {exact}");
        }
    }

    #[test]
    fn frobenius_mse_cases() {
        let a = DenseMatrix::new(1, 1, vec![2.0]).unwrap();
        let b = DenseMatrix::new(1, 1, vec![5.0]).unwrap();
        assert_eq!(frobenius_mse(&a, &b).unwrap(), 9.0);
        assert_eq!(frobenius_mse(&a, &a).unwrap(), 0.0);
        assert!(frobenius_mse(&a, &DenseMatrix::zeros(1, 2)).is_err());

        let mut rng = Rng::new(12);
        let x = random_matrix(4, 6, &mut rng);
        let y = random_matrix(4, 6, &mut rng);
        let mut brute = 0.0;
        for i in 0..4 {
            for j in 0..6 {
                brute += (x[(i, j)] - y[(i, j)]).powi(2);
            }
        }
        brute /= 24.0;
        assert!((frobenius_mse(&x, &y).unwrap() - brute).abs() < 1e-14);
    }

    #[test]
    fn nuclear_norm_cases() {
        assert!((nuclear_norm(&DenseMatrix::from_diag(&[3.0, 1.0])).unwrap() - 4.0).abs() < 1e-14);
        assert_eq!(nuclear_norm(&DenseMatrix::zeros(2, 3)).unwrap(), 0.0);
        let u = [1.0, 2.0, 2.0];
        let v = [3.0, 4.0];
        // singular value ‖u‖‖v‖ = 3·5
        let r1 = DenseMatrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        assert!((nuclear_norm(&r1).unwrap() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_shapes() {
        let a = DenseMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let b = DenseMatrix::identity(3);
        assert_eq!(a.matmul(&b).unwrap(), a);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn singular_values_match_full_svd() {
        let a = DenseMatrix::from_fn(7, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 2.5 + 0.1 * j as f64);
        let full = svd(&a).unwrap().singular_values;
        let only = singular_values(&a).unwrap();
        for (x, y) in full.iter().zip(&only) {
            assert!((x - y).abs() <= 1e-12 * full[0]);
        }
    }
}
