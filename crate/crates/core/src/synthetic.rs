//! Ground-truth matrices `m_ij = f_j(θ_i)` built from truncated Fourier series.
//!
//! Each column function is `f_j = Σ_b β_jb ψ_b` with `β_jb` uniform on
//! `[−b^{−(L+1)}, b^{−(L+1)}]`, so the coefficient envelope encodes the
//! smoothness order `L`. For `K > 1` the dictionary is the tensor product
//! `ψ_b(x) = Π_k ψ_{b_k}(x_k)` over multi-indices with `Π_k b_k ≤ num_basis`,
//! and the envelope uses `Π_k b_k` in place of `b`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::Rng;

pub const DEFAULT_NUM_BASIS: usize = 100;

/// `ψ_1 = 1`, `ψ_{2b} = √2 cos(2πbx)`, `ψ_{2b+1} = √2 sin(2πbx)`.
///
/// # Panics
/// If `index == 0`.
pub fn fourier_basis(index: usize, x: f64) -> f64 {
    assert!(index >= 1, "basis indices start at 1");
    if index == 1 {
        return 1.0;
    }
    let freq = (index / 2) as f64;
    let phase = 2.0 * PI * freq * x;
    if index.is_multiple_of(2) {
        SQRT_2 * phase.cos()
    } else {
        SQRT_2 * phase.sin()
    }
}

/// Upper bound on `|ψ_b^{(m)}|`: `√2 (2π⌊b/2⌋)^m`, or 1 for the constant.
fn basis_derivative_bound(index: usize, order: u32) -> f64 {
    if index == 1 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    SQRT_2 * (2.0 * PI * (index / 2) as f64).powi(order as i32)
}

pub fn coefficient_bound(index_product: usize, l: u32) -> f64 {
    (index_product as f64).powi(-(l as i32 + 1))
}

/// `num_basis` draws `β_b ~ U[−b^{−(L+1)}, b^{−(L+1)}]`, `b = 1..=num_basis`.
pub fn sample_coefficients(l: u32, num_basis: usize, rng: &mut Rng) -> Vec<f64> {
    (1..=num_basis)
        .map(|b| {
            let bound = coefficient_bound(b, l);
            rng.uniform_in(-bound, bound)
        })
        .collect()
}

/// `Σ_b β_b ψ_b(x)` with `coeffs[b-1] = β_b`.
pub fn eval_embedded_function(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(i, &beta)| if beta == 0.0 { 0.0 } else { beta * fourier_basis(i + 1, x) })
        .sum()
}

/// Multi-indices `(b_1, …, b_K)`, each `b_k ≥ 1`, with `Π b_k ≤ num_basis`,
/// in lexicographic order. For `K = 1` this is `1..=num_basis`.
pub fn tensor_indices(k: usize, num_basis: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, remaining: usize, budget: usize, out: &mut Vec<Vec<usize>>) {
        if remaining == 0 {
            out.push(prefix.clone());
            return;
        }
        for b in 1..=budget {
            prefix.push(b);
            extend(prefix, remaining - 1, budget / b, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(k), k, num_basis, &mut out);
    out
}

pub fn tensor_basis(index: &[usize], x: &[f64]) -> f64 {
    index.iter().zip(x).map(|(&b, &xk)| fourier_basis(b, xk)).product()
}

/// Integer `r` with `r^k == value`.
pub fn integer_root(value: usize, k: usize) -> Result<usize> {
    if k == 0 || value == 0 {
        return Err(Error::NotAPerfectPower { value, root: k });
    }
    let guess = (value as f64).powf(1.0 / k as f64).round() as usize;
    for r in guess.saturating_sub(1).max(1)..=guess + 1 {
        if r.checked_pow(k as u32) == Some(value) {
            return Ok(r);
        }
    }
    Err(Error::NotAPerfectPower { value, root: k })
}

/// Equispaced design `θ_(i_1..i_K) = (i_1/m, …, i_K/m)`, `m = n^{1/K}`,
/// `i_k ∈ 1..=m`, first coordinate varying slowest.
pub fn equispaced_theta(n: usize, k: usize) -> Result<DenseMatrix> {
    let m = integer_root(n, k)?;
    Ok(DenseMatrix::from_fn(n, k, |row, coord| {
        let stride = m.pow((k - 1 - coord) as u32);
        let i = (row / stride) % m + 1;
        i as f64 / m as f64
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    Uniform,
    Equispaced,
}

/// Smoothness class `M(L, γ, K)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessClass {
    pub l: u32,
    pub gamma: f64,
    pub k: usize,
}

impl SmoothnessClass {
    pub fn new(l: u32, gamma: f64, k: usize) -> Result<Self> {
        if l < 1 || k < 1 || !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothness class needs L >= 1, K >= 1, gamma > 0 (got L = {l}, K = {k}, gamma = {gamma})"
            )));
        }
        Ok(Self { l, gamma, k })
    }
}

/// Everything needed to re-evaluate a generated matrix.
#[derive(Clone, Debug)]
pub struct EmbeddingSpec {
    pub l: u32,
    pub k: usize,
    /// Realized bound on every order-`L` partial derivative of the column
    /// functions, from the coefficient magnitudes.
    pub gamma: f64,
    pub num_basis: usize,
    pub seed: u64,
    pub theta_mode: ThetaMode,
    pub basis: Vec<Vec<usize>>,
    /// `coefficients[j][t]` multiplies `basis[t]` in column `j`.
    pub coefficients: Vec<Vec<f64>>,
    pub theta: DenseMatrix,
}

/// JSON form of an [`EmbeddingSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSummary {
    #[serde(rename = "L")]
    pub l: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub num_basis: usize,
    pub seed: u64,
    pub theta_mode: ThetaMode,
}

impl EmbeddingSpec {
    pub fn n(&self) -> usize {
        self.theta.rows()
    }

    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    pub fn smoothness_class(&self) -> SmoothnessClass {
        SmoothnessClass {
            l: self.l,
            gamma: self.gamma,
            k: self.k,
        }
    }

    pub fn summary(&self) -> EmbeddingSummary {
        EmbeddingSummary {
            l: self.l,
            k: self.k,
            gamma: self.gamma,
            num_basis: self.num_basis,
            seed: self.seed,
            theta_mode: self.theta_mode,
        }
    }

    /// `f_j(x)` for a point `x ∈ [0,1]^K`.
    pub fn column_function(&self, j: usize, x: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(&self.coefficients[j])
            .map(|(idx, &beta)| beta * tensor_basis(idx, x))
            .sum()
    }

    /// `M = Ψ(Θ) Cᵀ` with `Ψ_it = ψ_{basis[t]}(θ_i)`.
    pub fn evaluate(&self) -> DenseMatrix {
        let n = self.n();
        let features = DenseMatrix::from_fn(n, self.basis.len(), |i, t| {
            tensor_basis(&self.basis[t], self.theta.row(i))
        });
        let coeffs_t =
            DenseMatrix::from_fn(self.basis.len(), self.p(), |t, j| self.coefficients[j][t]);
        features
            .matmul(&coeffs_t)
            .expect("feature and coefficient shapes agree by construction")
    }
}

/// Rebuilds the spec (and hence the matrix) from its JSON summary.
pub fn regenerate(summary: &EmbeddingSummary, n: usize, p: usize) -> Result<EmbeddingSpec> {
    build_spec(
        n,
        p,
        summary.l,
        summary.k,
        summary.num_basis,
        summary.theta_mode,
        &Rng::new(summary.seed),
    )
}

/// F-embeddable `n×p` matrix with uniform latent points (stream ids
/// `[0]` for θ and `[1, j]` for column `j`'s coefficients).
pub fn generate_matrix(
    n: usize,
    p: usize,
    l: u32,
    k: usize,
    num_basis: usize,
    rng: &Rng,
) -> Result<(DenseMatrix, EmbeddingSpec)> {
    generate_matrix_with_theta(n, p, l, k, num_basis, ThetaMode::Uniform, rng)
}

pub fn generate_matrix_with_theta(
    n: usize,
    p: usize,
    l: u32,
    k: usize,
    num_basis: usize,
    theta_mode: ThetaMode,
    rng: &Rng,
) -> Result<(DenseMatrix, EmbeddingSpec)> {
    let spec = build_spec(n, p, l, k, num_basis, theta_mode, rng)?;
    Ok((spec.evaluate(), spec))
}

fn build_spec(
    n: usize,
    p: usize,
    l: u32,
    k: usize,
    num_basis: usize,
    theta_mode: ThetaMode,
    rng: &Rng,
) -> Result<EmbeddingSpec> {
    if n == 0 || p == 0 {
        return Err(Error::EmptyMatrix { rows: n, cols: p });
    }
    if l < 1 || k < 1 || num_basis < 1 {
        return Err(Error::InvalidArgument(format!(
            "need L >= 1, K >= 1, num_basis >= 1 (got L = {l}, K = {k}, num_basis = {num_basis})"
        )));
    }
    let theta = match theta_mode {
        ThetaMode::Uniform => {
            let mut theta_rng = rng.derive(&[0]);
            DenseMatrix::from_fn(n, k, |_, _| theta_rng.uniform())
        }
        ThetaMode::Equispaced => equispaced_theta(n, k)?,
    };
    let basis = tensor_indices(k, num_basis);
    let bounds: Vec<f64> = basis
        .iter()
        .map(|idx| coefficient_bound(idx.iter().product(), l))
        .collect();
    let coefficients: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut col_rng = rng.derive(&[1, j as u64]);
            bounds.iter().map(|&b| col_rng.uniform_in(-b, b)).collect()
        })
        .collect();
    let derivative_bounds: Vec<f64> = basis
        .iter()
        .map(|idx| {
            let top = idx.iter().copied().max().unwrap_or(1);
            let scale = SQRT_2.powi(k as i32 - 1);
            scale * basis_derivative_bound(top, l)
        })
        .collect();
    let gamma = coefficients
        .iter()
        .map(|c| {
            c.iter()
                .zip(&derivative_bounds)
                .map(|(beta, d)| beta.abs() * d)
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    Ok(EmbeddingSpec {
        l,
        k,
        gamma,
        num_basis,
        seed: rng.seed(),
        theta_mode,
        basis,
        coefficients,
        theta,
    })
}
