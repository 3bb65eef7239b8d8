//! Singular-value soft-thresholding estimator and its λ selection.
//!
//! The estimator minimizes
//! `(1/np)‖M‖_F² − ⟨(2/N) Σ y_t X_t, M⟩ + λ‖M‖_*`, whose unique minimizer is
//! `Σ_j (Λ_j(R) − λnp/2)₊ u_j v_jᵀ` for `R = (np/N) Σ y_t X_t`. Because λ enters
//! only through the threshold, a grid sweep needs a single SVD of `R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, shrink_values, DenseMatrix, SvdFactors};
use crate::sampling::{build_r, ObservationSet};

#[derive(Clone, Debug)]
pub struct CompletionResult {
    pub m_hat: DenseMatrix,
    pub lambda: f64,
    /// Singular values of `R`, non-increasing.
    pub spectrum: Vec<f64>,
    /// `#{j : Λ_j(R) > λnp/2}`.
    pub effective_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionSummary {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    pub effective_rank: usize,
    pub spectrum: Vec<f64>,
}

impl CompletionResult {
    pub fn summary(&self, mse: Option<f64>) -> CompletionSummary {
        CompletionSummary {
            lambda: self.lambda,
            mse,
            effective_rank: self.effective_rank,
            spectrum: self.spectrum.clone(),
        }
    }
}

/// Strictly increasing sequence of positive regularization levels.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "lambda grid values must be finite and positive".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "lambda grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `points` values evenly spaced in log scale over `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points == 0 || !(lo > 0.0) || !(hi >= lo) {
            return Err(Error::InvalidArgument(format!(
                "bad log grid: lo = {lo}, hi = {hi}, points = {points}"
            )));
        }
        if points == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (points - 1) as f64;
        Self::new((0..points).map(|t| (a + step * t as f64).exp()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Grid relative to [`theoretical_lambda`] with `C₂ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGridSpec {
    pub points: usize,
    pub lo_factor: f64,
    pub hi_factor: f64,
}

impl Default for LambdaGridSpec {
    fn default() -> Self {
        Self {
            points: 30,
            lo_factor: 1e-3,
            hi_factor: 10.0,
        }
    }
}

impl LambdaGridSpec {
    pub fn build(&self, n: usize, p: usize, num_samples: usize) -> Result<LambdaGrid> {
        let base = theoretical_lambda(n, p, num_samples, 1.0);
        LambdaGrid::log_spaced(self.lo_factor * base, self.hi_factor * base, self.points)
    }
}

/// `λ = C₂ · sqrt(log(n+p) / (N · min(n,p)))`.
pub fn theoretical_lambda(n: usize, p: usize, num_samples: usize, c2: f64) -> f64 {
    let denom = num_samples as f64 * n.min(p) as f64;
    c2 * (((n + p) as f64).ln() / denom).sqrt()
}

/// Singular-value threshold `λnp/2` matching a penalty level.
pub fn threshold_for(lambda: f64, n: usize, p: usize) -> f64 {
    lambda * (n * p) as f64 / 2.0
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and positive, got {lambda}"
        )));
    }
    Ok(())
}

pub fn complete(obs: &ObservationSet, lambda: f64) -> Result<CompletionResult> {
    check_lambda(lambda)?;
    SpectralSweep::new(obs)?.at(lambda)
}

/// `(1/np)‖M‖_F² − ⟨(2/N) Σ y_t X_t, M⟩ + λ‖M‖_*`.
pub fn objective_value(obs: &ObservationSet, m: &DenseMatrix, lambda: f64) -> Result<f64> {
    let (n, p) = (obs.n(), obs.p());
    if m.shape() != (n, p) {
        return Err(Error::DimensionMismatch {
            left_rows: n,
            left_cols: p,
            right_rows: m.rows(),
            right_cols: m.cols(),
        });
    }
    let quad = m.frobenius_norm_sq() / (n * p) as f64;
    let cross: f64 = obs
        .samples()
        .iter()
        .map(|s| s.y * m[(s.mask.row, s.mask.col)])
        .sum::<f64>()
        * 2.0
        / obs.len() as f64;
    let penalty = if lambda == 0.0 {
        0.0
    } else {
        lambda * linalg::nuclear_norm(m)?
    };
    Ok(quad - cross + penalty)
}

/// One SVD of `R`, re-thresholded for any number of λ values.
#[derive(Clone, Debug)]
pub struct SpectralSweep {
    n: usize,
    p: usize,
    factors: SvdFactors,
}

impl SpectralSweep {
    pub fn new(obs: &ObservationSet) -> Result<Self> {
        let r = build_r(obs);
        Ok(Self {
            n: obs.n(),
            p: obs.p(),
            factors: linalg::svd(&r)?,
        })
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.factors.singular_values
    }

    pub fn factors(&self) -> &SvdFactors {
        &self.factors
    }

    pub fn effective_rank(&self, lambda: f64) -> usize {
        let tau = threshold_for(lambda, self.n, self.p);
        self.spectrum().iter().filter(|&&s| s > tau).count()
    }

    pub fn at(&self, lambda: f64) -> Result<CompletionResult> {
        check_lambda(lambda)?;
        let tau = threshold_for(lambda, self.n, self.p);
        Ok(CompletionResult {
            m_hat: self.factors.shrink(tau),
            lambda,
            spectrum: self.spectrum().to_vec(),
            effective_rank: self.effective_rank(lambda),
        })
    }

    /// `frobenius_mse(M̂_λ, truth)` for every grid value without forming `M̂_λ`.
    ///
    /// Uses `‖M̂ − M‖² = Σ s_j² − 2 Σ s_j u_jᵀ M v_j + ‖M‖²` where `s_j` are the
    /// shrunk singular values.
    pub fn mse_profile(&self, truth: &DenseMatrix, grid: &LambdaGrid) -> Result<Vec<f64>> {
        if truth.shape() != (self.n, self.p) {
            return Err(Error::DimensionMismatch {
                left_rows: self.n,
                left_cols: self.p,
                right_rows: truth.rows(),
                right_cols: truth.cols(),
            });
        }
        let ut_m = self.factors.u.transpose().matmul(truth)?;
        let v = &self.factors.v;
        let alignment: Vec<f64> = (0..self.factors.rank())
            .map(|j| (0..self.p).map(|c| ut_m[(j, c)] * v[(c, j)]).sum())
            .collect();
        let truth_sq = truth.frobenius_norm_sq();
        let cells = (self.n * self.p) as f64;
        Ok(grid
            .values()
            .iter()
            .map(|&lambda| {
                let shrunk = shrink_values(self.spectrum(), threshold_for(lambda, self.n, self.p));
                let fit: f64 = shrunk.iter().map(|s| s * s).sum();
                let cross: f64 = shrunk.iter().zip(&alignment).map(|(s, c)| s * c).sum();
                ((fit - 2.0 * cross + truth_sq) / cells).max(0.0)
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct OracleChoice {
    pub lambda: f64,
    pub mse: f64,
    pub result: CompletionResult,
}

/// Grid value minimizing the true MSE; ties go to the smallest λ.
pub fn oracle_select(
    truth: &DenseMatrix,
    obs: &ObservationSet,
    grid: &LambdaGrid,
) -> Result<OracleChoice> {
    let sweep = SpectralSweep::new(obs)?;
    oracle_select_with(&sweep, truth, grid)
}

pub fn oracle_select_with(
    sweep: &SpectralSweep,
    truth: &DenseMatrix,
    grid: &LambdaGrid,
) -> Result<OracleChoice> {
    let profile = sweep.mse_profile(truth, grid)?;
    let mut best = 0;
    for (t, &mse) in profile.iter().enumerate().skip(1) {
        if mse < profile[best] {
            best = t;
        }
    }
    let lambda = grid.values()[best];
    let result = sweep.at(lambda)?;
    let mse = linalg::frobenius_mse(&result.m_hat, truth)?;
    Ok(OracleChoice {
        lambda,
        mse,
        result,
    })
}
