//! Rate-of-convergence study and the Δ-scaling diagnostic.
//!
//! A rate experiment runs every `(L, n, replicate)` cell independently. Cell
//! seeds are `split_seed(seed, [L, n, replicate])`; inside a cell, stream
//! `[0]` drives the embedding, `[1]` the masks and `[2]` the noise. Cells run
//! on a rayon pool and are collected back in `(L, n, replicate)` order, so the
//! thread count never changes the output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{oracle_select, LambdaGridSpec};
use crate::io::{format_f64, write_json};
use crate::linalg::{operator_norm, DenseMatrix};
use crate::rng::{split_seed, Rng};
use crate::sampling::{empirical_delta, observe, sample_masks, SamplingMode};
use crate::synthetic::{generate_matrix, DEFAULT_NUM_BASIS};

pub const THREADS_ENV: &str = "SMOOTHMC_THREADS";
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;
const BOOTSTRAP_STREAM: u64 = u64::MAX;
const OPERATOR_NORM_TOL: f64 = 1e-10;

fn default_num_basis() -> usize {
    DEFAULT_NUM_BASIS
}

fn default_sampling_mode() -> SamplingMode {
    SamplingMode::WithoutReplacement
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateExperimentConfig {
    pub sizes: Vec<usize>,
    #[serde(rename = "L_values")]
    pub l_values: Vec<u32>,
    #[serde(rename = "K")]
    pub k: usize,
    pub nu: f64,
    pub sigma: f64,
    pub replicates: usize,
    #[serde(default = "default_num_basis")]
    pub num_basis: usize,
    #[serde(default)]
    pub lambda_grid_spec: LambdaGridSpec,
    pub seed: u64,
    #[serde(default = "default_sampling_mode")]
    pub sampling_mode: SamplingMode,
}

impl RateExperimentConfig {
    /// Desk-scale design: sizes {200, 400, 800, 1600}, `K = 1`, `ν = 0.3`,
    /// `σ = 1`, 20 replicates, without replacement.
    pub fn desk_scale(l_values: Vec<u32>, seed: u64) -> Self {
        Self {
            sizes: vec![200, 400, 800, 1600],
            l_values,
            k: 1,
            nu: 0.3,
            sigma: 1.0,
            replicates: 20,
            num_basis: DEFAULT_NUM_BASIS,
            lambda_grid_spec: LambdaGridSpec::default(),
            seed,
            sampling_mode: SamplingMode::WithoutReplacement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.sizes.is_empty() || self.sizes[0] == 0 {
            return bad("sizes must be non-empty and positive".into());
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("sizes must be strictly increasing, got {:?}", self.sizes));
        }
        if self.l_values.is_empty() || self.l_values.contains(&0) {
            return bad(format!("L_values must be non-empty and >= 1, got {:?}", self.l_values));
        }
        if self.k < 1 {
            return bad("K must be at least 1".into());
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return bad(format!("nu must lie in (0, 1), got {}", self.nu));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.num_basis < 1 {
            return bad("num_basis must be at least 1".into());
        }
        let g = &self.lambda_grid_spec;
        if g.points < 1 || !(g.lo_factor > 0.0) || !(g.hi_factor >= g.lo_factor) {
            return bad(format!("bad lambda_grid_spec {g:?}"));
        }
        for &n in &self.sizes {
            self.sample_count(n)?;
        }
        Ok(())
    }

    /// `N = round((1 − ν) n²)`.
    pub fn sample_count(&self, n: usize) -> Result<usize> {
        let count = ((1.0 - self.nu) * (n * n) as f64).round() as usize;
        if count == 0 {
            return Err(Error::InvalidArgument(format!(
                "n = {n}, nu = {} leaves no observations",
                self.nu
            )));
        }
        Ok(count)
    }
}

/// `2L / (2L + K)`.
pub fn theoretical_slope(l: u32, k: usize) -> f64 {
    let two_l = 2.0 * l as f64;
    two_l / (two_l + k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(rename = "L")]
    pub l: u32,
    pub n: usize,
    pub mean_mse: f64,
    pub mses: Vec<f64>,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    /// Fitted slope of `log MSE` on `log n`; negative when the error shrinks.
    pub slope: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub theoretical_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub cells: Vec<CellResult>,
    /// Keyed by `L`; absent when fewer than two sizes were run.
    pub per_l: BTreeMap<u32, Option<SlopeSummary>>,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(rename = "per_L")]
    per_l: BTreeMap<String, &'a Option<SlopeSummary>>,
}

impl RateResult {
    pub fn cell(&self, l: u32, n: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.l == l && c.n == n)
    }

    pub fn slope(&self, l: u32) -> Option<&SlopeSummary> {
        self.per_l.get(&l).and_then(Option::as_ref)
    }

    /// Rows `L,n,replicate,lambda,mse`.
    pub fn results_csv(&self) -> String {
        let mut out = String::from("L,n,replicate,lambda,mse\n");
        for cell in &self.cells {
            for (rep, (lambda, mse)) in cell.lambdas.iter().zip(&cell.mses).enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    cell.l,
                    cell.n,
                    rep,
                    format_f64(*lambda),
                    format_f64(*mse)
                )
                .expect("writing to a String");
            }
        }
        out
    }

    /// Writes `rate_results.csv` and `rate_summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("rate_results.csv"), self.results_csv())?;
        let summary = SummaryFile {
            per_l: self.per_l.iter().map(|(l, s)| (l.to_string(), s)).collect(),
        };
        write_json(&dir.join("rate_summary.json"), &summary)
    }
}

/// Thread count from `SMOOTHMC_THREADS`; `None` (auto) when unset, empty or 0.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => {
            let t: usize = v.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))
            })?;
            Ok((t > 0).then_some(t))
        }
    }
}

fn run_in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// One `(L, n, replicate)` cell: `(oracle λ, MSE)`.
pub fn run_replicate(cfg: &RateExperimentConfig, l: u32, n: usize, replicate: usize) -> Result<(f64, f64)> {
    let seed = split_seed(cfg.seed, &[l as u64, n as u64, replicate as u64]);
    let wrap = |source: Error| Error::Replicate {
        l,
        n,
        replicate,
        seed,
        source: Box::new(source),
    };
    let run = || -> Result<(f64, f64)> {
        let rng = Rng::new(seed);
        let (m, _) = generate_matrix(n, n, l, cfg.k, cfg.num_basis, &rng.derive(&[0]))?;
        let count = cfg.sample_count(n)?;
        let masks = sample_masks(n, n, count, cfg.sampling_mode, &mut rng.derive(&[1]))?;
        let obs = observe(&m, &masks, cfg.sampling_mode, cfg.sigma, &mut rng.derive(&[2]))?;
        let grid = cfg.lambda_grid_spec.build(n, n, count)?;
        let choice = oracle_select(&m, &obs, &grid)?;
        Ok((choice.lambda, choice.mse))
    };
    run().map_err(wrap)
}

/// Runs with the thread count from `SMOOTHMC_THREADS`.
pub fn run_rate_experiment(cfg: &RateExperimentConfig) -> Result<RateResult> {
    run_rate_experiment_with_threads(cfg, threads_from_env()?)
}

pub fn run_rate_experiment_with_threads(
    cfg: &RateExperimentConfig,
    threads: Option<usize>,
) -> Result<RateResult> {
    cfg.validate()?;
    let tasks: Vec<(u32, usize, usize)> = cfg
        .l_values
        .iter()
        .flat_map(|&l| {
            cfg.sizes
                .iter()
                .flat_map(move |&n| (0..cfg.replicates).map(move |r| (l, n, r)))
        })
        .collect();
    let outcomes: Vec<Result<(f64, f64)>> = run_in_pool(threads, || {
        tasks
            .par_iter()
            .map(|&(l, n, r)| run_replicate(cfg, l, n, r))
            .collect()
    })?;

    let mut cells = Vec::with_capacity(cfg.l_values.len() * cfg.sizes.len());
    let mut outcomes = outcomes.into_iter();
    for &l in &cfg.l_values {
        for &n in &cfg.sizes {
            let mut lambdas = Vec::with_capacity(cfg.replicates);
            let mut mses = Vec::with_capacity(cfg.replicates);
            for _ in 0..cfg.replicates {
                let (lambda, mse) = outcomes.next().expect("one outcome per task")?;
                lambdas.push(lambda);
                mses.push(mse);
            }
            cells.push(CellResult {
                l,
                n,
                mean_mse: mean(&mses),
                mses,
                lambdas,
            });
        }
    }

    let mut per_l = BTreeMap::new();
    for &l in &cfg.l_values {
        let table: Vec<(usize, Vec<f64>)> = cells
            .iter()
            .filter(|c| c.l == l)
            .map(|c| (c.n, c.mses.clone()))
            .collect();
        let summary = if table.len() < 2 {
            None
        } else {
            let points: Vec<(f64, f64)> = table.iter().map(|(n, m)| (*n as f64, mean(m))).collect();
            let (slope, _) = loglog_slope(&points)?;
            let mut rng = Rng::new(cfg.seed).derive(&[BOOTSTRAP_STREAM, l as u64]);
            let (lo, hi) = bootstrap_slope_ci(&table, BOOTSTRAP_RESAMPLES, BOOTSTRAP_LEVEL, &mut rng)?;
            Some(SlopeSummary {
                slope,
                ci_lo: lo.min(slope),
                ci_hi: hi.max(slope),
                theoretical_slope: theoretical_slope(l, cfg.k),
            })
        };
        per_l.insert(l, summary);
    }
    Ok(RateResult { cells, per_l })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// OLS of `log mse` on `log n`; returns `(slope, intercept)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if let Some(&(n, mse)) = points.iter().find(|(n, m)| !(*m > 0.0) || !(*n > 0.0)) {
        return Err(Error::NonPositiveMse { n, value: mse });
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(n, m)| (n.ln(), m.ln())).collect();
    let xbar = logs.iter().map(|p| p.0).sum::<f64>() / logs.len() as f64;
    let ybar = logs.iter().map(|p| p.1).sum::<f64>() / logs.len() as f64;
    let sxx: f64 = logs.iter().map(|(x, _)| (x - xbar).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument(
            "log-log regression needs at least two distinct n".into(),
        ));
    }
    let sxy: f64 = logs.iter().map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    Ok((slope, ybar - slope * xbar))
}

/// Percentile interval of the slope through per-`n` means, resampling
/// replicates with replacement within each `n`.
pub fn bootstrap_slope_ci(
    per_replicate_mses: &[(usize, Vec<f64>)],
    resamples: usize,
    level: f64,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    if per_replicate_mses.iter().any(|(_, m)| m.is_empty()) {
        return Err(Error::InvalidArgument("every n needs at least one replicate".into()));
    }
    let mut slopes = Vec::with_capacity(resamples);
    let mut points = vec![(0.0, 0.0); per_replicate_mses.len()];
    for _ in 0..resamples {
        for (slot, (n, mses)) in points.iter_mut().zip(per_replicate_mses) {
            let reps = mses.len();
            let total: f64 = (0..reps).map(|_| mses[rng.below(reps as u64) as usize]).sum();
            *slot = (*n as f64, total / reps as f64);
        }
        slopes.push(loglog_slope(&points)?.0);
    }
    slopes.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&slopes, tail), quantile(&slopes, 1.0 - tail)))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    #[serde(rename = "N")]
    pub num_samples: usize,
    pub median_op_norm: f64,
    pub op_norms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaScalingResult {
    pub rows: Vec<DeltaRow>,
    /// Log-log slope of the median norm against `N`; absent when the medians
    /// are not all positive or fewer than two `N` were run.
    pub slope: Option<f64>,
}

impl DeltaScalingResult {
    /// Rows `N,median_op_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,median_op_norm\n");
        for row in &self.rows {
            writeln!(out, "{},{}", row.num_samples, format_f64(row.median_op_norm))
                .expect("writing to a String");
        }
        out
    }
}

/// Median `‖Δ‖_op` over `replicates` with-replacement samples of `m`, per `N`.
/// Replicate `r` at sample size `N` uses stream `[N, r]` of `rng`.
pub fn run_delta_scaling(
    m: &DenseMatrix,
    n_values: &[usize],
    sigma: f64,
    replicates: usize,
    rng: &Rng,
) -> Result<DeltaScalingResult> {
    if n_values.is_empty() || n_values.contains(&0) || replicates == 0 {
        return Err(Error::InvalidArgument(
            "delta scaling needs positive N values and replicates >= 1".into(),
        ));
    }
    let (n, p) = m.shape();
    let mode = SamplingMode::WithReplacement;
    let mut rows = Vec::with_capacity(n_values.len());
    for &count in n_values {
        let mut op_norms = Vec::with_capacity(replicates);
        for r in 0..replicates {
            let stream = rng.derive(&[count as u64, r as u64]);
            let masks = sample_masks(n, p, count, mode, &mut stream.derive(&[0]))?;
            let obs = observe(m, &masks, mode, sigma, &mut stream.derive(&[1]))?;
            op_norms.push(operator_norm(&empirical_delta(&obs, m)?, OPERATOR_NORM_TOL)?);
        }
        let mut sorted = op_norms.clone();
        sorted.sort_by(f64::total_cmp);
        rows.push(DeltaRow {
            num_samples: count,
            median_op_norm: quantile(&sorted, 0.5),
            op_norms,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.num_samples as f64, r.median_op_norm))
        .collect();
    let slope = loglog_slope(&points).ok().map(|(s, _)| s);
    Ok(DeltaScalingResult { rows, slope })
}
