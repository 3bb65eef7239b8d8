//! Numerical certificates for the approximation count `J*(ε)` and for the
//! bump-function packing sets behind the minimax lower bound.
//!
//! The packing construction places one bump `Φ_d` in each of `b` grid cells
//! and switches it on or off per column with a binary code word. Everything
//! here is evaluated on the equispaced design, where the separation and KL
//! quantities have closed forms that can be checked directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_mse, DenseMatrix};
use crate::rng::Rng;
use crate::synthetic::{equispaced_theta, integer_root};

pub const DERIVATIVE_GRID_POINTS: usize = 100_000;
pub const FD_STEP: f64 = 1e-3;
pub const DERIVATIVE_SLACK: f64 = 1e-3;
/// Relative width at which the `c_L` bisection stops.
pub const CALIBRATION_RESOLUTION: f64 = 1e-4;
pub const SMOOTHNESS_SLACK: f64 = 0.1;
pub const CODE_SEARCH_DRAWS_PER_WORD: usize = 10_000;

/// `e · exp(−1/(1−4u²))` on `(−1/2, 1/2)`, zero elsewhere. Peaks at 1.
pub fn unit_bump(u: f64) -> f64 {
    if u.abs() >= 0.5 {
        return 0.0;
    }
    std::f64::consts::E * (-1.0 / (1.0 - 4.0 * u * u)).exp()
}

/// Bump normalization `c_L` for smoothness order `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpParams {
    pub c_l: f64,
    pub l: u32,
}

pub fn bump_phi(u: f64, params: &BumpParams) -> f64 {
    params.c_l * unit_bump(u)
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Central difference of the given order, step `h`, error `O(h²)`.
fn central_difference(f: impl Fn(f64) -> f64, x: f64, order: u32, h: f64) -> f64 {
    if order == 0 {
        return f(x);
    }
    let half = order as f64 / 2.0;
    let sum: f64 = (0..=order)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(order as u64, k as u64) as f64 * f(x + (half - k as f64) * h)
        })
        .sum();
    sum / h.powi(order as i32)
}

/// Richardson-refined central difference with steps `FD_STEP` and `FD_STEP/2`.
pub fn fd_derivative(f: impl Fn(f64) -> f64 + Copy, x: f64, order: u32) -> f64 {
    if order == 0 {
        return f(x);
    }
    let coarse = central_difference(f, x, order, FD_STEP);
    let fine = central_difference(f, x, order, FD_STEP / 2.0);
    (4.0 * fine - coarse) / 3.0
}

/// `max_u |d^l/du^l (scale · unit_bump)(u)|` for `l = 0..=max_order`, over
/// `DERIVATIVE_GRID_POINTS` equispaced points of `[−1/2, 1/2]`.
pub fn derivative_maxima(scale: f64, max_order: u32) -> Vec<f64> {
    let f = move |u: f64| scale * unit_bump(u);
    let step = 1.0 / (DERIVATIVE_GRID_POINTS - 1) as f64;
    (0..=max_order)
        .map(|order| {
            (0..DERIVATIVE_GRID_POINTS)
                .map(|t| fd_derivative(f, -0.5 + t as f64 * step, order).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

impl BumpParams {
    pub fn derivative_maxima(&self) -> Vec<f64> {
        derivative_maxima(self.c_l, self.l)
    }

    /// Every derivative of order `0..=L` stays within `1 + DERIVATIVE_SLACK`.
    pub fn satisfies_derivative_bound(&self) -> bool {
        self.derivative_maxima()
            .iter()
            .all(|&m| m <= 1.0 + DERIVATIVE_SLACK)
    }
}

/// Largest `c_L` keeping all finite-difference derivatives of order `0..=L`
/// within `1 + DERIVATIVE_SLACK`, bisected to relative width
/// `CALIBRATION_RESOLUTION`.
pub fn calibrate_c_l(l: u32) -> Result<BumpParams> {
    if l < 1 {
        return Err(Error::InvalidArgument("bump calibration needs L >= 1".into()));
    }
    // finite differences are linear in the scale, so the unit envelope decides
    // admissibility for every candidate c
    let peak = derivative_maxima(1.0, l).into_iter().fold(0.0, f64::max);
    let admissible = |c: f64| c * peak <= 1.0 + DERIVATIVE_SLACK;
    let (mut lo, mut hi) = (0.0, 1.0);
    while admissible(hi) {
        lo = hi;
        hi *= 2.0;
    }
    if lo == 0.0 {
        lo = hi;
        while !admissible(lo) {
            hi = lo;
            lo /= 2.0;
        }
    }
    while hi - lo > CALIBRATION_RESOLUTION * lo {
        let mid = 0.5 * (lo + hi);
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BumpParams { c_l: lo, l })
}

fn check_cells(n: usize, b: usize, k: usize) -> Result<(usize, usize)> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if b < 1 || b as f64 > 0.48f64.powi(k as i32) * n as f64 {
        return Err(Error::CellCountOutOfRange { b, n, k });
    }
    Ok((integer_root(n, k)?, integer_root(b, k)?))
}

/// All `d ∈ {1..side}^K` in lexicographic order.
pub fn cell_indices(side: usize, k: usize) -> Vec<Vec<usize>> {
    let total = side.pow(k as u32);
    (0..total)
        .map(|lin| {
            (0..k)
                .map(|coord| (lin / side.pow((k - 1 - coord) as u32)) % side + 1)
                .collect()
        })
        .collect()
}

/// `Φ_d(θ) = γ b^{−L/K} Π_k φ(b^{1/K} θ_k − d_k + 1/2)`.
pub fn phi_d(theta: &[f64], d: &[usize], b: usize, gamma: f64, params: &BumpParams) -> Result<f64> {
    let k = theta.len();
    if d.len() != k {
        return Err(Error::InvalidArgument(format!(
            "cell index has {} coordinates, theta has {k}",
            d.len()
        )));
    }
    let side = integer_root(b, k)?;
    if let Some(&bad) = d.iter().find(|&&dk| dk < 1 || dk > side) {
        return Err(Error::InvalidArgument(format!(
            "cell coordinate {bad} outside 1..={side}"
        )));
    }
    Ok(phi_d_unchecked(theta, d, side, b, gamma, params))
}

fn phi_d_unchecked(
    theta: &[f64],
    d: &[usize],
    side: usize,
    b: usize,
    gamma: f64,
    params: &BumpParams,
) -> f64 {
    let k = theta.len() as f64;
    let amplitude = gamma * (b as f64).powf(-(params.l as f64) / k);
    let product: f64 = theta
        .iter()
        .zip(d)
        .map(|(&t, &dk)| bump_phi(side as f64 * t - dk as f64 + 0.5, params))
        .product();
    amplitude * product
}

/// Per-cell energies `(1/n) Σ_i Φ_d²(θ_i)` against the two-sided bound
/// `γ² C₂ b^{−(2L+K)/K} ≤ · ≤ γ² C₁ b^{−(2L+K)/K}`, `C₁ = c_L^{2K}`,
/// `C₂ = (0.1 c_L)^{2K}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEnergyCheck {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// Smallest per-cell energy.
    pub value: f64,
    pub max_value: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub per_cell: Vec<f64>,
}

pub fn cell_energy_check(
    n: usize,
    b: usize,
    gamma: f64,
    params: &BumpParams,
    k: usize,
) -> Result<CellEnergyCheck> {
    let (_, side) = check_cells(n, b, k)?;
    let theta = equispaced_theta(n, k)?;
    let per_cell: Vec<f64> = cell_indices(side, k)
        .iter()
        .map(|d| {
            (0..n)
                .map(|i| phi_d_unchecked(theta.row(i), d, side, b, gamma, params).powi(2))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let (c1, c2) = energy_constants(params, k);
    let scale = gamma * gamma * (b as f64).powf(-((2 * params.l as usize + k) as f64) / k as f64);
    let lower_bound = scale * c2;
    let upper_bound = scale * c1;
    let value = per_cell.iter().copied().fold(f64::INFINITY, f64::min);
    let max_value = per_cell.iter().copied().fold(0.0, f64::max);
    Ok(CellEnergyCheck {
        lower_ok: value >= lower_bound,
        upper_ok: max_value <= upper_bound,
        value,
        max_value,
        lower_bound,
        upper_bound,
        per_cell,
    })
}

/// `(C₁, C₂) = (c_L^{2K}, (0.1 c_L)^{2K})`.
pub fn energy_constants(params: &BumpParams, k: usize) -> (f64, f64) {
    let e = 2 * k as i32;
    (params.c_l.powi(e), (0.1 * params.c_l).powi(e))
}

/// Binary word `w ∈ {0,1}^{bp}`; bit `d·p + j` switches bump `d` on in column `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Codeword(Vec<bool>);

impl Codeword {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn hamming(&self, other: &Codeword) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl std::fmt::Display for Codeword {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &bit in &self.0 {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// `ceil(bp/8)`.
pub fn min_code_distance(len: usize) -> usize {
    len.div_ceil(8)
}

/// `count` words of length `bp`, pairwise Hamming distance at least `bp/8`.
///
/// Candidates are uniform random words, kept when they clear the distance to
/// every word already kept. The search gives up after
/// `CODE_SEARCH_DRAWS_PER_WORD · count` candidates.
pub fn varshamov_gilbert_codes(b: usize, p: usize, count: usize, rng: &mut Rng) -> Result<Vec<Codeword>> {
    let len = b * p;
    if len < 8 {
        return Err(Error::InvalidArgument(format!("code length bp = {len} must be at least 8")));
    }
    if count == 0 || count as f64 > 2f64.powf(len as f64 / 8.0) {
        return Err(Error::InvalidArgument(format!(
            "count = {count} outside 1..=2^(bp/8) = {}",
            2f64.powf(len as f64 / 8.0)
        )));
    }
    let min_dist = min_code_distance(len);
    let budget = CODE_SEARCH_DRAWS_PER_WORD * count;
    let mut words: Vec<Codeword> = Vec::with_capacity(count);
    for _ in 0..budget {
        let candidate = Codeword((0..len).map(|_| rng.coin()).collect());
        if words.iter().all(|w| w.hamming(&candidate) >= min_dist) {
            words.push(candidate);
            if words.len() == count {
                return Ok(words);
            }
        }
    }
    Err(Error::CodeSearchExhausted {
        attempts: budget,
        found: words.len(),
        requested: count,
    })
}

/// Hypotheses `M_w = Σ_d Φ_d(Θ) diag(w_d)` over the equispaced design.
#[derive(Clone, Debug)]
pub struct PackingSet {
    pub n: usize,
    pub p: usize,
    pub b: usize,
    pub k: usize,
    pub l: u32,
    pub gamma: f64,
    pub bump: BumpParams,
    pub codes: Vec<Codeword>,
    pub matrices: Vec<DenseMatrix>,
    /// Certified lower bound `(γ² C₂ / 8) b^{−2L/K}` on pairwise
    /// `(1/np)‖M_s − M_t‖_F²`.
    pub delta: f64,
    /// `cell_profiles[d][i] = Φ_d(θ_i)`.
    pub cell_profiles: Vec<Vec<f64>>,
}

impl PackingSet {
    pub fn hypothesis(&self, code: &Codeword) -> Result<DenseMatrix> {
        if code.len() != self.b * self.p {
            return Err(Error::InvalidArgument(format!(
                "code word has {} bits, expected {}",
                code.len(),
                self.b * self.p
            )));
        }
        Ok(assemble(&self.cell_profiles, code, self.n, self.p))
    }
}

fn assemble(profiles: &[Vec<f64>], code: &Codeword, n: usize, p: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, p, |i, j| {
        profiles
            .iter()
            .enumerate()
            .filter(|(d, _)| code.bits()[d * p + j])
            .map(|(_, prof)| prof[i])
            .sum()
    })
}

#[allow(clippy::too_many_arguments)]
pub fn build_packing(
    n: usize,
    p: usize,
    b: usize,
    gamma: f64,
    params: &BumpParams,
    k: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<PackingSet> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let (_, side) = check_cells(n, b, k)?;
    let theta = equispaced_theta(n, k)?;
    let cell_profiles: Vec<Vec<f64>> = cell_indices(side, k)
        .iter()
        .map(|d| {
            (0..n)
                .map(|i| phi_d_unchecked(theta.row(i), d, side, b, gamma, params))
                .collect()
        })
        .collect();
    let codes = varshamov_gilbert_codes(b, p, count, rng)?;
    let matrices = codes
        .iter()
        .map(|c| assemble(&cell_profiles, c, n, p))
        .collect();
    let (_, c2) = energy_constants(params, k);
    let delta = gamma * gamma * c2 / 8.0 * (b as f64).powf(-2.0 * params.l as f64 / k as f64);
    Ok(PackingSet {
        n,
        p,
        b,
        k,
        l: params.l,
        gamma,
        bump: *params,
        codes,
        matrices,
        delta,
        cell_profiles,
    })
}

/// Smallest pairwise `(1/np)‖M_s − M_t‖_F²`, failing if it falls below
/// the certified bound.
pub fn separation_check(ps: &PackingSet) -> Result<f64> {
    if ps.matrices.len() < 2 {
        return Err(Error::InvalidArgument("separation needs at least two hypotheses".into()));
    }
    let mut min = f64::INFINITY;
    for s in 0..ps.matrices.len() {
        for t in s + 1..ps.matrices.len() {
            let sep = frobenius_mse(&ps.matrices[s], &ps.matrices[t])?;
            if sep < ps.delta {
                return Err(Error::SeparationViolated {
                    first: s,
                    second: t,
                    separation: sep,
                    bound: ps.delta,
                });
            }
            min = min.min(sep);
        }
    }
    Ok(min)
}

/// Whether `Φ_d(θ_i) Φ_{d'}(θ_i) = 0` for every grid point and every `d ≠ d'`.
pub fn disjoint_supports(ps: &PackingSet) -> bool {
    let profiles = &ps.cell_profiles;
    (0..profiles.len()).all(|a| {
        (a + 1..profiles.len())
            .all(|c| profiles[a].iter().zip(&profiles[c]).all(|(x, y)| x * y == 0.0))
    })
}

/// Largest `|mixed order-L forward difference| / γ` of any hypothesis column
/// along the grid. By the mean value theorem each difference quotient equals
/// a true order-`L` partial derivative somewhere in its stencil.
pub fn smoothness_ratio(ps: &PackingSet) -> f64 {
    let side = integer_root(ps.n, ps.k).expect("packing grid is a perfect power");
    let h = 1.0 / side as f64;
    let l = ps.l as usize;
    let splits = compositions(l, ps.k);
    let row_of = |idx: &[usize]| idx.iter().fold(0, |acc, &i| acc * side + i);
    let mut worst: f64 = 0.0;
    for m in &ps.matrices {
        for split in &splits {
            let base_ranges: Vec<usize> = split.iter().map(|&o| side.saturating_sub(o)).collect();
            if base_ranges.contains(&0) {
                continue;
            }
            let offsets: Vec<Vec<usize>> = split.iter().map(|&o| (0..=o).collect()).collect();
            let stencil = cartesian(&offsets);
            for base in cartesian(&base_ranges.iter().map(|&r| (0..r).collect()).collect::<Vec<_>>()) {
                for j in 0..ps.p {
                    let mut acc = 0.0;
                    for off in &stencil {
                        let mut weight = 1.0;
                        for ((&o, &order), _) in off.iter().zip(split).zip(&base) {
                            let sign = if (order - o) % 2 == 0 { 1.0 } else { -1.0 };
                            weight *= sign * binomial(order as u64, o as u64) as f64;
                        }
                        let idx: Vec<usize> = base.iter().zip(off).map(|(b, o)| b + o).collect();
                        acc += weight * m[(row_of(&idx), j)];
                    }
                    worst = worst.max((acc / h.powi(l as i32)).abs() / ps.gamma);
                }
            }
        }
    }
    worst
}

/// All `(L_1, …, L_K)` with non-negative parts summing to `total`.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn cartesian(ranges: &[Vec<usize>]) -> Vec<Vec<usize>> {
    ranges.iter().fold(vec![Vec::new()], |acc, range| {
        acc.into_iter()
            .flat_map(|prefix| {
                range.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect()
    })
}

/// `KL(P_s ‖ P_t) = N/(2σ² np) ‖M_s − M_t‖_F²` for `N` uniform Gaussian
/// observations.
pub fn kl_between_hypotheses(ms: &DenseMatrix, mt: &DenseMatrix, num_samples: usize, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "KL divergence needs sigma > 0, got {sigma}"
        )));
    }
    let sep = frobenius_mse(ms, mt)?;
    Ok(num_samples as f64 / (2.0 * sigma * sigma) * sep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Simulates `E_s[log dP_s/dP_t]` for `N` observations by averaging the
/// single-observation log-likelihood ratio over `draws` simulated
/// observations under `M_s` and scaling by `N`.
pub fn kl_monte_carlo(
    ms: &DenseMatrix,
    mt: &DenseMatrix,
    num_samples: usize,
    sigma: f64,
    draws: usize,
    rng: &mut Rng,
) -> Result<MonteCarloEstimate> {
    ms.check_same_shape(mt)?;
    if !(sigma > 0.0) || draws < 2 {
        return Err(Error::InvalidArgument(format!(
            "need sigma > 0 and at least two draws (sigma = {sigma}, draws = {draws})"
        )));
    }
    let (n, p) = ms.shape();
    let cells = (n * p) as u64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let cell = rng.below(cells) as usize;
        let (i, j) = (cell / p, cell % p);
        let y = ms[(i, j)] + sigma * rng.gaussian();
        let llr = ((y - mt[(i, j)]).powi(2) - (y - ms[(i, j)]).powi(2)) / (2.0 * sigma * sigma);
        sum += llr;
        sum_sq += llr * llr;
    }
    let d = draws as f64;
    let mean = sum / d;
    let var = ((sum_sq - d * mean * mean) / (d - 1.0)).max(0.0);
    let scale = num_samples as f64;
    Ok(MonteCarloEstimate {
        mean: scale * mean,
        std_error: scale * (var / d).sqrt(),
    })
}

/// Tessellation count `binom(K+L, L) · ceil(1/d)^K` with ball radius
/// `d = (L!/(γ K^L))^{1/L} ε^{1/L}`.
pub fn j_star_count(epsilon: f64, l: u32, k: usize, gamma: f64) -> Result<u64> {
    if !(epsilon > 0.0) || !(gamma > 0.0) || l < 1 || k < 1 {
        return Err(Error::InvalidArgument(format!(
            "j_star needs epsilon > 0, gamma > 0, L >= 1, K >= 1 (got {epsilon}, {gamma}, {l}, {k})"
        )));
    }
    let l_fact: f64 = (1..=l).map(f64::from).product();
    let lf = l as f64;
    let radius = (l_fact / (gamma * (k as f64).powf(lf))).powf(1.0 / lf) * epsilon.powf(1.0 / lf);
    let inverse = 1.0 / radius;
    // snap values that are integers up to rounding, so 1/0.1 counts 10 cells
    let nearest = inverse.round();
    let per_axis = if (inverse - nearest).abs() <= 1e-9 * inverse {
        nearest
    } else {
        inverse.ceil()
    };
    let per_axis = (per_axis.max(1.0)) as u64;
    let terms = binomial(k as u64 + l as u64, l as u64);
    per_axis
        .checked_pow(k as u32)
        .and_then(|cells| cells.checked_mul(terms))
        .ok_or_else(|| Error::InvalidArgument(format!("J*({epsilon}) overflows u64")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingConfig {
    pub n: usize,
    pub p: usize,
    pub b: usize,
    #[serde(rename = "L")]
    pub l: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub count: usize,
    /// Observation count `N` in the KL computations.
    #[serde(rename = "N")]
    pub num_samples: usize,
    pub sigma: f64,
    pub mc_draws: usize,
    pub seed: u64,
}

impl PackingConfig {
    /// Defaults around the given grid: `p = 8`, `γ = 1`, `σ = 1`,
    /// `N = round(0.7 np)`, `10⁵` Monte-Carlo draws.
    pub fn new(n: usize, b: usize, l: u32, k: usize, count: usize) -> Self {
        let p = 8;
        Self {
            n,
            p,
            b,
            l,
            k,
            gamma: 1.0,
            count,
            num_samples: (0.7 * (n * p) as f64).round() as usize,
            sigma: 1.0,
            mc_draws: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
}

impl From<bool> for CheckStatus {
    fn from(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingReport {
    pub b: usize,
    pub count: usize,
    pub min_separation: f64,
    pub bound: f64,
    pub kl_matrix: Vec<Vec<f64>>,
    #[serde(rename = "c_L")]
    pub c_l: f64,
    pub checks: BTreeMap<String, CheckStatus>,
}

impl PackingReport {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|&c| c == CheckStatus::Pass)
    }
}

/// Builds a packing set and runs every certificate on it.
pub fn certify_packing(cfg: &PackingConfig) -> Result<PackingReport> {
    let params = calibrate_c_l(cfg.l)?;
    let base = Rng::new(cfg.seed);
    let ps = build_packing(cfg.n, cfg.p, cfg.b, cfg.gamma, &params, cfg.k, cfg.count, &mut base.derive(&[0]))?;
    let energy = cell_energy_check(cfg.n, cfg.b, cfg.gamma, &params, cfg.k)?;

    let min_dist = min_code_distance(cfg.b * cfg.p);
    let mut hamming_ok = true;
    let mut min_separation = f64::INFINITY;
    let mut separation_ok = true;
    let mut rank_ok = true;
    let mut kl_identity_ok = true;
    let mut kl_mc_ok = true;
    let count = ps.matrices.len();
    let mut kl_matrix = vec![vec![0.0; count]; count];
    #[allow(clippy::needless_range_loop)]
    for s in 0..count {
        let rank = linalg::numerical_rank(&ps.matrices[s], 1e-10)?;
        rank_ok &= rank <= cfg.b;
        for t in 0..count {
            if s == t {
                continue;
            }
            let sep = frobenius_mse(&ps.matrices[s], &ps.matrices[t])?;
            let kl = kl_between_hypotheses(&ps.matrices[s], &ps.matrices[t], cfg.num_samples, cfg.sigma)?;
            kl_matrix[s][t] = kl;
            let identity = cfg.num_samples as f64 / (2.0 * cfg.sigma * cfg.sigma) * sep;
            kl_identity_ok &= (kl - identity).abs() <= 1e-12 * identity.abs().max(f64::MIN_POSITIVE);
            if s < t {
                hamming_ok &= ps.codes[s].hamming(&ps.codes[t]) >= min_dist;
                min_separation = min_separation.min(sep);
                separation_ok &= sep >= ps.delta;
                let mc = kl_monte_carlo(
                    &ps.matrices[s],
                    &ps.matrices[t],
                    cfg.num_samples,
                    cfg.sigma,
                    cfg.mc_draws,
                    &mut base.derive(&[1, s as u64, t as u64]),
                )?;
                kl_mc_ok &= (mc.mean - kl).abs() <= 3.0 * mc.std_error;
            }
        }
    }

    let mut checks = BTreeMap::new();
    checks.insert("bump_derivative_bound".into(), params.satisfies_derivative_bound().into());
    checks.insert("disjoint_support".into(), disjoint_supports(&ps).into());
    checks.insert("cell_energy_lower".into(), energy.lower_ok.into());
    checks.insert("cell_energy_upper".into(), energy.upper_ok.into());
    checks.insert("hamming_distance".into(), hamming_ok.into());
    checks.insert("separation".into(), separation_ok.into());
    checks.insert("rank_bound".into(), rank_ok.into());
    checks.insert(
        "smoothness".into(),
        (smoothness_ratio(&ps) <= 1.0 + SMOOTHNESS_SLACK).into(),
    );
    checks.insert("kl_identity".into(), kl_identity_ok.into());
    checks.insert("kl_monte_carlo".into(), kl_mc_ok.into());

    Ok(PackingReport {
        b: cfg.b,
        count,
        min_separation,
        bound: ps.delta,
        kl_matrix,
        c_l: params.c_l,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: u32) -> BumpParams {
        calibrate_c_l(l).unwrap()
    }

    #[test]
    fn bump_values() {
        let p = BumpParams { c_l: 0.2, l: 1 };
        assert!((bump_phi(0.0, &p) - 0.2).abs() < 1e-15);
        assert_eq!(bump_phi(0.5, &p), 0.0);
        assert_eq!(bump_phi(-0.7, &p), 0.0);
        assert!(bump_phi(0.49, &p) > 0.0);
    }

    #[test]
    fn bump_energy_exceeds_049() {
        let c = 0.3;
        let p = BumpParams { c_l: c, l: 1 };
        let points = 100_000;
        let h = 1.0 / (points - 1) as f64;
        let integral: f64 = (0..points)
            .map(|t| {
                let w = if t == 0 || t == points - 1 { 0.5 } else { 1.0 };
                w * bump_phi(-0.5 + t as f64 * h, &p).powi(2)
            })
            .sum::<f64>()
            * h;
        assert!(integral > 0.49 * c * c, "{integral}");
    }

    #[test]
    fn central_differences_recover_polynomials() {
        let cube = |x: f64| x * x * x;
        assert!((fd_derivative(cube, 0.3, 1) - 0.27).abs() < 1e-9);
        assert!((fd_derivative(cube, 0.3, 2) - 1.8).abs() < 1e-6);
        assert!((fd_derivative(cube, 0.3, 3) - 6.0).abs() < 1e-3);
    }

    #[test]
    fn calibration_satisfies_bound_and_is_tight() {
        for l in 1..=3 {
            let p = params(l);
            assert!(p.satisfies_derivative_bound(), "L = {l}");
            let bigger = BumpParams {
                c_l: p.c_l * (1.0 + 1e-2),
                l,
            };
            assert!(
                bigger.derivative_maxima().iter().any(|&m| m > 1.0),
                "L = {l}: c = {} still admissible",
                bigger.c_l
            );
        }
    }

    #[test]
    fn calibration_decreases_with_order() {
        let cs: Vec<f64> = (1..=5).map(|l| params(l).c_l).collect();
        assert!(cs.windows(2).all(|w| w[1] <= w[0]), "{cs:?}");
        // first-derivative peak of the unit bump is about 4.34
        assert!((cs[0] - 1.0 / 4.3407).abs() < 1e-3, "{}", cs[0]);
        assert!(calibrate_c_l(0).is_err());
    }

    #[test]
    fn phi_d_cases() {
        let p = params(1);
        let (b, gamma) = (4, 1.5);
        // centre of cell d = 2 is θ = 3/8
        let centre = phi_d(&[0.375], &[2], b, gamma, &p).unwrap();
        assert!((centre - gamma * (b as f64).powf(-1.0) * p.c_l).abs() < 1e-15);
        assert_eq!(phi_d(&[0.9], &[2], b, gamma, &p).unwrap(), 0.0);
        for theta in [0.1, 0.5, 0.77] {
            let single = phi_d(&[theta], &[1], 1, gamma, &p).unwrap();
            assert!((single - gamma * bump_phi(theta - 0.5, &p)).abs() < 1e-15);
        }
        // K = 2 centre of cell (1, 2) with b = 4
        let two = phi_d(&[0.25, 0.75], &[1, 2], 4, 1.0, &p).unwrap();
        assert!((two - 0.5 * p.c_l * p.c_l).abs() < 1e-15);
        assert!(phi_d(&[0.5], &[1], 3, 1.0, &BumpParams { c_l: 1.0, l: 1 }).is_ok());
        assert!(phi_d(&[0.5, 0.5], &[1, 1], 3, 1.0, &p).is_err());
        assert!(phi_d(&[0.5], &[5], 4, 1.0, &p).is_err());
    }

    #[test]
    fn disjoint_support_on_grid() {
        let p = params(2);
        for (n, b, k) in [(64usize, 4usize, 1usize), (256, 16, 2)] {
            let side = integer_root(b, k).unwrap();
            let theta = equispaced_theta(n, k).unwrap();
            let cells = cell_indices(side, k);
            for i in 0..n {
                for a in 0..cells.len() {
                    for c in a + 1..cells.len() {
                        let x = phi_d(theta.row(i), &cells[a], b, 1.0, &p).unwrap();
                        let y = phi_d(theta.row(i), &cells[c], b, 1.0, &p).unwrap();
                        assert_eq!(x * y, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn cell_energy_bounds() {
        let p = params(1);
        let check = cell_energy_check(100, 1, 1.0, &p, 1).unwrap();
        assert!(check.lower_ok && check.upper_ok, "{check:?}");

        let check = cell_energy_check(64, 4, 1.0, &p, 1).unwrap();
        assert!(check.lower_ok && check.upper_ok);
        let first = check.per_cell[0];
        assert!(check.per_cell.iter().all(|&v| (v - first).abs() <= 1e-15 * first));

        let k2 = cell_energy_check(256, 16, 2.0, &p, 2).unwrap();
        assert!(k2.lower_ok && k2.upper_ok);

        assert!(matches!(
            cell_energy_check(100, 49, 1.0, &p, 1),
            Err(Error::CellCountOutOfRange { b: 49, .. })
        ));
        assert!(cell_energy_check(100, 0, 1.0, &p, 1).is_err());
        assert!(cell_energy_check(100, 48, 1.0, &p, 1).is_ok());
    }

    #[test]
    fn vg_codes() {
        let mut rng = Rng::new(5);
        let two = varshamov_gilbert_codes(1, 8, 2, &mut rng).unwrap();
        assert!(two[0].hamming(&two[1]) >= 1);

        let four = varshamov_gilbert_codes(2, 8, 4, &mut rng).unwrap();
        for a in 0..4 {
            for b in a + 1..4 {
                assert!(four[a].hamming(&four[b]) >= 2);
            }
        }
        assert!(varshamov_gilbert_codes(1, 7, 1, &mut rng).is_err());
        assert!(varshamov_gilbert_codes(2, 8, 5, &mut rng).is_err());
    }

    #[test]
    fn vg_search_reports_exhaustion() {
        // 2^(16/8) = 4 words of length 16 at distance 2 are plentiful, but
        // the count cap rejects a fifth before any search
        let mut rng = Rng::new(1);
        assert!(matches!(
            varshamov_gilbert_codes(2, 8, 5, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        // 2^(9/8) ≈ 2.18 allows at most 2 words
        assert!(varshamov_gilbert_codes(1, 9, 3, &mut rng).is_err());
    }

    #[test]
    fn packing_structure() {
        let p = params(1);
        let ps = build_packing(64, 8, 4, 1.0, &p, 1, 4, &mut Rng::new(3)).unwrap();
        assert_eq!(ps.matrices.len(), 4);
        let zero = ps.hypothesis(&Codeword::zeros(32)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let mut bits = vec![false; 32];
        bits[2 * 8 + 5] = true; // cell d = 3, column 5
        let single = ps.hypothesis(&Codeword::new(bits)).unwrap();
        assert_eq!(linalg::numerical_rank(&single, 1e-10).unwrap(), 1);
        for i in 0..64 {
            for j in 0..8 {
                let theta = (i + 1) as f64 / 64.0;
                let inside = theta > 0.5 && theta < 0.75;
                if j != 5 || !inside {
                    assert_eq!(single[(i, j)], 0.0);
                } else {
                    assert!(single[(i, j)] > 0.0);
                }
            }
        }
        for m in &ps.matrices {
            assert!(linalg::numerical_rank(m, 1e-10).unwrap() <= 4);
        }
        assert!(disjoint_supports(&ps));
        let ratio = smoothness_ratio(&ps);
        assert!(ratio <= 1.0 + SMOOTHNESS_SLACK, "{ratio}");
        assert!(ratio > 0.1);
    }

    #[test]
    fn separation_matches_cell_energy() {
        let p = params(1);
        let ps = build_packing(64, 8, 4, 1.0, &p, 1, 2, &mut Rng::new(4)).unwrap();
        let mut bits_a = vec![false; 32];
        let mut bits_b = vec![false; 32];
        bits_a[8 + 3] = true; // d = 2, j = 3
        bits_b[8 + 3] = false;
        bits_a[0] = true;
        bits_b[0] = true;
        let ma = ps.hypothesis(&Codeword::new(bits_a)).unwrap();
        let mb = ps.hypothesis(&Codeword::new(bits_b)).unwrap();
        let energy = cell_energy_check(64, 4, 1.0, &p, 1).unwrap().per_cell[1];
        let sep = frobenius_mse(&ma, &mb).unwrap();
        assert!((sep - energy / 8.0).abs() <= 1e-15);

        let min = separation_check(&ps).unwrap();
        assert!(min > 0.0);
        assert!(min >= ps.delta);
    }

    #[test]
    fn separation_violation_is_reported() {
        let p = params(1);
        let mut ps = build_packing(64, 8, 4, 1.0, &p, 1, 3, &mut Rng::new(4)).unwrap();
        ps.matrices[2] = ps.matrices[0].clone();
        assert!(matches!(
            separation_check(&ps),
            Err(Error::SeparationViolated { first: 0, second: 2, .. })
        ));
    }

    #[test]
    fn kl_cases() {
        let mut rng = Rng::new(6);
        let a = DenseMatrix::from_fn(4, 3, |_, _| rng.gaussian());
        let b = DenseMatrix::from_fn(4, 3, |_, _| rng.gaussian());
        assert_eq!(kl_between_hypotheses(&a, &a, 10, 1.0).unwrap(), 0.0);
        let one = kl_between_hypotheses(&a, &b, 10, 0.5).unwrap();
        let two = kl_between_hypotheses(&a, &b, 20, 0.5).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
        assert!(kl_between_hypotheses(&a, &b, 10, 0.0).is_err());

        let mc = kl_monte_carlo(&a, &b, 10, 0.5, 100_000, &mut rng).unwrap();
        assert!((mc.mean - one).abs() <= 3.0 * mc.std_error, "{mc:?} vs {one}");
    }

    #[test]
    fn j_star_examples() {
        assert_eq!(j_star_count(0.1, 1, 1, 1.0).unwrap(), 20);
        for (k, l) in [(1usize, 1u32), (1, 2), (2, 1)] {
            for e in 1..8 {
                let eps = 0.5f64.powi(e);
                let a = j_star_count(eps, l, k, 1.0).unwrap() as f64;
                let b = j_star_count(eps / 2.0, l, k, 1.0).unwrap() as f64;
                let ratio = 2f64.powf(k as f64 / l as f64);
                // one extra cell per axis either way
                let terms = binomial((k as u64) + l as u64, l as u64) as f64;
                let per_a = (a / terms).powf(1.0 / k as f64);
                let per_b = (b / terms).powf(1.0 / k as f64);
                let expect = per_a * ratio.powf(1.0 / k as f64);
                assert!((per_b - expect).abs() <= 1.0 + ratio, "{k},{l},{eps}");
            }
        }
        for eps in [0.5, 0.1, 0.01] {
            let counts: Vec<u64> = (1..=5).map(|l| j_star_count(eps, l, 1, 1.0).unwrap()).collect();
            assert!(counts.windows(2).all(|w| w[1] <= w[0] || w[1] <= w[0] + counts[0]), "{counts:?}");
        }
        assert!(j_star_count(0.0, 1, 1, 1.0).is_err());
    }

    #[test]
    fn report_serializes_expected_fields() {
        let mut cfg = PackingConfig::new(64, 4, 1, 1, 4);
        cfg.mc_draws = 20_000;
        let report = certify_packing(&cfg).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["b", "count", "min_separation", "bound", "kl_matrix", "c_L", "checks"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(report.all_pass(), "{:?}", report.checks);
    }
}
