//! Uniform mask sampling, noisy observation, and the rescaled observation
//! matrix `R = (np/N) Σ y_t X_t`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, format_f64, parse_f64, parse_usize};
use crate::linalg::DenseMatrix;
use crate::rng::Rng;

/// Position of the single 1 in a mask matrix `X_t = e_i e_jᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MaskIndex {
    pub row: usize,
    pub col: usize,
}

impl MaskIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    WithReplacement,
    WithoutReplacement,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::WithReplacement => "with_replacement",
            SamplingMode::WithoutReplacement => "without_replacement",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub mask: MaskIndex,
    pub y: f64,
}

/// The `N` observed triples `(i, j, y)` together with how they were drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    n: usize,
    p: usize,
    samples: Vec<Observation>,
    mode: SamplingMode,
    noise_sd: f64,
    seed: u64,
}

/// JSON sidecar describing an observation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationHeader {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "N")]
    pub num_samples: usize,
    pub mode: SamplingMode,
    pub sigma: f64,
    pub seed: u64,
}

impl ObservationSet {
    pub fn new(
        n: usize,
        p: usize,
        samples: Vec<Observation>,
        mode: SamplingMode,
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::EmptyMatrix { rows: n, cols: p });
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("an observation set needs N >= 1".into()));
        }
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise standard deviation must be finite and >= 0, got {noise_sd}"
            )));
        }
        for s in &samples {
            if s.mask.row >= n || s.mask.col >= p {
                return Err(Error::MaskOutOfBounds {
                    row: s.mask.row,
                    col: s.mask.col,
                    n,
                    p,
                });
            }
            if !s.y.is_finite() {
                return Err(Error::NonFinite {
                    row: s.mask.row,
                    col: s.mask.col,
                    value: s.y,
                });
            }
        }
        if mode == SamplingMode::WithoutReplacement {
            if samples.len() > n * p {
                return Err(Error::TooManySamples {
                    requested: samples.len(),
                    cells: n * p,
                });
            }
            let mut seen = HashSet::with_capacity(samples.len());
            for s in &samples {
                if !seen.insert(s.mask) {
                    return Err(Error::DuplicateMask {
                        row: s.mask.row,
                        col: s.mask.col,
                    });
                }
            }
        }
        Ok(Self {
            n,
            p,
            samples,
            mode,
            noise_sd,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Observation] {
        &self.samples
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn header(&self) -> ObservationHeader {
        ObservationHeader {
            n: self.n,
            p: self.p,
            num_samples: self.len(),
            mode: self.mode,
            sigma: self.noise_sd,
            seed: self.seed,
        }
    }

    /// `Y = Σ y_t X_t`, duplicates accumulating.
    pub fn sum_matrix(&self) -> DenseMatrix {
        let mut y = DenseMatrix::zeros(self.n, self.p);
        for s in &self.samples {
            y[(s.mask.row, s.mask.col)] += s.y;
        }
        y
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,y\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", s.mask.row, s.mask.col, format_f64(s.y)));
        }
        out
    }

    pub fn from_csv(text: &str, header: &ObservationHeader) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("row,col,y") => {}
            other => {
                return Err(Error::Parse {
                    context: "observation csv header".into(),
                    message: format!("expected \"row,col,y\", got {other:?}"),
                })
            }
        }
        let mut samples = Vec::with_capacity(header.num_samples);
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let context = format!("observation csv line {}", lineno + 2);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    context,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            samples.push(Observation {
                mask: MaskIndex::new(
                    parse_usize(fields[0], &context)?,
                    parse_usize(fields[1], &context)?,
                ),
                y: parse_f64(fields[2], &context)?,
            });
        }
        if samples.len() != header.num_samples {
            return Err(Error::Parse {
                context: "observation csv".into(),
                message: format!(
                    "sidecar declares N = {}, file holds {} rows",
                    header.num_samples,
                    samples.len()
                ),
            });
        }
        Self::new(header.n, header.p, samples, header.mode, header.sigma, header.seed)
    }

    /// Writes `row,col,y` CSV and its JSON sidecar.
    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv())?;
        io::write_json(json_path, &self.header())
    }

    pub fn read(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let header: ObservationHeader = io::read_json(json_path)?;
        Self::from_csv(&fs::read_to_string(csv_path)?, &header)
    }
}

/// Draws `count` masks uniformly over the `n·p` cells.
///
/// With replacement the draws are i.i.d.; without replacement the result is a
/// uniformly random `count`-subset in the order produced by a partial
/// Fisher-Yates shuffle of the row-major cell indices.
pub fn sample_masks(
    n: usize,
    p: usize,
    count: usize,
    mode: SamplingMode,
    rng: &mut Rng,
) -> Result<Vec<MaskIndex>> {
    if n == 0 || p == 0 {
        return Err(Error::EmptyMatrix { rows: n, cols: p });
    }
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one mask (N >= 1)".into()));
    }
    let cells = n * p;
    let to_mask = |cell: usize| MaskIndex::new(cell / p, cell % p);
    match mode {
        SamplingMode::WithReplacement => Ok((0..count)
            .map(|_| to_mask(rng.below(cells as u64) as usize))
            .collect()),
        SamplingMode::WithoutReplacement => {
            if count > cells {
                return Err(Error::TooManySamples {
                    requested: count,
                    cells,
                });
            }
            let mut order: Vec<usize> = (0..cells).collect();
            for t in 0..count {
                let pick = t + rng.below((cells - t) as u64) as usize;
                order.swap(t, pick);
            }
            Ok(order[..count].iter().map(|&c| to_mask(c)).collect())
        }
    }
}

/// `y_t = m_{i_t j_t} + σ ξ_t` with `ξ_t` standard Gaussian.
///
/// When `sigma == 0` no noise is drawn and `rng` is left untouched.
pub fn observe(
    m: &DenseMatrix,
    masks: &[MaskIndex],
    mode: SamplingMode,
    sigma: f64,
    rng: &mut Rng,
) -> Result<ObservationSet> {
    let seed = rng.seed();
    let samples = masks
        .iter()
        .map(|&mask| {
            if mask.row >= m.rows() || mask.col >= m.cols() {
                return Err(Error::MaskOutOfBounds {
                    row: mask.row,
                    col: mask.col,
                    n: m.rows(),
                    p: m.cols(),
                });
            }
            let truth = m[(mask.row, mask.col)];
            let y = if sigma == 0.0 {
                truth
            } else {
                truth + sigma * rng.gaussian()
            };
            Ok(Observation { mask, y })
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(m.rows(), m.cols(), samples, mode, sigma, seed)
}

/// `R = (np/N) Σ y_t X_t`; unobserved cells stay 0.
pub fn build_r(obs: &ObservationSet) -> DenseMatrix {
    let scale = (obs.n * obs.p) as f64 / obs.len() as f64;
    let mut r = obs.sum_matrix();
    for i in 0..obs.n {
        for j in 0..obs.p {
            r[(i, j)] *= scale;
        }
    }
    r
}

/// Stochastic error `Δ = (1/N) Σ y_t X_t − (1/np) M`.
pub fn empirical_delta(obs: &ObservationSet, m: &DenseMatrix) -> Result<DenseMatrix> {
    if m.shape() != (obs.n, obs.p) {
        return Err(Error::DimensionMismatch {
            left_rows: obs.n,
            left_cols: obs.p,
            right_rows: m.rows(),
            right_cols: m.cols(),
        });
    }
    let big_n = obs.len() as f64;
    let cells = (obs.n * obs.p) as f64;
    let sums = obs.sum_matrix();
    Ok(DenseMatrix::from_fn(obs.n, obs.p, |i, j| {
        sums[(i, j)] / big_n - m[(i, j)] / cells
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn single(n: usize, p: usize, entries: &[(usize, usize, f64)]) -> ObservationSet {
        let samples = entries
            .iter()
            .map(|&(i, j, y)| Observation {
                mask: MaskIndex::new(i, j),
                y,
            })
            .collect();
        ObservationSet::new(n, p, samples, SamplingMode::WithReplacement, 0.0, 0).unwrap()
    }

    #[test]
    fn one_cell_matrix_masks() {
        for mode in [SamplingMode::WithReplacement, SamplingMode::WithoutReplacement] {
            let masks = sample_masks(1, 1, 1, mode, &mut Rng::new(1)).unwrap();
            assert_eq!(masks, vec![MaskIndex::new(0, 0)]);
        }
    }

    #[test]
    fn exhaustive_without_replacement() {
        let mut masks =
            sample_masks(2, 2, 4, SamplingMode::WithoutReplacement, &mut Rng::new(9)).unwrap();
        masks.sort();
        let all: Vec<_> = (0..2)
            .flat_map(|i| (0..2).map(move |j| MaskIndex::new(i, j)))
            .collect();
        assert_eq!(masks, all);
    }

    #[test]
    fn too_many_distinct_masks() {
        let err = sample_masks(2, 2, 5, SamplingMode::WithoutReplacement, &mut Rng::new(0));
        assert!(matches!(err, Err(Error::TooManySamples { requested: 5, cells: 4 })));
        assert!(sample_masks(2, 2, 0, SamplingMode::WithReplacement, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn with_replacement_frequencies_concentrate() {
        let draws = 100_000;
        let masks =
            sample_masks(5, 5, draws, SamplingMode::WithReplacement, &mut Rng::new(77)).unwrap();
        let mut counts = [0usize; 25];
        for m in &masks {
            counts[m.row * 5 + m.col] += 1;
        }
        let tol = 3.0 * (0.04f64 * 0.96 / draws as f64).sqrt();
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.04).abs() <= tol, "{freq}");
        }
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let m = DenseMatrix::from_fn(3, 4, |i, j| (i as f64) - 0.5 * j as f64);
        let masks = sample_masks(3, 4, 6, SamplingMode::WithoutReplacement, &mut Rng::new(4)).unwrap();
        let obs = observe(&m, &masks, SamplingMode::WithoutReplacement, 0.0, &mut Rng::new(5)).unwrap();
        for s in obs.samples() {
            assert_eq!(s.y, m[(s.mask.row, s.mask.col)]);
        }

        let seven = DenseMatrix::new(1, 1, vec![7.0]).unwrap();
        let masks = vec![MaskIndex::new(0, 0); 3];
        let obs = observe(&seven, &masks, SamplingMode::WithReplacement, 0.0, &mut Rng::new(1)).unwrap();
        let ys: Vec<f64> = obs.samples().iter().map(|s| s.y).collect();
        assert_eq!(ys, vec![7.0, 7.0, 7.0]);
    }

    #[test]
    fn gaussian_noise_moments() {
        let draws = 100_000;
        let zero = DenseMatrix::zeros(4, 4);
        let masks =
            sample_masks(4, 4, draws, SamplingMode::WithReplacement, &mut Rng::new(10)).unwrap();
        let obs = observe(&zero, &masks, SamplingMode::WithReplacement, 1.0, &mut Rng::new(11)).unwrap();
        let ys: Vec<f64> = obs.samples().iter().map(|s| s.y).collect();
        let mean = ys.iter().sum::<f64>() / draws as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!(mean.abs() <= 4.0 / (draws as f64).sqrt(), "{mean}");
        assert!((var - 1.0).abs() <= 0.05, "{var}");
    }

    #[test]
    fn observe_rejects_out_of_bounds() {
        let m = DenseMatrix::zeros(2, 2);
        let err = observe(
            &m,
            &[MaskIndex::new(2, 0)],
            SamplingMode::WithReplacement,
            0.0,
            &mut Rng::new(0),
        );
        assert!(matches!(err, Err(Error::MaskOutOfBounds { .. })));
    }

    #[test]
    fn without_replacement_rejects_duplicates() {
        let samples = vec![
            Observation { mask: MaskIndex::new(0, 0), y: 1.0 },
            Observation { mask: MaskIndex::new(0, 0), y: 2.0 },
        ];
        let err = ObservationSet::new(2, 2, samples, SamplingMode::WithoutReplacement, 0.0, 0);
        assert!(matches!(err, Err(Error::DuplicateMask { row: 0, col: 0 })));
    }

    #[test]
    fn build_r_examples() {
        assert_eq!(build_r(&single(1, 1, &[(0, 0, 7.0)])).as_slice(), &[7.0]);
        assert_eq!(
            build_r(&single(2, 2, &[(0, 0, 1.0)])).as_slice(),
            &[4.0, 0.0, 0.0, 0.0]
        );
        // np/N = 2, accumulated value 4
        assert_eq!(
            build_r(&single(2, 2, &[(0, 0, 1.0), (0, 0, 3.0)])).as_slice(),
            &[8.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn delta_vanishes_under_full_noiseless_sampling() {
        let mut rng = Rng::new(21);
        let m = DenseMatrix::from_fn(3, 5, |_, _| rng.gaussian());
        let masks =
            sample_masks(3, 5, 15, SamplingMode::WithoutReplacement, &mut Rng::new(22)).unwrap();
        let obs = observe(&m, &masks, SamplingMode::WithoutReplacement, 0.0, &mut rng).unwrap();
        let delta = empirical_delta(&obs, &m).unwrap();
        assert!(delta.as_slice().iter().all(|&x| x == 0.0));

        let seven = DenseMatrix::new(1, 1, vec![7.0]).unwrap();
        let d = empirical_delta(&single(1, 1, &[(0, 0, 7.0)]), &seven).unwrap();
        assert_eq!(d.as_slice(), &[0.0]);

        assert!(empirical_delta(&obs, &DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn delta_is_unbiased() {
        let (n, p, big_n, reps) = (4, 3, 10, 1000);
        let base = Rng::new(31);
        let m = DenseMatrix::from_fn(n, p, |i, j| (i + 2 * j) as f64 / 5.0 - 0.4);
        let mut sum = vec![0.0; n * p];
        let mut sum_sq = vec![0.0; n * p];
        for rep in 0..reps {
            let mut rng = base.derive(&[rep as u64]);
            let masks = sample_masks(n, p, big_n, SamplingMode::WithReplacement, &mut rng).unwrap();
            let obs = observe(&m, &masks, SamplingMode::WithReplacement, 1.0, &mut rng).unwrap();
            let d = empirical_delta(&obs, &m).unwrap();
            for (k, &x) in d.as_slice().iter().enumerate() {
                sum[k] += x;
                sum_sq[k] += x * x;
            }
        }
        for k in 0..n * p {
            let mean = sum[k] / reps as f64;
            let var = (sum_sq[k] / reps as f64 - mean * mean) * reps as f64 / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            assert!(mean.abs() <= 4.0 * se, "cell {k}: {mean} vs se {se}");
        }
    }

    #[test]
    fn mask_second_moment_identity() {
        // averaging <X, M>^2 over all np masks gives ||M||_F^2 / np
        let mut rng = Rng::new(41);
        for _ in 0..10 {
            let (n, p) = (1 + rng.below(5) as usize, 1 + rng.below(5) as usize);
            let m = DenseMatrix::from_fn(n, p, |_, _| rng.gaussian());
            let mut avg = 0.0;
            for i in 0..n {
                for j in 0..p {
                    avg += m[(i, j)].powi(2);
                }
            }
            avg /= (n * p) as f64;
            let expect = m.frobenius_norm_sq() / (n * p) as f64;
            assert!((avg - expect).abs() <= 1e-14 * expect.max(1.0));
        }
    }

    #[test]
    fn identical_seeds_give_identical_sets() {
        let m = DenseMatrix::from_fn(6, 5, |i, j| (i * j) as f64 * 0.1);
        let run = || {
            let mut rng = Rng::new(123);
            let masks = sample_masks(6, 5, 20, SamplingMode::WithoutReplacement, &mut rng).unwrap();
            observe(&m, &masks, SamplingMode::WithoutReplacement, 0.7, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a
            .samples()
            .iter()
            .zip(b.samples())
            .all(|(x, y)| x.mask == y.mask && x.y.to_bits() == y.y.to_bits()));
    }

    #[test]
    fn csv_header_is_checked() {
        let obs = single(2, 2, &[(0, 1, 0.5)]);
        let header = obs.header();
        assert!(ObservationSet::from_csv("i,j,y\n0,1,0.5\n", &header).is_err());
        let mut wrong = header.clone();
        wrong.num_samples = 2;
        assert!(ObservationSet::from_csv(&obs.to_csv(), &wrong).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            ys in proptest::collection::vec(-1e6f64..1e6, 1..40),
            seed in any::<u64>(),
        ) {
            let n = 7;
            let p = 6;
            let mut rng = Rng::new(seed);
            let samples: Vec<Observation> = ys
                .iter()
                .map(|&y| Observation {
                    mask: MaskIndex::new(rng.below(n as u64) as usize, rng.below(p as u64) as usize),
                    y: y / 3.0,
                })
                .collect();
            let obs = ObservationSet::new(n, p, samples, SamplingMode::WithReplacement, 0.25, seed).unwrap();
            let back = ObservationSet::from_csv(&obs.to_csv(), &obs.header()).unwrap();
            prop_assert_eq!(back, obs);
        }
    }
}
