//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for bad flags or configuration, 1 for failures
//! while running.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::estimator::complete;
use crate::experiments::{
    loglog_slope, run_delta_scaling, run_rate_experiment_with_threads, RateExperimentConfig,
    THREADS_ENV,
};
use crate::io::{format_f64, read_json, read_matrix, sidecar_path, write_json, write_matrix, MatrixDims};
use crate::linalg::{frobenius_mse, DenseMatrix};
use crate::rng::Rng;
use crate::sampling::{observe, sample_masks, ObservationSet, SamplingMode};
use crate::synthetic::{generate_matrix, generate_matrix_with_theta, ThetaMode, DEFAULT_NUM_BASIS};
use crate::theory::{certify_packing, j_star_count, PackingConfig};

#[derive(Parser, Debug)]
#[command(name = "smoothmc", version, about = "Nuclear-norm matrix completion for smooth embeddable matrices")]
struct Cli {
    /// Worker threads for parallel experiments; 0 or unset means automatic.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    WithReplacement,
    WithoutReplacement,
}

impl From<ModeArg> for SamplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::WithReplacement => SamplingMode::WithReplacement,
            ModeArg::WithoutReplacement => SamplingMode::WithoutReplacement,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ThetaArg {
    Uniform,
    Equispaced,
}

impl From<ThetaArg> for ThetaMode {
    fn from(t: ThetaArg) -> Self {
        match t {
            ThetaArg::Uniform => ThetaMode::Uniform,
            ThetaArg::Equispaced => ThetaMode::Equispaced,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic matrix and a set of noisy observations of it.
    ///
    /// Writes M.csv, M.json, obs.csv, obs.json and embedding.json into
    /// --out-dir.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        /// Smoothness order of the column functions.
        #[arg(long = "L")]
        l: u32,
        /// Latent dimension.
        #[arg(long = "K", default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_NUM_BASIS)]
        num_basis: usize,
        /// Number of observations; defaults to round((1 - nu) n p).
        #[arg(long = "N")]
        num_samples: Option<usize>,
        /// Missingness rate used when --N is absent.
        #[arg(long, default_value_t = 0.3)]
        nu: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, value_enum, default_value = "without-replacement")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "uniform")]
        theta_mode: ThetaArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the soft-thresholding estimator on an observation file.
    ///
    /// Writes the estimate as CSV plus a JSON sidecar with its dimensions,
    /// lambda, effective rank and the spectrum of R.
    Complete {
        /// Observation CSV (row,col,y).
        #[arg(long = "in")]
        input: PathBuf,
        /// Observation header; defaults to the input path with a .json extension.
        #[arg(long)]
        header: Option<PathBuf>,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth matrix CSV (with .json sidecar) to report the MSE against.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the rate-of-convergence study described by a JSON config.
    ///
    /// Writes rate_results.csv and rate_summary.json into --out-dir.
    RateExperiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Median operator norm of the stochastic error against the sample size.
    ///
    /// Writes delta_scaling.csv and delta_scaling.json into --out-dir.
    DeltaScaling {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        p: usize,
        /// Comma-separated sample sizes; defaults to 2^3..2^7 times n.
        #[arg(long = "N-values", value_delimiter = ',')]
        n_values: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        /// Smoothness order of the synthetic matrix.
        #[arg(long = "L", default_value_t = 1)]
        l: u32,
        /// Use the zero matrix instead of a synthetic one.
        #[arg(long)]
        zero: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Build a bump-function packing set and certify its properties.
    ///
    /// Prints a JSON report; exits 1 if any check fails.
    VerifyPacking {
        #[arg(long)]
        n: usize,
        /// Number of bump cells.
        #[arg(long)]
        b: usize,
        #[arg(long = "L")]
        l: u32,
        #[arg(long = "K", default_value_t = 1)]
        k: usize,
        /// Number of code words.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Observation count in the KL checks; defaults to round(0.7 n p).
        #[arg(long = "N")]
        num_samples: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        mc_draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the basis count J*(eps).
    ///
    /// Prints CSV epsilon,j_star and the fitted log-log slope on stderr.
    Jstar {
        #[arg(long = "L")]
        l: u32,
        #[arg(long = "K", default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Comma-separated epsilon values; defaults to 2^-1..2^-8.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let threads = cli.threads.filter(|&t| t > 0);
    match cli.command {
        Command::Generate {
            n,
            p,
            l,
            k,
            num_basis,
            num_samples,
            nu,
            sigma,
            mode,
            theta_mode,
            seed,
            out_dir,
        } => {
            if !(sigma >= 0.0) {
                return Err(Failure::Usage(format!("--sigma must be non-negative, got {sigma}")));
            }
            let count = match num_samples {
                Some(c) => c,
                None if nu > 0.0 && nu < 1.0 => ((1.0 - nu) * (n * p) as f64).round() as usize,
                None => return Err(Failure::Usage(format!("--nu must lie in (0, 1), got {nu}"))),
            };
            let rng = Rng::new(seed);
            let (m, spec) =
                generate_matrix_with_theta(n, p, l, k, num_basis, theta_mode.into(), &rng.derive(&[0]))?;
            let mode: SamplingMode = mode.into();
            let masks = sample_masks(n, p, count, mode, &mut rng.derive(&[1]))?;
            let obs = observe(&m, &masks, mode, sigma, &mut rng.derive(&[2]))?;
            std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
            write_matrix(&m, &out_dir.join("M.csv"), &out_dir.join("M.json"))?;
            obs.write(&out_dir.join("obs.csv"), &out_dir.join("obs.json"))?;
            write_json(&out_dir.join("embedding.json"), &spec.summary())?;
            Ok(())
        }
        Command::Complete {
            input,
            header,
            lambda,
            out,
            truth,
        } => {
            if !(lambda > 0.0) || !lambda.is_finite() {
                return Err(Failure::Usage(format!("--lambda must be positive, got {lambda}")));
            }
            let header = header.unwrap_or_else(|| sidecar_path(&input));
            let obs = ObservationSet::read(&input, &header)?;
            let result = complete(&obs, lambda)?;
            let mse = match truth {
                Some(path) => {
                    let m = read_matrix(&path, &sidecar_path(&path))?;
                    Some(frobenius_mse(&result.m_hat, &m)?)
                }
                None => None,
            };
            write_completion(&result.m_hat, &out, result.summary(mse))
        }
        Command::RateExperiment { config, out_dir } => {
            let cfg: RateExperimentConfig = read_json(&config)
                .map_err(|e| Failure::Usage(format!("cannot load config {}: {e}", config.display())))?;
            cfg.validate()
                .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", config.display())))?;
            let result = run_rate_experiment_with_threads(&cfg, threads)?;
            result.write(&out_dir)?;
            Ok(())
        }
        Command::DeltaScaling {
            n,
            p,
            n_values,
            sigma,
            replicates,
            l,
            zero,
            seed,
            out_dir,
        } => {
            if n == 0 || p == 0 || replicates == 0 || !(sigma >= 0.0) {
                return Err(Failure::Usage(
                    "--n, --p and --replicates must be positive and --sigma non-negative".into(),
                ));
            }
            let n_values = if n_values.is_empty() {
                (3..=7).map(|e| (1usize << e) * n).collect()
            } else {
                n_values
            };
            let rng = Rng::new(seed);
            let m = if zero {
                DenseMatrix::zeros(n, p)
            } else {
                generate_matrix(n, p, l, 1, DEFAULT_NUM_BASIS, &rng.derive(&[0]))?.0
            };
            let result = run_delta_scaling(&m, &n_values, sigma, replicates, &rng.derive(&[1]))?;
            std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
            std::fs::write(out_dir.join("delta_scaling.csv"), result.to_csv()).map_err(Error::from)?;
            write_json(&out_dir.join("delta_scaling.json"), &result)?;
            Ok(())
        }
        Command::VerifyPacking {
            n,
            b,
            l,
            k,
            count,
            p,
            gamma,
            sigma,
            num_samples,
            mc_draws,
            seed,
            out,
        } => {
            let mut cfg = PackingConfig::new(n, b, l, k, count);
            cfg.p = p;
            cfg.gamma = gamma;
            cfg.sigma = sigma;
            cfg.num_samples = num_samples.unwrap_or(((0.7 * (n * p) as f64).round()) as usize);
            cfg.mc_draws = mc_draws;
            cfg.seed = seed;
            let report = certify_packing(&cfg)?;
            let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            text.push('\n');
            emit(out.as_deref(), &text)?;
            if !report.all_pass() {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|(_, s)| !matches!(s, crate::theory::CheckStatus::Pass))
                    .map(|(name, _)| name.as_str())
                    .collect();
                return Err(Failure::Runtime(Error::InvalidArgument(format!(
                    "packing checks failed: {}",
                    failed.join(", ")
                ))));
            }
            Ok(())
        }
        Command::Jstar { l, k, gamma, eps, out } => {
            let eps = if eps.is_empty() {
                (1..=8).map(|e| 0.5f64.powi(e)).collect()
            } else {
                eps
            };
            let mut text = String::from("epsilon,j_star\n");
            let mut points = Vec::with_capacity(eps.len());
            for &e in &eps {
                let count = j_star_count(e, l, k, gamma).map_err(|e| Failure::Usage(e.to_string()))?;
                writeln!(text, "{},{count}", format_f64(e)).expect("writing to a String");
                points.push((1.0 / e, count as f64));
            }
            emit(out.as_deref(), &text)?;
            if let Ok((slope, _)) = loglog_slope(&points) {
                eprintln!("slope of log J* on log(1/eps): {slope:.4}");
            }
            Ok(())
        }
    }
}

#[derive(serde::Serialize)]
struct CompletionSidecar {
    #[serde(flatten)]
    dims: MatrixDims,
    #[serde(flatten)]
    summary: crate::estimator::CompletionSummary,
}

fn write_completion(m_hat: &DenseMatrix, out: &Path, summary: crate::estimator::CompletionSummary) -> CliResult {
    write_matrix(m_hat, out, &sidecar_path(out))?;
    let sidecar = CompletionSidecar {
        dims: MatrixDims {
            rows: m_hat.rows(),
            cols: m_hat.cols(),
        },
        summary,
    };
    write_json(&sidecar_path(out), &sidecar)?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Runtime(e.into())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
