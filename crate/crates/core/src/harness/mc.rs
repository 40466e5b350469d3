//! Monte Carlo replication driver and summaries.

use std::ops::ControlFlow;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dgp::{generate, DgpConfig};
use crate::harness::pipeline::{EstimatorSpec, Panel, PipelineSettings};
use crate::linalg::sym_eigen_desc;
use crate::tensor::Matrix;

/// A full Monte Carlo experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub settings: PipelineSettings,
    pub rounds: usize,
    #[serde(default)]
    pub master_seed: u64,
}

/// SplitMix64 finaliser.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `round`: `splitmix64(splitmix64(master) ⊕ round)`.
pub fn round_seed(master: u64, round: usize) -> u64 {
    splitmix64(splitmix64(master) ^ round as u64)
}

/// One estimator's outcome in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub beta: Option<f64>,
    pub se: Option<f64>,
    pub covered: Option<bool>,
    pub converged: bool,
    /// Whether the covariance matrix passed the symmetric PSD check.
    pub vcov_psd: bool,
    pub seconds: f64,
    pub error: Option<String>,
}

impl Outcome {
    /// A successful outcome with a valid interval.
    pub fn value(beta: f64, se: f64, covered: bool) -> Self {
        Outcome {
            beta: Some(beta),
            se: Some(se),
            covered: Some(covered),
            converged: true,
            vcov_psd: true,
            seconds: 0.0,
            error: None,
        }
    }
}

/// Everything recorded for one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub seed: u64,
    pub outcomes: Vec<Outcome>,
}

fn is_symmetric_psd(v: &[Vec<f64>]) -> bool {
    let k = v.len();
    let m = Matrix::from_fn(k, k, |i, j| v[i][j]);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return false;
    }
    sym_eigen_desc(&m).0.iter().all(|&l| l >= -1e-12 * scale)
}

/// Runs replication `round` of `config`.
pub fn run_round(config: &McConfig, round: usize) -> RoundRecord {
    let seed = round_seed(config.master_seed, round);
    let failed = |e: &Error| Outcome {
        beta: None,
        se: None,
        covered: None,
        converged: false,
        vcov_psd: true,
        seconds: 0.0,
        error: Some(e.to_string()),
    };
    let draw = match generate(&config.dgp, seed) {
        Ok(d) => d,
        Err(e) => {
            return RoundRecord {
                round,
                seed,
                outcomes: config.estimators.iter().map(|_| failed(&e)).collect(),
            }
        }
    };
    let mut settings = config.settings.clone();
    settings.split_seed = seed;
    let outcomes = match Panel::new(&draw.y, &draw.x, &settings) {
        Ok(mut panel) => config
            .estimators
            .iter()
            .map(|spec| {
                let start = Instant::now();
                let res = panel.estimate(spec);
                let seconds = start.elapsed().as_secs_f64();
                match res {
                    Ok(r) => Outcome {
                        beta: Some(r.beta[0]),
                        se: Some(r.se[0]),
                        covered: Some(r.covers(&[draw.beta_true])[0]),
                        converged: r.diagnostics.converged.unwrap_or(true),
                        vcov_psd: is_symmetric_psd(&r.vcov),
                        seconds,
                        error: None,
                    },
                    Err(e) => Outcome {
                        seconds,
                        ..failed(&e)
                    },
                }
            })
            .collect(),
        Err(e) => config.estimators.iter().map(|_| failed(&e)).collect(),
    };
    RoundRecord {
        round,
        seed,
        outcomes,
    }
}

/// Aggregate of one estimator over replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub label: String,
    /// Mean of `β̂ − β⁰`.
    pub bias: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub st_dev: f64,
    /// `sqrt(bias² + st_dev²)`.
    pub rmse: f64,
    pub coverage: f64,
    /// Empirical 2.5% and 97.5% quantiles of `β̂ − β⁰`.
    pub q025: f64,
    pub q975: f64,
    pub mean_se: f64,
    pub replications: usize,
    pub failures: usize,
    pub non_converged: usize,
    pub non_psd: usize,
    pub seconds: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary of one estimator's outcomes.
pub fn summarize(
    estimator: &EstimatorSpec,
    outcomes: &[Outcome],
    beta_true: f64,
) -> EstimatorSummary {
    let errs: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.beta)
        .map(|b| b - beta_true)
        .collect();
    let n = errs.len();
    let bias = if n > 0 {
        errs.iter().sum::<f64>() / n as f64
    } else {
        f64::NAN
    };
    let st_dev = match n {
        0 => f64::NAN,
        1 => 0.0,
        _ => (errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt(),
    };
    let covered: Vec<bool> = outcomes.iter().filter_map(|o| o.covered).collect();
    let coverage = if covered.is_empty() {
        f64::NAN
    } else {
        covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
    };
    let ses: Vec<f64> = outcomes.iter().filter_map(|o| o.se).collect();
    let mean_se = if ses.is_empty() {
        f64::NAN
    } else {
        ses.iter().sum::<f64>() / ses.len() as f64
    };
    let mut sorted = errs.clone();
    sorted.sort_by(f64::total_cmp);
    EstimatorSummary {
        estimator: estimator.to_string(),
        label: estimator.label(),
        bias,
        st_dev,
        rmse: (bias * bias + st_dev * st_dev).sqrt(),
        coverage,
        q025: quantile(&sorted, 0.025),
        q975: quantile(&sorted, 0.975),
        mean_se,
        replications: n,
        failures: outcomes.iter().filter(|o| o.error.is_some()).count(),
        non_converged: outcomes
            .iter()
            .filter(|o| o.error.is_none() && !o.converged)
            .count(),
        non_psd: outcomes.iter().filter(|o| !o.vcov_psd).count(),
        seconds: outcomes.iter().map(|o| o.seconds).sum(),
    }
}

/// Per-estimator summaries of a (possibly partial) experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub dims: Vec<usize>,
    pub rounds_completed: usize,
    pub rounds_requested: usize,
    pub rows: Vec<EstimatorSummary>,
    pub wall_seconds: f64,
}

impl McSummary {
    pub fn row(&self, spec: &EstimatorSpec) -> Option<&EstimatorSummary> {
        let key = spec.to_string();
        self.rows.iter().find(|r| r.estimator == key)
    }
}

fn summary_of(config: &McConfig, records: &[RoundRecord], wall: f64) -> McSummary {
    let rows = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let outcomes: Vec<Outcome> = records.iter().map(|r| r.outcomes[j].clone()).collect();
            summarize(spec, &outcomes, 1.0)
        })
        .collect();
    McSummary {
        dims: config.dgp.dims.clone(),
        rounds_completed: records.len(),
        rounds_requested: config.rounds,
        rows,
        wall_seconds: wall,
    }
}

/// Records of every replication plus their summary.
#[derive(Clone, Debug)]
pub struct McResult {
    pub records: Vec<RoundRecord>,
    pub summary: McSummary,
}

/// Execution options that do not affect results.
#[derive(Clone, Copy, Debug, Default)]
pub struct McRunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Rounds between progress callbacks; 0 disables them.
    pub report_every: usize,
}

/// Runs every replication of `config`. Records are ordered by round and do
/// not depend on the thread count. `progress` receives a summary of the
/// rounds completed so far every `opts.report_every` rounds; returning
/// `ControlFlow::Break` stops the run after that batch.
pub fn monte_carlo(
    config: &McConfig,
    opts: McRunOptions,
    mut progress: impl FnMut(&McSummary) -> ControlFlow<()>,
) -> Result<McResult> {
    if config.rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    if config.estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators configured".into()));
    }
    config.dgp.validate()?;
    let pool = match opts.threads {
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let start = Instant::now();
    let chunk = if opts.report_every == 0 {
        config.rounds
    } else {
        opts.report_every
    };
    let mut records = Vec::with_capacity(config.rounds);
    let mut next = 0;
    while next < config.rounds {
        let end = (next + chunk).min(config.rounds);
        let run = || -> Vec<RoundRecord> {
            (next..end)
                .into_par_iter()
                .map(|r| run_round(config, r))
                .collect()
        };
        let batch = match &pool {
            Some(p) => p.install(run),
            None => run(),
        };
        records.extend(batch);
        next = end;
        if opts.report_every > 0
            && progress(&summary_of(config, &records, start.elapsed().as_secs_f64())).is_break()
        {
            break;
        }
    }
    let summary = summary_of(config, &records, start.elapsed().as_secs_f64());
    Ok(McResult { records, summary })
}

/// Writes summaries as CSV, one row per estimator and summary.
pub fn write_summary_csv<W: std::io::Write>(out: W, summaries: &[McSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dims",
        "estimator",
        "label",
        "bias",
        "st_dev",
        "rmse",
        "coverage",
        "q025",
        "q975",
        "mean_se",
        "replications",
        "failures",
        "non_converged",
        "non_psd",
        "seconds",
    ])?;
    for s in summaries {
        let dims = s
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        for r in &s.rows {
            w.write_record([
                dims.clone(),
                r.estimator.clone(),
                r.label.clone(),
                r.bias.to_string(),
                r.st_dev.to_string(),
                r.rmse.to_string(),
                r.coverage.to_string(),
                r.q025.to_string(),
                r.q975.to_string(),
                r.mean_se.to_string(),
                r.replications.to_string(),
                r.failures.to_string(),
                r.non_converged.to_string(),
                r.non_psd.to_string(),
                r.seconds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
