//! A small Monte Carlo study with progress reports and a CSV summary.
//!
//! Run with `cargo run --release --example monte_carlo`.

use std::ops::ControlFlow;

use mdife::harness::dgp::DgpConfig;
use mdife::harness::mc::{monte_carlo, write_summary_csv, McConfig, McRunOptions};
use mdife::harness::pipeline::{EstimatorSpec, PipelineSettings};
use mdife::inference::VarianceModel;
use mdife::Result;

fn main() -> Result<()> {
    let config = McConfig {
        dgp: DgpConfig::growing(20, 1.0),
        estimators: vec![
            EstimatorSpec::Ols,
            EstimatorSpec::Within,
            EstimatorSpec::Factor { mode: 0 },
            EstimatorSpec::Ker { h: 0.2 },
            EstimatorSpec::Ic { h: 0.2 },
        ],
        settings: PipelineSettings {
            gamma_ranks: Some(vec![4]),
            a_ranks: Some(vec![2]),
            variance: VarianceModel::Hac { lags: vec![1] },
            ..PipelineSettings::default()
        },
        rounds: 200,
        master_seed: 1,
    };
    let opts = McRunOptions {
        threads: None,
        report_every: 50,
    };
    let result = monte_carlo(&config, opts, |partial| {
        eprintln!(
            "{}/{} rounds done",
            partial.rounds_completed, partial.rounds_requested
        );
        ControlFlow::Continue(())
    })?;
    for row in &result.summary.rows {
        println!(
            "{:<22} bias {:+.4}  sd {:.4}  rmse {:.4}  coverage {:.3}",
            row.label, row.bias, row.st_dev, row.rmse, row.coverage
        );
    }
    write_summary_csv(std::io::stdout().lock(), &[result.summary])?;
    Ok(())
}
