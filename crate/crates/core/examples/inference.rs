//! The inference-corrected estimator and its variance models on one panel.
//!
//! Run with `cargo run --release --example inference`.

use mdife::harness::dgp::{gen_dgp_growing, DgpConfig};
use mdife::harness::pipeline::{EstimatorSpec, Panel, PipelineSettings};
use mdife::inference::VarianceModel;
use mdife::Result;

fn main() -> Result<()> {
    let draw = gen_dgp_growing(&DgpConfig::growing(30, 1.0), 4)?;
    for variance in [
        VarianceModel::Homoskedastic,
        VarianceModel::Heteroskedastic,
        VarianceModel::Hac { lags: vec![1] },
    ] {
        let settings = PipelineSettings {
            gamma_ranks: Some(vec![4]),
            a_ranks: Some(vec![2]),
            variance,
            ..PipelineSettings::default()
        };
        let mut panel = Panel::new(&draw.y, &draw.x, &settings)?;
        for spec in [EstimatorSpec::Ker { h: 0.2 }, EstimatorSpec::Ic { h: 0.2 }] {
            let r = panel.estimate(&spec)?;
            println!(
                "{:<20} {:<6} beta {:.4}  se {:.4}  95% CI [{:.4}, {:.4}]",
                spec.label(),
                r.variance_model,
                r.beta[0],
                r.se[0],
                r.ci_low[0],
                r.ci_high[0]
            );
        }
    }
    let split = PipelineSettings {
        gamma_ranks: Some(vec![4]),
        a_ranks: Some(vec![2]),
        split: true,
        split_seed: 9,
        ..PipelineSettings::default()
    };
    let r = Panel::new(&draw.y, &draw.x, &split)?.estimate(&EstimatorSpec::Ic { h: 0.2 })?;
    println!(
        "cross-fitted corrected estimate {:.4} (se {:.4})",
        r.beta[0], r.se[0]
    );
    Ok(())
}
