//! Export a simulated panel to long-format CSV, read it back and estimate.
//!
//! Run with `cargo run --release --example csv_pipeline`.

use mdife::harness::dgp::{gen_dgp_fixed, DgpConfig};
use mdife::harness::panel::{frame_from_tensors, load_panel_csv, write_panel};
use mdife::harness::pipeline::{run_estimators, EstimatorSpec, PipelineSettings};
use mdife::Result;

fn main() -> Result<()> {
    let draw = gen_dgp_fixed(&DgpConfig::fixed(vec![12, 12, 12]), 3)?;
    let path = std::env::temp_dir().join("mdife_panel.csv");
    write_panel(
        std::fs::File::create(&path)?,
        &frame_from_tensors(&draw.y, &draw.x),
    )?;
    println!("wrote {}", path.display());

    let frame = load_panel_csv(&path, &["i1", "i2", "i3"], "y", &["x1"])?;
    assert_eq!(frame.y, draw.y);
    println!(
        "read a {:?} panel with regressors {:?}",
        frame.sizes(),
        frame.x_names
    );

    let specs = [
        EstimatorSpec::Ols,
        EstimatorSpec::Factor { mode: 0 },
        EstimatorSpec::Ic { h: 0.1 },
    ];
    let n = frame.sizes()[1];
    let settings = PipelineSettings {
        gamma_ranks: Some(vec![2, n, n]),
        a_ranks: Some(vec![1, n, n]),
        ..PipelineSettings::default()
    };
    for (spec, report) in specs
        .iter()
        .zip(run_estimators(&frame.y, &frame.xs, &specs, &settings)?)
    {
        match report {
            Ok(r) => println!(
                "{:<20} beta {:.4}  se {:.4}",
                spec.label(),
                r.beta[0],
                r.se[0]
            ),
            Err(e) => println!("{:<20} failed: {e}", spec.label()),
        }
    }
    Ok(())
}
