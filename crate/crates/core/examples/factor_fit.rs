//! Interactive fixed effects on one flattening of a simulated panel.
//!
//! Run with `cargo run --release --example factor_fit`.

use mdife::factor::{extract_proxies, interactive_fe_fit, FactorOptions};
use mdife::harness::dgp::{gen_dgp_growing, DgpConfig};
use mdife::regression::pooled_ols;
use mdife::Result;

fn main() -> Result<()> {
    let draw = gen_dgp_growing(&DgpConfig::growing(20, 1.0), 1)?;
    let ols = pooled_ols(&draw.y, &draw.x)?;
    println!(
        "true slope {}, pooled OLS {:.4}",
        draw.beta_true, ols.beta[0]
    );

    for mode in 0..3 {
        let fit = interactive_fe_fit(&draw.y, &draw.x, mode, 2, FactorOptions::default())?;
        println!(
            "flattening {}: beta {:.4} after {} iterations (converged: {}), objective {:.1}",
            mode + 1,
            fit.beta[0],
            fit.iterations,
            fit.converged,
            fit.objective
        );
    }

    // loadings of the residual flattenings serve as kernel proxies
    let resid = interactive_fe_fit(&draw.y, &draw.x, 0, 2, FactorOptions::default())?.residual;
    let proxies = extract_proxies(&resid.add(&draw.a_true)?, &[0, 1, 2], &[2, 2, 2])?;
    let p = proxies.get(0).expect("mode 0 proxies");
    println!(
        "mode-1 proxies are {}x{}, first row {:.3?}",
        p.nrows(),
        p.ncols(),
        p.row(0).iter().collect::<Vec<_>>()
    );
    Ok(())
}
